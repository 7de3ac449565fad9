"""One-edit poisoning attacks: influence-ranked deletions, dissimilar-entity
additions, and the random baselines.

Deletions remove the neighbourhood triple ranked most influential for the
target. Additions take that influential triple and replace its entity that is
not shared with the target by the entity whose embedding is least similar
(cosine for multiplicative models, largest euclidean distance for TransE),
never forming a triple that already exists. Random_n edits stay in the
target's neighbourhood; Random_g edits are global.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attribution import ATTRIBUTION_METRICS, InfluenceScore, rank_candidates
from .errors import DataError
from .gradients import loss_gradient
from .influence import IFConfig, InverseHVP, inverse_hvp_lissa
from .kg import KnowledgeGraph, Perturbation, Triple, Vocabulary, neighbourhood
from .models import EmbeddingModel, RegConfig
from .seeding import derive_seed

logger = logging.getLogger(__name__)

RANDOM_METRICS = ("random_n", "random_g")
ATTACK_METRICS = ATTRIBUTION_METRICS + RANDOM_METRICS
_MAX_REJECTION_DRAWS = 10_000


@dataclass(frozen=True)
class AttackSpec:
    metric: str
    mode: str  # "delete" | "add"
    seed: int = 0
    budget: int = 1

    def __post_init__(self) -> None:
        if self.metric not in ATTACK_METRICS:
            raise ValueError(f"unknown attack metric {self.metric!r}")
        if self.mode not in ("delete", "add"):
            raise ValueError(f"unknown attack mode {self.mode!r}")
        if self.budget != 1:
            raise ValueError("the threat model allows exactly one edit per target")


@dataclass
class AttackRecord:
    """Per-target outcome: a perturbation or a recorded skip, plus timing."""

    target: Triple
    perturbation: Perturbation | None
    skip_reason: str | None
    seconds: float
    influential: Triple | None = None
    influence_value: float | None = None


def _top_influence(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    z: Triple,
    metric: str,
    reg: RegConfig,
    include_reg: bool,
    inverse_hvp: InverseHVP | None,
) -> InfluenceScore | None:
    candidates = neighbourhood(kg, z)
    if not candidates:
        return None
    ihvp_vec = inverse_hvp.vector if inverse_hvp is not None else None
    ranked = rank_candidates(
        model, kg, z, candidates, metric, reg=reg, include_reg=include_reg, inverse_hvp=ihvp_vec
    )
    return ranked[0]


def select_deletion(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    z: Triple,
    metric: str,
    reg: RegConfig | None = None,
    include_reg: bool = True,
    inverse_hvp: InverseHVP | None = None,
) -> tuple[Perturbation, InfluenceScore] | None:
    """Delete of the most influential neighbourhood triple; None if none exists."""
    top = _top_influence(model, kg, z, metric, reg or RegConfig(), include_reg, inverse_hvp)
    if top is None:
        return None
    return Perturbation("delete", top.candidate, z), top


def _dissimilar_entity(
    model: EmbeddingModel, anchor: int, excluded: set[int]
) -> int:
    """Entity least similar to the anchor embedding, skipping excluded ids."""
    E = model.E
    if model.kind == "transe":
        objective = -np.linalg.norm(E - E[anchor], axis=1)  # argmin = farthest
    else:
        norms = np.linalg.norm(E, axis=1)
        anchor_norm = norms[anchor]
        denom = np.maximum(norms * anchor_norm, 1e-30)
        objective = (E @ E[anchor]) / denom
    objective = objective.copy()
    objective[list(excluded)] = np.inf
    choice = int(np.argmin(objective))
    if not np.isfinite(objective[choice]):
        raise DataError("no admissible replacement entity (vocabulary too small)")
    return choice


def select_addition(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    z: Triple,
    metric: str,
    reg: RegConfig | None = None,
    include_reg: bool = True,
    inverse_hvp: InverseHVP | None = None,
) -> tuple[Perturbation, InfluenceScore] | None:
    """Add the influential triple with its non-shared entity replaced by the
    most dissimilar admissible entity; None if the neighbourhood is empty."""
    top = _top_influence(model, kg, z, metric, reg or RegConfig(), include_reg, inverse_hvp)
    if top is None:
        return None
    x = top.candidate
    # Shared-subject (and both-shared) replaces the object; shared-object-only
    # replaces the subject.
    if x.s in (z.s, z.o):
        anchor, slot = x.o, "o"
        forbidden = set(kg.known_objects.get((x.s, x.r), ()))
    else:
        anchor, slot = x.s, "s"
        forbidden = set(kg.known_subjects.get((x.r, x.o), ()))
    excluded = forbidden | {anchor, z.s, z.o}
    replacement = _dissimilar_entity(model, anchor, excluded)
    triple = Triple(x.s, x.r, replacement) if slot == "o" else Triple(replacement, x.r, x.o)
    return Perturbation("add", triple, z), top


def random_baseline(
    kg: KnowledgeGraph,
    z: Triple,
    mode: str,
    global_flag: bool,
    seed: int,
) -> Perturbation | None:
    """Uniform random edit, neighbourhood-restricted unless global_flag is set."""
    rng = np.random.default_rng(seed)
    if mode == "delete":
        if global_flag:
            pool = list(range(len(kg.train)))
        else:
            pool = neighbourhood(kg, z)
            if not pool:
                return None
        idx = pool[int(rng.integers(len(pool)))]
        return Perturbation("delete", kg.train[idx], z)

    existing = kg.all_triples_set()
    ne, nr = kg.n_entities, kg.n_relations
    for _ in range(_MAX_REJECTION_DRAWS):
        r = int(rng.integers(nr))
        if global_flag:
            t = Triple(int(rng.integers(ne)), r, int(rng.integers(ne)))
        else:
            pinned = z.s if rng.integers(2) == 0 else z.o
            other = int(rng.integers(ne))
            t = Triple(pinned, r, other) if rng.integers(2) == 0 else Triple(other, r, pinned)
        if t not in existing:
            return Perturbation("add", t, z)
    raise DataError(f"rejection sampling exhausted {_MAX_REJECTION_DRAWS} draws for target {z}")


def run_attack(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    targets: Sequence[Triple],
    spec: AttackSpec,
    reg: RegConfig | None = None,
    include_reg: bool = True,
    if_config: IFConfig | None = None,
) -> list[AttackRecord]:
    """One perturbation (or a recorded skip) per target; per-target failures
    never abort the batch. Selection wall-clock time is recorded per target."""
    reg = reg or RegConfig()
    if spec.metric == "if" and if_config is None:
        raise DataError("metric 'if' requires an IFConfig")
    records: list[AttackRecord] = []
    for i, z in enumerate(targets):
        t0 = time.perf_counter()
        influential = None
        influence_value = None
        try:
            if spec.metric in RANDOM_METRICS:
                result = random_baseline(
                    kg, z, spec.mode, spec.metric == "random_g", derive_seed(spec.seed, f"target:{i}")
                )
                perturbation = result
            else:
                ihvp = None
                if spec.metric == "if":
                    g_z = loss_gradient(model, z, reg, include_reg)
                    ihvp = inverse_hvp_lissa(
                        model, kg, g_z, if_config, derive_seed(spec.seed, f"ihvp:{i}"), reg=reg, target=z
                    )
                select = select_deletion if spec.mode == "delete" else select_addition
                result = select(
                    model, kg, z, spec.metric, reg=reg, include_reg=include_reg, inverse_hvp=ihvp
                )
                if result is not None:
                    perturbation, top = result
                    influential = top.candidate
                    influence_value = top.value
                else:
                    perturbation = None
            seconds = time.perf_counter() - t0
            if perturbation is None:
                records.append(AttackRecord(z, None, "empty neighbourhood", seconds))
                logger.info("target %d skipped: empty neighbourhood", i)
            else:
                if spec.metric != "random_g" and not perturbation.shares_entity_with_target():
                    raise DataError(f"edit {perturbation.triple} outside target neighbourhood")
                records.append(AttackRecord(z, perturbation, None, seconds, influential, influence_value))
        except Exception as exc:  # per-target isolation
            seconds = time.perf_counter() - t0
            records.append(AttackRecord(z, None, f"{type(exc).__name__}: {exc}", seconds))
            logger.warning("target %d failed: %s", i, exc)
    return records


def perturbations_of(records: Sequence[AttackRecord]) -> list[Perturbation]:
    return [rec.perturbation for rec in records if rec.perturbation is not None]


def write_perturbations_csv(
    path: str | Path, records: Sequence[AttackRecord], metric: str, vocab: Vocabulary
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["target_s", "target_r", "target_o", "kind", "s", "r", "o", "metric", "selection_seconds"]
        )
        for rec in records:
            if rec.perturbation is None:
                continue
            ts, tr, to = vocab.triple_names(rec.target)
            ps, pr, po = vocab.triple_names(rec.perturbation.triple)
            writer.writerow(
                [ts, tr, to, rec.perturbation.kind, ps, pr, po, metric, f"{rec.seconds:.6f}"]
            )


def write_skip_log(path: str | Path, records: Sequence[AttackRecord], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target_s", "target_r", "target_o", "reason"])
        for rec in records:
            if rec.skip_reason is None:
                continue
            ts, tr, to = vocab.triple_names(rec.target)
            writer.writerow([ts, tr, to, rec.skip_reason])
