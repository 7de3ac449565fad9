"""Filtered entity-ranking evaluation, aggregate metrics, target selection.

Ranking follows the filtered protocol: candidate completions already present
in train/valid/test are excluded from the negative pool, and ties are scored
pessimistically (a candidate equal to the test triple's score counts as
ranked above it).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .kg import KnowledgeGraph, Triple
from .models import EmbeddingModel, score_candidates

_CHUNK = 512


@dataclass
class EvalReport:
    """Both-side rank aggregates over a triple set."""

    mr: float
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    ranks: list[tuple[int, int]]  # per triple: (subject-side rank, object-side rank)

    def csv_row(self, split: str) -> list[str]:
        return [
            split,
            f"{self.mr:.4f}",
            f"{self.mrr:.6f}",
            f"{self.hits1:.6f}",
            f"{self.hits3:.6f}",
            f"{self.hits10:.6f}",
        ]


def _extra_filter_maps(extra_filter: Iterable[Triple] | None):
    extra_obj: dict[tuple[int, int], set[int]] = {}
    extra_subj: dict[tuple[int, int], set[int]] = {}
    for t in extra_filter or ():
        extra_obj.setdefault((t.s, t.r), set()).add(t.o)
        extra_subj.setdefault((t.r, t.o), set()).add(t.s)
    return extra_obj, extra_subj


def _side_ranks(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    triples: Sequence[Triple],
    side: str,
    extra: dict[tuple[int, int], set[int]],
) -> np.ndarray:
    """Filtered ranks for one prediction direction, pessimistic tie rule."""
    ranks = np.empty(len(triples), dtype=np.int64)
    arr = np.asarray(triples, dtype=np.int64)
    for base in range(0, len(triples), _CHUNK):
        chunk = arr[base : base + _CHUNK]
        if side == "object":
            heads, rels, trues = chunk[:, 0], chunk[:, 1], chunk[:, 2]
        else:
            heads, rels, trues = chunk[:, 2], chunk[:, 1], chunk[:, 0]
        scores = score_candidates(model, heads, rels, side)
        for i in range(len(chunk)):
            true_id = trues[i]
            row = scores[i]
            key = (heads[i], rels[i]) if side == "object" else (rels[i], heads[i])
            known = kg.known_objects if side == "object" else kg.known_subjects
            filtered = known.get(key, set()) | extra.get(key, set())
            competitor = np.ones(len(row), dtype=bool)
            if filtered:
                competitor[list(filtered)] = False
            competitor[true_id] = False
            ranks[base + i] = 1 + int(np.count_nonzero(row[competitor] >= row[true_id]))
    return ranks


def filtered_ranks(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    triple: Triple,
    extra_filter: Iterable[Triple] | None = None,
) -> tuple[int, int]:
    """(subject-side rank, object-side rank) of one triple, both in [1, n_entities]."""
    model.check_triple(triple)
    extra_obj, extra_subj = _extra_filter_maps(extra_filter)
    rank_s = _side_ranks(model, kg, [triple], "subject", extra_subj)[0]
    rank_o = _side_ranks(model, kg, [triple], "object", extra_obj)[0]
    return int(rank_s), int(rank_o)


def evaluate(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    triples: Sequence[Triple],
    extra_filter: Iterable[Triple] | None = None,
) -> EvalReport:
    """Aggregate filtered-ranking metrics over both prediction directions."""
    if not triples:
        raise DataError("evaluate requires a non-empty triple set")
    extra_obj, extra_subj = _extra_filter_maps(extra_filter)
    ranks_s = _side_ranks(model, kg, triples, "subject", extra_subj)
    ranks_o = _side_ranks(model, kg, triples, "object", extra_obj)
    both = np.concatenate([ranks_s, ranks_o]).astype(np.float64)
    return EvalReport(
        mr=float(both.mean()),
        mrr=float((1.0 / both).mean()),
        hits1=float((both <= 1).mean()),
        hits3=float((both <= 3).mean()),
        hits10=float((both <= 10).mean()),
        ranks=list(zip(ranks_s.tolist(), ranks_o.tolist())),
    )


def select_targets(
    model: EmbeddingModel, kg: KnowledgeGraph, n: int, seed: int
) -> list[Triple]:
    """Test triples ranked 1 on both sides; uniformly subsampled to n if larger.

    The sample is seed-deterministic and returned in test-set order.
    """
    if not kg.test:
        raise DataError("dataset has no test triples to select targets from")
    report = evaluate(model, kg, kg.test)
    best = [i for i, (rs, ro) in enumerate(report.ranks) if rs == 1 and ro == 1]
    if not best:
        raise DataError(
            "no test triples are ranked 1 on both sides by this model; "
            "train longer or lower the target bar"
        )
    if len(best) > n:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(best), size=n, replace=False)
        best = [best[i] for i in sorted(chosen.tolist())]
    return [kg.test[i] for i in best]


def write_eval_csv(report: EvalReport, split: str, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "mr", "mrr", "h1", "h3", "h10"])
        writer.writerow(report.csv_row(split))


def format_eval_table(reports: dict[str, EvalReport]) -> str:
    header = f"{'split':<10} {'MR':>10} {'MRR':>8} {'H@1':>8} {'H@3':>8} {'H@10':>8}"
    lines = [header, "-" * len(header)]
    for split, rep in reports.items():
        lines.append(
            f"{split:<10} {rep.mr:>10.2f} {rep.mrr:>8.4f} {rep.hits1:>8.4f} "
            f"{rep.hits3:>8.4f} {rep.hits10:>8.4f}"
        )
    return "\n".join(lines) + "\n"
