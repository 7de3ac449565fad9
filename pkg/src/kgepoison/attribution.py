"""Influence scores for (target, candidate) triple pairs.

Instance similarity compares triple feature vectors; gradient similarity
compares full-parameter loss gradients. Each comes in a dot, negative-
euclidean and cosine variant. The influence-function metric is scored here
too, against a precomputed inverse-Hessian-vector product.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .gradients import GradientVector, loss_gradient
from .kg import KnowledgeGraph, Triple, Vocabulary
from .models import EmbeddingModel, RegConfig, feature_vector

logger = logging.getLogger(__name__)

INSTANCE_METRICS = ("dot", "l2", "cos")
GRADIENT_METRICS = ("grad_dot", "grad_l2", "grad_cos")
ATTRIBUTION_METRICS = INSTANCE_METRICS + GRADIENT_METRICS + ("if",)


@dataclass(frozen=True)
class InfluenceScore:
    target: Triple
    candidate: Triple
    train_index: int
    metric: str
    value: float


def _similarity(variant: str, fz: np.ndarray, fx: np.ndarray) -> float:
    if variant == "dot":
        return float(fz @ fx)
    if variant == "l2":
        return float(-np.linalg.norm(fz - fx))
    nz, nx = np.linalg.norm(fz), np.linalg.norm(fx)
    if nz == 0.0 or nx == 0.0:
        logger.info("cosine of zero-norm feature vector defined as 0")
        return 0.0
    return float(np.clip((fz @ fx) / (nz * nx), -1.0, 1.0))


def instance_similarity(model: EmbeddingModel, z: Triple, x: Triple, variant: str) -> float:
    """Similarity of the two triples' feature vectors (variant: dot | l2 | cos)."""
    if variant not in INSTANCE_METRICS:
        raise ValueError(f"unknown instance-similarity variant {variant!r}")
    return _similarity(variant, feature_vector(model, z), feature_vector(model, x))


def _gradient_similarity_value(variant: str, gz: GradientVector, gx: GradientVector) -> float:
    zz = gz.dot(gz)
    xx = gx.dot(gx)
    zx = gz.dot(gx)
    if variant == "grad_dot":
        return zx
    if variant == "grad_l2":
        return -float(np.sqrt(max(zz - 2.0 * zx + xx, 0.0)))
    if zz <= 0.0 or xx <= 0.0:
        logger.info("cosine of zero-norm gradient defined as 0")
        return 0.0
    return float(np.clip(zx / np.sqrt(zz * xx), -1.0, 1.0))


def gradient_similarity(
    model: EmbeddingModel,
    z: Triple,
    x: Triple,
    variant: str,
    reg: RegConfig | None = None,
    include_reg: bool = True,
) -> float:
    """Similarity of full-parameter loss gradients (variant: grad_dot | grad_l2 | grad_cos)."""
    if variant not in GRADIENT_METRICS:
        raise ValueError(f"unknown gradient-similarity variant {variant!r}")
    reg = reg or RegConfig()
    gz = loss_gradient(model, z, reg, include_reg)
    gx = loss_gradient(model, x, reg, include_reg)
    return _gradient_similarity_value(variant, gz, gx)


def rank_candidates(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    z: Triple,
    candidates: Sequence[int],
    metric: str,
    reg: RegConfig | None = None,
    include_reg: bool = True,
    inverse_hvp: GradientVector | None = None,
) -> list[InfluenceScore]:
    """Candidates (train indices) scored against the target, descending.

    Ties are broken by ascending train index, so the ordering is deterministic.
    """
    if not candidates:
        raise DataError("rank_candidates requires a non-empty candidate list")
    if metric not in ATTRIBUTION_METRICS:
        raise ValueError(f"unknown attribution metric {metric!r}")
    reg = reg or RegConfig()

    scores: list[InfluenceScore] = []
    if metric in INSTANCE_METRICS:
        fz = feature_vector(model, z)
        for idx in candidates:
            x = kg.train[idx]
            value = _similarity(metric, fz, feature_vector(model, x))
            scores.append(InfluenceScore(z, x, idx, metric, value))
    elif metric in GRADIENT_METRICS:
        gz = loss_gradient(model, z, reg, include_reg)
        for idx in candidates:
            x = kg.train[idx]
            gx = loss_gradient(model, x, reg, include_reg)
            scores.append(InfluenceScore(z, x, idx, metric, _gradient_similarity_value(metric, gz, gx)))
    else:
        if inverse_hvp is None:
            raise ValueError("metric 'if' requires a precomputed inverse HVP for the target")
        for idx in candidates:
            x = kg.train[idx]
            gx = loss_gradient(model, x, reg, include_reg)
            scores.append(InfluenceScore(z, x, idx, metric, inverse_hvp.dot(gx)))

    scores.sort(key=lambda sc: (-sc.value, sc.train_index))
    return scores


def write_influence_csv(path: str | Path, scores: Sequence[InfluenceScore], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["target_s", "target_r", "target_o", "cand_s", "cand_r", "cand_o", "metric", "value"]
        )
        for sc in scores:
            ts, tr, to = vocab.triple_names(sc.target)
            cs, cr, co = vocab.triple_names(sc.candidate)
            writer.writerow([ts, tr, to, cs, cr, co, sc.metric, f"{sc.value:.10g}"])
