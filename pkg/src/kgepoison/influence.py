"""Influence functions: Hessian-vector products and LiSSA inverse-HVP estimates.

Hessian-vector products are central finite differences of the analytic
first-order gradient, so no second derivatives are needed for any model
family. The inverse HVP for a target gradient g is the truncated, damped
stochastic recursion

    r_0 = g,   r_{j+1} = g + r_j - (H_j r_j + damping * r_j) / scale

whose fixed point satisfies (H + damping*I) r / scale = g; the estimate is
the mean of r_D / scale over independent repeats. Each step estimates H on a
fresh mini-batch of training triples. Iterate norms are bounded at runtime:
exceeding divergence_factor * ||g|| aborts with a request for more damping.
A zero eigenvalue of the damped Hessian only grows linearly, so detecting a
marginal damping value needs depth * divergence_factor headroom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, DivergenceError
from .gradients import GradientVector, loss_gradient, mean_loss_gradient_flat
from .kg import KnowledgeGraph, Triple
from .models import EmbeddingModel, RegConfig
from .seeding import derive_seed

logger = logging.getLogger(__name__)

MatVec = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class IFConfig:
    damping: float = 1e-2
    scale: float = 10.0
    depth: int = 100
    sample_size: int = 16
    repeats: int = 1
    fd_step: float = 1e-3  # relative to the RMS parameter magnitude
    divergence_factor: float = 1e3
    grid_max_doublings: int = 24

    def __post_init__(self) -> None:
        if self.depth < 1 or self.repeats < 1:
            raise ValueError("depth and repeats must be >= 1")
        if self.scale <= 0 or self.damping < 0 or self.fd_step <= 0:
            raise ValueError("scale and fd_step must be > 0, damping >= 0")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


@dataclass
class InverseHVP:
    """Estimate of (H + damping*I)^-1 g for one target triple's gradient."""

    target: Triple
    vector: GradientVector
    damping: float
    diagnostics: list[tuple[int, int, float]] = field(default_factory=list)  # (repeat, depth, norm)


def hvp_fd(grad_fn: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, v: np.ndarray, step: float) -> np.ndarray:
    """Central-difference Hessian-vector product of a gradient function.

    The direction is normalized before stepping and the result rescaled by
    ||v||, which makes hvp exactly linear in the magnitude of v.
    """
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        raise ValueError("hvp direction must be nonzero")
    unit = v / v_norm
    g_plus = grad_fn(theta + step * unit)
    g_minus = grad_fn(theta - step * unit)
    out = (g_plus - g_minus) * (v_norm / (2.0 * step))
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite Hessian-vector product")
    return out


def _param_scale(theta: np.ndarray) -> float:
    return max(float(np.sqrt(np.mean(theta * theta))), 1e-8)


def _model_grad_fn(model: EmbeddingModel, sample: np.ndarray, reg: RegConfig):
    ne, d = model.E.shape
    kind = model.kind
    rel_shape = model.R.shape

    def grad_fn(theta: np.ndarray) -> np.ndarray:
        E = theta[: ne * d].reshape(ne, d)
        R = theta[ne * d :].reshape(rel_shape)
        return mean_loss_gradient_flat(kind, E, R, sample, reg)

    return grad_fn


def hvp(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    v: GradientVector,
    sample: Sequence[int],
    delta: float,
    reg: RegConfig | None = None,
) -> GradientVector:
    """H v where H is the mean loss Hessian over the given train-triple indices."""
    if not sample:
        raise ValueError("hvp requires a non-empty sample")
    reg = reg or RegConfig()
    theta = model.params_flat()
    sample_arr = np.asarray([kg.train[i] for i in sample], dtype=np.int64)
    step = delta * _param_scale(theta)
    flat = hvp_fd(_model_grad_fn(model, sample_arr, reg), theta, v.to_dense_flat(), step)
    return GradientVector.from_dense_flat(flat, model.n_entities, model.n_relations, model.d)


def lissa(
    matvec: MatVec,
    g: np.ndarray,
    config: IFConfig,
    rng: np.random.Generator,
    diagnostics: list[tuple[int, int, float]] | None = None,
) -> np.ndarray:
    """Truncated damped Neumann-series estimate of (H + damping*I)^-1 g."""
    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        raise ValueError("LiSSA requires a nonzero right-hand side")
    bound = config.divergence_factor * g_norm
    estimate = np.zeros_like(g)
    for rep in range(config.repeats):
        r = g.copy()
        for j in range(config.depth):
            hv = matvec(r, rng)
            r = g + r - (hv + config.damping * r) / config.scale
            r_norm = float(np.linalg.norm(r))
            if diagnostics is not None:
                diagnostics.append((rep, j + 1, r_norm))
            if not np.isfinite(r_norm) or r_norm > bound:
                raise DivergenceError(
                    f"LiSSA iterate norm {r_norm:.3g} exceeded bound {bound:.3g} at "
                    f"repeat {rep}, depth {j + 1}; increase damping or scale"
                )
        estimate += r / config.scale
    return estimate / config.repeats


def _model_matvec(
    model: EmbeddingModel, kg: KnowledgeGraph, config: IFConfig, reg: RegConfig
) -> MatVec:
    theta = model.params_flat()
    step = config.fd_step * _param_scale(theta)
    train = np.asarray(kg.train, dtype=np.int64)
    sample_size = min(config.sample_size, len(train))

    def matvec(v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(train), size=sample_size, replace=False)
        return hvp_fd(_model_grad_fn(model, train[idx], reg), theta, v, step)

    return matvec


def inverse_hvp_lissa(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    g_z: GradientVector,
    config: IFConfig,
    seed: int,
    reg: RegConfig | None = None,
    target: Triple | None = None,
) -> InverseHVP:
    """Seed-deterministic LiSSA estimate of H^-1 g_z for one target gradient."""
    reg = reg or RegConfig()
    diagnostics: list[tuple[int, int, float]] = []
    rng = np.random.default_rng(seed)
    flat = lissa(_model_matvec(model, kg, config, reg), g_z.to_dense_flat(), config, rng, diagnostics)
    vector = GradientVector.from_dense_flat(flat, model.n_entities, model.n_relations, model.d)
    return InverseHVP(
        target=target if target is not None else Triple(-1, -1, -1),
        vector=vector,
        damping=config.damping,
        diagnostics=diagnostics,
    )


def if_score(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    z: Triple,
    x: Triple,
    inverse_hvp_z: InverseHVP,
    reg: RegConfig | None = None,
    include_reg: bool = True,
) -> float:
    """<H^-1 g(z), g(x)>; the precomputed inverse HVP is reused across candidates."""
    reg = reg or RegConfig()
    gx = loss_gradient(model, x, reg, include_reg)
    return inverse_hvp_z.vector.dot(gx)


def tune_damping_operator(
    matvec: MatVec,
    probes: Sequence[np.ndarray],
    config: IFConfig,
    seed: int = 0,
) -> float:
    """Smallest damping on the grid damping * 2^i with bounded iterates on every probe."""
    if not probes:
        raise DataError("tune_damping requires at least one probe gradient")
    for i in range(config.grid_max_doublings + 1):
        lam = config.damping * (2.0**i)
        trial = replace(config, damping=lam)
        ok = True
        for p_idx, probe in enumerate(probes):
            rng = np.random.default_rng(derive_seed(seed, f"damping:{i}:probe:{p_idx}"))
            try:
                lissa(matvec, probe, trial, rng)
            except DivergenceError:
                ok = False
                break
        if ok:
            logger.info("damping tuned to %.6g (grid step %d)", lam, i)
            return lam
    raise DivergenceError(
        f"no damping in {config.damping} * 2^[0..{config.grid_max_doublings}] converged"
    )


def tune_damping(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    probe_gradients: Sequence[GradientVector],
    config: IFConfig,
    seed: int = 0,
    reg: RegConfig | None = None,
) -> float:
    reg = reg or RegConfig()
    probes = [g.to_dense_flat() for g in probe_gradients]
    return tune_damping_operator(_model_matvec(model, kg, config, reg), probes, config, seed)


def estimate_hessian_scale(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    config: IFConfig,
    seed: int,
    reg: RegConfig | None = None,
    iterations: int = 20,
) -> float:
    """Power-iteration estimate of the top Hessian eigenvalue magnitude.

    A LiSSA scale of roughly 2 * (estimate + damping) keeps the recursion
    contractive when the damped Hessian is positive definite.
    """
    reg = reg or RegConfig()
    matvec = _model_matvec(model, kg, config, reg)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(model.n_params)
    v /= np.linalg.norm(v)
    eig = 1.0
    for _ in range(iterations):
        hv = matvec(v, rng)
        eig = float(np.linalg.norm(hv))
        if eig == 0.0:
            return 1.0
        v = hv / eig
    return eig
