"""Two-direction cross-entropy loss and its analytic parameter gradients.

The per-triple training loss is the cross entropy over all candidate objects
for (s, r, ?) plus the cross entropy over all candidate subjects for
(?, r, o), plus regularization on the three touched embedding rows (N3 for
the multiplicative models, squared L2 for TransE).

For DistMult/ComplEx the entity block of a single triple's gradient is two
rank-one terms (softmax-weight vector over entities x context row) plus
corrections on the subject and object rows, which keeps pairwise gradient
dot products at O(n_entities + dim). TransE has a per-entity residual
direction, so its entity block is kept dense.
"""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError
from .kg import Triple
from .models import (
    EmbeddingModel,
    RegConfig,
    _all_distances,
    cmul,
    conj,
    object_context,
    split_complex,
    subject_context,
)

_NORM_FLOOR = 1e-12  # residual norms below this get a zero gradient direction


class GradientVector:
    """Gradient of one triple's loss w.r.t. all parameters {E, R}.

    The entity block is the sum of rank-one factors, explicit row corrections
    and an optional dense matrix; the relation block is always a dense
    (n_relations, dim) matrix (relations are few). All algebra agrees exactly
    with the dense materialization.
    """

    __slots__ = ("n_entities", "n_relations", "dim", "ent_rank1", "ent_rows", "ent_dense", "rel")

    def __init__(
        self,
        n_entities: int,
        n_relations: int,
        dim: int,
        ent_rank1: list[tuple[np.ndarray, np.ndarray]] | None = None,
        ent_rows: dict[int, np.ndarray] | None = None,
        ent_dense: np.ndarray | None = None,
        rel: np.ndarray | None = None,
    ) -> None:
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.dim = dim
        self.ent_rank1 = list(ent_rank1 or [])
        self.ent_rows = dict(ent_rows or {})
        self.ent_dense = ent_dense
        self.rel = rel if rel is not None else np.zeros((n_relations, dim))

    @classmethod
    def zeros(cls, n_entities: int, n_relations: int, dim: int) -> "GradientVector":
        return cls(n_entities, n_relations, dim)

    @classmethod
    def from_dense_flat(cls, flat: np.ndarray, n_entities: int, n_relations: int, dim: int) -> "GradientVector":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != (n_entities + n_relations) * dim:
            raise ValueError("flat vector length does not match parameter shape")
        ent = flat[: n_entities * dim].reshape(n_entities, dim).copy()
        rel = flat[n_entities * dim :].reshape(n_relations, dim).copy()
        return cls(n_entities, n_relations, dim, ent_dense=ent, rel=rel)

    def _check_compatible(self, other: "GradientVector") -> None:
        if (self.n_entities, self.n_relations, self.dim) != (
            other.n_entities,
            other.n_relations,
            other.dim,
        ):
            raise ValueError("gradient vectors over different parameter spaces")

    def dot(self, other: "GradientVector") -> float:
        self._check_compatible(other)
        total = float(np.vdot(self.rel, other.rel))
        for wa, ca in self.ent_rank1:
            for wb, cb in other.ent_rank1:
                total += float(wa @ wb) * float(ca @ cb)
            for e, vb in other.ent_rows.items():
                total += float(wa[e]) * float(ca @ vb)
            if other.ent_dense is not None:
                total += float(wa @ (other.ent_dense @ ca))
        for e, va in self.ent_rows.items():
            for wb, cb in other.ent_rank1:
                total += float(wb[e]) * float(va @ cb)
            vb = other.ent_rows.get(e)
            if vb is not None:
                total += float(va @ vb)
            if other.ent_dense is not None:
                total += float(va @ other.ent_dense[e])
        if self.ent_dense is not None:
            for wb, cb in other.ent_rank1:
                total += float(wb @ (self.ent_dense @ cb))
            for e, vb in other.ent_rows.items():
                total += float(self.ent_dense[e] @ vb)
            if other.ent_dense is not None:
                total += float(np.vdot(self.ent_dense, other.ent_dense))
        return total

    def norm(self) -> float:
        return float(np.sqrt(max(self.dot(self), 0.0)))

    def scale(self, alpha: float) -> "GradientVector":
        out = GradientVector(
            self.n_entities,
            self.n_relations,
            self.dim,
            ent_rank1=[(alpha * w, c.copy()) for w, c in self.ent_rank1],
            ent_rows={e: alpha * v for e, v in self.ent_rows.items()},
            ent_dense=None if self.ent_dense is None else alpha * self.ent_dense,
            rel=alpha * self.rel,
        )
        return out

    def add(self, other: "GradientVector") -> "GradientVector":
        self._check_compatible(other)
        rows = {e: v.copy() for e, v in self.ent_rows.items()}
        for e, v in other.ent_rows.items():
            rows[e] = rows[e] + v if e in rows else v.copy()
        dense = None
        if self.ent_dense is not None or other.ent_dense is not None:
            dense = np.zeros((self.n_entities, self.dim))
            if self.ent_dense is not None:
                dense += self.ent_dense
            if other.ent_dense is not None:
                dense += other.ent_dense
        return GradientVector(
            self.n_entities,
            self.n_relations,
            self.dim,
            ent_rank1=self.ent_rank1 + other.ent_rank1,
            ent_rows=rows,
            ent_dense=dense,
            rel=self.rel + other.rel,
        )

    def axpy(self, alpha: float, other: "GradientVector") -> "GradientVector":
        """self + alpha * other."""
        return self.add(other.scale(alpha))

    def __add__(self, other: "GradientVector") -> "GradientVector":
        return self.add(other)

    def __sub__(self, other: "GradientVector") -> "GradientVector":
        return self.add(other.scale(-1.0))

    def __mul__(self, alpha: float) -> "GradientVector":
        return self.scale(alpha)

    __rmul__ = __mul__

    def to_dense_entity(self) -> np.ndarray:
        ent = np.zeros((self.n_entities, self.dim))
        if self.ent_dense is not None:
            ent += self.ent_dense
        for w, c in self.ent_rank1:
            ent += np.outer(w, c)
        for e, v in self.ent_rows.items():
            ent[e] += v
        return ent

    def to_dense_flat(self) -> np.ndarray:
        return np.concatenate([self.to_dense_entity().ravel(), self.rel.ravel()])


def _softmax_and_logsumexp(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-stable softmax and log-sum-exp for a (B, n) score matrix."""
    mx = v.max(axis=1, keepdims=True)
    ex = np.exp(v - mx)
    z = ex.sum(axis=1, keepdims=True)
    return ex / z, (mx + np.log(z))[:, 0]


def _reg_row_value(kind: str, rows: np.ndarray, weight: float) -> np.ndarray:
    if kind == "transe":
        return weight * np.sum(rows * rows, axis=-1)
    if kind == "complex":
        re, im = split_complex(rows)
        mod = np.sqrt(re * re + im * im)
        return weight * np.sum(mod**3, axis=-1)
    return weight * np.sum(np.abs(rows) ** 3, axis=-1)


def _reg_row_grad(kind: str, rows: np.ndarray, weight: float) -> np.ndarray:
    if kind == "transe":
        return 2.0 * weight * rows
    if kind == "complex":
        re, im = split_complex(rows)
        mod = np.sqrt(re * re + im * im)
        return 3.0 * weight * np.concatenate([mod, mod], axis=-1) * rows
    return 3.0 * weight * np.abs(rows) * rows


def _reg_weight(kind: str, reg: RegConfig) -> float:
    return reg.l2 if kind == "transe" else reg.n3


def batch_loss_gradient(
    kind: str,
    E: np.ndarray,
    R: np.ndarray,
    triples: np.ndarray,
    reg: RegConfig,
    want_grad: bool = True,
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Summed loss and dense gradient matrices for a batch of triples.

    `triples` is an integer (B, 3) array of (s, r, o) rows. Arrays keep the
    dtype of E/R so the training hot loop can run in float32.
    """
    triples = np.asarray(triples)
    if triples.ndim == 1:
        triples = triples[None, :]
    B = triples.shape[0]
    s, r, o = triples[:, 0], triples[:, 1], triples[:, 2]
    gE = np.zeros_like(E) if want_grad else None
    gR = np.zeros_like(R) if want_grad else None
    loss_sum = 0.0

    for side in ("object", "subject"):
        heads, tails = (s, o) if side == "object" else (o, s)
        if kind in ("distmult", "complex"):
            ctx = (
                object_context(kind, E, R, s, r)
                if side == "object"
                else subject_context(kind, E, R, r, o)
            )
            V = ctx @ E.T
            probs, lse = _softmax_and_logsumexp(V)
            v_true = np.einsum("bd,bd->b", ctx, E[tails])
            loss_sum += float(np.sum(lse - v_true))
            if not want_grad:
                continue
            W = probs
            W[np.arange(B), tails] -= 1.0
            gE += W.T @ ctx
            G = W @ E
            if kind == "distmult":
                corr_head = R[r] * G
                corr_rel = E[s] * G if side == "object" else E[o] * G
            elif side == "object":
                corr_head = cmul(conj(R[r]), G)
                corr_rel = cmul(conj(E[s]), G)
            else:
                corr_head = cmul(R[r], G)
                corr_rel = cmul(conj(G), E[o])
            np.add.at(gE, heads, corr_head)
            np.add.at(gR, r, corr_rel)
        else:
            A = E[s] + R[r] if side == "object" else E[o] - R[r]
            dists = _all_distances(A, E)
            V = -dists
            probs, lse = _softmax_and_logsumexp(V)
            v_true = -np.linalg.norm(A - E[tails], axis=1)
            loss_sum += float(np.sum(lse - v_true))
            if not want_grad:
                continue
            W = probs
            W[np.arange(B), tails] -= 1.0
            U = np.where(dists > _NORM_FLOOR, W / np.maximum(dists, _NORM_FLOOR), 0.0)
            gE += U.T @ A
            gE -= U.sum(axis=0)[:, None] * E
            C = U.sum(axis=1)[:, None] * A - U @ E
            if side == "object":
                np.add.at(gE, s, -C)
                np.add.at(gR, r, -C)
            else:
                np.add.at(gE, o, -C)
                np.add.at(gR, r, C)

    weight = _reg_weight(kind, reg)
    if weight > 0.0:
        loss_sum += float(
            np.sum(_reg_row_value(kind, E[s], weight))
            + np.sum(_reg_row_value(kind, E[o], weight))
            + np.sum(_reg_row_value(kind, R[r], weight))
        )
        if want_grad:
            np.add.at(gE, s, _reg_row_grad(kind, E[s], weight))
            np.add.at(gE, o, _reg_row_grad(kind, E[o], weight))
            np.add.at(gR, r, _reg_row_grad(kind, R[r], weight))

    return loss_sum, gE, gR


def loss(model: EmbeddingModel, triple: Triple, reg: RegConfig) -> float:
    """Per-triple training loss (both cross-entropy directions + regularization)."""
    model.check_triple(triple)
    value, _, _ = batch_loss_gradient(
        model.kind, model.E, model.R, np.array([triple]), reg, want_grad=False
    )
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss for triple {triple}")
    return float(value)


def loss_gradient(
    model: EmbeddingModel,
    triple: Triple,
    reg: RegConfig,
    include_reg: bool = True,
) -> GradientVector:
    """Structured analytic gradient of one triple's loss w.r.t. {E, R}."""
    model.check_triple(triple)
    kind = model.kind
    E = model.E.astype(np.float64, copy=False)
    R = model.R.astype(np.float64, copy=False)
    n, d = E.shape
    ti = np.array([triple])
    s, r, o = triple

    grad = GradientVector.zeros(n, model.n_relations, d)
    if kind == "transe":
        _, gE, gR = batch_loss_gradient(
            kind, E, R, ti, reg if include_reg else RegConfig(), want_grad=True
        )
        if not (np.all(np.isfinite(gE)) and np.all(np.isfinite(gR))):
            raise DivergenceError(f"non-finite gradient for triple {triple}")
        grad.ent_dense = gE
        grad.rel = gR
        return grad

    rows: dict[int, np.ndarray] = {}

    def add_row(e: int, v: np.ndarray) -> None:
        rows[e] = rows[e] + v if e in rows else v

    for side in ("object", "subject"):
        if side == "object":
            ctx = object_context(kind, E, R, np.array([s]), np.array([r]))[0]
            tail, head = o, s
        else:
            ctx = subject_context(kind, E, R, np.array([r]), np.array([o]))[0]
            tail, head = s, o
        v = E @ ctx
        mx = v.max()
        ex = np.exp(v - mx)
        w = ex / ex.sum()
        w[tail] -= 1.0
        grad.ent_rank1.append((w, ctx))
        G = E.T @ w
        if kind == "distmult":
            add_row(head, R[r] * G)
            grad.rel[r] += (E[s] if side == "object" else E[o]) * G
        elif side == "object":
            add_row(head, cmul(conj(R[r]), G))
            grad.rel[r] += cmul(conj(E[s]), G)
        else:
            add_row(head, cmul(R[r], G))
            grad.rel[r] += cmul(conj(G), E[o])

    weight = _reg_weight(kind, reg) if include_reg else 0.0
    if weight > 0.0:
        add_row(s, _reg_row_grad(kind, E[s], weight))
        add_row(o, _reg_row_grad(kind, E[o], weight))
        grad.rel[r] += _reg_row_grad(kind, R[r], weight)

    grad.ent_rows = rows
    if any(not np.all(np.isfinite(w)) for w, _ in grad.ent_rank1):
        raise DivergenceError(f"non-finite gradient for triple {triple}")
    return grad


def mean_loss_gradient_flat(
    kind: str, E: np.ndarray, R: np.ndarray, triples: np.ndarray, reg: RegConfig
) -> np.ndarray:
    """Mean loss gradient over a sample of triples as one flat float64 vector."""
    _, gE, gR = batch_loss_gradient(kind, E, R, triples, reg, want_grad=True)
    out = np.concatenate([gE.ravel(), gR.ravel()]).astype(np.float64, copy=False)
    return out / len(np.atleast_2d(triples))
