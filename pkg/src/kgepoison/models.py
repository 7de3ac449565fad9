"""Embedding models: parameter store, scoring functions and triple feature vectors.

Three model families are supported. DistMult scores a triple with the
tri-linear dot product of the subject, relation and object embeddings;
ComplEx does the same in complex arithmetic with the object conjugated
(k complex coordinates stored as 2k reals, real parts first); TransE scores
with the negative Euclidean distance of e_s + e_r from e_o. Feature vectors
are the per-dimension terms of the same scores before reduction, so for the
multiplicative families sum(feature_vector(t)) == score(t).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .kg import Triple

MODEL_KINDS = ("distmult", "complex", "transe")

_MAGIC = b"kgepoison-checkpoint-v1\n"


@dataclass(frozen=True)
class RegConfig:
    """Regularization weights: n3 for multiplicative models, l2 for TransE."""

    n3: float = 0.0
    l2: float = 0.0

    def __post_init__(self) -> None:
        if self.n3 < 0 or self.l2 < 0:
            raise ValueError("regularization weights must be >= 0")


@dataclass
class EmbeddingModel:
    """Entity and relation embedding matrices plus the scoring-family tag."""

    kind: str
    k: int
    E: np.ndarray  # (n_entities, d)
    R: np.ndarray  # (n_relations, d)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.E.shape[1] != self.R.shape[1]:
            raise ValueError("entity and relation embedding widths differ")
        expected = 2 * self.k if self.kind == "complex" else self.k
        if self.E.shape[1] != expected:
            raise ValueError(f"width {self.E.shape[1]} inconsistent with k={self.k}")

    @property
    def d(self) -> int:
        return self.E.shape[1]

    @property
    def n_entities(self) -> int:
        return self.E.shape[0]

    @property
    def n_relations(self) -> int:
        return self.R.shape[0]

    @property
    def n_params(self) -> int:
        return self.E.size + self.R.size

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.kind, self.k, self.E.copy(), self.R.copy(), self.seed)

    def params_flat(self) -> np.ndarray:
        """All parameters as one float64 vector, entity block first."""
        return np.concatenate([self.E.ravel(), self.R.ravel()]).astype(np.float64, copy=False)

    def with_params_flat(self, flat: np.ndarray) -> "EmbeddingModel":
        if flat.size != self.n_params:
            raise ValueError("flat parameter vector has wrong length")
        ne, d = self.E.shape
        E = flat[: ne * d].reshape(ne, d).copy()
        R = flat[ne * d :].reshape(self.R.shape).copy()
        return EmbeddingModel(self.kind, self.k, E, R, self.seed)

    def check_triple(self, t: Triple) -> None:
        if not (0 <= t.s < self.n_entities and 0 <= t.o < self.n_entities):
            raise DataError(f"entity id out of range in {t}")
        if not 0 <= t.r < self.n_relations:
            raise DataError(f"relation id out of range in {t}")


def init_model(kind: str, n_entities: int, n_relations: int, k: int, seed: int) -> EmbeddingModel:
    """Fresh model with entries uniform in [-0.1, 0.1], bit-reproducible by seed."""
    if n_entities < 1 or n_relations < 1 or k < 1:
        raise ValueError("dimensions must be positive")
    d = 2 * k if kind == "complex" else k
    rng = np.random.default_rng(seed)
    E = rng.uniform(-0.1, 0.1, size=(n_entities, d))
    R = rng.uniform(-0.1, 0.1, size=(n_relations, d))
    return EmbeddingModel(kind, k, E, R, seed)


# -- complex-storage helpers (stacked [real | imag] rows) --

def split_complex(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = x.shape[-1] // 2
    return x[..., :half], x[..., half:]


def cmul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise complex product on stacked storage."""
    xr, xi = split_complex(x)
    yr, yi = split_complex(y)
    return np.concatenate([xr * yr - xi * yi, xr * yi + xi * yr], axis=-1)


def conj(x: np.ndarray) -> np.ndarray:
    xr, xi = split_complex(x)
    return np.concatenate([xr, -xi], axis=-1)


def score(model: EmbeddingModel, triple: Triple) -> float:
    model.check_triple(triple)
    es, er, eo = model.E[triple.s], model.R[triple.r], model.E[triple.o]
    if model.kind == "distmult":
        return float(np.sum(es * er * eo))
    if model.kind == "complex":
        return float(np.sum(cmul(cmul(es, er), conj(eo))[: model.k]))
    return float(-np.linalg.norm(es + er - eo))


def feature_vector(model: EmbeddingModel, triple: Triple) -> np.ndarray:
    """Length-k per-dimension score terms (unreduced scoring function)."""
    model.check_triple(triple)
    es, er, eo = model.E[triple.s], model.R[triple.r], model.E[triple.o]
    if model.kind == "distmult":
        return es * er * eo
    if model.kind == "complex":
        return cmul(cmul(es, er), conj(eo))[: model.k]
    return -(es + er - eo)


def object_context(kind: str, E: np.ndarray, R: np.ndarray, s, r) -> np.ndarray:
    """Rows c such that score(s, r, j) = c . E_j for multiplicative kinds."""
    if kind == "distmult":
        return E[s] * R[r]
    return cmul(E[s], R[r])


def subject_context(kind: str, E: np.ndarray, R: np.ndarray, r, o) -> np.ndarray:
    """Rows c such that score(i, r, o) = c . E_i for multiplicative kinds."""
    if kind == "distmult":
        return R[r] * E[o]
    return cmul(conj(R[r]), E[o])


def _all_distances(points: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Euclidean distances from each point row to every entity row, (B, n)."""
    sq = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ E.T
        + np.sum(E * E, axis=1)[None, :]
    )
    return np.sqrt(np.maximum(sq, 0.0))


def score_candidates(model: EmbeddingModel, heads: np.ndarray, rels: np.ndarray, side: str) -> np.ndarray:
    """Score (B, n_entities) candidate completions.

    side="object": heads are subjects, entry [b, j] = score(heads[b], rels[b], j).
    side="subject": heads are objects, entry [b, i] = score(i, rels[b], heads[b]).
    """
    heads = np.asarray(heads)
    rels = np.asarray(rels)
    E, R = model.E, model.R
    if model.kind in ("distmult", "complex"):
        ctx = (
            object_context(model.kind, E, R, heads, rels)
            if side == "object"
            else subject_context(model.kind, E, R, rels, heads)
        )
        return ctx @ E.T
    if side == "object":
        points = E[heads] + R[rels]
    else:
        points = E[heads] - R[rels]
    return -_all_distances(points, E)


def score_all_objects(model: EmbeddingModel, s: int, r: int) -> np.ndarray:
    model.check_triple(Triple(s, r, 0))
    return score_candidates(model, np.array([s]), np.array([r]), "object")[0]


def score_all_subjects(model: EmbeddingModel, r: int, o: int) -> np.ndarray:
    model.check_triple(Triple(0, r, o))
    return score_candidates(model, np.array([o]), np.array([r]), "subject")[0]


# -- checkpoint container ----------------------------------------------------
# A deterministic byte layout: magic line, one JSON header line, then the raw
# little-endian C-order array bytes in header order. Reruns of an identical
# training job therefore produce identical files.


@dataclass
class Checkpoint:
    model: EmbeddingModel
    config_hash: str = ""
    config: dict | None = None
    epochs_done: int = 0
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    model = ckpt.model
    arrays: list[tuple[str, np.ndarray]] = [
        ("E", np.ascontiguousarray(model.E, dtype=np.float64)),
        ("R", np.ascontiguousarray(model.R, dtype=np.float64)),
    ]
    for name in sorted(ckpt.optimizer_state):
        arr = ckpt.optimizer_state[name]
        dtype = np.int64 if np.issubdtype(arr.dtype, np.integer) else np.float64
        arrays.append((f"opt.{name}", np.ascontiguousarray(arr, dtype=dtype)))
    header = {
        "format": "kgepoison-checkpoint",
        "kind": model.kind,
        "k": model.k,
        "seed": model.seed,
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "dim": model.d,
        "config_hash": ckpt.config_hash,
        "config": ckpt.config,
        "epochs_done": ckpt.epochs_done,
        "arrays": [
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str}
            for name, arr in arrays
        ],
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in arrays:
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(
    path: str | Path,
    n_entities: int | None = None,
    n_relations: int | None = None,
) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    if n_entities is not None and header["n_entities"] != n_entities:
        raise DataError(
            f"checkpoint has {header['n_entities']} entities, expected {n_entities}"
        )
    if n_relations is not None and header["n_relations"] != n_relations:
        raise DataError(
            f"checkpoint has {header['n_relations']} relations, expected {n_relations}"
        )
    model = EmbeddingModel(header["kind"], header["k"], arrays.pop("E"), arrays.pop("R"), header["seed"])
    opt_state = {name[len("opt.") :]: arr for name, arr in arrays.items()}
    return Checkpoint(
        model=model,
        config_hash=header["config_hash"],
        config=header.get("config"),
        epochs_done=header["epochs_done"],
        optimizer_state=opt_state,
    )


def checkpoint_hash(path: str | Path) -> str:
    """sha256 of the checkpoint file; stable because the layout is deterministic."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
