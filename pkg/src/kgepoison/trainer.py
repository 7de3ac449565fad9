"""Mini-batched two-direction cross-entropy training with deterministic seeding.

Batches are drawn from a per-epoch permutation derived from (seed, epoch
index), gradients are summed within a batch, and one optimizer step is taken
per batch. Given identical inputs (including the seed and thread count) the
returned parameters are bit-identical; resuming from a checkpoint that holds
the optimizer state reproduces an uninterrupted run exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import evaluation
from .errors import DataError, DivergenceError
from .gradients import batch_loss_gradient
from .kg import KnowledgeGraph
from .models import Checkpoint, EmbeddingModel, RegConfig, init_model, save_checkpoint
from .seeding import derive_seed

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adagrad", "adam")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    k: int = 32
    batch_size: int = 128
    learning_rate: float = 0.1
    optimizer: str = "adagrad"
    reg_n3: float = 0.0
    reg_l2: float = 0.0
    seed: int = 0
    float32: bool = False  # hot-loop dtype only; checkpoints stay float64
    eval_every: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epsilon: float = 1e-10

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @property
    def reg(self) -> RegConfig:
        return RegConfig(n3=self.reg_n3, l2=self.reg_l2)


def config_hash(config: TrainConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def _fresh_opt_state(config: TrainConfig, E: np.ndarray, R: np.ndarray) -> dict[str, np.ndarray]:
    if config.optimizer == "adagrad":
        return {"acc_E": np.zeros_like(E), "acc_R": np.zeros_like(R)}
    return {
        "m_E": np.zeros_like(E),
        "v_E": np.zeros_like(E),
        "m_R": np.zeros_like(R),
        "v_R": np.zeros_like(R),
        "t": np.zeros(1, dtype=np.int64),
    }


def _step(config: TrainConfig, params, grads, state) -> None:
    lr, eps = params["lr"], config.epsilon
    if config.optimizer == "adagrad":
        for name in ("E", "R"):
            g = grads[name]
            acc = state[f"acc_{name}"]
            acc += g * g
            params[name] -= lr * g / (np.sqrt(acc) + eps)
        return
    state["t"][0] += 1
    t = int(state["t"][0])
    b1, b2 = config.adam_beta1, config.adam_beta2
    correction = np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for name in ("E", "R"):
        g = grads[name]
        m, v = state[f"m_{name}"], state[f"v_{name}"]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[name] -= lr * correction * m / (np.sqrt(v) + eps)


def _train_loop(
    kg: KnowledgeGraph,
    config: TrainConfig,
    E: np.ndarray,
    R: np.ndarray,
    opt_state: dict[str, np.ndarray],
    start_epoch: int,
    n_epochs: int,
    kind: str,
    log_writer=None,
) -> None:
    train = np.asarray(kg.train, dtype=np.int64)
    reg = config.reg
    params = {"E": E, "R": R, "lr": config.learning_rate}
    for epoch in range(start_epoch, start_epoch + n_epochs):
        perm = np.random.default_rng(derive_seed(config.seed, f"epoch:{epoch}")).permutation(len(train))
        epoch_loss = 0.0
        for b0 in range(0, len(train), config.batch_size):
            batch = train[perm[b0 : b0 + config.batch_size]]
            loss_sum, gE, gR = batch_loss_gradient(kind, E, R, batch, reg)
            if not np.isfinite(loss_sum):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b0 // config.batch_size}"
                )
            epoch_loss += loss_sum
            _step(config, params, {"E": gE, "R": gR}, opt_state)
        mean_loss = epoch_loss / len(train)
        valid_mrr = ""
        if kg.valid and (epoch + 1 - start_epoch) % config.eval_every == 0:
            snapshot = EmbeddingModel(
                kind, config.k, E.astype(np.float64), R.astype(np.float64), config.seed
            )
            valid_mrr = f"{evaluation.evaluate(snapshot, kg, kg.valid).mrr:.6f}"
        if log_writer is not None:
            log_writer.writerow([epoch, f"{mean_loss:.6f}", valid_mrr])
        logger.info("epoch %d: loss=%.6f valid_mrr=%s", epoch, mean_loss, valid_mrr or "-")


def train(
    kg: KnowledgeGraph,
    config: TrainConfig,
    kind: str = "distmult",
    epoch_log_path: str | Path | None = None,
) -> EmbeddingModel:
    """Train a fresh model of the given kind on kg; bit-reproducible per seed."""
    ckpt = train_checkpoint(kg, config, kind, epoch_log_path=epoch_log_path)
    return ckpt.model


def train_checkpoint(
    kg: KnowledgeGraph,
    config: TrainConfig,
    kind: str,
    epoch_log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> Checkpoint:
    """Like train(), but returns the full checkpoint (optimizer state included)."""
    model = init_model(kind, kg.n_entities, kg.n_relations, config.k, config.seed)
    dtype = np.float32 if config.float32 else np.float64
    E = model.E.astype(dtype)
    R = model.R.astype(dtype)
    opt_state = _fresh_opt_state(config, E, R)
    ckpt = _run(kg, config, kind, E, R, opt_state, 0, config.epochs, epoch_log_path)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, ckpt)
    return ckpt


def _run(kg, config, kind, E, R, opt_state, start_epoch, n_epochs, epoch_log_path) -> Checkpoint:
    log_fh = None
    log_writer = None
    try:
        if epoch_log_path is not None:
            fresh = start_epoch == 0
            log_fh = open(epoch_log_path, "a" if not fresh else "w", encoding="utf-8", newline="")
            log_writer = csv.writer(log_fh)
            if fresh:
                log_writer.writerow(["epoch", "loss", "valid_mrr"])
        _train_loop(kg, config, E, R, opt_state, start_epoch, n_epochs, kind, log_writer)
    finally:
        if log_fh is not None:
            log_fh.close()
    model = EmbeddingModel(kind, config.k, E.astype(np.float64), R.astype(np.float64), config.seed)
    return Checkpoint(
        model=model,
        config_hash=config_hash(config),
        config=asdict(config),
        epochs_done=start_epoch + n_epochs,
        optimizer_state=opt_state,
    )


def resume(
    ckpt: Checkpoint,
    kg: KnowledgeGraph,
    extra_epochs: int,
    epoch_log_path: str | Path | None = None,
) -> Checkpoint:
    """Continue optimization; resume(train(c, n), m) == train(c, n+m)."""
    if extra_epochs < 0:
        raise ValueError("extra_epochs must be >= 0")
    model = ckpt.model
    if model.n_entities != kg.n_entities or model.n_relations != kg.n_relations:
        raise DataError(
            f"checkpoint vocabulary ({model.n_entities} entities, {model.n_relations} "
            f"relations) does not match dataset ({kg.n_entities}, {kg.n_relations})"
        )
    if ckpt.config is None:
        raise DataError("checkpoint lacks the training config needed for resume")
    config = TrainConfig(**ckpt.config)
    if extra_epochs == 0:
        return ckpt
    dtype = np.float32 if config.float32 else np.float64
    E = model.E.astype(dtype)
    R = model.R.astype(dtype)
    opt_state = {k: v.copy() for k, v in ckpt.optimizer_state.items()}
    if not opt_state:
        opt_state = _fresh_opt_state(config, E, R)
    else:
        for key, value in opt_state.items():
            if key != "t":
                opt_state[key] = value.astype(dtype)
    return _run(kg, config, model.kind, E, R, opt_state, ckpt.epochs_done, extra_epochs, epoch_log_path)


def preset_config(preset: dict, **overrides) -> TrainConfig:
    """Build a TrainConfig from a preset dict, applying keyword overrides."""
    merged = {key: value for key, value in preset.items() if key != "kind"}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**merged)
