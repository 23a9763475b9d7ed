"""Cross-entropy training with ADAM, gradient clipping, L2 decay and weight noise."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, InputError, NumericError
from .las import LasModel, save_checkpoint, teacher_forced_batch
from .numerics import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(NumericError):
    """The training loss stopped being finite."""


@dataclass
class TrainConfig:
    lr_initial: float = 1e-3
    lr_decayed: float = 1e-4
    clip_norm: float = 1.0
    l2: float = 1e-5
    decay_biases: bool = True
    weight_noise: float = 0.01
    noise_start_epoch: int = 2
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 3
    stop_after_decay: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("lr_initial", "lr_decayed", "clip_norm", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l2 < 0 or self.weight_noise < 0:
            raise ConfigError("l2 and weight_noise must be non-negative")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("patience, batch_size and max_epochs must be >= 1")


# -- loss -------------------------------------------------------------------------
def xent_loss(log_probs: Tensor, y) -> Tensor:
    """Negative log-likelihood of gold ids ``y`` under per-step log-distributions ``[L, n]``."""
    y = np.asarray(y, dtype=np.int64)
    if log_probs.ndim != 2 or log_probs.shape[0] != len(y):
        raise InputError(f"{len(y)} targets for log-probabilities of shape {log_probs.shape}")
    return nx.neg(nx.sum(log_probs[np.arange(len(y)), y]))


def batch_xent(log_probs: Tensor, targets, mask: np.ndarray) -> tuple[Tensor, int]:
    """Summed masked NLL over a padded batch, and the number of scored characters."""
    B, L, _ = log_probs.shape
    gold = np.zeros((B, L), dtype=np.int64)
    for b, y in enumerate(targets):
        gold[b, :len(y)] = y
    picked = log_probs[np.arange(B)[:, None], np.arange(L)[None, :], gold]
    total = nx.neg(nx.sum(nx.mul(picked, Tensor(mask, dtype=log_probs.dtype))))
    return total, int(mask.sum())


# -- regularization -------------------------------------------------------------------
def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_gradients(grads, max_norm: float = 1.0):
    """Rescale so the global L2 norm is at most ``max_norm``.

    Accepts a list or a name->array dict and returns the same kind.
    """
    items = list(grads.values()) if isinstance(grads, dict) else list(grads)
    for g in items:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    norm = global_norm(items)
    if norm > max_norm:
        scale = max_norm / norm
        items = [g * g.dtype.type(scale) for g in items]
        # float32 rounding can leave the norm a hair above the bound
        while global_norm(items) > max_norm:
            scale *= 1.0 - 1e-7
            items = [g * g.dtype.type(scale) for g in items]
    if isinstance(grads, dict):
        return dict(zip(grads.keys(), items))
    return items


def add_weight_noise(params, sigma: float, rng: np.random.Generator):
    """Copies of ``params`` with i.i.d. ``N(0, sigma^2)`` added; the inputs are untouched."""
    if sigma < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma}")
    items = params.items() if isinstance(params, dict) else enumerate(params)
    out = {}
    for k, p in items:
        p = np.asarray(p)
        out[k] = p.copy() if sigma == 0 else p + rng.normal(0.0, sigma, size=p.shape).astype(p.dtype)
    return out if isinstance(params, dict) else [out[i] for i in range(len(out))]


# -- ADAM ---------------------------------------------------------------------------
@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: OptimizerState, params: dict, grads: dict) -> dict:
    """Bias-corrected ADAM update of ``params`` (name -> Tensor) in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - update.astype(p.dtype)
    return params


def _is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1] == "b"


# -- training ---------------------------------------------------------------------------
def train_step(model: LasModel, batch, opt: OptimizerState, config: TrainConfig,
               rng: np.random.Generator, noise_sigma: float = 0.0) -> tuple[float, int]:
    """One update on ``batch``; returns (summed NLL, scored characters).

    The forward/backward pass sees noisy weights; ADAM updates the clean ones.
    """
    params = model.parameters()
    clean = {k: p.data for k, p in params.items()}
    if noise_sigma > 0:
        noisy = add_weight_noise(clean, noise_sigma, rng)
        for k, p in params.items():
            p.data = noisy[k]
    try:
        model.zero_grad()
        log_probs, targets, mask = teacher_forced_batch(
            model, [u.features for u in batch], [u.labels for u in batch], mode="train")
        total, count = batch_xent(log_probs, targets, mask)
        loss_value = float(total.data)
        if not np.isfinite(loss_value):
            return loss_value, count
        nx.mul(total, 1.0 / count).backward()
        grads = {k: p.grad for k, p in params.items()}
    finally:
        for k, p in params.items():
            p.data = clean[k]
    if config.l2 > 0:
        grads = {k: g + (config.l2 * clean[k] if config.decay_biases or not _is_bias(k) else 0)
                 for k, g in grads.items()}
    grads = clip_gradients(grads, config.clip_norm)
    adam_step(opt, params, grads)
    return loss_value, count


def make_batches(utts, batch_size: int, rng: np.random.Generator) -> list:
    """Length-bucketed batches in random order."""
    order = rng.permutation(len(utts))
    lengths = np.array([len(utts[i].features) for i in order])
    order = order[np.argsort(lengths, kind="stable")]
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [[utts[i] for i in batches[j]] for j in rng.permutation(len(batches))]


def evaluate_loss(model: LasModel, utts, batch_size: int = 64) -> float:
    """Per-character validation NLL with the decode-mode listener."""
    total, count = 0.0, 0
    with nx.no_grad():
        ordered = sorted(utts, key=lambda u: len(u.features))
        for i in range(0, len(ordered), batch_size):
            batch = ordered[i:i + batch_size]
            lp, targets, mask = teacher_forced_batch(
                model, [u.features for u in batch], [u.labels for u in batch], mode="decode")
            nll, n = batch_xent(lp, targets, mask)
            total += float(nll.data)
            count += n
    return total / count


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float
    wall_seconds: float

    def line(self) -> str:
        return (f"{self.epoch}\t{self.train_loss:.6f}\t{self.valid_loss:.6f}\t"
                f"{self.lr:g}\t{self.wall_seconds:.2f}")


class LrSchedule:
    """Drop the rate once after ``patience`` epochs without validation improvement."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.lr = config.lr_initial
        self.decayed = False
        self.best = np.inf
        self.bad_epochs = 0
        self.switch_epoch: int | None = None

    def update(self, epoch: int, valid_loss: float) -> bool:
        """Record an epoch; returns True if training should stop."""
        if valid_loss < self.best:
            self.best = valid_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs < self.config.patience:
            return False
        if not self.decayed:
            self.lr = self.config.lr_decayed
            self.decayed = True
            self.switch_epoch = epoch
            self.bad_epochs = 0
            return False
        return self.config.stop_after_decay


@dataclass
class TrainResult:
    history: list
    best_valid: float
    best_epoch: int
    lr_switch_epoch: int | None


def train_loop(model: LasModel, train_set, valid_set, config: TrainConfig,
               out_dir=None, progress=None) -> TrainResult:
    """Full recipe; leaves the best-validation parameters in ``model``.

    With ``out_dir`` the best model goes to ``model.lasc`` and the per-epoch
    metrics to ``metrics.tsv``.
    """
    if not train_set:
        raise InputError("training set is empty")
    if not valid_set:
        raise InputError("validation set is empty")
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState(config.lr_initial, config.beta1, config.beta2, config.eps)
    schedule = LrSchedule(config)
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out_dir / "metrics.tsv", "w", encoding="utf-8")
        metrics_file.write("# epoch\ttrain_loss_per_char\tvalid_loss_per_char\tlr\twall_seconds\n")
    history, best_params, best_epoch = [], None, 0
    last_finite = None
    try:
        for epoch in range(1, config.max_epochs + 1):
            start = time.perf_counter()
            opt.lr = schedule.lr
            sigma = config.weight_noise if epoch >= config.noise_start_epoch else 0.0
            total, count = 0.0, 0
            for batch in make_batches(train_set, config.batch_size, rng):
                try:
                    loss, n = train_step(model, batch, opt, config, rng, sigma)
                except NumericError as exc:
                    log.warning("epoch %d: skipped update (%s)", epoch, exc)
                    continue
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"training loss became {loss} in epoch {epoch}; last finite per-char loss was "
                        f"{last_finite}")
                total += loss
                count += n
                last_finite = loss / n
            valid = evaluate_loss(model, valid_set)
            if not np.isfinite(valid):
                raise TrainingDiverged(f"validation loss became {valid} in epoch {epoch}; "
                                       f"last finite training loss was {last_finite}")
            metrics = EpochMetrics(epoch, total / max(count, 1), valid, opt.lr, time.perf_counter() - start)
            history.append(metrics)
            if metrics_file is not None:
                metrics_file.write(metrics.line() + "\n")
                metrics_file.flush()
            if progress is not None:
                progress(metrics)
            log.info("epoch %s", metrics.line())
            if valid < schedule.best:
                best_params = {k: p.data.copy() for k, p in model.parameters().items()}
                best_epoch = epoch
                if out_dir is not None:
                    save_checkpoint(model, out_dir / "model.lasc")
            if schedule.update(epoch, valid):
                break
    finally:
        if metrics_file is not None:
            metrics_file.close()
    if best_params is not None:
        for k, p in model.parameters().items():
            p.data = best_params[k]
    return TrainResult(history, schedule.best, best_epoch, schedule.switch_epoch)


def clone_model(model: LasModel) -> LasModel:
    return copy.deepcopy(model)
