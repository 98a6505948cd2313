"""Loss functions and the mini-batch training loop.

The product-of-powers loss drives the stiff ODE problems (log-domain
targets, minimum exactly 1); the relative-L2 loss drives the PDE
problems.  Targets start at the second stored time by default: the
first row of every trajectory is the initial condition, which is the
network's input rather than something to predict (and its exact zeros
cannot be log-scaled meaningfully).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .exceptions import DivergenceError, ShapeError, TransformDomainError
from .model import (
    LiLaNModel,
    backward_training,
    decoder_output,
    encoder_inputs,
    forward_training,
    raw_grad_from_transformed,
    transformed_from_raw,
)

LOG10 = np.log(10.0)
LOSS_KINDS = ("exp_product", "abs_relative", "rel_l2")


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    if pred.ndim != 3:
        raise ShapeError("expected (samples, times, components) arrays")
    if not (np.isfinite(pred).all() and np.isfinite(target).all()):
        raise ShapeError("loss inputs must be finite")
    return pred, target


def loss_exp_product(pred, target, clamp: float = 300.0) -> float:
    """Mean over samples of 10^(mean absolute deviation); floor is 1."""
    pred, target = _check_pair(pred, target)
    expo = np.abs(pred - target).mean(axis=(1, 2))
    return float(np.power(10.0, np.minimum(expo, clamp)).mean())


def loss_exp_product_grad(pred, target, clamp: float = 300.0):
    pred, target = _check_pair(pred, target)
    n_s, n_t, n_k = pred.shape
    diff = pred - target
    expo = np.abs(diff).mean(axis=(1, 2))
    clamped = expo > clamp
    powers = np.power(10.0, np.minimum(expo, clamp))
    loss = float(powers.mean())
    weight = np.where(clamped, 0.0, powers) * (LOG10 / (n_s * n_t * n_k))
    grad = np.sign(diff) * weight[:, None, None]
    return loss, grad, int(clamped.sum())


def loss_abs_relative(pred, target) -> float:
    """Mean componentwise |error| / |target|; needs nonzero targets."""
    pred, target = _check_pair(pred, target)
    if np.any(target == 0.0):
        raise TransformDomainError("absolute-relative loss needs nonzero targets")
    return float(np.abs((pred - target) / target).mean())


def loss_abs_relative_grad(pred, target):
    pred, target = _check_pair(pred, target)
    if np.any(target == 0.0):
        raise TransformDomainError("absolute-relative loss needs nonzero targets")
    diff = pred - target
    loss = float(np.abs(diff / target).mean())
    grad = np.sign(diff) / np.abs(target) / diff.size
    return loss, grad, 0


def loss_rel_l2(pred, target) -> float:
    """Mean over (sample, time) of relative Euclidean error; the R2 metric."""
    pred, target = _check_pair(pred, target)
    norms = np.linalg.norm(target, axis=2)
    if np.any(norms == 0.0):
        raise TransformDomainError("relative-L2 loss needs nonzero target rows")
    errs = np.linalg.norm(pred - target, axis=2)
    return float((errs / norms).mean())


def loss_rel_l2_grad(pred, target):
    pred, target = _check_pair(pred, target)
    norms = np.linalg.norm(target, axis=2)
    if np.any(norms == 0.0):
        raise TransformDomainError("relative-L2 loss needs nonzero target rows")
    diff = pred - target
    errs = np.linalg.norm(diff, axis=2)
    loss = float((errs / norms).mean())
    count = errs.size
    safe = np.where(errs > 0.0, errs, 1.0)
    grad = diff / (safe * norms)[:, :, None] / count
    grad = np.where(errs[:, :, None] > 0.0, grad, 0.0)
    return loss, grad, 0


_LOSS_FNS = {
    "exp_product": (loss_exp_product, loss_exp_product_grad),
    "abs_relative": (loss_abs_relative, loss_abs_relative_grad),
    "rel_l2": (loss_rel_l2, loss_rel_l2_grad),
}


@dataclass
class TrainConfig:
    loss: str = "exp_product"
    lr: float = 1e-3
    epochs: int = 1000
    batch_size: int = 0  # 0 means full batch
    seed: int = 0
    val_every: int = 10
    include_initial_time: bool = False
    exponent_clamp: float = 300.0
    history_path: str | None = None

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSS_KINDS}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainResult:
    model: LiLaNModel  # final parameters
    best_model: LiLaNModel  # lowest validation loss seen (final if no val set)
    history: list = field(default_factory=list)
    best_val: float = np.inf


def _training_tensors(model: LiLaNModel, ds, include_initial: bool):
    t_idx = slice(None) if include_initial else slice(1, None)
    enc_in = encoder_inputs(model, ds.x0, ds.params)
    times = ds.times[t_idx]
    t_scaled = model.transforms.apply_time(times)
    target = model.transforms.apply_states(ds.states[:, t_idx, :])
    return enc_in, t_scaled, target


def dataset_loss(model: LiLaNModel, ds, loss: str = "exp_product", include_initial=False) -> float:
    """Loss of the current model over a whole dataset (no gradients)."""
    enc_in, t_scaled, target = _training_tensors(model, ds, include_initial)
    raw = decoder_output(model, enc_in, t_scaled)
    pred = transformed_from_raw(model, raw, ds.x0)
    return _LOSS_FNS[loss][0](pred, target)


def train(model: LiLaNModel, train_ds, val_ds=None, cfg: TrainConfig | None = None) -> TrainResult:
    """Adam training loop; deterministic for a fixed seed on one thread."""
    cfg = cfg or TrainConfig()
    if not model.transforms.fitted:
        raise TransformDomainError("fit transforms on the training set before training")
    loss_grad = _LOSS_FNS[cfg.loss][1]

    enc_in, t_scaled, target = _training_tensors(model, train_ds, cfg.include_initial_time)
    x0 = train_ds.x0
    n = enc_in.shape[0]
    batch = n if cfg.batch_size in (0, None) else min(cfg.batch_size, n)

    opt = {
        group: [nets.init_adam(net, cfg.lr) for net in getattr(model, group)]
        for group in ("state_encoders", "slope_encoders", "time_warps", "decoders")
    }
    gain_opt = [nets.init_vector_adam(g, cfg.lr) for g in model.warp_gains]
    rng = np.random.default_rng(cfg.seed)

    result = TrainResult(model=model, best_model=model.copy(), history=[])
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        clamped = 0
        for lo in range(0, n, batch):
            sel = order[lo : lo + batch]
            raw, cache = forward_training(model, enc_in[sel], t_scaled)
            if not np.isfinite(raw).all():
                raise DivergenceError(f"non-finite prediction at epoch {epoch}")
            pred = transformed_from_raw(model, raw, x0[sel])
            if cfg.loss == "exp_product":
                loss, g_trans, n_clamp = loss_grad(pred, target[sel], cfg.exponent_clamp)
            else:
                loss, g_trans, n_clamp = loss_grad(pred, target[sel])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            clamped += n_clamp
            g_raw = raw_grad_from_transformed(model, cache, g_trans, x0[sel])
            grads = backward_training(model, cache, g_raw)
            gain_grads = grads.pop("warp_gains")
            for group, glist in grads.items():
                for net, g, state in zip(getattr(model, group), glist, opt[group]):
                    nets.adam_step(net, g, state)
            for vec, g, state in zip(model.warp_gains, gain_grads, gain_opt):
                nets.vector_adam_step(vec, g, state)
            epoch_loss += loss * sel.size
        epoch_loss /= n

        row = {
            "epoch": epoch,
            "train_loss": epoch_loss,
            "val_loss": float("nan"),
            "wall_seconds": time.perf_counter() - t_start,
            "clamped": clamped,
        }
        last = epoch == cfg.epochs - 1
        if val_ds is not None and (epoch % cfg.val_every == 0 or last):
            val = dataset_loss(model, val_ds, cfg.loss, cfg.include_initial_time)
            row["val_loss"] = val
            if val < result.best_val:
                result.best_val = val
                result.best_model = model.copy()
        result.history.append(row)

    if val_ds is None:
        result.best_model = model
        result.best_val = result.history[-1]["train_loss"] if result.history else np.inf
    if cfg.history_path:
        write_history_csv(result.history, cfg.history_path)
    return result


def write_history_csv(history, path) -> None:
    with open(str(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "wall_seconds", "clamped"])
        for row in history:
            writer.writerow(
                [row["epoch"], repr(row["train_loss"]), repr(row["val_loss"]),
                 f"{row['wall_seconds']:.3f}", row["clamped"]]
            )
