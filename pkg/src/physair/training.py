"""Loss, Adam updates, early-stopped training, evaluation and checkpoints."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from . import __version__
from .errors import ConfigError, NumericError
from .model import DTYPE, Batch, ModelConfig, PhysAirModel

log = logging.getLogger(__name__)

HORIZONS = (24, 48, 72)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    lambda_eps: float = 1e-3
    seed: int = 0
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def loss_fn(y_hat, y, eps_margin=None, lambda_eps: float = 0.0):
    """Mean squared error over every (sample, station, hour) plus lambda_eps * eps^2."""
    if torch.isnan(y_hat).any() or torch.isnan(y).any():
        raise NumericError("NaN in loss inputs")
    if y_hat.shape != y.shape:
        raise ConfigError(f"prediction shape {tuple(y_hat.shape)} != target shape {tuple(y.shape)}")
    mse = torch.mean((y_hat - y) ** 2)
    if eps_margin is None or lambda_eps == 0.0:
        return mse
    return mse + lambda_eps * eps_margin**2


def model_loss(model: PhysAirModel, batch: Batch, lambda_eps: float):
    out = model.predict(batch)
    eps = model.physics().get("eps")
    return loss_fn(out.y_hat, batch.y, eps, lambda_eps), out


def backward(model: PhysAirModel, batch: Batch, lambda_eps: float) -> dict:
    """Gradients of the batch-mean loss for every named parameter.

    The upwind mask and the rectifier's active set are constants of the forward pass.
    """
    model.zero_grad(set_to_none=True)
    loss, _ = model_loss(model, batch, lambda_eps)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        grads[name] = g
    return grads


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> AdamState:
    """Bias-corrected Adam, updating the tensors in ``params`` in place."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = torch.zeros_like(p)
                v = torch.zeros_like(p)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            state.m[name], state.v[name] = m, v
            p.sub_(config.lr * (m / c1) / (torch.sqrt(v / c2) + config.adam_eps))
    return state


# --------------------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    best_params: dict
    best_val: float
    history: list
    steps: int
    stopped_early: bool
    diverged: bool = False


def predict_batched(model: PhysAirModel, data: Batch, batch_size: int = 256) -> torch.Tensor:
    outs = []
    with torch.no_grad():
        for a in range(0, len(data), batch_size):
            idx = torch.arange(a, min(a + batch_size, len(data)))
            outs.append(model.predict(data.subset(idx)).y_hat)
    return torch.cat(outs)


def mse_on(model: PhysAirModel, data: Batch) -> float:
    return float(torch.mean((predict_batched(model, data) - data.y) ** 2))


def train(model: PhysAirModel, train_data: Batch, val_data: Optional[Batch], config: TrainConfig) -> TrainResult:
    """Seeded mini-batch Adam with best-validation checkpointing and early stopping.

    Without validation data the training loss plays the validation role.
    """
    if len(train_data) == 0:
        raise ConfigError("empty training set")
    rng = np.random.default_rng(config.seed)
    params = dict(model.named_parameters())
    state = AdamState()
    history = []
    best_val = math.inf
    best = model.param_arrays()
    bad_epochs = 0
    steps = 0
    stopped_early = diverged = False

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_data))
        running = 0.0
        n_batches = 0
        for a in range(0, len(order), config.batch_size):
            batch = train_data.subset(order[a : a + config.batch_size])
            model.zero_grad(set_to_none=True)
            loss, _ = model_loss(model, batch, config.lambda_eps)
            if not torch.isfinite(loss):
                diverged = True
                break
            loss.backward()
            grads = {}
            for name, p in params.items():
                g = torch.zeros_like(p) if p.grad is None else p.grad
                if not torch.isfinite(g).all():
                    diverged = True
                    break
                grads[name] = g
            if diverged:
                break
            adam_step(params, grads, state, config)
            running += loss.item()
            n_batches += 1
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        if diverged:
            log.warning("training diverged in epoch %d; restoring best checkpoint", epoch)
            break

        val = mse_on(model, val_data) if val_data is not None else mse_on(model, train_data)
        row = {"epoch": epoch, "steps": steps, "train_loss": running / max(n_batches, 1), "val_mse": val}
        row.update(model.physics_values())
        history.append(row)
        log.info("epoch %d train %.5f val %.5f", epoch, row["train_loss"], val)
        if not math.isfinite(val):
            diverged = True
            break
        if val < best_val:
            best_val = val
            best = model.param_arrays()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stopped_early = True
                break
        if config.max_steps is not None and steps >= config.max_steps:
            break

    model.load_param_arrays(best)
    return TrainResult(best, best_val, history, steps, stopped_early, diverged)


def write_history(history: list, path):
    import csv

    if not history:
        keys = ["epoch", "steps", "train_loss", "val_mse"]
    else:
        keys = list(history[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# --------------------------------------------------------------------------- metrics


def error_metrics(y_hat, y) -> dict:
    """MAE and MSE averaged over every element (stations, samples, hours)."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ConfigError("empty split")
    err = y_hat - y
    return {"MAE": float(np.mean(np.abs(err))), "MSE": float(np.mean(err**2))}


def evaluate(model: PhysAirModel, data: Batch, normalizer=None, target: int = 0, horizon=None) -> dict:
    """Metrics in de-normalized target units."""
    if data is None or len(data) == 0:
        raise ConfigError("empty split")
    if horizon is not None and horizon != model.config.H:
        raise ConfigError(f"checkpoint horizon {model.config.H} != requested {horizon}")
    y_hat = predict_batched(model, data).numpy()
    y = data.y.numpy()
    if normalizer is not None:
        y_hat = normalizer.invert_feature(y_hat, target)
        y = normalizer.invert_feature(y, target)
    return error_metrics(y_hat, y)


def metrics_report(per_horizon: dict, horizons=HORIZONS) -> dict:
    """Table-shaped rows: one per horizon plus AVG over the horizons present."""
    rows = []
    present = []
    for h in horizons:
        m = per_horizon.get(h)
        rows.append({"horizon": str(h), "MAE": None if m is None else m["MAE"], "MSE": None if m is None else m["MSE"]})
        if m is not None:
            present.append(m)
    avg = {
        "horizon": "AVG",
        "MAE": float(np.mean([m["MAE"] for m in present])) if present else None,
        "MSE": float(np.mean([m["MSE"] for m in present])) if present else None,
    }
    rows.append(avg)
    return {"rows": rows}


def format_report(report: dict) -> str:
    lines = [f"{'Horizon':>8} | {'MAE':>10} | {'MSE':>10}"]
    for r in report["rows"]:
        mae = "-" if r["MAE"] is None else f"{r['MAE']:.4f}"
        mse = "-" if r["MSE"] is None else f"{r['MSE']:.4f}"
        lines.append(f"{r['horizon']:>8} | {mae:>10} | {mse:>10}")
    return "\n".join(lines)


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path, model: PhysAirModel, meta: dict):
    """JSON checkpoint ``{meta, params}``; floats serialized with full 64-bit precision."""
    body = {
        "meta": {"code_version": __version__, "model_config": model.config.to_dict(), **meta},
        "params": {name: p.detach().numpy().tolist() for name, p in model.named_parameters()},
    }
    with open(path, "w") as fh:
        json.dump(body, fh, indent=1, sort_keys=False)


def read_checkpoint(path) -> dict:
    with open(path) as fh:
        body = json.load(fh)
    if "meta" not in body or "params" not in body:
        raise ConfigError(f"{path}: not a checkpoint (needs 'meta' and 'params')")
    return body


def model_from_checkpoint(body: dict, network) -> PhysAirModel:
    cfg = dict(body["meta"]["model_config"])
    cfg["availabilities"] = tuple(cfg["availabilities"])
    model = PhysAirModel(ModelConfig(**cfg), network.D, network.bearings)
    model.load_param_arrays({k: torch.tensor(v, dtype=DTYPE) for k, v in body["params"].items()})
    return model
