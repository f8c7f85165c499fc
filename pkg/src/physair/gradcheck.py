"""Central finite-difference certification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .geometry import StationNetwork
from .model import DTYPE, Batch, ModelConfig, PhysAirModel
from .training import backward, model_loss

TOLERANCE = 1e-4
# Below this magnitude both gradients count as zero for the relative error.
ABS_FLOOR = 1e-7


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    worst_coord: tuple
    n_coords: int


@dataclass
class GradcheckReport:
    checks: list = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def failures(self):
        return [c for c in self.checks if not c.max_rel_error < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def format(self) -> str:
        lines = []
        for c in self.checks:
            flag = "ok " if c.max_rel_error < self.tolerance else "BAD"
            lines.append(f"{flag} {c.name:<16} max_rel_err={c.max_rel_error:.3e} over {c.n_coords} coords")
        if self.passed:
            lines.append("PASS")
        else:
            bad = ", ".join(f"{c.name}{list(c.worst_coord)}" for c in self.failures)
            lines.append(f"FAIL: {bad}")
        return "\n".join(lines)


def relative_error(a: float, b: float, floor: float = ABS_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_difference(model: PhysAirModel, batch: Batch, name: str, coord: tuple, lambda_eps: float, step: float):
    p = dict(model.named_parameters())[name]
    with torch.no_grad():
        orig = p[coord].item()
        p[coord] = orig + step
        f_plus = model_loss(model, batch, lambda_eps)[0].item()
        p[coord] = orig - step
        f_minus = model_loss(model, batch, lambda_eps)[0].item()
        p[coord] = orig
    return (f_plus - f_minus) / (2 * step)


def gradcheck(
    model: PhysAirModel,
    batch: Batch,
    lambda_eps: float = 1e-3,
    n_coords: int = 20,
    step: float = 1e-5,
    seed: int = 0,
    grads: Optional[dict] = None,
) -> GradcheckReport:
    """Compare reverse-mode gradients with central differences on sampled coordinates."""
    rng = np.random.default_rng(seed)
    if grads is None:
        grads = backward(model, batch, lambda_eps)
    report = GradcheckReport()
    for name, p in model.named_parameters():
        shape = tuple(p.shape)
        size = int(np.prod(shape)) if shape else 1
        flat = rng.choice(size, size=min(n_coords, size), replace=False)
        worst, worst_coord = 0.0, ()
        for f in flat:
            coord = tuple(int(i) for i in np.unravel_index(f, shape)) if shape else ()
            fd = finite_difference(model, batch, name, coord, lambda_eps, step)
            ad = grads[name][coord].item()
            err = relative_error(ad, fd)
            if err >= worst:
                worst, worst_coord = err, coord
        report.checks.append(TensorCheck(name, worst, worst_coord, len(flat)))
    return report


def tiny_setup(seed: int = 0, S: int = 3, L: int = 48, H: int = 24, P: int = 12, d: int = 8, n_heads: int = 2, batch_size: int = 2, **overrides):
    """Random network, model and input batch for certification runs.

    Features: the target (availability 0) and the wind speed/direction pair (availability H).
    """
    rng = np.random.default_rng(seed)
    planar = rng.uniform(-10, 10, size=(S, 2))
    network = StationNetwork.from_planar([f"s{i}" for i in range(S)], planar)
    cfg = ModelConfig(S, (0, H, H), H=H, L=L, P=P, d=d, n_heads=n_heads, **overrides)
    model = PhysAirModel(cfg, network.D, network.bearings, seed=seed)
    M = cfg.M_pred
    theta = rng.uniform(0, 2 * np.pi, size=(batch_size, M))
    batch = Batch(
        tokens=torch.tensor(rng.normal(size=(batch_size, S, cfg.n_tokens, P)), dtype=DTYPE),
        u_hat=torch.tensor(np.stack([np.cos(theta), np.sin(theta)], axis=-1), dtype=DTYPE),
        v=torch.tensor(rng.uniform(1, 8, size=(batch_size, M)), dtype=DTYPE),
        y=torch.tensor(rng.normal(size=(batch_size, S, H)), dtype=DTYPE),
    )
    return network, model, batch


def run_gradcheck(seed: int = 0, **kwargs) -> GradcheckReport:
    _, model, batch = tiny_setup(seed, **kwargs)
    return gradcheck(model, batch, seed=seed)
