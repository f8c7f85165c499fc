"""Gate fusion of local and transported context, and the patch decoding head."""
from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ShapeError

ACTIVATIONS = {
    "identity": lambda x: x,
    "gelu": F.gelu,
    "softplus": F.softplus,
}


def fuse(G, C_nb, gamma):
    """C = G + gamma * C_nb. ``gamma`` is (S,) or per-channel (S, d)."""
    if gamma.dim() == 1:
        g = gamma[:, None, None]
    else:
        g = gamma[:, None, :]
    return G + g * C_nb


def decode(C, W_dec, b_dec, activation: str = "identity"):
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return act(C @ W_dec + b_dec)


def reshape_forecast(Y_patch, H=None):
    """(..., S, M_pred, P) -> (..., S, M_pred * P), patches in temporal order."""
    *lead, M, P = Y_patch.shape
    if H is not None and M * P != H:
        raise ShapeError(f"M_pred*P = {M * P} does not match H = {H}")
    return Y_patch.reshape(*lead, M * P)


def unreshape_forecast(Y, P: int):
    *lead, H = Y.shape
    if H % P:
        raise ShapeError(f"H = {H} not divisible by P = {P}")
    return Y.reshape(*lead, H // P, P)
