"""Time-feature tokenization, patch embedding and station-wise affine gating."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError


@dataclass(frozen=True)
class TokenGrid:
    values: np.ndarray  # (S, N_all, P)
    token_meta: tuple  # ((feature index, patch index within feature), ...)

    @property
    def n_tokens(self) -> int:
        return self.values.shape[1]


def token_layout(block_lengths, P: int):
    """Token metadata for ragged feature blocks of the given hour lengths."""
    meta = []
    for i, n_hours in enumerate(block_lengths):
        if P <= 0 or n_hours % P:
            raise ConfigError(f"feature {i}: block of {n_hours} hours is not divisible by P={P}")
        meta.extend((i, j) for j in range(n_hours // P))
    return tuple(meta)


def tokenize(sample, P: int) -> TokenGrid:
    """Cut every feature block into non-overlapping P-hour patches, features in order."""
    blocks = sample.x if hasattr(sample, "x") else sample
    meta = token_layout([b.shape[-1] for b in blocks], P)
    parts = [np.asarray(b, dtype=np.float64).reshape(b.shape[0], -1, P) for b in blocks]
    return TokenGrid(np.concatenate(parts, axis=1), meta)


def segments(token_meta):
    """Contiguous (start, length) token ranges per feature."""
    out = []
    for idx, (i, j) in enumerate(token_meta):
        if j == 0:
            out.append([idx, 0])
        out[-1][1] += 1
    return [tuple(s) for s in out]


def sinusoidal_table(n_features: int, d: int) -> torch.Tensor:
    """Fixed sinusoidal code per feature index, shape (n_features, d)."""
    pos = torch.arange(n_features, dtype=torch.float64)[:, None]
    k = torch.arange(d, dtype=torch.float64)[None, :]
    freq = torch.exp(-math.log(10000.0) * (2 * torch.div(k, 2, rounding_mode="floor")) / d)
    angle = pos * freq
    even = (torch.arange(d) % 2 == 0)[None, :]
    return torch.where(even, torch.sin(angle), torch.cos(angle))


def depthwise_conv(h: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Zero-padded depthwise convolution along the token axis (-2); kernel is (width, d)."""
    width = kernel.shape[0]
    pad = width // 2
    n = h.shape[-2]
    padded = F.pad(h, (0, 0, pad, pad))
    out = 0.0
    for j in range(width):
        out = out + kernel[j] * padded[..., j : j + n, :]
    return out


def embed(tokens, W_proj, conv_kernel, feat_table, token_meta):
    """Patch projection plus convolutional and feature positional terms.

    tokens: (..., S, N_all, P) -> (..., S, N_all, d)
    """
    proj = tokens @ W_proj
    conv = torch.cat(
        [depthwise_conv(proj[..., a : a + n, :], conv_kernel) for a, n in segments(token_meta)],
        dim=-2,
    )
    feat_idx = torch.tensor([i for i, _ in token_meta], dtype=torch.long)
    return proj + conv + feat_table[feat_idx]


def station_gate(H, Gamma, E, B):
    """Gamma * (H + E) + B with (S, d) parameters broadcast over tokens."""
    return Gamma[:, None, :] * (H + E[:, None, :]) + B[:, None, :]
