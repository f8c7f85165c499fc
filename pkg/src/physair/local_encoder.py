"""Station-wise attention with learnable target queries."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch


@dataclass
class LocalContext:
    G: torch.Tensor  # (..., S, M_pred, d)
    A: torch.Tensor  # (..., S, M_pred, N_all), averaged over heads
    A_heads: Optional[torch.Tensor] = None  # (..., S, n_heads, M_pred, N_all)


def build_queries(P_time_pred, P_feat_pred, W_Q, S: int):
    """Target queries, identical for every station: (S, M_pred, d)."""
    q = (P_time_pred + P_feat_pred) @ W_Q
    return q.unsqueeze(0).expand(S, *q.shape)


def project_kv(H_tilde, W_K, W_V):
    return H_tilde @ W_K, H_tilde @ W_V


def _split_heads(x, n_heads):
    *lead, n, d = x.shape
    return x.reshape(*lead, n, n_heads, d // n_heads).transpose(-3, -2)


def attend(Q, K, V, n_heads: int) -> LocalContext:
    d = Q.shape[-1]
    if d % n_heads:
        raise ValueError(f"n_heads={n_heads} must divide d={d}")
    dk = d // n_heads
    q, k, v = (_split_heads(t, n_heads) for t in (Q, K, V))
    logits = q @ k.transpose(-1, -2) / math.sqrt(dk)
    A_heads = torch.softmax(logits, dim=-1)  # max-subtracted internally
    ctx = A_heads @ v  # (..., S, h, M, dk)
    G = ctx.transpose(-3, -2).reshape(*ctx.shape[:-3], ctx.shape[-2], d)
    return LocalContext(G=G, A=A_heads.mean(dim=-3), A_heads=A_heads)
