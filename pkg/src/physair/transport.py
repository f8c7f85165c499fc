"""Wind-conditioned directed mixing between stations."""
from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class TransportPlan:
    Phi: torch.Tensor  # (..., M, S, S)
    Z: torch.Tensor
    M: torch.Tensor  # bool
    W: torch.Tensor


def wind_alignment(u_hat, R, per_station: bool = False):
    """u_hat (..., M, 2), or (..., M, S, 2) per target station; R (S, S, 2) -> (..., M, S, S)."""
    if per_station:
        return torch.einsum("...sk,stk->...st", u_hat, R)
    return torch.einsum("...k,stk->...st", u_hat, R)


def physics_score(A_wind, v, D, alpha_dir, alpha_dist, beta_speed, sigma_d, eps):
    """beta*v*alpha_dir*[A - eps]_+ - alpha_dist*(D/sigma_d)^2.

    ``v`` must already broadcast against ``A_wind``.
    """
    return beta_speed * v * alpha_dir * torch.relu(A_wind - eps) - alpha_dist * (D / sigma_d) ** 2


def upwind_mask(A_wind, eps):
    """True where s0 is upwind of s by at least eps; self-loops excluded."""
    S = A_wind.shape[-1]
    eye = torch.eye(S, dtype=torch.bool, device=A_wind.device)
    return (A_wind >= eps) & ~eye


def spatial_weights(Z, M):
    """Row softmax over unmasked entries; fully masked rows come out all zero.

    Masked logits act as -inf, so masked weights are exactly 0 and carry no gradient.
    """
    neg = torch.full_like(Z, -torch.inf)
    row_max = torch.where(M, Z, neg).amax(dim=-1, keepdim=True).detach()
    row_max = torch.where(torch.isfinite(row_max), row_max, torch.zeros_like(row_max))
    shifted = torch.where(M, Z - row_max, torch.zeros_like(Z))
    e = torch.where(M, torch.exp(shifted), torch.zeros_like(Z))
    total = e.sum(dim=-1, keepdim=True)
    return e / torch.where(total > 0, total, torch.ones_like(total))


def aggregate(W, G):
    """C_nb[..., :, m, :] = W[..., m, :, :] @ G[..., :, m, :]."""
    return torch.einsum("...mst,...tmd->...smd", W, G)
