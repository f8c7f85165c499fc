"""The assembled forecaster: embedding -> local attention -> transport -> fusion/decoding."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import decoder as dec
from . import embedding as emb
from . import local_encoder as enc
from . import transport as tr
from .errors import ConfigError

DTYPE = torch.float64


def inv_softplus(x: float) -> float:
    return x + math.log(-math.expm1(-x))


@dataclass(frozen=True)
class ModelConfig:
    n_stations: int
    availabilities: tuple  # m_i per feature, feature order
    H: int = 24
    L: Optional[int] = None  # defaults to H + 24
    P: int = 12
    d: int = 16
    n_heads: int = 2
    conv_width: int = 3
    activation: str = "identity"
    transport: bool = True
    per_channel_gate: bool = False
    per_station_wind: bool = False
    gamma_init: float = 0.1
    eps_init: float = 0.05
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "availabilities", tuple(int(m) for m in self.availabilities))
        if self.L is None:
            object.__setattr__(self, "L", self.H + 24)
        if self.n_stations < 1:
            raise ConfigError("n_stations must be positive")
        if self.P <= 0 or self.H % self.P or self.L % self.P:
            raise ConfigError(f"P={self.P} must divide H={self.H} and L={self.L}")
        if any(m % self.P or m < 0 or m > self.H for m in self.availabilities):
            raise ConfigError("availabilities must be multiples of P within [0, H]")
        if self.d < 1 or self.n_heads < 1 or self.d % self.n_heads:
            raise ConfigError(f"n_heads={self.n_heads} must divide d={self.d}")
        if self.conv_width < 1 or self.conv_width % 2 == 0:
            raise ConfigError("conv_width must be a positive odd integer")
        if self.activation not in dec.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {sorted(dec.ACTIVATIONS)}")

    @property
    def M_pred(self) -> int:
        return self.H // self.P

    @property
    def token_meta(self) -> tuple:
        return emb.token_layout([self.L + m for m in self.availabilities], self.P)

    @property
    def n_tokens(self) -> int:
        return len(self.token_meta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["availabilities"] = list(self.availabilities)
        return d


@dataclass
class ForecastBundle:
    y_hat: torch.Tensor  # (B, S, H)
    A: torch.Tensor  # (B, S, M, N_all)
    G: torch.Tensor  # (B, S, M, d)
    A_heads: Optional[torch.Tensor] = None
    plan: Optional[tr.TransportPlan] = None
    C_nb: Optional[torch.Tensor] = None
    gamma: Optional[torch.Tensor] = None

    @property
    def W_sp(self):
        return None if self.plan is None else self.plan.W


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, S, N_all, P)
    u_hat: Optional[torch.Tensor]  # (B, M, 2) or (B, M, S, 2)
    v: Optional[torch.Tensor]  # (B, M) or (B, M, S)
    y: Optional[torch.Tensor] = None  # (B, S, H)

    def __len__(self):
        return self.tokens.shape[0]

    def subset(self, idx) -> "Batch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        pick = lambda t: None if t is None else t[idx]
        return Batch(self.tokens[idx], pick(self.u_hat), pick(self.v), pick(self.y))


def collate(samples, P: int) -> Batch:
    samples = list(samples)
    if not samples:
        raise ConfigError("no samples to batch")
    tokens = np.stack([emb.tokenize(s, P).values for s in samples])
    has_wind = samples[0].wind is not None
    u = v = None
    if has_wind:
        u = torch.tensor(np.stack([s.wind.u_hat for s in samples]), dtype=DTYPE)
        v = torch.tensor(np.stack([s.wind.v for s in samples]), dtype=DTYPE)
    y = torch.tensor(np.stack([s.y for s in samples]), dtype=DTYPE)
    return Batch(torch.tensor(tokens, dtype=DTYPE), u, v, y)


PHYSICS_SCALARS = ("alpha_dir", "alpha_dist", "beta_speed", "sigma_d", "eps")


class PhysAirModel(nn.Module):
    """Forecaster over a fixed station network.

    Positive physics coefficients are stored as unconstrained ``raw_*`` values and
    mapped through softplus.
    """

    def __init__(self, config: ModelConfig, D, R, seed: int = 0):
        super().__init__()
        self.config = c = config
        S, d, P, M = c.n_stations, c.d, c.P, c.M_pred
        D = torch.tensor(np.array(D, dtype=np.float64), dtype=DTYPE)
        R = torch.tensor(np.array(R, dtype=np.float64), dtype=DTYPE)
        if D.shape != (S, S) or R.shape != (S, S, 2):
            raise ConfigError(f"geometry shapes {tuple(D.shape)}, {tuple(R.shape)} do not match S={S}")
        self.register_buffer("D", D)
        self.register_buffer("R", R)
        self.register_buffer("feat_table", emb.sinusoidal_table(len(c.availabilities), d))
        self.token_meta = c.token_meta

        g = torch.Generator().manual_seed(seed)
        normal = lambda *shape, std: nn.Parameter(torch.randn(*shape, generator=g, dtype=DTYPE) * std)
        # embedding
        self.W_proj = normal(P, d, std=c.init_std)
        self.conv_kernel = normal(c.conv_width, d, std=c.init_std)
        self.E = normal(S, d, std=c.init_std)
        self.Gamma = nn.Parameter(torch.ones(S, d, dtype=DTYPE))
        self.B = nn.Parameter(torch.zeros(S, d, dtype=DTYPE))
        # local attention
        self.W_K = normal(d, d, std=1 / math.sqrt(d))
        self.W_V = normal(d, d, std=1 / math.sqrt(d))
        self.W_Q = normal(d, d, std=1 / math.sqrt(d))
        self.P_time_pred = normal(M, d, std=1.0)
        self.P_feat_pred = normal(1, d, std=1.0)
        # transport
        if c.transport:
            off = D[~torch.eye(S, dtype=torch.bool)]
            sigma0 = float(off.median()) if off.numel() else 1.0
            scalar = lambda x: nn.Parameter(torch.tensor(inv_softplus(x), dtype=DTYPE))
            self.raw_alpha_dir = scalar(1.0)
            self.raw_alpha_dist = scalar(1.0)
            self.raw_beta_speed = scalar(1.0)
            self.raw_sigma_d = scalar(sigma0)
            self.raw_eps = scalar(c.eps_init)
            self.U = nn.Parameter(torch.zeros(S, S, dtype=DTYPE))
            gshape = (S, d) if c.per_channel_gate else (S,)
            self.gamma = nn.Parameter(torch.full(gshape, c.gamma_init, dtype=DTYPE))
        # decoder
        self.W_dec = normal(d, P, std=1 / math.sqrt(d))
        self.b_dec = nn.Parameter(torch.zeros(P, dtype=DTYPE))

    # ------------------------------------------------------------------ physics
    def physics(self) -> dict:
        if not self.config.transport:
            return {}
        sp = torch.nn.functional.softplus
        return {name: sp(getattr(self, "raw_" + name)) for name in PHYSICS_SCALARS}

    def physics_values(self) -> dict:
        out = {k: v.item() for k, v in self.physics().items()}
        if self.config.transport:
            out["gamma_mean"] = self.gamma.mean().item()
        return out

    # ------------------------------------------------------------------ forward
    def local(self, tokens):
        c = self.config
        H = emb.embed(tokens, self.W_proj, self.conv_kernel, self.feat_table, self.token_meta)
        Ht = emb.station_gate(H, self.Gamma, self.E, self.B)
        Q = enc.build_queries(self.P_time_pred, self.P_feat_pred, self.W_Q, c.n_stations)
        K, V = enc.project_kv(Ht, self.W_K, self.W_V)
        return enc.attend(Q, K, V, c.n_heads)

    def transport_plan(self, u_hat, v) -> tr.TransportPlan:
        c = self.config
        ph = self.physics()
        A_wind = tr.wind_alignment(u_hat, self.R, per_station=c.per_station_wind)
        vb = v[..., :, None] if c.per_station_wind else v[..., None, None]
        Phi = tr.physics_score(
            A_wind, vb, self.D, ph["alpha_dir"], ph["alpha_dist"], ph["beta_speed"], ph["sigma_d"], ph["eps"]
        )
        Z = Phi + self.U
        M = tr.upwind_mask(A_wind, ph["eps"].detach())
        return tr.TransportPlan(Phi=Phi, Z=Z, M=M, W=tr.spatial_weights(Z, M))

    def forward(self, tokens, u_hat=None, v=None) -> ForecastBundle:
        c = self.config
        ctx = self.local(tokens)
        plan = C_nb = gamma = None
        if c.transport:
            if u_hat is None or v is None:
                raise ConfigError("transport-enabled model needs wind inputs")
            plan = self.transport_plan(u_hat, v)
            C_nb = tr.aggregate(plan.W, ctx.G)
            gamma = self.gamma
            C = dec.fuse(ctx.G, C_nb, gamma)
        else:
            C = ctx.G
        y_patch = dec.decode(C, self.W_dec, self.b_dec, c.activation)
        return ForecastBundle(
            y_hat=dec.reshape_forecast(y_patch, c.H),
            A=ctx.A,
            G=ctx.G,
            A_heads=ctx.A_heads,
            plan=plan,
            C_nb=C_nb,
            gamma=gamma,
        )

    def predict(self, batch: Batch) -> ForecastBundle:
        return self(batch.tokens, batch.u_hat, batch.v)

    # ------------------------------------------------------------------ utilities
    def param_arrays(self) -> dict:
        return {name: p.detach().clone() for name, p in self.named_parameters()}

    def load_param_arrays(self, arrays: dict, strict: bool = True):
        own = dict(self.named_parameters())
        if strict and set(arrays) != set(own):
            raise ConfigError(f"parameter names differ: {sorted(set(arrays) ^ set(own))}")
        with torch.no_grad():
            for name, value in arrays.items():
                if name in own:
                    own[name].copy_(torch.as_tensor(value, dtype=DTYPE).reshape(own[name].shape))

    def permuted(self, perm) -> "PhysAirModel":
        """Copy of this model with every station-indexed tensor permuted."""
        perm = torch.as_tensor(list(perm), dtype=torch.long)
        D = self.D[perm][:, perm]
        R = self.R[perm][:, perm]
        out = PhysAirModel(self.config, D.numpy(), R.numpy())
        arrays = self.param_arrays()
        for name in ("E", "Gamma", "B", "gamma"):
            if name in arrays:
                arrays[name] = arrays[name][perm]
        if "U" in arrays:
            arrays["U"] = arrays["U"][perm][:, perm]
        out.load_param_arrays(arrays)
        return out


def build_model(config: ModelConfig, network, seed: int = 0) -> PhysAirModel:
    return PhysAirModel(config, network.D, network.bearings, seed=seed)
