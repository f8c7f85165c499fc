"""Temporal-feature and spatial attributions, exported as JSON and SVG figures."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1


@dataclass
class AttributionRecord:
    station_id: str
    t0: str
    token_meta: list  # [[feature name, patch offset relative to the anchor], ...]
    temporal: list  # M_pred rows of N_all attention weights
    spatial: list  # per patch: [[source station id, share], ...]; empty when no upwind source
    gate: float
    transport_fraction: list  # per patch
    wind: list  # per patch: [u_east, u_north, speed]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "AttributionRecord":
        return cls(**d)


def token_labels(token_meta, feature_names: Sequence[str], L: int, P: int) -> list:
    """(feature name, patch offset) per token; offsets < 0 are history, >= 0 future covariates."""
    return [[feature_names[i], j - L // P] for i, j in token_meta]


def temporal_attribution(A_s, labels, aggregate: bool = False) -> dict:
    """Regroup one station's (M_pred, N_all) attention by feature and patch offset.

    With ``aggregate`` the lags of each feature are summed, giving (M_pred,) shares.
    """
    A_s = np.asarray(A_s, dtype=np.float64)
    out = {}
    for n, (name, offset) in enumerate(labels):
        out.setdefault(name, {})[offset] = A_s[:, n]
    if not aggregate:
        return {name: {off: col.tolist() for off, col in lags.items()} for name, lags in out.items()}
    return {name: np.sum(list(lags.values()), axis=0).tolist() for name, lags in out.items()}


def spatial_attribution(W_rows, station_ids: Sequence[str]) -> list:
    """Per patch list of (source, share) for the sources with nonzero weight.

    ``W_rows`` is (M_pred, S): row s of every patch matrix. Shares are copied, not renormalized.
    """
    W_rows = np.asarray(W_rows, dtype=np.float64)
    return [[[station_ids[j], float(w[j])] for j in np.flatnonzero(w > 0)] for w in W_rows]


def transport_fraction(G_s, C_nb_s, gamma_s) -> list:
    """Derived diagnostic: |gamma*C_nb| / (|G| + |gamma*C_nb|) per patch."""
    G_s = np.asarray(G_s, dtype=np.float64)
    moved = np.asarray(gamma_s, dtype=np.float64) * np.asarray(C_nb_s, dtype=np.float64)
    a = np.linalg.norm(G_s, axis=-1)
    b = np.linalg.norm(moved, axis=-1)
    tot = a + b
    return np.where(tot > 0, b / np.where(tot > 0, tot, 1.0), 0.0).tolist()


def build_records(bundle, index: int, station_ids, labels, t0: str, u_hat=None, v=None) -> list:
    """One record per station for sample ``index`` of a forward pass."""
    A = bundle.A[index].detach().numpy()
    records = []
    S = A.shape[0]
    M = A.shape[1]
    W = bundle.W_sp[index].detach().numpy() if bundle.plan is not None else None
    G = bundle.G[index].detach().numpy()
    C_nb = bundle.C_nb[index].detach().numpy() if bundle.C_nb is not None else None
    gamma = bundle.gamma.detach().numpy() if bundle.gamma is not None else None
    for s in range(S):
        if W is not None:
            spatial = spatial_attribution(W[:, s, :], station_ids)
            g_s = gamma[s]
            frac = transport_fraction(G[s], C_nb[s], g_s if np.ndim(g_s) else float(g_s))
            gate = float(np.mean(g_s))
        else:
            spatial, frac, gate = [[] for _ in range(M)], [0.0] * M, 0.0
        wind = []
        if u_hat is not None:
            uh = np.asarray(u_hat[index])
            vv = np.asarray(v[index])
            if uh.ndim == 3:  # per-station wind
                uh, vv = uh[:, s], vv[:, s]
            wind = [[float(a), float(b), float(c)] for (a, b), c in zip(uh, vv)]
        records.append(
            AttributionRecord(
                station_id=str(station_ids[s]),
                t0=str(t0),
                token_meta=[list(x) for x in labels],
                temporal=A[s].tolist(),
                spatial=spatial,
                gate=gate,
                transport_fraction=frac,
                wind=wind,
            )
        )
    return records


def dominant_source(record: AttributionRecord, m: int) -> Optional[str]:
    shares = record.spatial[m]
    if not shares:
        return None
    return max(shares, key=lambda x: x[1])[0]


# --------------------------------------------------------------------------- export


def dumps(records, model_meta: Optional[dict] = None) -> str:
    doc = {"version": SCHEMA_VERSION, "model_meta": model_meta or {}, "records": [r.to_dict() for r in records]}
    return json.dumps(doc, indent=1, sort_keys=True)


def loads(text: str):
    doc = json.loads(text)
    if doc.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported attribution schema version {doc.get('version')!r}")
    return [AttributionRecord.from_dict(r) for r in doc["records"]], doc.get("model_meta", {})


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def export_report(records, out_dir, model_meta: Optional[dict] = None, figures: bool = True) -> list:
    """Write attribution.json and, per record, spatial/temporal/wind SVG figures."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "attribution.json"
        path.write_text(dumps(records, model_meta))
    except OSError as exc:
        raise OSError(f"cannot write attribution report to {out}: {exc}") from exc
    written = [path]
    if figures:
        for r in records:
            written.extend(render_record(r, out))
    return written


def render_record(record: AttributionRecord, out_dir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "physair"
    meta = {"Date": None}
    out = Path(out_dir)
    stem = _safe(record.station_id)
    paths = []

    # stacked bars of upwind source shares per forecast patch
    M = len(record.spatial)
    sources = sorted({src for patch in record.spatial for src, _ in patch})
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bottom = np.zeros(M)
    for src in sources:
        vals = np.array([dict(map(tuple, patch)).get(src, 0.0) for patch in record.spatial]) * 100
        ax.bar(range(M), vals, bottom=bottom, label=src)
        for m in range(M):
            if vals[m] >= 10:
                ax.text(m, bottom[m] + vals[m] / 2, f"{vals[m]:.0f}%", ha="center", va="center", fontsize=7)
        bottom += vals
    ax.set_xlabel("forecast patch")
    ax.set_ylabel("upwind share (%)")
    ax.set_ylim(0, 100)
    ax.set_title(f"{record.station_id}: spatial attribution")
    if sources:
        ax.legend(fontsize=7, loc="upper right")
    p = out / f"{stem}_spatial.svg"
    fig.savefig(p, format="svg", metadata=meta)
    plt.close(fig)
    paths.append(p)

    # temporal-feature heatmap
    A = np.asarray(record.temporal)
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.imshow(A, aspect="auto", cmap="viridis")
    labels = [f"{name}[{off}]" for name, off in record.token_meta]
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("forecast patch")
    ax.set_title(f"{record.station_id}: temporal-feature attribution")
    fig.tight_layout()
    p = out / f"{stem}_temporal.svg"
    fig.savefig(p, format="svg", metadata=meta)
    plt.close(fig)
    paths.append(p)

    # wind summary: direction the wind comes from, per patch, on a polar axis
    fig = plt.figure(figsize=(3.5, 3.5))
    ax = fig.add_subplot(projection="polar")
    ax.set_theta_zero_location("N")
    ax.set_theta_direction(-1)
    for m, (u, v_north, speed) in enumerate(record.wind):
        if speed > 0:
            theta = np.arctan2(-u, -v_north)
            ax.bar(theta, speed, width=0.3, alpha=0.6)
            ax.text(theta, speed, str(m), fontsize=7)
    ax.set_title(f"{record.station_id}: wind (from)", fontsize=9)
    p = out / f"{stem}_wind.svg"
    fig.savefig(p, format="svg", metadata=meta)
    plt.close(fig)
    paths.append(p)
    return paths
