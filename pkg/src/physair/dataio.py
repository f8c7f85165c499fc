"""Station/series ingestion, normalization, chronological splits and windowing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    ConstantFeature,
    DegenerateGeometry,
    InvalidCoordinate,
    NetworkTooSmall,
    SchemaError,
    SplitTooShort,
)
from .geometry import StationNetwork, WindSummary

ROLES = ("pollutant", "meteorology_forecast", "calendar", "exogenous_forecast")
WIND_TAGS = ("speed", "direction")
FILL_LIMIT_HOURS = 3
CALM_THRESHOLD = 0.1  # m/s


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    availability: int = 0
    is_target: bool = False
    role: str = "pollutant"
    wind_component: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"feature {self.name!r}: unknown role {self.role!r}")
        if self.wind_component is not None and self.wind_component not in WIND_TAGS:
            raise ConfigError(f"feature {self.name!r}: wind_component must be one of {WIND_TAGS}")
        if self.availability < 0:
            raise ConfigError(f"feature {self.name!r}: availability must be >= 0")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "availability": self.availability,
            "is_target": self.is_target,
            "role": self.role,
            "wind_component": self.wind_component,
        }


def validate_specs(specs: Sequence[FeatureSpec], H: int, P: int, transport: bool = True):
    """Check the feature list against the horizon/patch configuration."""
    if not specs:
        raise ConfigError("no features configured")
    names = [f.name for f in specs]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate feature names")
    targets = [f for f in specs if f.is_target]
    if len(targets) != 1:
        raise ConfigError("exactly one feature must be the target")
    if targets[0].availability != 0:
        raise ConfigError("target feature availability must be 0")
    for f in specs:
        if f.availability > H:
            raise ConfigError(f"feature {f.name!r}: availability {f.availability} exceeds H={H}")
        if f.availability % P:
            raise ConfigError(f"feature {f.name!r}: availability must be a multiple of P={P}")
    if transport:
        speed = [f for f in specs if f.wind_component == "speed"]
        direction = [f for f in specs if f.wind_component == "direction"]
        if len(speed) != 1 or len(direction) != 1:
            raise ConfigError("transport needs exactly one wind speed and one wind direction feature")
        for f in speed + direction:
            if f.availability != H:
                raise ConfigError(f"wind feature {f.name!r} must be available for the full horizon")


def target_index(specs: Sequence[FeatureSpec]) -> int:
    return next(i for i, f in enumerate(specs) if f.is_target)


# --------------------------------------------------------------------------- files


def load_network(path) -> StationNetwork:
    try:
        df = pd.read_csv(path, dtype={"station_id": str, "name": str})
    except (OSError, pd.errors.ParserError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    missing = {"station_id", "name", "lat", "lon"} - set(df.columns)
    if missing:
        raise SchemaError(f"{path}: missing column(s) {sorted(missing)}")
    if df["station_id"].duplicated().any():
        dup = df.loc[df["station_id"].duplicated(), "station_id"].tolist()
        raise SchemaError(f"{path}: duplicate station_id {dup}")
    try:
        latlon = df[["lat", "lon"]].astype(np.float64).to_numpy()
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: non-numeric coordinate") from exc
    if len(df) < 2:
        raise NetworkTooSmall(f"{path}: transport needs at least 2 stations, found {len(df)}")
    try:
        return StationNetwork(
            station_ids=df["station_id"].tolist(),
            latlon=latlon,
            names=df["name"].fillna("").tolist(),
        )
    except (DegenerateGeometry, InvalidCoordinate) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def write_network(network: StationNetwork, path):
    pd.DataFrame(
        {
            "station_id": network.station_ids,
            "name": network.names,
            "lat": network.latlon[:, 0],
            "lon": network.latlon[:, 1],
        }
    ).to_csv(path, index=False, float_format="%.10f")


@dataclass(frozen=True)
class SeriesFrame:
    """Dense hourly array ``values[time, station, feature]``; NaN marks missing hours."""

    timestamps: np.ndarray  # datetime64[h]
    station_ids: tuple
    feature_names: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (len(self.timestamps), len(self.station_ids), len(self.feature_names)):
            raise SchemaError(f"frame shape {vals.shape} inconsistent with its axes")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype="datetime64[h]"))
        object.__setattr__(self, "station_ids", tuple(self.station_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def shape(self):
        return self.values.shape

    def feature(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise ConfigError(f"feature {name!r} not in series") from None

    def select(self, names: Sequence[str]) -> "SeriesFrame":
        idx = [self.feature(n) for n in names]
        return SeriesFrame(self.timestamps, self.station_ids, tuple(names), self.values[:, :, idx])

    def with_values(self, values) -> "SeriesFrame":
        return SeriesFrame(self.timestamps, self.station_ids, self.feature_names, values)

    def permuted(self, perm) -> "SeriesFrame":
        perm = list(perm)
        return SeriesFrame(
            self.timestamps, [self.station_ids[i] for i in perm], self.feature_names, self.values[:, perm]
        )


def forward_fill_limited(values: np.ndarray, limit: int = FILL_LIMIT_HOURS) -> np.ndarray:
    """Fill NaN runs of length <= limit along axis 0 with the last valid value.

    Longer runs (and leading NaNs) stay missing.
    """
    out = np.array(values, dtype=np.float64, copy=True)
    T = out.shape[0]
    flat = out.reshape(T, -1)
    for col in range(flat.shape[1]):
        series = flat[:, col]
        isnan = np.isnan(series)
        if not isnan.any():
            continue
        t = 0
        while t < T:
            if not isnan[t]:
                t += 1
                continue
            start = t
            while t < T and isnan[t]:
                t += 1
            if start > 0 and t - start <= limit:
                series[start:t] = series[start - 1]
    return out


def load_series(path, specs: Sequence[FeatureSpec], network: Optional[StationNetwork] = None) -> SeriesFrame:
    """Read ``timestamp,station_id,<features>`` into a gap-filled hourly frame.

    Calendar-role features are generated from timestamps, not read from the file.
    """
    try:
        df = pd.read_csv(path, dtype={"station_id": str})
    except (OSError, pd.errors.ParserError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    for col in ("timestamp", "station_id"):
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    file_features = [f.name for f in specs if f.role != "calendar"]
    missing = [n for n in file_features if n not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing feature column(s) {missing}")

    try:
        ts = pd.to_datetime(df["timestamp"], utc=True)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{path}: unparseable timestamp") from exc
    if (ts != ts.dt.floor("h")).any():
        raise SchemaError(f"{path}: timestamps must fall on exact hours")
    hours = ts.dt.tz_localize(None).to_numpy().astype("datetime64[h]")

    if network is not None:
        station_ids = network.station_ids
        unknown = sorted(set(df["station_id"]) - set(station_ids))
        if unknown:
            raise SchemaError(f"{path}: unknown station id(s) {unknown}")
    else:
        station_ids = tuple(dict.fromkeys(df["station_id"]))
    sidx = {s: i for i, s in enumerate(station_ids)}

    for sid, grp in pd.DataFrame({"h": hours, "s": df["station_id"]}).groupby("s", sort=False):
        h = grp["h"].to_numpy()
        if len(h) > 1 and not np.all(h[1:] > h[:-1]):
            raise SchemaError(f"{path}: timestamps for station {sid!r} are not strictly increasing")

    t0, t1 = hours.min(), hours.max()
    T = int((t1 - t0) / np.timedelta64(1, "h")) + 1
    timestamps = t0 + np.arange(T).astype("timedelta64[h]")
    values = np.full((T, len(station_ids), len(file_features)), np.nan)
    try:
        data = df[file_features].astype(np.float64).to_numpy()
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: non-numeric feature value") from exc
    ti = ((hours - t0) / np.timedelta64(1, "h")).astype(int)
    si = df["station_id"].map(sidx).to_numpy()
    values[ti, si] = data
    values = forward_fill_limited(values)
    frame = SeriesFrame(timestamps, station_ids, tuple(file_features), values)
    calendar = [f.name for f in specs if f.role == "calendar"]
    if calendar:
        frame = add_calendar_features(frame, calendar)
    return frame.select([f.name for f in specs])


def write_series(frame: SeriesFrame, path):
    T, S, F = frame.shape
    ts = np.repeat(frame.timestamps, S)
    df = pd.DataFrame(
        {
            "timestamp": pd.to_datetime(ts).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "station_id": np.tile(np.array(frame.station_ids, dtype=object), T),
        }
    )
    flat = frame.values.reshape(T * S, F)
    for j, name in enumerate(frame.feature_names):
        df[name] = flat[:, j]
    df = df.dropna(subset=list(frame.feature_names), how="all")
    df.to_csv(path, index=False, float_format="%.10g")


CALENDAR_FEATURES = ("hour_sin", "hour_cos", "dow_sin", "dow_cos")


def calendar_specs(H: int) -> list:
    return [FeatureSpec(n, availability=H, role="calendar") for n in CALENDAR_FEATURES]


def add_calendar_features(frame: SeriesFrame, names=CALENDAR_FEATURES) -> SeriesFrame:
    """Append hour-of-day / day-of-week sine-cosine encodings (identical across stations)."""
    hours = frame.timestamps.astype(np.int64)
    hod = hours % 24
    dow = (hours // 24 + 3) % 7  # 1970-01-01 was a Thursday
    table = {
        "hour_sin": np.sin(2 * np.pi * hod / 24),
        "hour_cos": np.cos(2 * np.pi * hod / 24),
        "dow_sin": np.sin(2 * np.pi * dow / 7),
        "dow_cos": np.cos(2 * np.pi * dow / 7),
    }
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ConfigError(f"unknown calendar feature(s) {unknown}")
    S = len(frame.station_ids)
    extra = np.stack([np.repeat(table[n][:, None], S, axis=1) for n in names], axis=-1)
    return SeriesFrame(
        frame.timestamps,
        frame.station_ids,
        frame.feature_names + tuple(names),
        np.concatenate([frame.values, extra], axis=-1),
    )


# --------------------------------------------------------------------------- normalization


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x, feature_axis=-1):
        x = np.asarray(x, dtype=np.float64)
        shape = [1] * x.ndim
        shape[feature_axis] = -1
        return (x - self.mean.reshape(shape)) / self.std.reshape(shape)

    def invert(self, z, feature_axis=-1):
        z = np.asarray(z, dtype=np.float64)
        shape = [1] * z.ndim
        shape[feature_axis] = -1
        return z * self.std.reshape(shape) + self.mean.reshape(shape)

    def apply_feature(self, x, i: int):
        return (np.asarray(x, dtype=np.float64) - self.mean[i]) / self.std[i]

    def invert_feature(self, z, i: int):
        return np.asarray(z, dtype=np.float64) * self.std[i] + self.mean[i]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(frame: SeriesFrame, split: range) -> Normalizer:
    """Per-feature z-score statistics pooled over stations and training hours."""
    block = frame.values[split.start : split.stop].reshape(-1, frame.shape[2])
    mean = np.nanmean(block, axis=0)
    std = np.nanstd(block, axis=0)
    for name, s in zip(frame.feature_names, std):
        if not np.isfinite(s) or s <= 1e-12:
            raise ConstantFeature(f"feature {name!r} has zero variance on the training split")
    return Normalizer(mean, std)


def chronological_split(T: int, fractions=(0.7, 0.2, 0.1), min_length: int = 0):
    """Split ``range(T)`` into contiguous train/val/test ranges."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError("fractions must be three non-negative numbers")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    if fractions[1] <= 0 or fractions[2] <= 0:
        raise ConfigError("validation and test fractions must be positive")
    n_train = int(math.floor(round(fractions[0] * T, 9)))
    n_val = int(math.floor(round(fractions[1] * T, 9)))
    splits = (range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, T))
    for name, r in zip(("train", "validation", "test"), splits):
        if len(r) < min_length:
            raise SplitTooShort(f"{name} split has {len(r)} hours, needs at least {min_length}")
    return splits


# --------------------------------------------------------------------------- windows


@dataclass(frozen=True)
class WindowSample:
    """One anchor time t: ragged per-feature blocks, target block and patch wind."""

    x: tuple  # feature i -> (S, L + m_i), normalized
    y: np.ndarray  # (S, H), normalized target
    wind: Optional[WindSummary]
    t0: np.datetime64
    t_index: int = -1

    @property
    def S(self) -> int:
        return self.y.shape[0]

    @property
    def H(self) -> int:
        return self.y.shape[1]


def met_to_uv(speed, direction_deg):
    """Meteorological (speed, direction wind comes FROM) -> (east, north) blowing-toward components."""
    rad = np.radians(direction_deg)
    return -speed * np.sin(rad), -speed * np.cos(rad)


def uv_to_met(u, v):
    speed = np.hypot(u, v)
    direction = np.degrees(np.arctan2(-u, -v)) % 360.0
    return speed, direction


def patch_wind(speed, direction, P: int, per_station: bool = False) -> WindSummary:
    """Summarize raw hourly forecast wind ``(H, S)`` arrays into per-patch vectors.

    Network-mean by default: vectors are averaged over the P hours of each patch
    and over all stations. Patches with mean speed below the calm threshold get
    u_hat = (0, 0).
    """
    speed = np.asarray(speed, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    H = speed.shape[0]
    if H % P:
        raise ConfigError(f"wind block length {H} not divisible by P={P}")
    u, v = met_to_uv(speed, direction)
    uv = np.stack([u, v], axis=-1).reshape(H // P, P, -1, 2)  # (M, P, S, 2)
    mean = uv.mean(axis=1)
    if not per_station:
        mean = mean.mean(axis=1)
    mag = np.linalg.norm(mean, axis=-1)
    calm = mag < CALM_THRESHOLD
    u_hat = np.where(calm[..., None], 0.0, mean / np.where(calm, 1.0, mag)[..., None])
    return WindSummary(u_hat, np.where(calm, 0.0, mag))


def n_tokens(specs: Sequence[FeatureSpec], L: int, P: int) -> int:
    return sum((L + f.availability) // P for f in specs)


def make_windows(
    frame: SeriesFrame,
    L: int,
    H: int,
    P: int,
    specs: Sequence[FeatureSpec],
    stride: int = 1,
    normalizer: Optional[Normalizer] = None,
    span: Optional[range] = None,
    transport: bool = True,
    per_station_wind: bool = False,
) -> Iterator[WindowSample]:
    """Yield one sample per anchor t with all hours inside ``span``.

    Feature i contributes hours t-L+1..t+m_i; the target block is t+1..t+H.
    Windows touching unfilled gaps are skipped.
    """
    if P <= 0 or L % P or H % P:
        raise ConfigError(f"patch length P={P} must divide L={L} and H={H}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    validate_specs(specs, H, P, transport=transport)
    if tuple(f.name for f in specs) != frame.feature_names:
        frame = frame.select([f.name for f in specs])
    span = span if span is not None else range(0, frame.shape[0])
    raw = frame.values
    norm = normalizer.apply(raw) if normalizer is not None else raw
    tgt = target_index(specs)
    if transport:
        i_speed = next(i for i, f in enumerate(specs) if f.wind_component == "speed")
        i_dir = next(i for i, f in enumerate(specs) if f.wind_component == "direction")

    first = span.start + L - 1
    last = span.stop - 1 - H
    for t in range(first, last + 1, stride):
        blocks = []
        ok = True
        for i, f in enumerate(specs):
            blk = norm[t - L + 1 : t + f.availability + 1, :, i].T
            if np.isnan(blk).any():
                ok = False
                break
            blocks.append(np.ascontiguousarray(blk))
        if not ok:
            continue
        y = norm[t + 1 : t + H + 1, :, tgt].T
        if np.isnan(y).any():
            continue
        wind = None
        if transport:
            wind = patch_wind(raw[t + 1 : t + H + 1, :, i_speed], raw[t + 1 : t + H + 1, :, i_dir], P, per_station_wind)
        yield WindowSample(tuple(blocks), np.ascontiguousarray(y), wind, frame.timestamps[t], t)
