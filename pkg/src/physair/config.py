"""JSON run-config: parsing, strict validation and defaults."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .dataio import FeatureSpec, calendar_specs, validate_specs
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

SECTIONS = {
    "paths": {"stations", "series", "output_dir"},
    "features": None,  # list of feature objects
    "model": {"H", "L", "P", "d", "n_heads", "conv_width", "activation", "gamma_init", "eps_init", "init_std"},
    "train": {f.name for f in fields(TrainConfig)},
    "data": {"fractions", "stride", "eval_stride", "calendar"},
    "simulator": {"preset", "hours", "seed"},
    "flags": {"per_station_wind", "per_channel_gate", "transport"},
}
FEATURE_KEYS = {"name", "availability", "is_target", "role", "wind_component"}

HELP = """\
Run-config keys (JSON object; unknown keys are rejected):
  paths.stations      stations.csv (station_id,name,lat,lon)
  paths.series        series.csv (timestamp,station_id,<features>)
  paths.output_dir    where outputs are written
  features[]          {name, availability (hours or "H"), is_target, role, wind_component}
                      role: pollutant | meteorology_forecast | calendar | exogenous_forecast
                      wind_component: speed | direction (exactly one each when transport is on)
  model.H             forecast horizon in hours (24, 48, 72, ...); default 24
  model.L             look-back hours; default H + 24
  model.P             patch length; default 12
  model.d, model.n_heads, model.conv_width, model.activation (identity|gelu|softplus)
  model.gamma_init, model.eps_init, model.init_std
  train.lr, beta1, beta2, adam_eps, batch_size, max_epochs, patience, lambda_eps, seed, max_steps
  data.fractions      [train, val, test], default [0.7, 0.2, 0.1]
  data.stride         training window stride; data.eval_stride for val/test (default: stride)
  data.calendar       add hour/day-of-week sine-cosine features (availability H)
  simulator.preset    line3 | grid9 | rotating_wind9; simulator.hours; simulator.seed
  flags.transport, flags.per_station_wind, flags.per_channel_gate
"""


@dataclass
class RunConfig:
    stations: Optional[str] = None
    series: Optional[str] = None
    output_dir: str = "out"
    features: list = field(default_factory=list)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    fractions: tuple = (0.7, 0.2, 0.1)
    stride: int = 1
    eval_stride: Optional[int] = None
    calendar: bool = False
    simulator: dict = field(default_factory=dict)
    per_station_wind: bool = False
    per_channel_gate: bool = False
    transport: bool = True
    raw: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return int(self.model.get("H", 24))

    @property
    def P(self) -> int:
        return int(self.model.get("P", 12))

    @property
    def L(self) -> int:
        L = self.model.get("L")
        return self.H + 24 if L is None else int(L)

    def model_config(self, n_stations: int) -> ModelConfig:
        extra = {k: v for k, v in self.model.items() if k not in ("H", "L", "P")}
        return ModelConfig(
            n_stations=n_stations,
            availabilities=tuple(f.availability for f in self.features),
            H=self.H,
            L=self.L,
            P=self.P,
            transport=self.transport,
            per_channel_gate=self.per_channel_gate,
            per_station_wind=self.per_station_wind,
            **extra,
        )


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")


def parse_config(doc: dict) -> RunConfig:
    _check_keys(doc, set(SECTIONS), "config")
    for name, allowed in SECTIONS.items():
        if name in doc and allowed is not None:
            _check_keys(doc[name], allowed, name)
    model = dict(doc.get("model", {}))
    H = int(model.get("H", 24))
    P = int(model.get("P", 12))
    data = doc.get("data", {})
    flags = doc.get("flags", {})
    paths = doc.get("paths", {})

    feats = []
    raw_feats = doc.get("features", [])
    if not isinstance(raw_feats, list):
        raise ConfigError("features: expected a list")
    for k, f in enumerate(raw_feats):
        _check_keys(f, FEATURE_KEYS, f"features[{k}]")
        if "name" not in f:
            raise ConfigError(f"features[{k}]: missing 'name'")
        avail = f.get("availability", 0)
        if avail == "H":
            avail = H
        if not isinstance(avail, int) or isinstance(avail, bool):
            raise ConfigError(f"features[{k}].availability: expected an integer or \"H\"")
        try:
            feats.append(
                FeatureSpec(
                    name=f["name"],
                    availability=avail,
                    is_target=bool(f.get("is_target", False)),
                    role=f.get("role", "pollutant"),
                    wind_component=f.get("wind_component"),
                )
            )
        except ConfigError as exc:
            raise ConfigError(f"features[{k}]: {exc}") from None
    if data.get("calendar", False):
        feats.extend(calendar_specs(H))

    try:
        train = TrainConfig(**doc.get("train", {}))
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"train: {exc}") from None

    cfg = RunConfig(
        stations=paths.get("stations"),
        series=paths.get("series"),
        output_dir=paths.get("output_dir", "out"),
        features=feats,
        model=model,
        train=train,
        fractions=tuple(data.get("fractions", (0.7, 0.2, 0.1))),
        stride=int(data.get("stride", 1)),
        eval_stride=data.get("eval_stride"),
        calendar=bool(data.get("calendar", False)),
        simulator=dict(doc.get("simulator", {})),
        per_station_wind=bool(flags.get("per_station_wind", False)),
        per_channel_gate=bool(flags.get("per_channel_gate", False)),
        transport=bool(flags.get("transport", True)),
        raw=doc,
    )
    if feats:
        validate_specs(feats, cfg.H, cfg.P, transport=cfg.transport)
        try:
            cfg.model_config(2)
        except TypeError as exc:
            raise ConfigError(f"model: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(doc)


def simulated_config(out_dir, preset: str, hours: int, seed: int, H: int = 24) -> dict:
    """Ready-to-run config for a simulator output directory."""
    return {
        "paths": {"stations": "stations.csv", "series": "series.csv", "output_dir": "."},
        "features": [
            {"name": "pm10", "availability": 0, "is_target": True, "role": "pollutant"},
            {"name": "wind_speed", "availability": "H", "role": "meteorology_forecast", "wind_component": "speed"},
            {"name": "wind_dir", "availability": "H", "role": "meteorology_forecast", "wind_component": "direction"},
        ],
        "model": {"H": H, "P": 12, "d": 16, "n_heads": 2},
        "train": {"lr": 1e-3, "batch_size": 32, "max_epochs": 100, "patience": 8, "seed": seed},
        "data": {"fractions": [0.7, 0.2, 0.1], "stride": 1},
        "simulator": {"preset": preset, "hours": hours, "seed": seed},
    }
