"""Glue between series frames, windows and model-ready batches."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .dataio import (
    FeatureSpec,
    Normalizer,
    SeriesFrame,
    chronological_split,
    fit_normalizer,
    make_windows,
    target_index,
    validate_specs,
)
from .errors import ConfigError
from .model import Batch, collate


@dataclass
class PreparedData:
    specs: tuple
    normalizer: Normalizer
    splits: tuple  # (train, val, test) hour ranges
    samples: dict  # split name -> list[WindowSample]
    batches: dict  # split name -> Batch (None when a split has no windows)

    @property
    def target(self) -> int:
        return target_index(self.specs)


def prepare(
    frame: SeriesFrame,
    specs: Sequence[FeatureSpec],
    L: int,
    H: int,
    P: int,
    fractions=(0.7, 0.2, 0.1),
    stride: int = 1,
    eval_stride: Optional[int] = None,
    transport: bool = True,
    per_station_wind: bool = False,
    normalizer: Optional[Normalizer] = None,
) -> PreparedData:
    specs = tuple(specs)
    validate_specs(specs, H, P, transport=transport)
    frame = frame.select([f.name for f in specs])
    splits = chronological_split(frame.shape[0], fractions, min_length=L + H)
    if normalizer is None:
        normalizer = fit_normalizer(frame, splits[0])
    samples, batches = {}, {}
    for name, span, st in zip(("train", "val", "test"), splits, (stride, eval_stride or stride, eval_stride or stride)):
        ws = list(
            make_windows(frame, L, H, P, specs, st, normalizer, span, transport=transport, per_station_wind=per_station_wind)
        )
        samples[name] = ws
        batches[name] = collate(ws, P) if ws else None
    if batches["train"] is None:
        raise ConfigError("no complete training windows")
    return PreparedData(specs, normalizer, splits, samples, batches)
