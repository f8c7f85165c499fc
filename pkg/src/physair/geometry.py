"""Station geography: planar projection, distances, bearings, wind alignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, InvalidCoordinate, NetworkTooSmall

EARTH_RADIUS_KM = 6371.0


def project_coords(latlon) -> np.ndarray:
    """Equirectangular projection about the network centroid.

    Returns an (S, 2) array of (x east, y north) in km whose centroid is the origin.
    """
    latlon = np.asarray(latlon, dtype=np.float64)
    if latlon.ndim != 2 or latlon.shape[1] != 2:
        raise InvalidCoordinate(f"expected (S, 2) lat/lon array, got shape {latlon.shape}")
    if latlon.shape[0] < 2:
        raise NetworkTooSmall("at least 2 stations are required")
    if not np.all(np.isfinite(latlon)):
        raise InvalidCoordinate("non-finite coordinate")
    if np.any(np.abs(latlon[:, 0]) >= 90.0):
        raise InvalidCoordinate("latitude must lie in (-90, 90)")
    if len(np.unique(latlon, axis=0)) != len(latlon):
        raise DegenerateGeometry("duplicate station coordinates")

    lat0, lon0 = latlon.mean(axis=0)
    dlat = np.radians(latlon[:, 0] - lat0)
    dlon = np.radians(latlon[:, 1] - lon0)
    x = EARTH_RADIUS_KM * dlon * np.cos(np.radians(lat0))
    y = EARTH_RADIUS_KM * dlat
    return np.stack([x, y], axis=1)


def unproject_coords(planar, lat0: float, lon0: float) -> np.ndarray:
    """Inverse of :func:`project_coords` for a centroid at (lat0, lon0)."""
    planar = np.asarray(planar, dtype=np.float64)
    planar = planar - planar.mean(axis=0)
    lat = lat0 + np.degrees(planar[:, 1] / EARTH_RADIUS_KM)
    lon = lon0 + np.degrees(planar[:, 0] / (EARTH_RADIUS_KM * np.cos(np.radians(lat0))))
    return np.stack([lat, lon], axis=1)


def pairwise_distance(planar) -> np.ndarray:
    planar = np.asarray(planar, dtype=np.float64)
    if not np.all(np.isfinite(planar)):
        raise DegenerateGeometry("non-finite planar coordinates")
    diff = planar[:, None, :] - planar[None, :, :]
    D = np.sqrt(np.sum(diff**2, axis=-1))
    off = ~np.eye(len(planar), dtype=bool)
    if np.any(D[off] <= 0.0):
        raise DegenerateGeometry("two stations share a location")
    return D


def unit_bearings(planar, D=None) -> np.ndarray:
    """R[s, s0] = unit vector pointing from source s0 toward target s; zero diagonal."""
    planar = np.asarray(planar, dtype=np.float64)
    if D is None:
        D = pairwise_distance(planar)
    diff = planar[:, None, :] - planar[None, :, :]
    denom = D.copy()
    np.fill_diagonal(denom, 1.0)
    R = diff / denom[..., None]
    idx = np.arange(len(planar))
    R[idx, idx] = 0.0
    return R


def wind_alignment(u_hat, R) -> np.ndarray:
    """Alignment u_hat . R[s, s0] for one wind vector; (0, 0) wind gives all zeros."""
    u_hat = np.asarray(u_hat, dtype=np.float64)
    return np.einsum("k,stk->st", u_hat, np.asarray(R))


@dataclass(frozen=True)
class WindSummary:
    """Per forecast patch unit wind direction (M, 2) and speed (M,) in m/s.

    With per-station wind the shapes are (M, S, 2) and (M, S).
    """

    u_hat: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_hat, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.shape[-1] != 2 or u.shape[:-1] != v.shape:
            raise ValueError(f"u_hat {u.shape} and v {v.shape} disagree")
        if np.any(v < 0):
            raise ValueError("wind speed must be non-negative")
        object.__setattr__(self, "u_hat", u)
        object.__setattr__(self, "v", v)

    @property
    def n_patches(self) -> int:
        return len(self.v)

    @property
    def per_station(self) -> bool:
        return self.v.ndim == 2


@dataclass(frozen=True)
class StationNetwork:
    station_ids: tuple
    latlon: np.ndarray
    names: tuple = ()
    planar: np.ndarray = field(init=False)
    D: np.ndarray = field(init=False)
    bearings: np.ndarray = field(init=False)

    def __post_init__(self):
        latlon = np.asarray(self.latlon, dtype=np.float64)
        ids = tuple(str(s) for s in self.station_ids)
        if len(ids) < 2:
            raise NetworkTooSmall("transport needs at least 2 stations")
        if len(set(ids)) != len(ids):
            raise DegenerateGeometry("duplicate station ids")
        planar = project_coords(latlon)
        D = pairwise_distance(planar)
        R = unit_bearings(planar, D)
        for arr in (latlon, planar, D, R):
            arr.setflags(write=False)
        object.__setattr__(self, "station_ids", ids)
        object.__setattr__(self, "names", tuple(self.names) if self.names else ids)
        object.__setattr__(self, "latlon", latlon)
        object.__setattr__(self, "planar", planar)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "bearings", R)

    @property
    def S(self) -> int:
        return len(self.station_ids)

    def median_distance(self) -> float:
        off = ~np.eye(self.S, dtype=bool)
        return float(np.median(self.D[off]))

    def permuted(self, perm) -> "StationNetwork":
        perm = list(perm)
        return StationNetwork(
            station_ids=[self.station_ids[i] for i in perm],
            latlon=self.latlon[perm],
            names=[self.names[i] for i in perm],
        )

    @classmethod
    def from_planar(cls, station_ids, planar, lat0=59.33, lon0=18.06, names=()):
        """Build a network from km offsets placed around a reference lat/lon."""
        return cls(station_ids=station_ids, latlon=unproject_coords(planar, lat0, lon0), names=names)
