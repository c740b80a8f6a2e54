"""Scenario parameter space and the unit-cube <-> physical mapping.

Every sampling, distance and force computation works on the normalized unit
cube. Only the simulator sees physical units, via :func:`to_physical`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

# (name, lower, upper) for one surrounding vehicle: IDM then MOBIL parameters.
DEFAULT_BOUNDS: tuple[tuple[str, float, float], ...] = (
    ("v0", 25.0, 30.0),
    ("alpha", 1.0, 5.0),
    ("T", 0.05, 2.0),
    ("b", 0.1, 4.0),
    ("s0", 0.1, 3.0),
    ("p", 0.0, 1.0),
    ("delta_a_th", 0.0, 0.3),
)
PARAM_NAMES: tuple[str, ...] = tuple(name for name, _, _ in DEFAULT_BOUNDS)

SHARED = "shared"
PER_VEHICLE = "per-vehicle"
REDUCED = "reduced"
MODES = (SHARED, PER_VEHICLE, REDUCED)


class SpaceError(ValueError):
    """Raised for dimension mismatches and out-of-bounds parameters."""


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class ParamSpace:
    """Ordered named dimensions with physical bounds.

    ``shared`` uses one 7-vector for every surrounding vehicle, ``per-vehicle``
    prefixes each name with ``sv<k>.`` (7 x ``n_vehicles`` dims), and ``reduced``
    samples a subset of the shared names while the rest stay at ``fixed``
    values (defaults to the midpoint of their bounds).
    """

    dims: tuple[Dimension, ...]
    mode: str = SHARED
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise SpaceError(f"unknown space mode {self.mode!r}")
        if not self.dims:
            raise SpaceError("a parameter space needs at least one dimension")
        for d in self.dims:
            if not d.upper > d.lower:
                raise SpaceError(f"dimension {d.name!r}: upper bound must exceed lower bound")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate dimension names")
        if self.mode == SHARED and tuple(names) != PARAM_NAMES:
            raise SpaceError(f"shared mode requires dimensions {PARAM_NAMES}")
        if self.mode == REDUCED:
            unknown = set(names) - set(PARAM_NAMES)
            if unknown:
                raise SpaceError(f"reduced mode only accepts shared names, got {sorted(unknown)}")

    @property
    def D(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims])

    @classmethod
    def shared(cls, bounds: Sequence[tuple[str, float, float]] = DEFAULT_BOUNDS) -> ParamSpace:
        return cls(tuple(Dimension(*b) for b in bounds), SHARED)

    @classmethod
    def per_vehicle(
        cls, n_vehicles: int = 5, bounds: Sequence[tuple[str, float, float]] = DEFAULT_BOUNDS
    ) -> ParamSpace:
        dims = tuple(
            Dimension(f"sv{k}.{name}", lo, hi)
            for k in range(1, n_vehicles + 1)
            for name, lo, hi in bounds
        )
        return cls(dims, PER_VEHICLE)

    @classmethod
    def reduced(
        cls,
        names: Sequence[str],
        fixed: Mapping[str, float] | None = None,
        bounds: Sequence[tuple[str, float, float]] = DEFAULT_BOUNDS,
    ) -> ParamSpace:
        table = {b[0]: b for b in bounds}
        missing = [n for n in names if n not in table]
        if missing:
            raise SpaceError(f"unknown parameter names {missing}")
        dims = tuple(Dimension(*table[n]) for n in names)
        held = {n: 0.5 * (lo + hi) for n, lo, hi in bounds if n not in names}
        held.update(fixed or {})
        return cls(dims, REDUCED, held)


@dataclass(frozen=True)
class Sphere:
    """A sample in the unit cube together with the ball it represents."""

    center: np.ndarray
    radius: float
    critical: bool = False
    round: int = 0

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise SpaceError("sphere radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


def sphere_arrays(spheres, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Centers and radii of a knowledge base (``.centers``/``.radii``) or a sequence of Spheres."""
    if hasattr(spheres, "centers") and hasattr(spheres, "radii"):
        return np.asarray(spheres.centers, dtype=float).reshape(-1, dim), np.asarray(spheres.radii, dtype=float)
    spheres = list(spheres or [])
    if not spheres:
        return np.empty((0, dim)), np.empty(0)
    return np.array([s.center for s in spheres], dtype=float), np.array([s.radius for s in spheres], dtype=float)


def to_physical(p: Sequence[float] | np.ndarray, space: ParamSpace) -> dict[str, float]:
    """Affinely rescale unit-cube coordinates to named physical values."""
    coords = np.asarray(p, dtype=float)
    if coords.shape != (space.D,):
        raise SpaceError(f"point has shape {coords.shape}, space has D={space.D}")
    values = space.lower + coords * (space.upper - space.lower)
    return {name: float(v) for name, v in zip(space.names, values)}


def from_physical(params: Mapping[str, float], space: ParamSpace) -> np.ndarray:
    """Inverse of :func:`to_physical`; rejects values outside the bounds."""
    out = np.empty(space.D)
    for i, d in enumerate(space.dims):
        if d.name not in params:
            raise SpaceError(f"missing value for dimension {d.name!r}")
        value = float(params[d.name])
        if not d.lower <= value <= d.upper:
            raise SpaceError(
                f"dimension {d.name!r}: value {value} outside [{d.lower}, {d.upper}]"
            )
        out[i] = (value - d.lower) / d.width
    return out


def vehicle_params(physical: Mapping[str, float], space: ParamSpace, n_vehicles: int = 5) -> list[dict[str, float]]:
    """Expand a physical parameter map into one full 7-parameter dict per SV."""
    if space.mode == PER_VEHICLE:
        return [
            {name: physical[f"sv{k}.{name}"] for name in PARAM_NAMES}
            for k in range(1, n_vehicles + 1)
        ]
    full = dict(space.fixed) if space.mode == REDUCED else {}
    full.update(physical)
    return [dict(full) for _ in range(n_vehicles)]
