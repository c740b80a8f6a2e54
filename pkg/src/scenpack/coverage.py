"""Coverage rate of a union of balls over the unit cube.

The covered volume is estimated by the fraction of a fixed Halton probe set
that falls inside at least one ball, so repeated runs produce identical
coverage traces.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .space import sphere_arrays
from .spatial_index import SpatialIndex

DEFAULT_PROBES = 100_000


def first_primes(n: int) -> list[int]:
    primes: list[int] = []
    candidate = 2
    while len(primes) < n:
        if all(candidate % p for p in primes if p * p <= candidate):
            primes.append(candidate)
        candidate += 1
    return primes


def radical_inverse(indices: np.ndarray, base: int) -> np.ndarray:
    """Van der Corput radical inverse of each integer index in ``base``."""
    idx = np.asarray(indices, dtype=np.int64).copy()
    out = np.zeros(idx.shape)
    scale = 1.0 / base
    while np.any(idx > 0):
        out += scale * (idx % base)
        idx //= base
        scale /= base
    return out


def halton(count: int, dim: int, start: int = 1) -> np.ndarray:
    """Halton points for indices ``start .. start+count-1`` (bases = first ``dim`` primes).

    ``start=1`` skips the all-zero point, so base 2 begins 1/2, 1/4, 3/4, ...
    """
    idx = np.arange(start, start + count)
    return np.column_stack([radical_inverse(idx, b) for b in first_primes(dim)]) if dim else np.empty((count, 0))


@dataclass(frozen=True)
class ProbeSet:
    points: np.ndarray

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def halton(cls, count: int = DEFAULT_PROBES, dim: int = 3) -> ProbeSet:
        return _cached_probes(count, dim)


@lru_cache(maxsize=8)
def _cached_probes(count: int, dim: int) -> ProbeSet:
    pts = halton(count, dim)
    pts.setflags(write=False)
    return ProbeSet(pts)


def covered_mask(centers: np.ndarray, radii: np.ndarray, probes: ProbeSet, idx: SpatialIndex | None = None) -> np.ndarray:
    """Boolean mask over probes: inside at least one ball."""
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    mask = np.zeros(probes.count, dtype=bool)
    if len(centers) == 0:
        return mask
    idx = SpatialIndex(centers) if idx is None else idx
    qi, ids, dist = idx.pairs_within(probes.points, float(radii.max()))
    hit = dist <= radii[ids]
    mask[qi[hit]] = True
    return mask


def crate_estimate(spheres, probes: ProbeSet, idx: SpatialIndex | None = None) -> float:
    """Fraction of probes covered by the union of ``spheres``.

    ``spheres`` is a sequence of :class:`~scenpack.space.Sphere` or any object
    with ``centers`` and ``radii`` arrays.
    """
    if probes.count == 0:
        raise ValueError("probe set is empty")
    centers, radii = sphere_arrays(spheres, probes.dim)
    if len(centers) == 0:
        return 0.0
    return float(covered_mask(centers, radii, probes, idx).mean())


def is_in_known(p, knowledge, idx: SpatialIndex | None = None) -> bool:
    """True iff ``p`` lies inside any knowledge sphere."""
    p = np.asarray(p, dtype=float)
    centers, radii = sphere_arrays(knowledge, len(p))
    if len(centers) == 0:
        return False
    idx = SpatialIndex(centers) if idx is None else idx
    for j, d in idx.within_radius(p, float(radii.max())):
        if d <= radii[j]:
            return True
    return False


def inside_any(points: np.ndarray, centers: np.ndarray, radii: np.ndarray, idx: SpatialIndex | None = None) -> np.ndarray:
    """Vectorized :func:`is_in_known` over rows of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(points), dtype=bool)
    if len(centers) == 0:
        return out
    idx = SpatialIndex(centers) if idx is None else idx
    qi, ids, dist = idx.pairs_within(points, float(np.max(radii)))
    out[qi[dist <= np.asarray(radii)[ids]]] = True
    return out

