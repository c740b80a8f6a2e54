"""Reference samplers: plain Monte Carlo, shifted Halton, and greedy best-of-k."""
from __future__ import annotations

import enum

import numpy as np
from scipy.spatial import cKDTree

from .coverage import halton
from .packing import min_weighted_distances
from .space import Sphere, sphere_arrays


class BaselineKind(enum.Enum):
    SMC = "smc"
    QMC = "qmc"
    GREEDY = "greedy"

    @classmethod
    def parse(cls, name: str) -> BaselineKind:
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown baseline kind {name!r}; expected one of smc, qmc, greedy") from None


def smc_sample(N: int, D: int, rng: np.random.Generator) -> np.ndarray:
    """N i.i.d. uniform points in the unit cube."""
    if N < 0:
        raise ValueError("N must be >= 0")
    return rng.random((N, D))


def qmc_sample(N: int, D: int, shift=None) -> np.ndarray:
    """First N Halton points moved by a Cranley-Patterson shift (mod 1).

    ``shift=None`` means no shift; pass ``rng.random(D)`` for a randomized set.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    pts = halton(N, D)
    if shift is None:
        return pts
    shift = np.asarray(shift, dtype=float)
    if shift.shape != (D,) or np.any(shift < 0) or np.any(shift > 1):
        raise ValueError("shift must be a length-D vector in the unit cube")
    return np.mod(pts + shift, 1.0)


def greedy_sample(
    N: int,
    known,
    candidates_per_step: int = 50,
    rng: np.random.Generator | None = None,
    radius: float = 0.06,
    dim: int = 3,
) -> list[Sphere]:
    """Place N spheres one at a time, each the best of ``candidates_per_step`` uniform draws.

    "Best" is the largest minimum weighted distance to the known spheres and
    to everything placed so far in this call.
    """
    if candidates_per_step < 1:
        raise ValueError("candidates_per_step must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    known_c, known_r = sphere_arrays(known, dim)
    tree = cKDTree(known_c) if len(known_c) else None
    placed = np.empty((N, dim))
    cand_r = np.full(candidates_per_step, radius)
    for i in range(N):
        cand = rng.random((candidates_per_step, dim))
        if candidates_per_step == 1:
            placed[i] = cand[0]
            continue
        score = np.full(candidates_per_step, np.inf)
        if tree is not None:
            score = min_weighted_distances(cand, cand_r, known_c, known_r, tree=tree)
        if i:
            d = np.sqrt(((cand[:, None, :] - placed[None, :i, :]) ** 2).sum(axis=2))
            score = np.minimum(score, d.min(axis=1) / (2 * radius))
        placed[i] = cand[int(np.argmax(score))]
    return [Sphere(c, radius) for c in placed]
