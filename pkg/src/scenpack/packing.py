"""Inner loop: repulsive sphere packing of a new sample batch.

New spheres are pushed away from the immovable known spheres and from each
other by inverse-square repulsion, held inside the unit cube by a log
barrier, and every move of the batch is accepted or rejected by an annealing
rule on the mean minimum weighted distance.

Conventions: index ``0..M-1`` are known spheres, ``M..M+I-1`` the new ones.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .space import Sphere, sphere_arrays
from .spatial_index import SpatialIndex

EDGE = 1e-9
D_MIN = 1e-6
_SLACK = 1e-9
CUTOFF_SCALE = 1.2


@dataclass(frozen=True)
class PackingConfig:
    """Inner-loop settings.

    ``n=None`` moves the whole batch every iteration. ``neighbor_radius=None``
    scales the force cutoff with sample density as
    ``CUTOFF_SCALE * (M + I) ** (-1 / D)``, about 1.2 mean center spacings.
    """

    K: int = 200
    n: int | None = None
    mu: float = 1.0
    beta: float = 0.01
    t0: float = 0.02
    t_decay: float = 0.05
    neighbor_radius: float | None = None
    r_crit: float = 0.04
    r_noncrit: float = 0.06
    seed: int = 0

    def __post_init__(self) -> None:
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.mu > 0:
            raise ValueError("mu must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.t0 > 0:
            raise ValueError("t0 must be > 0")
        if self.t_decay < 0:
            raise ValueError("t_decay must be >= 0")
        if self.neighbor_radius is not None and not self.neighbor_radius > 0:
            raise ValueError("neighbor_radius must be > 0")
        if not (self.r_crit > 0 and self.r_noncrit > 0):
            raise ValueError("r_crit and r_noncrit must be > 0")

    def step_size(self, k: int) -> float:
        return self.t0 / (1.0 + self.t_decay * k)

    def cutoff(self, n_spheres: int, dim: int) -> float:
        if self.neighbor_radius is not None:
            return self.neighbor_radius
        return CUTOFF_SCALE * max(n_spheres, 1) ** (-1.0 / dim)


@dataclass
class TraceRow:
    k: int
    objective: float
    best_objective: float
    accepted: bool
    probability: float


@dataclass
class PackingState:
    """Positions of the batch being packed plus the frozen known set."""

    new_centers: np.ndarray
    new_radii: np.ndarray
    known_centers: np.ndarray
    known_radii: np.ndarray
    k: int = 0
    objective: float = math.inf
    best_objective: float = -math.inf
    best_centers: np.ndarray | None = None
    trace: list[TraceRow] = field(default_factory=list)

    @classmethod
    def create(cls, new_centers, new_radii, known_centers, known_radii) -> PackingState:
        new_centers = np.clip(np.array(new_centers, dtype=float), EDGE, 1.0 - EDGE)
        d = new_centers.shape[1]
        known_centers = np.array(known_centers, dtype=float).reshape(-1, d)
        known_centers.setflags(write=False)
        known_radii = np.array(known_radii, dtype=float).reshape(-1)
        known_radii.setflags(write=False)
        state = cls(new_centers, np.array(new_radii, dtype=float).reshape(-1), known_centers, known_radii)
        state.objective = objective(state)
        state.best_objective = state.objective
        state.best_centers = state.new_centers.copy()
        return state

    @property
    def I(self) -> int:
        return len(self.new_centers)

    @property
    def M(self) -> int:
        return len(self.known_centers)

    def all_centers(self) -> np.ndarray:
        return np.vstack([self.known_centers, self.new_centers])

    def all_radii(self) -> np.ndarray:
        return np.concatenate([self.known_radii, self.new_radii])


def weighted_distance(a: Sphere, b: Sphere) -> float:
    """Center distance over the sum of radii: 1 when tangent, < 1 when overlapping."""
    return float(np.linalg.norm(a.center - b.center) / (a.radius + b.radius))


def min_weighted_distances(
    centers: np.ndarray,
    radii: np.ndarray,
    ref_centers: np.ndarray,
    ref_radii: np.ndarray,
    self_offset: int | None = None,
    k: int = 8,
    tree: cKDTree | None = None,
) -> np.ndarray:
    """Per-row minimum of ``||c - r|| / (R_c + R_r)`` over the reference set.

    With ``self_offset`` set, row ``i`` skips reference ``self_offset + i``.
    Exact: the k-NN candidates are checked against the bound
    ``d_k / (R_i + max R_ref)`` and rows failing it fall back to a ball query.
    """
    n = len(centers)
    out = np.full(n, np.inf)
    if n == 0 or len(ref_centers) == 0:
        return out
    r_max = float(ref_radii.max())
    tree = cKDTree(ref_centers) if tree is None else tree
    kk = min(k + (1 if self_offset is not None else 0), len(ref_centers))
    dist, ids = tree.query(centers, k=kk)
    if kk == 1:
        dist, ids = dist[:, None], ids[:, None]
    dist = np.sqrt(((ref_centers[ids] - centers[:, None, :]) ** 2).sum(axis=2))
    ratio = dist / (radii[:, None] + ref_radii[ids])
    if self_offset is not None:
        ratio[ids == (self_offset + np.arange(n))[:, None]] = np.inf
    out = ratio.min(axis=1)
    if kk == len(ref_centers):
        return out
    bound = dist[:, -1] / (radii + r_max)
    todo = np.nonzero(out > bound)[0]
    for i in todo:
        reach = out[i] * (radii[i] + r_max) if np.isfinite(out[i]) else np.inf
        if np.isfinite(reach):
            cand = np.asarray(tree.query_ball_point(centers[i], reach * (1 + _SLACK) + _SLACK), dtype=np.intp)
        else:
            cand = np.arange(len(ref_centers))
        if self_offset is not None:
            cand = cand[cand != self_offset + i]
        if cand.size:
            d = np.sqrt(((ref_centers[cand] - centers[i]) ** 2).sum(axis=1))
            out[i] = min(out[i], float((d / (radii[i] + ref_radii[cand])).min()))
    return out


def min_distances(state: PackingState, centers: np.ndarray | None = None) -> np.ndarray:
    """Minimum weighted distance of every new sphere to all other spheres."""
    centers = state.new_centers if centers is None else centers
    ref_c = np.vstack([state.known_centers, centers])
    ref_r = np.concatenate([state.known_radii, state.new_radii])
    return min_weighted_distances(centers, state.new_radii, ref_c, ref_r, self_offset=state.M)


def objective(state: PackingState, centers: np.ndarray | None = None) -> float:
    """Mean over new spheres of their minimum weighted distance (+inf if alone)."""
    if state.I == 0:
        return math.inf
    return float(min_distances(state, centers).mean())


def mean_gap(state: PackingState) -> float:
    """Mean minimum weighted gap: ``objective - 1``; negative means overlap on average."""
    return objective(state) - 1.0


def _coincident_direction(on_id: int, from_id: int, dim: int) -> np.ndarray:
    lo, hi = min(on_id, from_id), max(on_id, from_id)
    v = np.random.default_rng([lo, hi]).standard_normal(dim)
    v /= np.linalg.norm(v)
    return v if on_id < from_id else -v


def repulsion(on: Sphere, from_: Sphere, mu: float, on_id: int = 0, from_id: int = 1) -> np.ndarray:
    """Inverse-square push on ``on`` away from ``from_``; magnitude mu*R_on*R_from/d^2."""
    diff = on.center - from_.center
    d = float(np.sqrt((diff**2).sum()))
    mag = mu * (on.radius * from_.radius) / max(d, D_MIN) ** 2
    if d == 0.0:
        return mag * _coincident_direction(on_id, from_id, len(diff))
    return mag * diff / d


def boundary_force(p, beta: float) -> np.ndarray:
    """Log barrier per axis, beta*log((1-p)/p): zero mid-cube, diverging at the faces."""
    p = np.clip(np.asarray(p, dtype=float), EDGE, 1.0 - EDGE)
    return beta * np.log((1.0 - p) / p)


def total_force(i: int, state: PackingState, idx: SpatialIndex, cfg: PackingConfig) -> np.ndarray:
    """Net force on new sphere ``i``.

    ``idx`` must index ``state.all_centers()`` in order; the sphere's own entry
    is skipped.
    """
    me = state.M + i
    centers = idx.points
    radii = state.all_radii()
    on = Sphere(centers[me], radii[me])
    f = boundary_force(centers[me], cfg.beta)
    rho = cfg.cutoff(len(centers), centers.shape[1])
    for j, d in idx.within_radius(centers[me], rho):
        if j == me:
            continue
        f = f + repulsion(on, Sphere(centers[j], radii[j]), cfg.mu, me, j)
    return f


def total_forces(state: PackingState, selected: np.ndarray, cfg: PackingConfig) -> np.ndarray:
    """Vectorized :func:`total_force` for the selected new spheres (rows in order)."""
    centers = state.all_centers()
    radii = state.all_radii()
    rows = state.M + np.asarray(selected, dtype=np.intp)
    sel_c = centers[rows]
    forces = boundary_force(sel_c, cfg.beta)
    if len(rows) == 0:
        return forces
    rho = cfg.cutoff(len(centers), centers.shape[1])
    pairs = cKDTree(sel_c).sparse_distance_matrix(
        cKDTree(centers), rho * (1 + _SLACK) + _SLACK, output_type="ndarray"
    )
    a = pairs["i"].astype(np.intp)
    b = pairs["j"].astype(np.intp)
    keep = b != rows[a]
    a, b = a[keep], b[keep]
    diff = sel_c[a] - centers[b]
    d = np.sqrt((diff**2).sum(axis=1))
    keep = d <= rho
    a, b, diff, d = a[keep], b[keep], diff[keep], d[keep]
    mag = cfg.mu * (radii[rows[a]] * radii[b]) / np.maximum(d, D_MIN) ** 2
    unit = np.empty_like(diff)
    nz = d > 0
    unit[nz] = diff[nz] / d[nz, None]
    for z in np.nonzero(~nz)[0]:
        unit[z] = _coincident_direction(int(rows[a[z]]), int(b[z]), diff.shape[1])
    contrib = mag[:, None] * unit
    for dim in range(forces.shape[1]):
        forces[:, dim] += np.bincount(a, weights=contrib[:, dim], minlength=len(rows))
    return forces


def annealing_weight(k: int, K: int) -> float:
    """Increasing schedule tau(k) = 1 + 10 k / K."""
    return 1.0 + 10.0 * k / max(K, 1)


def acceptance_probability(obj_old: float, obj_new: float, k: int, K: int) -> float:
    if obj_new >= obj_old:
        return 1.0
    worsening = obj_old - obj_new
    if not math.isfinite(worsening):
        return 0.0
    return math.exp(-annealing_weight(k, K) * worsening / max(abs(obj_old), 1e-9))


def step(state: PackingState, cfg: PackingConfig, rng: np.random.Generator) -> PackingState:
    """One iteration: move n random spheres along their net force, then accept or revert."""
    if state.I == 0:
        state.k += 1
        return state
    n = state.I if cfg.n is None else min(cfg.n, state.I)
    selected = np.sort(rng.choice(state.I, size=n, replace=False))
    forces = total_forces(state, selected, cfg)
    norms = np.sqrt((forces**2).sum(axis=1))
    moving = norms >= 1e-12
    t = cfg.step_size(state.k)
    proposal = state.new_centers.copy()
    sel = selected[moving]
    proposal[sel] = np.clip(
        proposal[sel] + t * forces[moving] / norms[moving, None], EDGE, 1.0 - EDGE
    )
    obj_new = objective(state, proposal)
    prob = acceptance_probability(state.objective, obj_new, state.k, cfg.K)
    accepted = bool(rng.random() < prob)
    if accepted:
        state.new_centers = proposal
        state.objective = obj_new
        if obj_new > state.best_objective:
            state.best_objective = obj_new
            state.best_centers = proposal.copy()
    state.k += 1
    state.trace.append(TraceRow(state.k, state.objective, state.best_objective, accepted, prob))
    return state


def pack(
    new: Sequence[Sequence[float]] | np.ndarray,
    known,
    cfg: PackingConfig,
    rng: np.random.Generator | None = None,
    trace: list[TraceRow] | None = None,
    round: int = 0,
) -> list[Sphere]:
    """Run ``cfg.K`` packing iterations and return the best positions found.

    New spheres get radius ``cfg.r_noncrit``; their criticality is unknown
    until they are evaluated.
    """
    new = np.asarray(new, dtype=float)
    if new.size == 0:
        return []
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    known_c, known_r = sphere_arrays(known, new.shape[1])
    state = PackingState.create(new, np.full(len(new), cfg.r_noncrit), known_c, known_r)
    if cfg.K == 0:
        return [Sphere(c, cfg.r_noncrit, False, round) for c in np.asarray(new, dtype=float)]
    for _ in range(cfg.K):
        step(state, cfg, rng)
    if trace is not None:
        trace.extend(state.trace)
    return [Sphere(c, cfg.r_noncrit, False, round) for c in state.best_centers]


def write_trace(path, rows: Iterable[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "objective", "best_objective", "accepted", "acceptance_probability"])
        for r in rows:
            w.writerow([r.k, f"{r.objective:.9g}", f"{r.best_objective:.9g}", int(r.accepted), f"{r.probability:.9g}"])
