"""Outer loop: generate a batch in unexplored space, pack it, evaluate, accumulate.

Each round ``r`` draws all of its randomness from ``default_rng((seed, r))``,
so a run resumed from a saved knowledge file continues exactly as an
uninterrupted run would.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coverage import DEFAULT_PROBES, ProbeSet, covered_mask, inside_any
from .packing import PackingConfig, TraceRow, pack
from .simulator import EpisodeResult, SimConfig, run_episode
from .space import REDUCED, ParamSpace, Sphere, to_physical
from .spatial_index import SpatialIndex

# (critical, min_ttc, min_accel) per point
Evaluation = tuple[bool, float, float]
Evaluator = Callable[[np.ndarray], Sequence[Evaluation]]


class KnowledgeFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class OuterConfig:
    batch_size: int = 200
    crate_theta: float = 0.95
    S: float = 4000.0
    h: float = 0.1
    max_rounds: int = 50
    seed: int = 0
    probes: int = DEFAULT_PROBES
    kde_bias: bool = False
    max_draw_factor: int = 1000

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.crate_theta <= 1.0:
            raise ValueError("crate_theta must lie in [0, 1]")
        if not self.h > 0:
            raise ValueError("h must be > 0")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.probes < 1:
            raise ValueError("probes must be >= 1")
        if self.max_draw_factor < 1:
            raise ValueError("max_draw_factor must be >= 1")


@dataclass(frozen=True)
class RoundStats:
    round: int
    n_total: int
    n_critical: int
    score: float
    crate: float
    saturated: bool = False
    kde_peak: float = 0.0


class KnowledgeBase:
    """Append-only store of evaluated spheres plus per-round statistics."""

    def __init__(self, dim: int):
        self.dim = dim
        self._centers = np.empty((0, dim))
        self._radii = np.empty(0)
        self._critical = np.empty(0, dtype=bool)
        self._round = np.empty(0, dtype=int)
        self._min_ttc = np.empty(0)
        self._min_accel = np.empty(0)
        self.rounds: list[RoundStats] = []

    def __len__(self) -> int:
        return len(self._radii)

    def _view(self, arr: np.ndarray) -> np.ndarray:
        v = arr.view()
        v.setflags(write=False)
        return v

    @property
    def centers(self) -> np.ndarray:
        return self._view(self._centers)

    @property
    def radii(self) -> np.ndarray:
        return self._view(self._radii)

    @property
    def critical(self) -> np.ndarray:
        return self._view(self._critical)

    @property
    def round_index(self) -> np.ndarray:
        return self._view(self._round)

    @property
    def min_ttc(self) -> np.ndarray:
        return self._view(self._min_ttc)

    @property
    def min_accel(self) -> np.ndarray:
        return self._view(self._min_accel)

    @property
    def n_critical(self) -> int:
        return int(self._critical.sum())

    @property
    def next_round(self) -> int:
        return int(self._round.max()) + 1 if len(self) else 0

    def spheres(self) -> list[Sphere]:
        return [
            Sphere(c, float(r), bool(k), int(rd))
            for c, r, k, rd in zip(self._centers, self._radii, self._critical, self._round)
        ]

    def append(self, centers, radii, critical, round_idx: int, min_ttc=None, min_accel=None) -> None:
        centers = np.asarray(centers, dtype=float).reshape(-1, self.dim)
        n = len(centers)
        if len(self) and round_idx < self._round.max():
            raise ValueError("rounds must be appended in order")
        nan = np.full(n, np.nan)
        self._centers = np.vstack([self._centers, centers])
        self._radii = np.concatenate([self._radii, np.asarray(radii, dtype=float).reshape(n)])
        self._critical = np.concatenate([self._critical, np.asarray(critical, dtype=bool).reshape(n)])
        self._round = np.concatenate([self._round, np.full(n, round_idx, dtype=int)])
        self._min_ttc = np.concatenate([self._min_ttc, nan if min_ttc is None else np.asarray(min_ttc, float)])
        self._min_accel = np.concatenate([self._min_accel, nan if min_accel is None else np.asarray(min_accel, float)])

    def index(self) -> SpatialIndex:
        return SpatialIndex(self._centers, self.dim)


def synthetic_knowledge(
    M: int, n_critical: int, dim: int, rng: np.random.Generator, r_crit: float = 0.04, r_noncrit: float = 0.06
) -> KnowledgeBase:
    """M uniform spheres, the first ``n_critical`` of them critical, all in round 0."""
    if not 0 <= n_critical <= M:
        raise ValueError("need 0 <= n_critical <= M")
    kb = KnowledgeBase(dim)
    crit = np.arange(M) < n_critical
    kb.append(rng.random((M, dim)), np.where(crit, r_crit, r_noncrit), crit, 0)
    return kb


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def quantize(a) -> np.ndarray:
    """Round to the 9 significant digits the CSV files carry, so saving is lossless."""
    a = np.asarray(a, dtype=float)
    return np.array([float(_fmt(x)) for x in a.ravel()]).reshape(a.shape)


def knowledge_header(names: Sequence[str]) -> list[str]:
    return ["round", *names, "radius", "critical", "min_ttc", "min_accel"]


def write_knowledge(path, kb: KnowledgeBase, names: Sequence[str] | None = None) -> None:
    names = list(names) if names is not None else [f"x{j}" for j in range(kb.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(knowledge_header(names))
        for i in range(len(kb)):
            w.writerow(
                [int(kb._round[i]), *(_fmt(c) for c in kb._centers[i]), _fmt(kb._radii[i]),
                 int(kb._critical[i]), _fmt(kb._min_ttc[i]), _fmt(kb._min_accel[i])]
            )


def read_knowledge(path, dim: int | None = None) -> KnowledgeBase:
    """Parse a knowledge file written by :func:`write_knowledge`.

    Coordinates are the columns between ``round`` and ``radius``. Errors carry
    the 1-based line number.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise KnowledgeFormatError(1, "empty file, expected a header")
    head = [h.strip() for h in rows[0]]
    tail = ["radius", "critical", "min_ttc", "min_accel"]
    if len(head) < 6 or head[0] != "round" or head[-4:] != tail:
        raise KnowledgeFormatError(1, f"header must be round,<coords...>,{','.join(tail)}")
    d = len(head) - 5
    if dim is not None and d != dim:
        raise KnowledgeFormatError(1, f"file has {d} coordinates, expected {dim}")
    kb = KnowledgeBase(d)
    parsed = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(head):
            raise KnowledgeFormatError(lineno, f"expected {len(head)} fields, got {len(row)}")
        try:
            rd = int(row[0])
            coords = [float(c) for c in row[1 : 1 + d]]
            radius = float(row[1 + d])
            crit = int(row[2 + d])
            ttc_v, acc_v = float(row[3 + d]), float(row[4 + d])
        except ValueError as exc:
            raise KnowledgeFormatError(lineno, str(exc)) from None
        if rd < 0 or crit not in (0, 1):
            raise KnowledgeFormatError(lineno, "round must be >= 0 and critical 0 or 1")
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise KnowledgeFormatError(lineno, "coordinates must lie in [0, 1]")
        if not radius > 0:
            raise KnowledgeFormatError(lineno, "radius must be > 0")
        if parsed and rd < parsed[-1][0]:
            raise KnowledgeFormatError(lineno, "rounds must be non-decreasing")
        parsed.append((rd, coords, radius, bool(crit), ttc_v, acc_v))
    r = 0
    while r < len(parsed):
        rd = parsed[r][0]
        block = [p for p in parsed[r:] if p[0] == rd]
        kb.append(
            [p[1] for p in block], [p[2] for p in block], [p[3] for p in block], rd,
            [p[4] for p in block], [p[5] for p in block],
        )
        r += len(block)
    return kb


def score(kb: KnowledgeBase, S: float) -> float:
    """Maximum score minus one point per critical scenario found."""
    return S - kb.n_critical


def kde_density(kb: KnowledgeBase, x, h: float) -> np.ndarray | float:
    """Gaussian KDE of critical samples, normalized by the total sample count.

    ``x`` may be one point or an (M, D) array.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = np.zeros(len(pts))
    crit = kb._centers[kb._critical]
    if len(kb) and len(crit):
        d = kb.dim
        norm = (2 * math.pi) ** (-d / 2) / (h**d * len(kb))
        sq = ((pts[:, None, :] - crit[None, :, :]) ** 2).sum(axis=2) / h**2
        out = norm * np.exp(-0.5 * sq).sum(axis=1)
    return float(out[0]) if single else out


def kde_peak_bound(kb: KnowledgeBase, h: float) -> float:
    """Upper bound of :func:`kde_density` (all critical kernels stacked)."""
    if not len(kb):
        return 0.0
    return kb.n_critical * (2 * math.pi) ** (-kb.dim / 2) / (h**kb.dim * len(kb))


def generate_round(
    kb: KnowledgeBase,
    N: int,
    rng: np.random.Generator,
    max_draw_factor: int = 1000,
    kde_h: float | None = None,
) -> tuple[np.ndarray, bool]:
    """Rejection-sample N uniform points outside every known sphere.

    After ``max_draw_factor * N`` rejected draws the remaining points are
    taken as plain uniform draws and the round is flagged saturated. With
    ``kde_h`` set, accepted draws are thinned with probability proportional
    to ``1 + kde_density`` (optional bias toward critical regions).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    d = kb.dim
    idx = kb.index() if len(kb) else None
    bound = 1.0 + kde_peak_bound(kb, kde_h) if kde_h else 1.0
    out: list[np.ndarray] = []
    have = 0
    failures = 0
    limit = max_draw_factor * N
    while have < N:
        if failures >= limit:
            out.append(rng.random((N - have, d)))
            return np.vstack(out), True
        batch = rng.random((max(2 * (N - have), 16), d))
        keep = np.ones(len(batch), dtype=bool)
        if idx is not None:
            keep = ~inside_any(batch, kb._centers, kb._radii, idx)
        if kde_h:
            weight = (1.0 + kde_density(kb, batch, kde_h)) / bound
            keep &= rng.random(len(batch)) < weight
        # count failures in draw order so the cap is hit at the same draw regardless of batching
        accepted = np.nonzero(keep)[0]
        need = N - have
        if len(accepted) >= need:
            last = accepted[need - 1]
            failures += int(last + 1 - need)
            out.append(batch[accepted[:need]])
            have = N
        else:
            failures += len(batch) - len(accepted)
            out.append(batch[accepted])
            have += len(accepted)
    return np.vstack(out), False


def params_for(point: np.ndarray, space: ParamSpace) -> dict[str, float]:
    """Physical parameter map for the simulator (fixed values merged in for reduced spaces)."""
    phys = to_physical(point, space)
    if space.mode == REDUCED:
        return {**space.fixed, **phys}
    return phys


def _simulate_one(args) -> Evaluation:
    point, space, cfg = args
    res: EpisodeResult = run_episode(params_for(point, space), cfg)
    return res.critical, res.min_ttc, res.min_accel


@dataclass
class SimEvaluator:
    """Evaluates unit-cube points with the built-in simulator, optionally in worker processes."""

    space: ParamSpace
    sim_cfg: SimConfig = field(default_factory=SimConfig)
    workers: int = 1

    def __call__(self, points: np.ndarray) -> list[Evaluation]:
        jobs = [(p, self.space, self.sim_cfg) for p in np.asarray(points, dtype=float)]
        if self.workers <= 1 or len(jobs) < 2:
            return [_simulate_one(j) for j in jobs]
        chunk = max(1, len(jobs) // (4 * self.workers))
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(_simulate_one, jobs, chunksize=chunk))


@dataclass
class RunReport:
    S: float
    final_score: float
    rounds: list[RoundStats]
    total: int
    knowledge: KnowledgeBase
    pack_traces: list[list[TraceRow]] = field(default_factory=list)

    @property
    def total_critical(self) -> int:
        return self.knowledge.n_critical

    @property
    def final_crate(self) -> float:
        return self.rounds[-1].crate if self.rounds else 0.0


def run(
    outer: OuterConfig,
    pack_cfg: PackingConfig,
    sim_cfg: SimConfig,
    space: ParamSpace,
    evaluator: Evaluator | None = None,
    kb: KnowledgeBase | None = None,
    on_round: Callable[[KnowledgeBase, RoundStats], None] | None = None,
    keep_traces: bool = False,
) -> RunReport:
    """Run rounds until coverage reaches ``crate_theta`` or ``max_rounds`` rounds exist.

    ``kb`` resumes from an existing knowledge base; its rounds count toward
    ``max_rounds``. ``on_round`` is called after every round (e.g. to persist).
    """
    evaluator = evaluator or SimEvaluator(space, sim_cfg)
    kb = KnowledgeBase(space.D) if kb is None else kb
    if kb.dim != space.D:
        raise ValueError(f"knowledge base has D={kb.dim}, space has D={space.D}")
    probes = ProbeSet.halton(outer.probes, space.D)
    covered = covered_mask(kb._centers, kb._radii, probes) if len(kb) else np.zeros(probes.count, bool)
    crate = float(covered.mean())
    if len(kb) and not kb.rounds:
        # resumed: rebuild per-round stats from the stored spheres
        rebuilt = KnowledgeBase(space.D)
        mask = np.zeros(probes.count, bool)
        for r in np.unique(kb._round):
            sel = kb._round == r
            rebuilt.append(kb._centers[sel], kb._radii[sel], kb._critical[sel], int(r))
            mask |= covered_mask(kb._centers[sel], kb._radii[sel], probes)
            kb.rounds.append(
                RoundStats(int(r), int(sel.sum()), int(kb._critical[sel].sum()),
                           score(rebuilt, outer.S), float(mask.mean()))
            )
    traces: list[list[TraceRow]] = []
    while crate < outer.crate_theta and len(kb.rounds) < outer.max_rounds:
        r = kb.next_round
        rng = np.random.default_rng((outer.seed, r))
        kde_h = outer.h if outer.kde_bias else None
        initial, saturated = generate_round(kb, outer.batch_size, rng, outer.max_draw_factor, kde_h)
        trace: list[TraceRow] = []
        packed = pack(initial, kb, pack_cfg, rng, trace=trace, round=r)
        centers = quantize([s.center for s in packed])
        evals = list(evaluator(centers))
        crit = np.array([e[0] for e in evals], dtype=bool)
        radii = np.where(crit, pack_cfg.r_crit, pack_cfg.r_noncrit)
        kb.append(centers, radii, crit, r, quantize([e[1] for e in evals]), quantize([e[2] for e in evals]))
        covered |= covered_mask(centers, radii, probes)
        crate = float(covered.mean())
        peak = float(np.max(kde_density(kb, centers, outer.h))) if len(centers) else 0.0
        stats = RoundStats(r, len(centers), int(crit.sum()), score(kb, outer.S), crate, saturated, peak)
        kb.rounds.append(stats)
        if keep_traces:
            traces.append(trace)
        if on_round is not None:
            on_round(kb, stats)
    return RunReport(outer.S, score(kb, outer.S), list(kb.rounds), len(kb), kb, traces)


def write_rounds(path, rounds: Sequence[RoundStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "n_total", "n_critical", "score", "crate"])
        for s in rounds:
            w.writerow([s.round, s.n_total, s.n_critical, _fmt(s.score), _fmt(s.crate)])


def atomic_write(path, writer: Callable[[str], None]) -> None:
    tmp = f"{path}.tmp"
    writer(tmp)
    os.replace(tmp, path)
