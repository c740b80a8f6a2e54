"""Command-line entry point: ``scenpack {test,pack,baseline,sim,coverage}``.

Exit codes: 0 success, 2 invalid input (config, parameters, known-set file),
3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from . import lifecycle
from .baselines import BaselineKind, greedy_sample, qmc_sample, smc_sample
from .config import ConfigError, RunConfig, load_config
from .coverage import ProbeSet, crate_estimate
from .packing import min_weighted_distances, pack, write_trace
from .simulator import run_episode, write_episode_trace
from .space import REDUCED, SpaceError, from_physical

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def _seed(args, cfg: RunConfig) -> int:
    return cfg.outer.seed if args.seed is None else args.seed


def _load_known(args, dim: int, cfg: RunConfig, rng: np.random.Generator) -> lifecycle.KnowledgeBase:
    if args.known and args.random_known:
        raise InputError("--known and --random-known are mutually exclusive")
    if args.random_known:
        try:
            m, c = (int(x) for x in args.random_known.split(","))
            return lifecycle.synthetic_knowledge(m, c, dim, rng, cfg.packing.r_crit, cfg.packing.r_noncrit)
        except ValueError:
            raise InputError("--random-known expects M,C with 0 <= C <= M") from None
    if args.known is None:
        return lifecycle.KnowledgeBase(dim)
    return lifecycle.read_knowledge(args.known, dim)


def read_samples(path, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Centers and radii from either a knowledge file or a samples file."""
    with open(path, newline="") as fh:
        head = next(csv.reader(fh), None)
    if head and head[0].strip() == "round":
        kb = lifecycle.read_knowledge(path, dim)
        return np.array(kb.centers), np.array(kb.radii)
    if not head or "radius" not in head or head.index("radius") != dim:
        raise lifecycle.KnowledgeFormatError(1, f"expected {dim} coordinate columns followed by radius")
    centers, radii = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                centers.append([float(c) for c in row[:dim]])
                radii.append(float(row[dim]))
            except (ValueError, IndexError):
                raise lifecycle.KnowledgeFormatError(lineno, "non-numeric or missing field") from None
    return np.array(centers, dtype=float).reshape(-1, dim), np.array(radii, dtype=float)


def write_samples(path, names: Sequence[str], centers: np.ndarray, radii: np.ndarray, known) -> np.ndarray:
    """Write ``<coords>, radius, min_weighted_distance`` rows; returns the distances."""
    ref_c = np.vstack([np.asarray(known.centers).reshape(-1, len(names)), centers])
    ref_r = np.concatenate([np.asarray(known.radii), radii])
    dist = min_weighted_distances(centers, radii, ref_c, ref_r, self_offset=len(known))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "radius", "min_weighted_distance"])
        for c, r, d in zip(centers, radii, dist):
            w.writerow([*(_fmt(x) for x in c), _fmt(r), _fmt(d)])
    return dist


def _summary(centers: np.ndarray, radii: np.ndarray, dist: np.ndarray, known, probes: ProbeSet) -> None:
    obj = float(dist.mean()) if len(dist) else float("nan")
    print(f"n {len(centers)}")
    print(f"objective {_fmt(obj)}")
    print(f"mean_gap {_fmt(obj - 1.0)}")
    new_cov = crate_estimate(SimpleNamespace(centers=centers, radii=radii), probes) if len(centers) else 0.0
    all_c = np.vstack([np.asarray(known.centers).reshape(-1, probes.dim), centers])
    all_r = np.concatenate([np.asarray(known.radii), radii])
    print(f"crate {_fmt(new_cov)}")
    print(f"crate_with_known {_fmt(crate_estimate(SimpleNamespace(centers=all_c, radii=all_r), probes))}")


def cmd_test(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = list(cfg.space.names)
    kb = None
    know_path = out / "knowledge.csv"
    if args.resume and know_path.exists():
        kb = lifecycle.read_knowledge(know_path, cfg.space.D)

    def persist(kb: lifecycle.KnowledgeBase, _stats) -> None:
        lifecycle.atomic_write(know_path, lambda p: lifecycle.write_knowledge(p, kb, names))
        lifecycle.atomic_write(out / "rounds.csv", lambda p: lifecycle.write_rounds(p, kb.rounds))

    evaluator = lifecycle.SimEvaluator(cfg.space, cfg.sim, workers=args.threads)
    report = lifecycle.run(cfg.outer, cfg.packing, cfg.sim, cfg.space, evaluator, kb, on_round=persist)
    if kb is None or not report.rounds:
        persist(report.knowledge, None)
    stopped = "crate_theta" if report.final_crate >= cfg.outer.crate_theta else "max_rounds"
    lines = [
        f"rounds {len(report.rounds)}",
        f"total_scenarios {report.total}",
        f"total_critical {report.total_critical}",
        f"S {_fmt(report.S)}",
        f"final_score {_fmt(report.final_score)}",
        f"final_crate {_fmt(report.final_crate)}",
        f"stopped_by {stopped}",
        f"saturated_rounds {sum(r.saturated for r in report.rounds)}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_pack(args) -> int:
    cfg = _config(args)
    if args.n < 0:
        raise InputError("--n must be >= 0")
    dim = cfg.space.D
    rng = np.random.default_rng(_seed(args, cfg))
    known = _load_known(args, dim, cfg, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    initial = rng.random((args.n, dim))
    trace: list = []
    spheres = pack(initial, known, cfg.packing, rng, trace=trace)
    centers = np.array([s.center for s in spheres]).reshape(-1, dim)
    radii = np.full(len(centers), cfg.packing.r_noncrit)
    dist = write_samples(out / "samples.csv", cfg.space.names, centers, radii, known)
    write_trace(out / "pack_trace.csv", trace)
    _summary(centers, radii, dist, known, ProbeSet.halton(cfg.outer.probes, dim))
    return EXIT_OK


def baseline_points(kind: BaselineKind, n: int, dim: int, known, cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    if kind is BaselineKind.SMC:
        return smc_sample(n, dim, rng)
    if kind is BaselineKind.QMC:
        return qmc_sample(n, dim, rng.random(dim))
    spheres = greedy_sample(n, known, cfg.greedy_candidates, rng, cfg.packing.r_noncrit, dim)
    return np.array([s.center for s in spheres]).reshape(-1, dim)


def cmd_baseline(args) -> int:
    try:
        kind = BaselineKind.parse(args.kind)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cfg = _config(args)
    if args.n < 0:
        raise InputError("--n must be >= 0")
    dim = cfg.space.D
    rng = np.random.default_rng(_seed(args, cfg))
    known = _load_known(args, dim, cfg, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    centers = baseline_points(kind, args.n, dim, known, cfg, rng)
    radii = np.full(len(centers), cfg.packing.r_noncrit)
    dist = write_samples(out / "samples.csv", cfg.space.names, centers, radii, known)
    _summary(centers, radii, dist, known, ProbeSet.halton(cfg.outer.probes, dim))
    return EXIT_OK


def _parse_assignments(items: Sequence[str]) -> dict[str, float]:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"expected name=value, got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise InputError(f"{name.strip()}: expected a number, got {value!r}") from None
    return out


def cmd_sim(args) -> int:
    cfg = _config(args)
    space = cfg.space
    given = _parse_assignments(args.params)
    unknown = sorted(set(given) - set(space.names))
    if unknown:
        raise InputError(f"{unknown[0]}: not a dimension of the configured space {list(space.names)}")
    values = {d.name: 0.5 * (d.lower + d.upper) for d in space.dims}
    values.update(given)
    from_physical(values, space)  # bounds check, names the offending dimension
    params = {**space.fixed, **values} if space.mode == REDUCED else values
    trace: list | None = [] if args.trace else None
    res = run_episode(params, cfg.sim, trace)
    if trace is not None:
        write_episode_trace(args.trace, trace, cfg.sim)
    print(f"min_ttc {_fmt(res.min_ttc)}")
    print(f"min_accel {_fmt(res.min_accel)}")
    print(f"collision {int(res.collision)}")
    print(f"lane_change_completed {int(res.lane_change_completed)}")
    print(f"duration {_fmt(res.duration)}")
    print(f"critical {int(res.critical)}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = _config(args)
    dim = cfg.space.D
    centers, radii = read_samples(args.samples, dim)
    probes = ProbeSet.halton(args.probes or cfg.outer.probes, dim)
    print(f"n {len(centers)}")
    print(f"crate {_fmt(crate_estimate(SimpleNamespace(centers=centers, radii=radii), probes))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run configuration file")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for episode evaluation")

    ap = argparse.ArgumentParser(prog="scenpack", description="Adaptive scenario sampling by sphere packing.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", parents=[common], help="run the full outer loop")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true", help="continue from OUT/knowledge.csv if present")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("pack", parents=[common], help="pack N new samples among a known set")
    p.add_argument("--known", help="knowledge file (round, coords..., radius, critical, min_ttc, min_accel)")
    p.add_argument("--random-known", metavar="M,C", help="M uniform known spheres, C of them critical")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("baseline", parents=[common], help="smc | qmc | greedy sample set")
    p.add_argument("kind")
    p.add_argument("--known")
    p.add_argument("--random-known", metavar="M,C")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sim", parents=[common], help="simulate one scenario")
    p.add_argument("params", nargs="*", metavar="NAME=VALUE", help="physical values; unset ones use the bound midpoint")
    p.add_argument("--trace", help="write the per-step trace CSV here")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("coverage", parents=[common], help="coverage rate of a sample or knowledge file")
    p.add_argument("samples")
    p.add_argument("--probes", type=int, default=None)
    p.set_defaults(func=cmd_coverage)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigError, SpaceError, lifecycle.KnowledgeFormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
