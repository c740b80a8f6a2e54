"""Flat ``key = value`` run configuration.

Every key maps onto one field of :class:`OuterConfig`, :class:`PackingConfig`,
:class:`SimConfig`, or the parameter-space settings below. Unknown keys and
malformed values raise :class:`ConfigError` naming the key.

Space keys::

    space_mode   = shared | per-vehicle | reduced
    dims         = v0, alpha, T         (reduced mode only)
    n_vehicles   = 5                    (per-vehicle mode only)
    bound.<name> = lower, upper         (override one bound)
    fixed.<name> = value                (held value in reduced mode)

``layout`` is a ``;``-separated list of ``id:role:lane:position:speed``.
``greedy_candidates`` sets the greedy baseline's draws per step.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Any

from .lifecycle import OuterConfig
from .packing import PackingConfig
from .simulator import SimConfig
from .space import DEFAULT_BOUNDS, PARAM_NAMES, PER_VEHICLE, REDUCED, SHARED, ParamSpace

_SECTION = "run"


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class RunConfig:
    outer: OuterConfig = field(default_factory=OuterConfig)
    packing: PackingConfig = field(default_factory=PackingConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    space: ParamSpace = field(default_factory=ParamSpace.shared)
    greedy_candidates: int = 50

    def with_seed(self, seed: int) -> RunConfig:
        return dataclasses.replace(
            self,
            outer=dataclasses.replace(self.outer, seed=seed),
            packing=dataclasses.replace(self.packing, seed=seed),
        )


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


_OUTER = _field_types(OuterConfig)
_PACK = _field_types(PackingConfig)
_SIM = _field_types(SimConfig)
_SHARED_KEYS = set(_OUTER) & set(_PACK)  # "seed" lives in both


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


def _parse_scalar(key: str, typ: str, raw: str):
    raw = raw.strip()
    optional = "None" in typ
    if optional and raw.lower() in ("", "none"):
        return None
    try:
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
        if typ.startswith("bool"):
            return _parse_bool(key, raw)
    except ValueError:
        kind = "an integer" if typ.startswith("int") else "a number"
        raise ConfigError(key, f"expected {kind}, got {raw!r}") from None
    raise ConfigError(key, f"unsupported type {typ}")


def parse_layout(raw: str) -> tuple[tuple[str, str, int, float, float], ...]:
    rows = []
    for item in raw.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = [p.strip() for p in item.split(":")]
        if len(parts) != 5:
            raise ConfigError("layout", f"entry {item!r} must be id:role:lane:position:speed")
        vid, role, lane, pos, speed = parts
        try:
            rows.append((vid, role.upper(), int(lane), float(pos), float(speed)))
        except ValueError:
            raise ConfigError("layout", f"entry {item!r} has a non-numeric field") from None
        if rows[-1][1] not in ("AV", "SV") or rows[-1][2] not in (0, 1) or rows[-1][4] < 0:
            raise ConfigError("layout", f"entry {item!r}: role must be AV/SV, lane 0/1, speed >= 0")
    return tuple(rows)


def _pair(key: str, raw: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(key, f"expected 'lower, upper', got {raw!r}") from None
    return lo, hi


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), strict=True)
    parser.optionxform = str  # keys are case-sensitive (S, T, G)
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    if parser.sections() != [_SECTION]:
        raise ConfigError("<file>", "sections are not supported; use flat key = value lines")
    items = dict(parser.items(_SECTION))

    outer_kw: dict[str, Any] = {}
    pack_kw: dict[str, Any] = {}
    sim_kw: dict[str, Any] = {}
    bounds = {name: (lo, hi) for name, lo, hi in DEFAULT_BOUNDS}
    fixed: dict[str, float] = {}
    mode = SHARED
    dims: list[str] | None = None
    n_vehicles = 5
    greedy = 50

    for key, raw in items.items():
        if key.startswith("bound."):
            name = key[len("bound."):]
            if name not in bounds:
                raise ConfigError(key, f"unknown parameter {name!r}")
            bounds[name] = _pair(key, raw)
        elif key.startswith("fixed."):
            name = key[len("fixed."):]
            if name not in bounds:
                raise ConfigError(key, f"unknown parameter {name!r}")
            fixed[name] = _parse_scalar(key, "float", raw)
        elif key == "space_mode":
            mode = raw.strip()
            if mode not in (SHARED, PER_VEHICLE, REDUCED):
                raise ConfigError(key, f"expected shared, per-vehicle or reduced, got {mode!r}")
        elif key == "dims":
            dims = [d.strip() for d in raw.split(",") if d.strip()]
        elif key == "n_vehicles":
            n_vehicles = _parse_scalar(key, "int", raw)
        elif key == "greedy_candidates":
            greedy = _parse_scalar(key, "int", raw)
            if greedy < 1:
                raise ConfigError(key, "must be >= 1")
        elif key == "layout":
            sim_kw["layout"] = parse_layout(raw)
        elif key in _SHARED_KEYS:
            outer_kw[key] = pack_kw[key] = _parse_scalar(key, _OUTER[key], raw)
        elif key in _OUTER:
            outer_kw[key] = _parse_scalar(key, _OUTER[key], raw)
        elif key in _PACK:
            pack_kw[key] = _parse_scalar(key, _PACK[key], raw)
        elif key in _SIM:
            sim_kw[key] = _parse_scalar(key, _SIM[key], raw)
        else:
            raise ConfigError(key, "unknown key")

    for name, (lo, hi) in bounds.items():
        if not hi > lo:
            raise ConfigError(f"bound.{name}", "upper bound must exceed lower bound")
    for name, value in fixed.items():
        lo, hi = bounds[name]
        if not lo <= value <= hi:
            raise ConfigError(f"fixed.{name}", f"value {value} outside [{lo}, {hi}]")
    table = tuple((n, *bounds[n]) for n in PARAM_NAMES)

    if mode == REDUCED:
        if not dims:
            raise ConfigError("dims", "reduced mode needs at least one dimension")
        unknown = [d for d in dims if d not in bounds]
        if unknown:
            raise ConfigError("dims", f"unknown parameter(s) {unknown}")
        space = ParamSpace.reduced(dims, fixed, table)
    elif dims is not None:
        raise ConfigError("dims", "only valid with space_mode = reduced")
    elif mode == PER_VEHICLE:
        if n_vehicles < 1:
            raise ConfigError("n_vehicles", "must be >= 1")
        space = ParamSpace.per_vehicle(n_vehicles, table)
    else:
        space = ParamSpace.shared(table)

    cfgs = []
    for cls, kw in ((OuterConfig, outer_kw), (PackingConfig, pack_kw), (SimConfig, sim_kw)):
        try:
            cfgs.append(cls(**kw))
        except ValueError as exc:
            key = next((k for k in kw if str(exc).startswith(k)), "<config>")
            raise ConfigError(key, str(exc)) from None
    return RunConfig(*cfgs, space=space, greedy_candidates=greedy)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


DOCUMENTED_DEFAULTS = """\
# outer loop
batch_size = 200
crate_theta = 0.95
S = 4000
h = 0.1
max_rounds = 50
probes = 100000
kde_bias = false
# packing
K = 200
mu = 1.0
beta = 0.01
t0 = 0.02
t_decay = 0.05
r_crit = 0.04
r_noncrit = 0.06
# simulator
dt = 0.1
t_max = 30
ttc_theta = 2
a_theta = 6
G = 9
a_max = 3
v_max_av = 30
b_safe = 4
# space
space_mode = shared
greedy_candidates = 50
"""
