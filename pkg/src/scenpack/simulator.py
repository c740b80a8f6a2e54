"""Cut-in scenario on a one-way two-lane road.

Five surrounding vehicles (SVs) follow IDM, and the designated cut-in SV also
runs MOBIL. The automated vehicle (AV) under test uses a bang-bang
collision-avoidance speed law. The simulation is deterministic: a fixed
step with synchronous updates and no randomness.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .space import PARAM_NAMES

AV = "AV"
SV = "SV"
CUT_IN_ID = "SV2"
MIN_GAP = 0.1


@dataclass(frozen=True)
class IdmParams:
    v0: float
    alpha: float
    T: float
    b: float
    s0: float

    def __post_init__(self) -> None:
        for name in ("v0", "alpha", "T", "b", "s0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be > 0")


@dataclass(frozen=True)
class MobilParams:
    p: float
    delta_a_th: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("politeness p must lie in [0, 1]")
        if self.delta_a_th < 0:
            raise ValueError("delta_a_th must be >= 0")


@dataclass
class VehicleState:
    id: str
    lane: int
    position: float
    speed: float
    role: str = SV

    def __post_init__(self) -> None:
        if self.lane not in (0, 1):
            raise ValueError("lane must be 0 or 1")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")


# id, role, lane, front-bumper position (m), speed (m/s). SV2 sits between SV1
# and the AV and is boxed in behind a slow SV4, so its lane change lands in
# front of the AV.
DEFAULT_LAYOUT: tuple[tuple[str, str, int, float, float], ...] = (
    ("SV1", SV, 0, 70.0, 25.0),
    ("AV", AV, 0, 25.0, 25.0),
    ("SV3", SV, 0, 0.0, 25.0),
    ("SV4", SV, 1, 55.0, 15.0),
    ("SV2", SV, 1, 37.5, 25.0),
    ("SV5", SV, 1, 12.5, 25.0),
)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    t_max: float = 30.0
    ttc_theta: float = 2.0
    a_theta: float = 6.0
    G: float = 9.0
    a_max: float = 3.0
    v_max_av: float = 30.0
    b_safe: float = 4.0
    vehicle_length: float = 5.0
    layout: tuple[tuple[str, str, int, float, float], ...] = DEFAULT_LAYOUT

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        if not self.ttc_theta > 0:
            raise ValueError("ttc_theta must be > 0")
        if not 6.0 <= self.G <= 12.0:
            raise ValueError("G must lie in [6, 12] m")
        if not (self.a_max > 0 and self.v_max_av > 0 and self.b_safe > 0):
            raise ValueError("a_max, v_max_av and b_safe must be > 0")
        ids = [row[0] for row in self.layout]
        if len(set(ids)) != len(ids) or sum(r[1] == AV for r in self.layout) != 1:
            raise ValueError("layout needs unique ids and exactly one AV")


@dataclass(frozen=True)
class EpisodeResult:
    min_ttc: float
    min_accel: float
    collision: bool
    lane_change_completed: bool
    duration: float
    critical: bool


def idm_accel(v: float, dv: float, s: float, prm: IdmParams) -> float:
    """IDM acceleration; ``dv = v - v_lead`` is the approach rate, ``s`` the bumper gap."""
    s = max(s, MIN_GAP)
    dynamic = v * prm.T + v * dv / (2.0 * math.sqrt(prm.alpha * prm.b))
    s_star = prm.s0 + max(0.0, dynamic)
    return prm.alpha * (1.0 - (v / prm.v0) ** 4 - (s_star / s) ** 2)


def idm_free(v: float, prm: IdmParams) -> float:
    return prm.alpha * (1.0 - (v / prm.v0) ** 4)


def mobil_incentive(accels: Sequence[float], p: float) -> float:
    a_c, a_c_new, a_n, a_n_new, a_o, a_o_new = accels
    return (a_c_new - a_c) + p * ((a_n_new - a_n) + (a_o_new - a_o))


def mobil_decision(accels: Sequence[float], prm: MobilParams, b_safe: float = 4.0) -> bool:
    """Lane change iff the incentive beats the threshold and the new follower stays safe.

    ``accels`` is ``(a_c, ã_c, a_n, ã_n, a_o, ã_o)``: the changer, the new
    follower and the old follower, before and after the hypothetical change.
    """
    return mobil_incentive(accels, prm.p) > prm.delta_a_th and accels[3] >= -b_safe


def av_speed_update(v: float, gap: float, cfg: SimConfig) -> float:
    if gap < cfg.G:
        return max(0.0, v - cfg.a_max * cfg.dt)
    return min(cfg.v_max_av, v + cfg.a_max * cfg.dt)


def ttc(gap: float, closing_speed: float) -> float:
    if closing_speed <= 0:
        return math.inf
    if gap <= 0:
        return 0.0
    return gap / closing_speed


def criticality(res: EpisodeResult, cfg: SimConfig) -> int:
    return int(res.min_ttc <= cfg.ttc_theta or res.min_accel <= -abs(cfg.a_theta) or res.collision)


def split_params(params: Mapping[str, float], vehicle_ids: Sequence[str]) -> dict[str, tuple[IdmParams, MobilParams]]:
    """Per-SV behavior parameters from a shared map or an ``sv<k>.<name>`` map."""
    out = {}
    for vid in vehicle_ids:
        prefix = f"{vid.lower()}."
        if any(k.startswith(prefix) for k in params):
            vals = {n: float(params[prefix + n]) for n in PARAM_NAMES}
        else:
            missing = [n for n in PARAM_NAMES if n not in params]
            if missing:
                raise KeyError(f"missing parameters {missing}")
            vals = {n: float(params[n]) for n in PARAM_NAMES}
        out[vid] = (
            IdmParams(vals["v0"], vals["alpha"], vals["T"], vals["b"], vals["s0"]),
            MobilParams(vals["p"], vals["delta_a_th"]),
        )
    return out


@dataclass
class _Traffic:
    vehicles: list[VehicleState]
    length: float

    def leader(self, veh: VehicleState, lane: int | None = None, position: float | None = None) -> VehicleState | None:
        lane = veh.lane if lane is None else lane
        x = veh.position if position is None else position
        best = None
        for o in self.vehicles:
            if o is veh or o.lane != lane or o.position < x:
                continue
            if o.position == x and o.id < veh.id:
                continue
            if best is None or o.position < best.position:
                best = o
        return best

    def follower(self, veh: VehicleState, lane: int) -> VehicleState | None:
        best = None
        for o in self.vehicles:
            if o is veh or o.lane != lane or o.position > veh.position:
                continue
            if o.position == veh.position and o.id > veh.id:
                continue
            if best is None or o.position > best.position:
                best = o
        return best

    def gap(self, follower: VehicleState, leader: VehicleState) -> float:
        return leader.position - follower.position - self.length


def _accel(traffic: _Traffic, veh: VehicleState, leader: VehicleState | None, prm: IdmParams) -> float:
    if leader is None:
        return idm_free(veh.speed, prm)
    return idm_accel(veh.speed, veh.speed - leader.speed, traffic.gap(veh, leader), prm)


def _mobil_accels(traffic: _Traffic, me: VehicleState, behavior: dict) -> tuple[float, ...] | None:
    """(a_c, ã_c, a_n, ã_n, a_o, ã_o) for ``me`` moving to the other lane, or None if blocked."""
    own = behavior[me.id][0]
    target = 1 - me.lane

    def model(v: VehicleState) -> IdmParams:
        # Followers are predicted with their own IDM; the AV's controller is unknown to the SV.
        return behavior[v.id][0] if v.id in behavior else own

    lead_now = traffic.leader(me)
    lead_new = traffic.leader(me, lane=target)
    foll_new = traffic.follower(me, target)
    foll_old = traffic.follower(me, me.lane)
    if lead_new is not None and traffic.gap(me, lead_new) <= 0:
        return None
    if foll_new is not None and traffic.gap(foll_new, me) <= 0:
        return None
    a_c = _accel(traffic, me, lead_now, own)
    a_c_new = _accel(traffic, me, lead_new, own)
    a_n = a_n_new = a_o = a_o_new = 0.0
    if foll_new is not None:
        a_n = _accel(traffic, foll_new, traffic.leader(foll_new), model(foll_new))
        a_n_new = _accel(traffic, foll_new, me, model(foll_new))
    if foll_old is not None:
        a_o = _accel(traffic, foll_old, me, model(foll_old))
        a_o_new = _accel(traffic, foll_old, lead_now, model(foll_old))
    return a_c, a_c_new, a_n, a_n_new, a_o, a_o_new


def run_episode(
    params: Mapping[str, float],
    cfg: SimConfig | None = None,
    trace: list[list] | None = None,
    cut_in_id: str = CUT_IN_ID,
) -> EpisodeResult:
    """Simulate one scenario until the cut-in completes, a collision, or ``t_max``.

    ``trace`` (if given) receives one row per step:
    ``[t, (lane, position, speed) per vehicle..., av_gap, av_ttc]``.
    """
    cfg = cfg or SimConfig()
    vehicles = [VehicleState(vid, lane, float(x), float(v), role) for vid, role, lane, x, v in cfg.layout]
    traffic = _Traffic(vehicles, cfg.vehicle_length)
    av = next(v for v in vehicles if v.role == AV)
    svs = [v for v in vehicles if v.role == SV]
    behavior = split_params(params, [v.id for v in svs])
    changer = next((v for v in svs if v.id == cut_in_id), None)

    min_ttc = math.inf
    min_accel = math.inf
    collision = False
    pending = False
    swap_step: int | None = None
    steps = int(round(cfg.t_max / cfg.dt))
    completed = False
    k = 0
    t = 0.0
    while True:
        if pending:
            changer.lane = 1 - changer.lane
            pending = False
            swap_step = k

        lead = traffic.leader(av)
        gap = traffic.gap(av, lead) if lead is not None else math.inf
        closing = av.speed - lead.speed if lead is not None else 0.0
        min_ttc = min(min_ttc, ttc(gap, closing))
        for lane in (0, 1):
            ordered = sorted((v for v in vehicles if v.lane == lane), key=lambda v: v.position)
            for back, front in zip(ordered, ordered[1:]):
                if traffic.gap(back, front) <= 0:
                    collision = True
        if trace is not None:
            row = [t]
            for v in vehicles:
                row += [v.lane, v.position, v.speed]
            trace.append(row + [gap, ttc(gap, closing)])

        completed = swap_step is not None and k >= swap_step + 1
        if collision or completed or k >= steps:
            break

        accels = {}
        for v in svs:
            accels[v.id] = _accel(traffic, v, traffic.leader(v), behavior[v.id][0])
        if changer is not None and swap_step is None:
            mob = _mobil_accels(traffic, changer, behavior)
            if mob is not None and mobil_decision(mob, behavior[changer.id][1], cfg.b_safe):
                pending = True
        av_next = av_speed_update(av.speed, gap, cfg)
        min_accel = min(min_accel, (av_next - av.speed) / cfg.dt)

        for v in vehicles:
            v_new = av_next if v is av else max(0.0, v.speed + accels[v.id] * cfg.dt)
            v.position += 0.5 * (v.speed + v_new) * cfg.dt
            v.speed = v_new
        k += 1
        t = k * cfg.dt

    if min_accel == math.inf:
        min_accel = 0.0
    res = EpisodeResult(min_ttc, min_accel, collision, completed, t, False)
    return EpisodeResult(min_ttc, min_accel, collision, completed, t, bool(criticality(res, cfg)))


def trace_header(cfg: SimConfig) -> list[str]:
    cols = ["t"]
    for vid, *_ in cfg.layout:
        cols += [f"{vid}_lane", f"{vid}_position", f"{vid}_speed"]
    return cols + ["av_gap", "av_ttc"]


def write_episode_trace(path, rows: list[list], cfg: SimConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_header(cfg))
        for row in rows:
            w.writerow([v if isinstance(v, int) else f"{v:.9g}" for v in row])
