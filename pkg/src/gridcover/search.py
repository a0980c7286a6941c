"""Bounded witness search over the abstract highway model.

:func:`find_witness` plays the role of a model checker asked to refute "the
scenario never happens": it returns a finite trace in which the scenario's
first configuration holds at some step and its second at a later one.

Two strategies share one integer lattice that represents every reachable
rational position and speed exactly:

* for short horizons, a complete best-first search over joint states, pruned
  by an exact single-car reachability check;
* for longer horizons, when the ego provably never brakes (so its motion is
  fixed), per-car planning against the ego's trajectory, falling back to the
  joint search if the planner gives up.

The returned trace is rebuilt with :mod:`gridcover.model` in
:class:`~fractions.Fraction` arithmetic and is checked by
:func:`validate_trace`, which shares no code with the search.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

from .catalog import GridConfig, ReachObjective, ScenarioSpec
from .model import (
    ABSTRACT_BOUNDS, CELL_SHAPE, ControlInput, GridBounds, GridCell, ModelParams,
    PreconditionViolated, VehicleState, WorldState, cell_lane, check_invariants,
    collision_next, grid_cells, initial_world, q, step_vehicle, ego_step,
)


@dataclass(frozen=True)
class SearchConfig:
    max_steps: int = 30
    accel_menu: tuple = ("-4.6", "-2", "0", "2", "5.6")
    allow_lane_actions: bool = True
    node_budget: int = 500_000
    rng_seed: int = 0
    bounds: GridBounds = ABSTRACT_BOUNDS
    # single-car reachability pruning; only used when it is provably sound
    relaxation_pruning: bool = True

    def __post_init__(self):
        object.__setattr__(self, "accel_menu", tuple(q(a) for a in self.accel_menu))
        if self.max_steps < 2:
            raise ValueError("max_steps must be at least 2")
        if not self.accel_menu:
            raise ValueError("accel_menu must not be empty")
        if self.node_budget < 0:
            raise ValueError("node_budget must be non-negative")

    def check(self, params: ModelParams) -> None:
        for a in self.accel_menu:
            if not params.max_braking <= a <= params.max_acceleration:
                raise ValueError(f"menu acceleration {a} outside "
                                 f"[{params.max_braking}, {params.max_acceleration}]")

    def as_dict(self) -> dict:
        return {
            "max_steps": self.max_steps,
            "accel_menu": [str(a) for a in self.accel_menu],
            "allow_lane_actions": self.allow_lane_actions,
            "node_budget": self.node_budget,
            "rng_seed": self.rng_seed,
            "bounds": [str(self.bounds.near_min), str(self.bounds.far_max),
                       str(self.bounds.adjacent_max)],
        }


@dataclass
class AbstractTrace:
    states: list[WorldState]
    inputs: list[tuple[ControlInput, ControlInput]]
    phase1_index: int
    phase2_index: int
    spec_id: str = ""

    def __len__(self) -> int:
        return len(self.inputs)

    def observations(self, bounds: GridBounds = ABSTRACT_BOUNDS):
        return [(grid_cells(w.ego, w.car1, bounds), grid_cells(w.ego, w.car2, bounds))
                for w in self.states]


@dataclass(frozen=True)
class NotFound:
    reason: str  # "budget" | "depth" | "infeasible-at-init"
    expanded: int = 0

    def __bool__(self) -> bool:
        return False


# --- integer lattice ---------------------------------------------------------------------

def _lcm(*xs: int) -> int:
    out = 1
    for x in xs:
        out = out * x // math.gcd(out, x)
    return out


class _Lattice:
    """Integer encoding of speeds (units of 1/sv) and positions (units of 1/sp).

    Scales are chosen so every reachable value and every threshold the search
    compares against is an integer.
    """

    def __init__(self, params: ModelParams, cfg: SearchConfig):
        p = params
        dt = p.time_step
        speed_vals = [a * dt for a in cfg.accel_menu] + [
            p.max_acceleration * dt, p.max_braking * dt, p.ego_cruise_speed,
            p.non_ego_speed_min, p.non_ego_speed_max, p.max_lane_change_speed]
        self.sv = sv = _lcm(*(v.denominator for v in speed_vals))
        half = dt / 2
        halff = dt * p.lane_change_pos_factor / 2
        # positions: every increment (n + n') / sv * half [* factor] must be integral
        base = _lcm(half.denominator, halff.denominator)
        b = cfg.bounds
        k = _lcm(p.safe_distance.denominator, b.near_min.denominator,
                 b.far_max.denominator, b.adjacent_max.denominator)
        self.sp = sp = sv * base * k
        self.inc = int(half * sp / sv)
        self.inc_lc = int(halff * sp / sv)
        assert self.inc == half * sp / sv and self.inc_lc == halff * sp / sv

        self.params = p
        self.menu = list(cfg.accel_menu)
        self.acc = [int(a * dt * sv) for a in self.menu]
        self.lc_ok = [(-p.max_lane_change_braking <= a <= p.max_lane_change_acceleration)
                      for a in self.menu]
        self.vmin = int(p.non_ego_speed_min * sv)
        self.vmax = int(p.non_ego_speed_max * sv)
        self.vlc = int(p.max_lane_change_speed * sv)
        self.cruise = int(p.ego_cruise_speed * sv)
        self.ego_acc = int(p.max_acceleration * dt * sv)
        self.ego_brk = int(p.max_braking * dt * sv)
        # collision_next: gap / s <= s / B  <=>  gap * sv^2 * Bn <= s^2 * sp * Bd
        B = -p.max_braking
        self.cn_lhs = sv * sv * B.numerator
        self.cn_rhs = sp * B.denominator
        self.safe = int(p.safe_distance * sp)
        self.near = int(b.near_min * sp)
        self.far = int(b.far_max * sp)
        self.adj = int(b.adjacent_max * sp)
        self.N = p.lane_change_spacing_steps
        self.max_lane = p.max_lane
        self.ego_lane = p.ego_lane
        self.lane_actions = (0, -1, 1) if cfg.allow_lane_actions else (0,)
        self.entry_margin = sp  # 1 m
        self._succ = {}

    def car_succ(self, speed: int, lane: int, cnt: int):
        """Successors of a non-ego car: (action index, lane delta, speed', lane', cnt', dpos)."""
        key = (speed, lane, cnt)
        hit = self._succ.get(key)
        if hit is not None:
            return hit
        out = []
        for ai, a in enumerate(self.acc):
            nv = speed + a
            if nv < 0:
                nv = 0
            if not self.vmin <= nv <= self.vmax:
                continue
            for ld in self.lane_actions:
                nl = lane + ld
                if not 0 <= nl <= self.max_lane:
                    continue
                if ld:
                    if (speed > self.vlc or nv > self.vlc or not self.lc_ok[ai]
                            or cnt < self.N):
                        continue
                    out.append((ai, ld, nv, nl, 0, (speed + nv) * self.inc_lc))
                else:
                    out.append((ai, 0, nv, nl, min(cnt + 1, self.N), (speed + nv) * self.inc))
        self._succ[key] = out
        return out

    def ego_next(self, ep: int, es: int, cars) -> tuple[int, int]:
        brake = False
        if es > 0:
            for (p, l, _s, _c) in cars:
                if l == self.ego_lane and p >= ep and (p - ep) * self.cn_lhs <= es * es * self.cn_rhs:
                    brake = True
                    break
        if brake:
            ns = max(es + self.ego_brk, 0)
        elif es < self.cruise:
            ns = min(self.cruise, es + self.ego_acc)
        else:
            ns = es
        return ep + (es + ns) * self.inc, ns

    def cells(self, lane: int, delta: int) -> int:
        """Bitmask of cells (bit c-1 for cell c) under the search bounds."""
        rel = (lane > self.ego_lane) - (lane < self.ego_lane)
        d = abs(delta)
        m = 0
        if delta > 0 and self.near <= d <= self.far:
            m |= 1 << (1 + rel)          # C1/C2/C3
        if delta < 0 and self.near <= d <= self.far:
            m |= 1 << (6 + rel)          # C6/C7/C8
        if rel and d <= self.adj:
            m |= 1 << (3 if rel < 0 else 4)  # C4/C5
        return m

    def band(self, cell: GridCell) -> tuple[int, int]:
        kind = CELL_SHAPE[cell][1]
        if kind == "front":
            return (max(self.near, 1), self.far)
        if kind == "rear":
            return (-self.far, -max(self.near, 1))
        return (-self.adj, self.adj)

    def ego_never_brakes(self) -> bool:
        """True when the invariant alone keeps collision_next false in every state.

        A car ahead in the ego lane must be further than safe_distance away,
        and the ego brakes only within speed**2 / |max_braking|; the ego never
        exceeds cruise speed when starting from rest.
        """
        p = self.params
        return p.ego_cruise_speed ** 2 / (-p.max_braking) <= p.safe_distance


def _lane_changes_needed(lane: int, lanes: Iterable[int]) -> int:
    return min(abs(lane - t) for t in lanes)


def _steps_for_changes(k: int, cnt: int, N: int) -> int:
    if k == 0:
        return 0
    return max(0, N - cnt) + 1 + (k - 1) * N


class _SingleCarOracle:
    """Exact single-car reachability with the ego on its fixed trajectory.

    Sound as a pruning relaxation because it drops only constraints (the other
    car and the car-car invariant); used only when the ego provably never
    brakes, which makes its trajectory independent of the cars.
    """

    def __init__(self, lat: _Lattice, ego_traj: list[tuple[int, int]]):
        self.lat = lat
        self.ego = ego_traj
        self.reach = lru_cache(maxsize=None)(self._reach)

    def _ok_state(self, pos, lane, t) -> bool:
        ep = self.ego[t][0]
        return lane != self.lat.ego_lane or abs(pos - ep) > self.lat.safe

    def _reach(self, t: int, pos: int, speed: int, lane: int, cnt: int, horizon: int,
               want_a: int, want_b: int) -> bool:
        """Can the car, from step t, hit cell mask want_a then (strictly later) want_b
        by step ``horizon``? ``want_a == 0`` means phase A is already done."""
        lat = self.lat
        here = lat.cells(lane, pos - self.ego[t][0])
        if want_a:
            if here & want_a:
                want_a = 0
                if t == horizon:
                    return False
                # fall through: need want_b strictly later
                return self._any_next(t, pos, speed, lane, cnt, horizon, 0, want_b)
        else:
            if here & want_b:
                return True
        if t == horizon:
            return False
        return self._any_next(t, pos, speed, lane, cnt, horizon, want_a, want_b)

    def _any_next(self, t, pos, speed, lane, cnt, horizon, want_a, want_b) -> bool:
        for (_ai, _ld, nv, nl, nc, dp) in self.lat.car_succ(speed, lane, cnt):
            np_ = pos + dp
            if not self._ok_state(np_, nl, t + 1):
                continue
            if self.reach(t + 1, np_, nv, nl, nc, horizon, want_a, want_b):
                return True
        return False


def params_hash(params: ModelParams) -> str:
    blob = json.dumps(params.as_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class _Searcher:
    # the single-car oracle enumerates exhaustively; beyond this horizon it costs
    # more than it prunes
    ORACLE_MAX_STEPS = 10

    def __init__(self, spec: ScenarioSpec, params: ModelParams, cfg: SearchConfig):
        cfg.check(params)
        self.spec, self.params, self.cfg = spec, params, cfg
        self.lat = lat = _Lattice(params, cfg)
        self.maskA = [1 << (int(spec.first.car1_cell) - 1), 1 << (int(spec.first.car2_cell) - 1)]
        self.maskB = [1 << (int(spec.second.car1_cell) - 1), 1 << (int(spec.second.car2_cell) - 1)]
        self.lanesA = [cell_lane(spec.first.car1_cell, params), cell_lane(spec.first.car2_cell, params)]
        self.lanesB = [cell_lane(spec.second.car1_cell, params), cell_lane(spec.second.car2_cell, params)]
        self.bandA = [lat.band(spec.first.car1_cell), lat.band(spec.first.car2_cell)]
        self.bandB = [lat.band(spec.second.car1_cell), lat.band(spec.second.car2_cell)]
        self.ab_changes = [
            min(abs(a - b) for a in self.lanesA[i] for b in self.lanesB[i]) for i in range(2)]
        self.rng = random.Random(cfg.rng_seed)
        # relative speeds (lattice units per step) used by the step estimate
        v_rel_fwd = max(params.non_ego_speed_max - params.ego_cruise_speed, Fraction(1, 2))
        v_rel_back = max(params.ego_cruise_speed - params.non_ego_speed_min, Fraction(1, 2))
        self.fwd_rate = float(v_rel_fwd * params.time_step * lat.sp)
        self.back_rate = float(v_rel_back * params.time_step * lat.sp)
        self.h_ab = self._ab_steps()
        self.tgtA = self._targets(spec.first)
        self.tgtB = self._targets(spec.second)
        self._lon_cache = {}
        self.oracle = None
        if (cfg.relaxation_pruning and cfg.max_steps <= self.ORACLE_MAX_STEPS
                and lat.ego_never_brakes()):
            traj = [(0, 0)]
            for _ in range(cfg.max_steps):
                traj.append(lat.ego_next(*traj[-1], ()))
            self.oracle = _SingleCarOracle(lat, traj)

    # weight on the step estimate (weighted A*)
    H_WEIGHT = 2.0
    HCOMB = staticmethod(lambda hs: max(hs) + 0.5 * min(hs))
    MIX = 0.25
    HOLD = 0.1

    def _lon_steps(self, d: int, v: int, es: int, lo: int, hi: int) -> float:
        """Time (in steps, interpolated) until offset d enters [lo, hi] at full throttle/brake."""
        key = (d, v, es, lo, hi)
        hit = self._lon_cache.get(key)
        if hit is not None:
            return hit
        lat = self.lat
        steps = 0.0
        if not lo <= d <= hi:
            fwd = d < lo
            amax, amin = max(lat.acc), min(lat.acc)
            cur_d, cur_v, cur_e = d, v, es
            for _ in range(60):
                nv = min(cur_v + amax, lat.vmax) if fwd else max(cur_v + amin, lat.vmin, 0)
                ne = min(lat.cruise, cur_e + lat.ego_acc) if cur_e < lat.cruise else cur_e
                nd = cur_d + (cur_v + nv - cur_e - ne) * lat.inc
                target = lo if fwd else hi
                if (fwd and nd >= lo) or (not fwd and nd <= hi):
                    steps += (target - cur_d) / (nd - cur_d)
                    break
                if nd == cur_d and nv == cur_v and ne == cur_e:
                    steps = 60.0
                    break
                cur_d, cur_v, cur_e = nd, nv, ne
                steps += 1
            else:
                steps = 60.0
        self._lon_cache[key] = steps
        return steps

    def _car_steps(self, car, ep, es, band, lanes) -> float:
        pos, lane, speed, cnt = car
        lat = self.lat
        t_lon = self._lon_steps(pos - ep, speed, es, band[0], band[1])
        k = _lane_changes_needed(lane, lanes)
        t_lane = _steps_for_changes(k, cnt, lat.N)
        if k and speed > lat.vlc:
            t_lane += (speed - lat.vlc) / -min(lat.acc)
        if k and lane != lat.ego_lane and min(abs(t - lane) for t in lanes) \
                > min(abs(t - lat.ego_lane) for t in lanes) - 0:
            # the lane path enters the ego lane: first open a safe gap to the ego
            d = pos - ep
            if abs(d) <= lat.safe + lat.entry_margin:
                edge = lat.safe + lat.entry_margin
                t_entry = min(self._lon_steps(d, speed, es, edge, 1 << 60),
                              self._lon_steps(d, speed, es, -(1 << 60), -edge))
                t_lane += t_entry
        # prefer holding station once inside the band: breaks ties among the
        # otherwise equivalent moves of a car that has already arrived
        hold = self.HOLD * abs(speed - es) / lat.sv if t_lon == 0 else 0.0
        return max(t_lon, t_lane) + self.MIX * min(t_lon, t_lane) + hold

    def _targets(self, cfg: GridConfig):
        """Per-car target bands; when both cars want the same band, split it so the
        cars aim at positions a safe distance apart."""
        lat = self.lat
        bands = [lat.band(cfg.car1_cell), lat.band(cfg.car2_cell)]
        if cfg.car1_cell == cfg.car2_cell and CELL_SHAPE[cfg.car1_cell][0] == 0:
            lo, hi = bands[0]
            mid = (lo + hi) // 2
            gap = lat.safe // 2 + 1
            bands = [(lo, max(lo, mid - gap)), (min(hi, mid + gap), hi)]
        return bands

    def heuristic(self, ep, es, cars, phase) -> float:
        bands, lanes = (self.tgtA, self.lanesA) if phase == 0 else (self.tgtB, self.lanesB)
        hs = [self._car_steps(cars[i], ep, es, bands[i], lanes[i]) for i in range(2)]
        h = self.HCOMB(hs)
        return h + self.h_ab if phase == 0 else h

    def _ab_steps(self) -> float:
        """Steps between the two phases implied by lane distance and band separation."""
        out = 1.0
        for i in range(2):
            (alo, ahi), (blo, bhi) = self.bandA[i], self.bandB[i]
            if blo > ahi:
                t = (blo - ahi) / self.fwd_rate
            elif bhi < alo:
                t = (alo - bhi) / self.back_rate
            else:
                t = 0.0
            lanes = _steps_for_changes(self.ab_changes[i], self.lat.N, self.lat.N)
            out = max(out, t, lanes)
        return out

    def lower_bound(self, cars, phase) -> int:
        N = self.lat.N
        if phase == 0:
            need = max(_steps_for_changes(_lane_changes_needed(c[1], self.lanesA[i]), c[3], N)
                       for i, c in enumerate(cars))
            after = max(1, max(_steps_for_changes(k, N, N) for k in self.ab_changes))
            return need + after
        return max(_steps_for_changes(_lane_changes_needed(c[1], self.lanesB[i]), c[3], N)
                   for i, c in enumerate(cars))

    def relaxed_ok(self, depth, cars, phase) -> bool:
        if self.oracle is None:
            return True
        # oracle positions are absolute, ego trajectory starts from rest at step 0
        for i, (pos, lane, speed, cnt) in enumerate(cars):
            want_a = self.maskA[i] if phase == 0 else 0
            if not self.oracle.reach(depth, pos, speed, lane, cnt, self.cfg.max_steps,
                                     want_a, self.maskB[i]):
                return False
        return True

    def run(self) -> AbstractTrace | NotFound:
        cfg, lat = self.cfg, self.lat
        if cfg.node_budget == 0:
            return NotFound("budget", 0)
        w0 = initial_world(self.params)
        if check_invariants(w0, self.params):
            return NotFound("infeasible-at-init", 0)
        ep, es = 0, 0
        cars0 = tuple((0, c.lane, 0, c.steps_since_lane_change) for c in w0.cars)
        cars0 = tuple((p, l, s, min(cnt, lat.N)) for (p, l, s, cnt) in cars0)

        # node: (ep, es, cars, phase, phase1_index, depth, parent, actions)
        nodes = []
        best_depth = {}
        heap = []
        counter = 0

        def push(ep, es, cars, phase, p1, depth, parent, actions):
            nonlocal counter
            key = (es, phase, tuple((p - ep, l, s, c) for (p, l, s, c) in cars))
            prev = best_depth.get(key)
            if prev is not None and prev <= depth:
                return None
            if depth + self.lower_bound(cars, phase) > cfg.max_steps:
                return None
            if not self.relaxed_ok(depth, cars, phase):
                return None
            best_depth[key] = depth
            nodes.append((ep, es, cars, phase, p1, depth, parent, actions))
            idx = len(nodes) - 1
            h = self.heuristic(ep, es, cars, phase)
            heapq.heappush(heap, (depth + self.H_WEIGHT * h, self.rng.random(), counter, idx))
            counter += 1
            return idx

        def observe(ep, cars):
            return [lat.cells(c[1], c[0] - ep) for c in cars]

        cells0 = observe(ep, cars0)
        phase0 = 1 if (cells0[0] & self.maskA[0] and cells0[1] & self.maskA[1]) else 0
        push(ep, es, cars0, phase0, 0 if phase0 else -1, 0, -1, None)

        expanded = 0
        while heap:
            if expanded >= cfg.node_budget:
                return NotFound("budget", expanded)
            _, _, _, idx = heapq.heappop(heap)
            ep, es, cars, phase, p1, depth, _parent, _act = nodes[idx]
            if best_depth.get((es, phase, tuple((p - ep, l, s, c) for (p, l, s, c) in cars))) != depth:
                continue  # superseded by a shallower visit
            expanded += 1
            if depth >= cfg.max_steps:
                continue
            nep, nes = lat.ego_next(ep, es, cars)
            s1 = [(a, ld, (cars[0][0] + dp, nl, nv, nc))
                  for (a, ld, nv, nl, nc, dp) in lat.car_succ(cars[0][2], cars[0][1], cars[0][3])]
            s2 = [(a, ld, (cars[1][0] + dp, nl, nv, nc))
                  for (a, ld, nv, nl, nc, dp) in lat.car_succ(cars[1][2], cars[1][1], cars[1][3])]
            s1 = [x for x in s1 if x[2][1] != lat.ego_lane or abs(x[2][0] - nep) > lat.safe]
            s2 = [x for x in s2 if x[2][1] != lat.ego_lane or abs(x[2][0] - nep) > lat.safe]
            for a1, l1, c1 in s1:
                m1 = lat.cells(c1[1], c1[0] - nep)
                for a2, l2, c2 in s2:
                    if c1[1] == c2[1] and abs(c1[0] - c2[0]) <= lat.safe:
                        continue
                    m2 = lat.cells(c2[1], c2[0] - nep)
                    ncars = (c1, c2)
                    nphase, np1 = phase, p1
                    if phase == 1:
                        if m1 & self.maskB[0] and m2 & self.maskB[1]:
                            nodes.append((nep, nes, ncars, 1, p1, depth + 1, idx,
                                          ((a1, l1), (a2, l2))))
                            return self._rebuild(nodes, len(nodes) - 1)
                    elif m1 & self.maskA[0] and m2 & self.maskA[1]:
                        nphase, np1 = 1, depth + 1
                    push(nep, nes, ncars, nphase, np1, depth + 1, idx, ((a1, l1), (a2, l2)))
        return NotFound("depth", expanded)

    def _rebuild(self, nodes, idx) -> AbstractTrace:
        chain = []
        while idx >= 0:
            chain.append(nodes[idx][7])
            idx = nodes[idx][6]
        actions = [a for a in reversed(chain) if a is not None]
        return _rebuild_trace(self.lat, self.params, self.spec, self.cfg.bounds, actions)


def _rebuild_trace(lat: _Lattice, params: ModelParams, spec: ScenarioSpec,
                   bounds: GridBounds, actions) -> AbstractTrace:
    """Replay lattice actions in exact arithmetic; cut the trace at the earliest B after A."""
    w = initial_world(params)
    states, inputs = [w], []
    for (a1, l1), (a2, l2) in actions:
        i1 = ControlInput(lat.menu[a1], l1)
        i2 = ControlInput(lat.menu[a2], l2)
        w = WorldState(ego_step(w, params), step_vehicle(w.car1, i1, params),
                       step_vehicle(w.car2, i2, params), w.step_index + 1)
        states.append(w)
        inputs.append((i1, i2))
    trace = AbstractTrace(states, inputs, -1, -1, spec.id)
    hit = ReachObjective(spec.first, spec.second).earliest(trace.observations(bounds))
    if hit is None:
        raise AssertionError("rebuilt trace does not realize the scenario")
    i, j = hit
    return AbstractTrace(states[: j + 1], inputs[:j], i, j, spec.id)


class _PlanBudget(Exception):
    pass


class _Planner:
    """Per-car planning against the ego's fixed trajectory.

    Valid only when the ego never brakes, so its motion does not depend on the
    cars. For a pair of phase times (tA, tB) each car is planned by depth-first
    search that must sit in its A cell at exactly tA and its B cell at tB; the
    second car treats the first car's plan as a moving obstacle. Incomplete
    (prioritized planning can miss joint solutions), so it is only a fast path.
    """

    PASS_BUDGETS = (100, 1000, 5000)

    def __init__(self, spec: ScenarioSpec, params: ModelParams, cfg: SearchConfig,
                 lat: _Lattice, budget: int):
        self.spec, self.params, self.cfg, self.lat = spec, params, cfg, lat
        self.budget = budget
        self.expanded = 0
        self.rng = random.Random(cfg.rng_seed)
        traj = [(0, 0)]
        for _ in range(cfg.max_steps):
            traj.append(lat.ego_next(*traj[-1], ()))
        self.ego = traj
        cells = lambda c: 1 << (int(c) - 1)
        self.maskA = [cells(spec.first.car1_cell), cells(spec.first.car2_cell)]
        self.maskB = [cells(spec.second.car1_cell), cells(spec.second.car2_cell)]
        self.lanesA = [cell_lane(spec.first.car1_cell, params), cell_lane(spec.first.car2_cell, params)]
        self.lanesB = [cell_lane(spec.second.car1_cell, params), cell_lane(spec.second.car2_cell, params)]
        self.bandA = [lat.band(spec.first.car1_cell), lat.band(spec.first.car2_cell)]
        self.bandB = [lat.band(spec.second.car1_cell), lat.band(spec.second.car2_cell)]
        self.ab_changes = [
            min(abs(a - b) for a in self.lanesA[i] for b in self.lanesB[i]) for i in range(2)]
        self.amax, self.amin = max(lat.acc), min(lat.acc)
        self._disp = {}

    def disp(self, v: int, h: int) -> tuple[int, int]:
        """Bounds on the displacement over h steps starting at speed v (relaxed)."""
        key = (v, h)
        hit = self._disp.get(key)
        if hit is not None:
            return hit
        lat = self.lat
        lo = hi = 0
        vl = vh = v
        for _ in range(h):
            nh = min(max(vh + self.amax, 0), lat.vmax)
            nl = max(vl + self.amin, lat.vmin, 0)
            hi += (vh + nh) * lat.inc
            lo += (vl + nl) * lat.inc_lc
            vh, vl = nh, nl
        self._disp[key] = (lo, hi)
        return lo, hi

    def zones(self, i, tA, tB, obstacle=None) -> dict:
        """Absolute position intervals car i must hit at tA and tB.

        An obstacle in the target lane at that time cuts its safety zone out
        of the band.
        """
        safe = self.lat.safe
        out = {}
        for T, band, lanes in ((tA, self.bandA[i], self.lanesA[i]),
                               (tB, self.bandB[i], self.lanesB[i])):
            ep = self.ego[T][0]
            lo, hi = ep + band[0], ep + band[1]
            ivs = [(lo, hi)]
            if obstacle is not None and set(lanes) == {obstacle[T][1]}:
                op = obstacle[T][0]
                ivs = [iv for iv in ((lo, min(hi, op - safe - 1)), (max(lo, op + safe + 1), hi))
                       if iv[0] <= iv[1]]
            out[T] = ivs
        return out

    def _in_reach(self, t, pos, v, T, ivs) -> bool:
        lo, hi = self.disp(v, T - t)
        lo += pos
        hi += pos
        return any(lo <= b and hi >= a for a, b in ivs)

    def feasible(self, i, t, st, tA, tB, zones) -> bool:
        pos, lane, v, cnt = st
        N = self.lat.N
        if t < tA:
            k = _lane_changes_needed(lane, self.lanesA[i])
            if _steps_for_changes(k, cnt, N) > tA - t:
                return False
            if not self._in_reach(t, pos, v, tA, zones[tA]):
                return False
        elif t == tA:
            if not self.lat.cells(lane, pos - self.ego[t][0]) & self.maskA[i]:
                return False
        if t >= tA:
            k = _lane_changes_needed(lane, self.lanesB[i])
            if _steps_for_changes(k, cnt, N) > tB - t:
                return False
        return self._in_reach(t, pos, v, tB, zones[tB])

    def _order(self, i, t, st, children, tA, tB, aim):
        lat = self.lat
        T = tA if t + 1 <= tA else tB
        band, lanes = (self.bandA[i], self.lanesA[i]) if T == tA else (self.bandB[i], self.lanesB[i])
        f = aim[0] if T == tA else aim[1]
        centre = self.ego[T][0] + band[0] + (band[1] - band[0]) * f
        p_des = st[0] + (centre - st[0]) / (T - t)
        k0 = _lane_changes_needed(st[1], lanes)
        lane_w = 3 * lat.sp
        scored = []
        for ch in children:
            _ai, _ld, (np_, nl, _nv, _nc) = ch
            score = abs(np_ - p_des) + lane_w * (_lane_changes_needed(nl, lanes) - k0)
            scored.append((score + self.rng.random(), ch))
        scored.sort(key=lambda x: x[0])
        return [ch for _, ch in scored]

    def plan(self, i, tA, tB, aim=(0.5, 0.5), obstacle=None):
        """First plan for car i (0 or 1) as (states, actions), or None.

        ``aim`` places the target inside the A and B bands (0 = near edge of the
        band's range, 1 = far edge); it only orders the search.
        """
        lat = self.lat
        # dead ends without an obstacle do not depend on the aim, so share them
        failed = self._failed.setdefault((i, tA, tB), set()) if obstacle is None else set()
        calls = 0
        start = (0, initial_world(self.params).cars[i].lane, 0, lat.N)
        zones = self.zones(i, tA, tB, obstacle)
        path = []

        def rec(t, st):
            nonlocal calls
            if t == tB:
                return True
            key = (t, st)
            if key in failed:
                return False
            calls += 1
            self.expanded += 1
            if calls > self.call_budget or self.expanded > self.budget:
                raise _PlanBudget
            nep = self.ego[t + 1][0]
            kids = []
            for (ai, ld, nv, nl, nc, dp) in lat.car_succ(st[2], st[1], st[3]):
                nst = (st[0] + dp, nl, nv, nc)
                if nl == lat.ego_lane and abs(nst[0] - nep) <= lat.safe:
                    continue
                if obstacle is not None:
                    op, ol = obstacle[t + 1][0], obstacle[t + 1][1]
                    if ol == nl and abs(op - nst[0]) <= lat.safe:
                        continue
                if not self.feasible(i, t + 1, nst, tA, tB, zones):
                    continue
                kids.append((ai, ld, nst))
            for ai, ld, nst in self._order(i, t, st, kids, tA, tB, aim):
                path.append(((ai, ld), nst))
                if rec(t + 1, nst):
                    return True
                path.pop()
            failed.add(key)
            return False

        if not self.feasible(i, 0, start, tA, tB, zones):
            return None
        try:
            ok = rec(0, start)
        except _PlanBudget:
            if self.expanded > self.budget:
                raise
            return None
        if not ok:
            return None
        return [start] + [s for _, s in path], [a for a, _ in path]

    def run(self):
        """Return joint actions [((a1, l1), (a2, l2))] or None."""
        self._failed = {}
        try:
            # cheap pass over every (tA, tB) first, then a thorough one
            for budget in self.PASS_BUDGETS:
                self.call_budget = budget
                for tB in range(1, self.cfg.max_steps + 1):
                    for tA in range(0, tB):
                        out = self._pair(tA, tB)
                        if out is not None:
                            return out
        except _PlanBudget:
            return None
        return None

    def _aims(self):
        """Where the first car aims inside its A and B bands.

        The second car aims at the mirrored spot when both cars want the same
        cell, so the two plans keep a safe distance apart; otherwise both aim
        at the band centre.
        """
        shared = [self.spec.first.car1_cell == self.spec.first.car2_cell,
                  self.spec.second.car1_cell == self.spec.second.car2_cell]
        opts = [(0.2, 0.8) if sh else (0.5,) for sh in shared]
        return [((fa, fb), (1 - fa if shared[0] else 0.5, 1 - fb if shared[1] else 0.5))
                for fa in opts[0] for fb in opts[1]]

    def _pair(self, tA, tB):
        N = self.lat.N
        if any(_steps_for_changes(k, N, N) > tB - tA for k in self.ab_changes):
            return None
        start = [(0, c.lane, 0, self.lat.N) for c in initial_world(self.params).cars]
        if not all(self.feasible(i, 0, start[i], tA, tB, self.zones(i, tA, tB)) for i in range(2)):
            return None
        for first, second in ((0, 1), (1, 0)):
            for aim1, aim2 in self._aims():
                before = self.expanded
                got = self.plan(first, tA, tB, aim1)
                if got is None:
                    if (0, start[first]) in self._failed[(first, tA, tB)]:
                        return None  # this car alone cannot do it
                    if self.expanded - before >= self.call_budget:
                        break  # too hard at this pass; other aims rarely help
                    continue
                states1, acts1 = got
                got2 = self.plan(second, tA, tB, aim2, obstacle=states1)
                if got2 is None:
                    continue
                pair = (acts1, got2[1]) if first == 0 else (got2[1], acts1)
                return list(zip(*pair))
        return None


def find_witness(spec: ScenarioSpec, params: ModelParams = ModelParams(),
                 cfg: SearchConfig = SearchConfig()) -> AbstractTrace | NotFound:
    """Search for a trace realizing ``spec`` (first configuration, then the second).

    Returns an :class:`AbstractTrace` that passes :func:`validate_trace`, or a falsy
    :class:`NotFound` carrying the reason.
    """
    cfg.check(params)
    lat = _Lattice(params, cfg)
    spent = 0
    if cfg.max_steps > _Searcher.ORACLE_MAX_STEPS and lat.ego_never_brakes() and cfg.node_budget:
        planner = _Planner(spec, params, cfg, lat, cfg.node_budget)
        w0 = initial_world(params)
        if not check_invariants(w0, params):
            actions = planner.run()
            if actions is not None:
                return _rebuild_trace(lat, params, spec, cfg.bounds, actions)
        spent = planner.expanded
    remaining = max(cfg.node_budget - spent, 0)
    if remaining != cfg.node_budget:
        cfg = dataclasses.replace(cfg, node_budget=remaining)
    out = _Searcher(spec, params, cfg).run()
    if not out and spent:
        return NotFound(out.reason, out.expanded + spent)
    return out


# --- independent trace checker -----------------------------------------------------------

def validate_trace(trace: AbstractTrace, spec: ScenarioSpec | None,
                   params: ModelParams = ModelParams(),
                   bounds: GridBounds = ABSTRACT_BOUNDS,
                   check_initial: bool = True) -> tuple[bool, list[str]]:
    """Check a trace against the transition relation, invariants and phase predicates.

    Returns ``(ok, diagnostics)``; diagnostics describe the first violation found.
    """
    p = params
    dt = p.time_step
    st = trace.states
    if len(st) != len(trace.inputs) + 1:
        return False, ["shape: need len(states) == len(inputs) + 1"]
    if check_initial:
        mid = p.max_lane // 2
        w = st[0]
        if (w.ego.lane, w.car1.lane, w.car2.lane) != (mid, mid - 1, mid + 1) or any(
                v.pos != 0 or v.speed != 0 for v in (w.ego, w.car1, w.car2)):
            return False, ["initial_state: cars must start at pos 0, speed 0, lanes L/M/R"]
    since = [None, None]  # steps since last lane change, None = never
    for k, w in enumerate(st):
        for (a, b) in (("ego", "car1"), ("ego", "car2"), ("car1", "car2")):
            va, vb = getattr(w, a), getattr(w, b)
            if va.lane == vb.lane and abs(va.pos - vb.pos) <= p.safe_distance:
                return False, [f"invariant: {a}/{b} within safe distance at step {k}"]
        for v in (w.ego, w.car1, w.car2):
            if not 0 <= v.lane <= p.max_lane or v.speed < 0:
                return False, [f"state_range at step {k}"]
        if k == len(st) - 1:
            break
        nxt = st[k + 1]
        # ego
        e, en = w.ego, nxt.ego
        brake = any(
            c.lane == e.lane and c.pos >= e.pos and e.speed > 0
            and (c.pos - e.pos) / e.speed <= e.speed / (-p.max_braking) for c in (w.car1, w.car2))
        if brake:
            want = max(e.speed + p.max_braking * dt, Fraction(0))
        elif e.speed < p.ego_cruise_speed:
            want = min(p.ego_cruise_speed, e.speed + p.max_acceleration * dt)
        else:
            want = e.speed
        if en.speed != want:
            return False, [f"ego_speed: step {k}->{k + 1} expected {want}, got {en.speed}"]
        if en.lane != e.lane:
            return False, [f"ego_lane: ego changed lane at step {k}"]
        if en.pos != e.pos + (e.speed + en.speed) / 2 * dt:
            return False, [f"ego_pos: step {k}->{k + 1}"]
        for i, name in enumerate(("car1", "car2")):
            c, cn = getattr(w, name), getattr(nxt, name)
            acc = trace.inputs[k][i].acceleration
            ld = cn.lane - c.lane
            tag = f"{name} step {k}->{k + 1}"
            if ld not in (-1, 0, 1):
                return False, [f"lane_step: {tag} jumps {ld} lanes"]
            if ld != trace.inputs[k][i].lane_delta:
                return False, [f"lane_input: {tag} lane delta disagrees with input"]
            if not p.max_braking <= acc <= p.max_acceleration:
                return False, [f"acceleration_range: {tag}"]
            if cn.speed != max(c.speed + acc * dt, Fraction(0)):
                return False, [f"speed_update: {tag} next(speed) != max(speed + a*dt, 0)"]
            if not p.non_ego_speed_min <= cn.speed <= p.non_ego_speed_max:
                return False, [f"speed_bounds: {tag}"]
            factor = p.lane_change_pos_factor if ld else 1
            if cn.pos != c.pos + (c.speed + cn.speed) / 2 * dt * factor:
                return False, [f"position_update: {tag}"]
            if ld:
                if c.speed > p.max_lane_change_speed or cn.speed > p.max_lane_change_speed:
                    return False, [f"lane_change_speed: {tag}"]
                if not -p.max_lane_change_braking <= acc <= p.max_lane_change_acceleration:
                    return False, [f"lane_change_acceleration: {tag}"]
                if since[i] is not None and since[i] < p.lane_change_spacing_steps:
                    return False, [f"lane_change_spacing: {tag} only {since[i]} steps "
                                   f"after the previous change"]
                since[i] = 0
            elif since[i] is not None:
                since[i] += 1
    if spec is not None:
        n = len(trace.inputs)
        if not 0 <= trace.phase1_index < trace.phase2_index <= n:
            return False, ["phase_order: need 0 <= phase1 < phase2 <= length"]
        for idx, cfg, label in ((trace.phase1_index, spec.first, "phase1"),
                                (trace.phase2_index, spec.second, "phase2")):
            w = st[idx]
            if not cfg.holds(grid_cells(w.ego, w.car1, bounds), grid_cells(w.ego, w.car2, bounds)):
                return False, [f"{label}: configuration does not hold at step {idx}"]
    return True, []


# --- exhaustive oracle -------------------------------------------------------------------

class BudgetExceeded(RuntimeError):
    pass


def _config_index(c1: GridCell, c2: GridCell) -> int:
    return (int(c1) - 1) * 8 + (int(c2) - 1)


def _config_mask(w: WorldState, bounds: GridBounds) -> int:
    m = 0
    for a in grid_cells(w.ego, w.car1, bounds):
        if a is GridCell.OUTSIDE:
            continue
        for b in grid_cells(w.ego, w.car2, bounds):
            if b is not GridCell.OUTSIDE:
                m |= 1 << _config_index(a, b)
    return m


def exhaustive_reach(params: ModelParams, cfg: SearchConfig, depth: int
                     ) -> set[tuple[GridConfig, GridConfig]]:
    """All (A, B) configuration pairs witnessed (A strictly before B) within ``depth`` steps.

    Plain breadth-first enumeration in Fraction arithmetic via
    :func:`gridcover.model.step_vehicle`; states are merged per layer on their
    translation-invariant key and carry the set of configurations seen earlier
    on any path reaching them. ``cfg.node_budget`` caps the states per layer.
    """
    if depth > 8 or len(cfg.accel_menu) > 3:
        raise ValueError("exhaustive_reach needs depth <= 8 and at most 3 menu entries")
    cfg.check(params)
    bounds = cfg.bounds
    lane_deltas = (-1, 0, 1) if cfg.allow_lane_actions else (0,)
    inputs = [ControlInput(a, d) for a in cfg.accel_menu for d in lane_deltas]

    def key(w: WorldState):
        e = w.ego
        return (e.speed, e.lane) + tuple(
            (c.pos - e.pos, c.lane, c.speed, c.steps_since_lane_change) for c in w.cars)

    succ_cache = {}

    def car_moves(c: VehicleState):
        k = (c.speed, c.lane, c.steps_since_lane_change)
        if k not in succ_cache:
            out = []
            base = VehicleState(Fraction(0), c.lane, c.speed, c.steps_since_lane_change)
            for inp in inputs:
                try:
                    out.append((inp, step_vehicle(base, inp, params)))
                except PreconditionViolated:
                    pass
            succ_cache[k] = out
        return [(inp, VehicleState(c.pos + n.pos, n.lane, n.speed, n.steps_since_lane_change))
                for inp, n in succ_cache[k]]

    w0 = initial_world(params)
    if check_invariants(w0, params):
        return set()
    # layer: key -> (world, mask of configs seen strictly earlier)
    layer = {key(w0): (w0, 0)}
    found = [0] * 64  # found[b] = mask of A indices seen before B=b
    for k in range(depth + 1):
        for w, hist in layer.values():
            here = _config_mask(w, bounds)
            if hist and here:
                m = here
                while m:
                    b = (m & -m).bit_length() - 1
                    found[b] |= hist
                    m &= m - 1
        if k == depth:
            break
        nxt = {}
        for w, hist in layer.values():
            h2 = hist | _config_mask(w, bounds)
            ego = ego_step(w, params)
            m1, m2 = car_moves(w.car1), car_moves(w.car2)
            for _, c1 in m1:
                for _, c2 in m2:
                    nw = WorldState(ego, c1, c2, w.step_index + 1)
                    if check_invariants(nw, params):
                        continue
                    kk = key(nw)
                    prev = nxt.get(kk)
                    if prev is None:
                        nxt[kk] = (nw, h2)
                    elif prev[1] | h2 != prev[1]:
                        nxt[kk] = (prev[0], prev[1] | h2)
            if cfg.node_budget and len(nxt) > cfg.node_budget:
                raise BudgetExceeded(f"layer {k + 1} exceeds {cfg.node_budget} states")
        layer = nxt
    cells = GridCell.cells()
    out = set()
    for b in range(64):
        m = found[b]
        while m:
            a = (m & -m).bit_length() - 1
            out.add((GridConfig(cells[a // 8], cells[a % 8]), GridConfig(cells[b // 8], cells[b % 8])))
            m &= m - 1
    return out


# --- serialization -----------------------------------------------------------------------

def _rat(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def _unrat(s: str) -> Fraction:
    return Fraction(s)


def _veh(v: VehicleState) -> dict:
    return {"pos": _rat(v.pos), "lane": v.lane, "speed": _rat(v.speed),
            "since_lane_change": v.steps_since_lane_change}


def _unveh(d: dict) -> VehicleState:
    return VehicleState(_unrat(d["pos"]), d["lane"], _unrat(d["speed"]), d["since_lane_change"])


def trace_to_jsonl(trace: AbstractTrace, params: ModelParams,
                   spec: ScenarioSpec | None = None) -> str:
    """Header line, then one line per state; rationals as ``"p/q"`` strings."""
    header = {"type": "header", "spec_id": trace.spec_id, "params_hash": params_hash(params),
              "params": params.as_dict(), "phase1_index": trace.phase1_index,
              "phase2_index": trace.phase2_index, "length": len(trace)}
    if spec is not None:
        header["first"] = spec.first.as_pair()
        header["second"] = spec.second.as_pair()
    lines = [json.dumps(header, sort_keys=True)]
    for k, w in enumerate(trace.states):
        row = {"type": "state", "step": k, "ego": _veh(w.ego), "car1": _veh(w.car1),
               "car2": _veh(w.car2)}
        if k < len(trace.inputs):
            i1, i2 = trace.inputs[k]
            row["input"] = {"car1": {"acc": _rat(i1.acceleration), "lane_delta": i1.lane_delta},
                            "car2": {"acc": _rat(i2.acceleration), "lane_delta": i2.lane_delta}}
        lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + "\n"


def trace_from_jsonl(text: str) -> tuple[AbstractTrace, dict]:
    """Parse :func:`trace_to_jsonl` output; returns the trace and the header dict."""
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows or rows[0].get("type") != "header":
        raise ValueError("trace file must start with a header line")
    header, states, inputs = rows[0], [], []
    for r in rows[1:]:
        states.append(WorldState(_unveh(r["ego"]), _unveh(r["car1"]), _unveh(r["car2"]), r["step"]))
        if "input" in r:
            inputs.append(tuple(ControlInput(_unrat(r["input"][c]["acc"]), r["input"][c]["lane_delta"])
                                for c in ("car1", "car2")))
    trace = AbstractTrace(states, inputs, header["phase1_index"], header["phase2_index"],
                          header.get("spec_id", ""))
    return trace, header
