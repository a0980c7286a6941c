"""Independent reference implementations used by the tests.

Nothing here imports the code under test beyond plain data types, so a bug in
the library cannot be mirrored by the oracle.
"""

import random
from fractions import Fraction as F

from gridcover.model import (ControlInput, ModelParams, PreconditionViolated, VehicleState,
                             WorldState, ego_step, step_vehicle)


# --- transition formulas, written out directly -------------------------------------------------

def direct_vehicle(pos, lane, speed, since, acc, ld, p):
    """None when a precondition fails, else (pos', lane', speed', since')."""
    if not 0 <= lane + ld <= p.max_lane:
        return None
    nspeed = speed + acc * p.time_step
    if nspeed < 0:
        nspeed = F(0)
    if ld != 0:
        if speed > p.max_lane_change_speed or nspeed > p.max_lane_change_speed:
            return None
        if acc > p.max_lane_change_acceleration or acc < -p.max_lane_change_braking:
            return None
        if since < p.lane_change_spacing_steps:
            return None
    if nspeed < p.non_ego_speed_min or nspeed > p.non_ego_speed_max:
        return None
    npos = pos + (speed + nspeed) * p.time_step / 2
    if ld != 0:
        npos = pos + (speed + nspeed) * p.time_step / 2 * p.lane_change_pos_factor
        since2 = 0
    else:
        since2 = since + 1 if since + 1 < p.lane_change_spacing_steps else p.lane_change_spacing_steps
    return npos, lane + ld, nspeed, since2


def direct_ego(ego, cars, p):
    """(pos', speed') of the ego under the braking policy."""
    brake = False
    for c in cars:
        if c.lane == ego.lane and c.pos >= ego.pos and ego.speed > 0:
            time_to_stop = ego.speed / -p.max_braking
            if (c.pos - ego.pos) / ego.speed <= time_to_stop:
                brake = True
    if brake:
        acc = p.max_braking
    elif ego.speed < p.ego_cruise_speed:
        acc = (min(p.ego_cruise_speed, ego.speed + p.max_acceleration * p.time_step) - ego.speed) \
            / p.time_step
    else:
        acc = F(0)
    nspeed = ego.speed + acc * p.time_step
    if nspeed < 0:
        nspeed = F(0)
    return ego.pos + (ego.speed + nspeed) * p.time_step / 2, nspeed


def _rand_frac(rng, lo, hi, den=(1, 2, 4, 5, 10, 20, 25)):
    d = rng.choice(den)
    return F(rng.randint(int(lo * d), int(hi * d)), d)


def random_step_cases(n, seed=2024, params=ModelParams()):
    """Yield (kind, observed, expected) for ``n`` random vehicle and ego steps."""
    rng = random.Random(seed)
    p = params
    for i in range(n):
        if i % 2 == 0:
            pos = _rand_frac(rng, -50, 200)
            lane = rng.randint(0, p.max_lane)
            speed = _rand_frac(rng, 0, 13)
            since = rng.randint(0, p.lane_change_spacing_steps + 2)
            acc = rng.choice([_rand_frac(rng, -5, 6), F("-4.6"), F("5.6"), F(2), F(-2), F(0)])
            ld = rng.choice([-1, 0, 1])
            want = direct_vehicle(pos, lane, speed, since, acc, ld, p)
            try:
                got = step_vehicle(VehicleState(pos, lane, speed, since), ControlInput(acc, ld), p)
                got = (got.pos, got.lane, got.speed, got.steps_since_lane_change)
            except PreconditionViolated:
                got = None
            yield "vehicle", got, want
        else:
            ego = VehicleState(_rand_frac(rng, 0, 100), 1, _rand_frac(rng, 0, 6))
            cars = [VehicleState(ego.pos + _rand_frac(rng, -10, 30), rng.randint(0, 2),
                                 _rand_frac(rng, 0, 12)) for _ in range(2)]
            got = ego_step(WorldState(ego, cars[0], cars[1]), p)
            yield "ego", (got.pos, got.speed, got.lane), (*direct_ego(ego, cars, p), ego.lane)


# --- finite-trace LTL, evaluated naively -----------------------------------------------------

def ltl_holds(formula, trace, i=0):
    """Evaluate a formula over a finite trace of atom sets, position ``i``.

    Formulas are tuples: ("ap", name), ("not", f), ("and", f, g), ("X", f) strong next,
    ("F", f) eventually. Straight recursion over the definitions.
    """
    op = formula[0]
    if op == "ap":
        return formula[1] in trace[i]
    if op == "not":
        return not ltl_holds(formula[1], trace, i)
    if op == "and":
        return ltl_holds(formula[1], trace, i) and ltl_holds(formula[2], trace, i)
    if op == "X":
        return i + 1 < len(trace) and ltl_holds(formula[1], trace, i + 1)
    if op == "F":
        return any(ltl_holds(formula[1], trace, j) for j in range(i, len(trace)))
    raise ValueError(op)


def two_phase_formula():
    """F(A and X(F(B))): A at some point, B strictly later."""
    return ("F", ("and", ("ap", "A"), ("X", ("F", ("ap", "B")))))
