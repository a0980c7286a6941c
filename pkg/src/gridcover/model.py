"""Discrete-time highway model: one ego car in the middle lane, two non-ego cars.

All positions and speeds are exact rationals (:class:`fractions.Fraction`), so a
trace built from these functions replays bit-for-bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Union

Number = Union[int, float, str, Fraction]


def q(x: Number) -> Fraction:
    """Exact rational from an int, a decimal string, a Fraction or a float.

    Floats go through ``repr`` so that ``q(5.6) == Fraction(28, 5)``.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


class PreconditionViolated(ValueError):
    """A transition does not satisfy one of the model's TRANS constraints."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"{constraint}: {detail}" if detail else constraint)


@dataclass(frozen=True)
class ModelParams:
    time_step: Fraction = Fraction(1)
    ego_cruise_speed: Fraction = Fraction(5)
    non_ego_speed_min: Fraction = Fraction(0)
    non_ego_speed_max: Fraction = Fraction(12)
    max_acceleration: Fraction = Fraction("5.6")
    max_braking: Fraction = Fraction("-4.6")
    safe_distance: Fraction = Fraction(7)
    max_lane: int = 2
    max_lane_change_speed: Fraction = Fraction(6)
    max_lane_change_acceleration: Fraction = Fraction(2)
    max_lane_change_braking: Fraction = Fraction(2)
    lane_change_spacing_steps: int = 6
    lane_change_pos_factor: Fraction = Fraction("0.95")

    def __post_init__(self):
        for name in (
            "time_step", "ego_cruise_speed", "non_ego_speed_min", "non_ego_speed_max",
            "max_acceleration", "max_braking", "safe_distance", "max_lane_change_speed",
            "max_lane_change_acceleration", "max_lane_change_braking", "lane_change_pos_factor",
        ):
            object.__setattr__(self, name, q(getattr(self, name)))
        if self.time_step <= 0:
            raise ValueError("time_step must be positive")
        if not self.max_braking < 0 < self.max_acceleration:
            raise ValueError("need max_braking < 0 < max_acceleration")
        if self.safe_distance <= 0:
            raise ValueError("safe_distance must be positive")
        if not 0 <= self.non_ego_speed_min <= self.non_ego_speed_max:
            raise ValueError("need 0 <= non_ego_speed_min <= non_ego_speed_max")
        if not 0 < self.lane_change_pos_factor <= 1:
            raise ValueError("lane_change_pos_factor must be in (0, 1]")
        if self.max_lane < 1:
            raise ValueError("max_lane must be at least 1")
        if self.lane_change_spacing_steps < 0:
            raise ValueError("lane_change_spacing_steps must be non-negative")
        if self.max_lane_change_speed < 0 or self.max_lane_change_acceleration < 0 \
                or self.max_lane_change_braking < 0:
            raise ValueError("lane-change limits are magnitudes and must be non-negative")

    @property
    def ego_lane(self) -> int:
        return self.max_lane // 2

    @property
    def time_to_stop_per_speed(self) -> Fraction:
        return 1 / (-self.max_braking)

    def as_dict(self) -> dict:
        return {k: (str(v) if isinstance(v, Fraction) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model parameter(s): {', '.join(sorted(unknown))}")
        kw = {}
        for k, v in data.items():
            kw[k] = int(v) if k in ("max_lane", "lane_change_spacing_steps") else q(v)
        return cls(**kw)


@dataclass(frozen=True)
class VehicleState:
    pos: Fraction
    lane: int
    speed: Fraction
    # saturating counter; large values mean "lane change allowed"
    steps_since_lane_change: int = 1 << 16

    def __post_init__(self):
        object.__setattr__(self, "pos", q(self.pos))
        object.__setattr__(self, "speed", q(self.speed))
        if self.speed < 0:
            raise ValueError("speed must be non-negative")


@dataclass(frozen=True)
class ControlInput:
    acceleration: Fraction
    lane_delta: int = 0

    def __post_init__(self):
        object.__setattr__(self, "acceleration", q(self.acceleration))
        if self.lane_delta not in (-1, 0, 1):
            raise ValueError("lane_delta must be -1, 0 or +1")


@dataclass(frozen=True)
class WorldState:
    ego: VehicleState
    car1: VehicleState
    car2: VehicleState
    step_index: int = 0

    @property
    def cars(self) -> tuple[VehicleState, VehicleState]:
        return (self.car1, self.car2)


def initial_world(params: ModelParams = ModelParams()) -> WorldState:
    """All three cars at pos 0 and rest; ego in the middle, car1 left, car2 right."""
    sat = params.lane_change_spacing_steps
    mid = params.ego_lane
    return WorldState(
        ego=VehicleState(Fraction(0), mid, Fraction(0), sat),
        car1=VehicleState(Fraction(0), mid - 1, Fraction(0), sat),
        car2=VehicleState(Fraction(0), mid + 1, Fraction(0), sat),
        step_index=0,
    )


def lane_change_violation(state: VehicleState, inp: ControlInput, next_speed: Fraction,
                          params: ModelParams) -> str | None:
    """Name of the first lane-change side constraint that fails, or None."""
    if inp.lane_delta == 0:
        return None
    if state.speed > params.max_lane_change_speed:
        return "lane_change_speed"
    if next_speed > params.max_lane_change_speed:
        return "lane_change_next_speed"
    if inp.acceleration > params.max_lane_change_acceleration:
        return "lane_change_acceleration"
    if inp.acceleration < -params.max_lane_change_braking:
        return "lane_change_braking"
    if state.steps_since_lane_change < params.lane_change_spacing_steps:
        return "lane_change_spacing"
    return None


def step_vehicle(state: VehicleState, inp: ControlInput, params: ModelParams,
                 non_ego: bool = True) -> VehicleState:
    """One transition of a car under ``inp``.

    Raises :class:`PreconditionViolated` naming the violated constraint.
    Non-ego results must also land inside the non-ego speed bounds.
    """
    dt = params.time_step
    new_lane = state.lane + inp.lane_delta
    if not 0 <= new_lane <= params.max_lane:
        raise PreconditionViolated("lane_range", f"lane {new_lane}")
    next_speed = max(state.speed + inp.acceleration * dt, Fraction(0))
    bad = lane_change_violation(state, inp, next_speed, params)
    if bad:
        raise PreconditionViolated(bad)
    if non_ego and not params.non_ego_speed_min <= next_speed <= params.non_ego_speed_max:
        raise PreconditionViolated("speed_bounds", f"speed {next_speed}")
    disp = (state.speed + next_speed) / 2 * dt
    if inp.lane_delta:
        disp *= params.lane_change_pos_factor
        counter = 0
    else:
        counter = min(state.steps_since_lane_change + 1, params.lane_change_spacing_steps)
    return VehicleState(state.pos + disp, new_lane, next_speed, counter)


def collision_next(ego: VehicleState, car: VehicleState, params: ModelParams) -> bool:
    if car.lane != ego.lane or car.pos < ego.pos or ego.speed <= 0:
        return False
    return (car.pos - ego.pos) / ego.speed <= ego.speed / (-params.max_braking)


def ego_acceleration(world: WorldState, params: ModelParams) -> Fraction:
    """Acceleration the ego policy commands in ``world``."""
    ego = world.ego
    if any(collision_next(ego, c, params) for c in world.cars):
        return params.max_braking
    target = params.ego_cruise_speed
    if ego.speed < target:
        return (min(target, ego.speed + params.max_acceleration * params.time_step)
                - ego.speed) / params.time_step
    # above cruise (only possible at init): coast
    return Fraction(0)


def ego_step(world: WorldState, params: ModelParams) -> VehicleState:
    dt = params.time_step
    ego = world.ego
    speed = max(ego.speed + ego_acceleration(world, params) * dt, Fraction(0))
    pos = ego.pos + (ego.speed + speed) / 2 * dt
    return VehicleState(pos, ego.lane, speed, ego.steps_since_lane_change)


def step_world(world: WorldState, in1: ControlInput, in2: ControlInput,
               params: ModelParams) -> WorldState:
    """Synchronous step; does not check the pairwise invariant."""
    return WorldState(
        ego=ego_step(world, params),
        car1=step_vehicle(world.car1, in1, params),
        car2=step_vehicle(world.car2, in2, params),
        step_index=world.step_index + 1,
    )


PAIRS = (("ego", "car1"), ("ego", "car2"), ("car1", "car2"))


def check_invariants(world: WorldState, params: ModelParams) -> list[tuple[str, str]]:
    """Pairs of vehicles that share a lane and are within the safe distance."""
    out = []
    for a, b in PAIRS:
        va, vb = getattr(world, a), getattr(world, b)
        if va.lane == vb.lane and not abs(va.pos - vb.pos) > params.safe_distance:
            out.append((a, b))
    return out


class GridCell(enum.IntEnum):
    OUTSIDE = 0
    C1 = 1  # front-left
    C2 = 2  # front-center
    C3 = 3  # front-right
    C4 = 4  # left
    C5 = 5  # right
    C6 = 6  # rear-left
    C7 = 7  # rear-center
    C8 = 8  # rear-right

    @classmethod
    def cells(cls) -> list["GridCell"]:
        return [c for c in cls if c is not cls.OUTSIDE]


# (lane relation, longitudinal band) per cell; lane relation -1 left, 0 same, +1 right
CELL_SHAPE = {
    GridCell.C1: (-1, "front"), GridCell.C2: (0, "front"), GridCell.C3: (1, "front"),
    GridCell.C4: (-1, "side"), GridCell.C5: (1, "side"),
    GridCell.C6: (-1, "rear"), GridCell.C7: (0, "rear"), GridCell.C8: (1, "rear"),
}


@dataclass(frozen=True)
class GridBounds:
    near_min: Fraction = Fraction(4)
    far_max: Fraction = Fraction(24)
    adjacent_max: Fraction = Fraction(10)

    def __post_init__(self):
        for name in ("near_min", "far_max", "adjacent_max"):
            object.__setattr__(self, name, q(getattr(self, name)))
        if not 0 <= self.near_min < self.far_max:
            raise ValueError("need 0 <= near_min < far_max")
        if self.adjacent_max <= 0:
            raise ValueError("adjacent_max must be positive")

    def band(self, kind: str) -> tuple[Fraction, Fraction]:
        """Closed interval of (car.pos - ego.pos) admitted by a band kind.

        The front band additionally needs a strictly positive offset and the rear
        band a strictly negative one; with near_min > 0 that is implied.
        """
        if kind == "front":
            return (self.near_min, self.far_max)
        if kind == "rear":
            return (-self.far_max, -self.near_min)
        return (-self.adjacent_max, self.adjacent_max)


CONCRETE_BOUNDS = GridBounds(4, 24, 10)
# every cell shrunk by 3 m on each side
ABSTRACT_BOUNDS = GridBounds(7, 21, 7)


def lane_relation(car_lane: int, ego_lane: int) -> int:
    return (car_lane > ego_lane) - (car_lane < ego_lane)


def cell_holds(cell: GridCell, rel: int, delta, bounds: GridBounds) -> bool:
    """Whether the predicate of ``cell`` holds for lane relation ``rel`` and offset ``delta``."""
    want_rel, kind = CELL_SHAPE[cell]
    if rel != want_rel:
        return False
    if kind == "front":
        return delta > 0 and bounds.near_min <= abs(delta) <= bounds.far_max
    if kind == "rear":
        return delta < 0 and bounds.near_min <= abs(delta) <= bounds.far_max
    return abs(delta) <= bounds.adjacent_max


def cells_for(rel: int, delta, bounds: GridBounds) -> frozenset[GridCell]:
    hit = frozenset(c for c in CELL_SHAPE if cell_holds(c, rel, delta, bounds))
    return hit or frozenset({GridCell.OUTSIDE})


def grid_cells(ego: VehicleState, car: VehicleState, bounds: GridBounds = CONCRETE_BOUNDS
               ) -> frozenset[GridCell]:
    """Every grid cell whose predicate holds for ``car`` seen from ``ego``.

    Cell predicates overlap (e.g. a car 10 m ahead in the left lane is in both
    C1 and C4). ``{OUTSIDE}`` is returned only when no predicate holds.
    """
    return cells_for(lane_relation(car.lane, ego.lane), car.pos - ego.pos, bounds)


def world_cells(world: WorldState, bounds: GridBounds) -> tuple[frozenset, frozenset]:
    return grid_cells(world.ego, world.car1, bounds), grid_cells(world.ego, world.car2, bounds)


def cell_lane(cell: GridCell, params: ModelParams) -> Iterable[int]:
    """Lanes a car may occupy to be in ``cell`` (ego in its fixed lane)."""
    rel = CELL_SHAPE[cell][0]
    ego = params.ego_lane
    if rel == 0:
        return [ego]
    if rel < 0:
        return list(range(0, ego))
    return list(range(ego + 1, params.max_lane + 1))


def with_step(world: WorldState, step_index: int) -> WorldState:
    return replace(world, step_index=step_index)


__all__ = [
    "ABSTRACT_BOUNDS", "CONCRETE_BOUNDS", "ControlInput", "GridBounds", "GridCell",
    "ModelParams", "PreconditionViolated", "VehicleState", "WorldState", "cell_holds",
    "cells_for", "check_invariants", "collision_next", "ego_step", "grid_cells",
    "initial_world", "lane_change_violation", "q", "step_vehicle", "step_world",
    "world_cells",
]
