"""Turn abstract witness traces into concrete, simulator-ready scenarios.

Every abstract transition of a non-ego car becomes one behavior node:

* same lane, moving at the next step: ``DriveDistance(next speed, displacement)``
* lane changed: ``LaneChange(direction, next speed, 9 m, 12 m)``
* same lane, halted at the next step: one second of ``StandStill``; a run of
  such transitions merges into a single node. The transition that brings the
  car to rest counts as the first standing step (the simulator brakes to a
  stop, then starts the timer), so a car that brakes to zero and then waits
  two steps gets ``StandStill(3 s)``.

Values stay exact (:class:`~fractions.Fraction`) in memory. The JSON file
shows them with two decimals and carries the exact value alongside, so a
parsed file compares equal to the scenario it came from.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .model import ModelParams, q
from .search import AbstractTrace, validate_trace

LANE_CHANGE_MANEUVER = Fraction(9)
LANE_CHANGE_TOTAL = Fraction(12)
EGO_ROUTE_MARGIN = Fraction(50)
FORMAT_VERSION = 1


class InvalidTrace(ValueError):
    pass


class Direction(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @classmethod
    def of(cls, lane_delta: int) -> "Direction":
        # lane indices grow to the right; car1 starts in lane 0 (left)
        return cls.LEFT if lane_delta < 0 else cls.RIGHT

    @property
    def lane_delta(self) -> int:
        return -1 if self is Direction.LEFT else 1


@dataclass(frozen=True)
class DriveDistance:
    target_speed: Fraction
    distance: Fraction

    def __post_init__(self):
        object.__setattr__(self, "target_speed", q(self.target_speed))
        object.__setattr__(self, "distance", q(self.distance))
        if self.distance < 0 or self.target_speed < 0:
            raise ValueError("DriveDistance needs distance >= 0 and speed >= 0")

    @property
    def abstract_distance(self) -> Fraction:
        return self.distance


@dataclass(frozen=True)
class LaneChange:
    direction: Direction
    speed: Fraction
    maneuver_distance: Fraction = LANE_CHANGE_MANEUVER
    total_distance: Fraction = LANE_CHANGE_TOTAL
    # longitudinal displacement of the abstract step this node replaces
    abstract_distance: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        for name in ("speed", "maneuver_distance", "total_distance", "abstract_distance"):
            object.__setattr__(self, name, q(getattr(self, name)))
        if not 0 <= self.maneuver_distance <= self.total_distance:
            raise ValueError("LaneChange needs 0 <= maneuver_distance <= total_distance")
        if self.speed < 0 or self.abstract_distance < 0:
            raise ValueError("LaneChange speed and abstract distance must be >= 0")


@dataclass(frozen=True)
class StandStill:
    duration: Fraction
    # displacement of the halting step folded into this node, if any
    abstract_distance: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "duration", q(self.duration))
        object.__setattr__(self, "abstract_distance", q(self.abstract_distance))
        if self.duration <= 0:
            raise ValueError("StandStill duration must be positive")


BehaviorNode = Union[DriveDistance, LaneChange, StandStill]


@dataclass(frozen=True)
class BehaviorProgram:
    vehicle_id: str
    initial_lane: int
    initial_offset: Fraction
    nodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "initial_offset", q(self.initial_offset))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        for a, b in zip(self.nodes, self.nodes[1:]):
            if isinstance(a, StandStill) and isinstance(b, StandStill):
                raise ValueError("consecutive StandStill nodes must be merged")

    @property
    def lane_delta(self) -> int:
        return sum(n.direction.lane_delta for n in self.nodes if isinstance(n, LaneChange))

    @property
    def abstract_distance(self) -> Fraction:
        return sum((n.abstract_distance for n in self.nodes), Fraction(0))


@dataclass(frozen=True)
class ConcreteScenario:
    scenario_id: str
    spec_id: str
    offset_variant: Fraction
    programs: tuple
    ego_start: tuple  # (lane, pos)
    ego_route_length: Fraction
    # abstract step indices of the two phases, kept for reports
    phase_steps: tuple = field(default=(), compare=True)

    def __post_init__(self):
        object.__setattr__(self, "offset_variant", q(self.offset_variant))
        object.__setattr__(self, "ego_route_length", q(self.ego_route_length))
        object.__setattr__(self, "programs", tuple(self.programs))
        lane, pos = self.ego_start
        object.__setattr__(self, "ego_start", (int(lane), q(pos)))
        object.__setattr__(self, "phase_steps", tuple(self.phase_steps))
        if len(self.programs) != 2 or {p.vehicle_id for p in self.programs} != {"car1", "car2"}:
            raise ValueError("a concrete scenario needs programs for car1 and car2")


def offsets() -> list[Fraction]:
    """Initial longitudinal offsets of the non-egos: behind, level, ahead."""
    return [Fraction("-3.5"), Fraction(0), Fraction("3.5")]


def offset_tag(offset) -> str:
    o = q(offset)
    if o == 0:
        return "o0"
    sign = "m" if o < 0 else "p"
    return f"o{sign}{str(float(abs(o))).replace('.', '_')}"


# --- concretization ----------------------------------------------------------------------

def _program(trace: AbstractTrace, name: str, offset: Fraction,
             merge_drives: bool, dt: Fraction) -> BehaviorProgram:
    states = [getattr(w, name) for w in trace.states]
    nodes: list = []
    for a, b in zip(states, states[1:]):
        ld = b.lane - a.lane
        disp = b.pos - a.pos
        if ld:
            node = LaneChange(Direction.of(ld), b.speed, abstract_distance=disp)
        elif b.speed > 0:
            node = DriveDistance(b.speed, disp)
        else:
            node = StandStill(dt, disp)
        prev = nodes[-1] if nodes else None
        if isinstance(node, StandStill) and isinstance(prev, StandStill):
            nodes[-1] = StandStill(prev.duration + node.duration,
                                   prev.abstract_distance + node.abstract_distance)
        elif (merge_drives and isinstance(node, DriveDistance) and isinstance(prev, DriveDistance)
              and prev.target_speed == node.target_speed):
            nodes[-1] = DriveDistance(prev.target_speed, prev.distance + node.distance)
        else:
            nodes.append(node)
    first = states[0]
    return BehaviorProgram(name, first.lane, first.pos - trace.states[0].ego.pos + offset, nodes)


def concretize(trace: AbstractTrace, offset=0, params: ModelParams = ModelParams(),
               merge_drives: bool = False, scenario_id: str | None = None) -> ConcreteScenario:
    """One concrete scenario for ``trace`` with the non-egos shifted by ``offset`` meters.

    Raises :class:`InvalidTrace` if the trace does not follow the transition relation.
    """
    ok, diag = validate_trace(trace, None, params, check_initial=False)
    if not ok:
        raise InvalidTrace(diag[0])
    offset = q(offset)
    dt = params.time_step
    programs = tuple(_program(trace, name, offset, merge_drives, dt) for name in ("car1", "car2"))
    ego0, egoN = trace.states[0].ego, trace.states[-1].ego
    spec_id = trace.spec_id or "adhoc"
    phases = (trace.phase1_index, trace.phase2_index) if trace.phase1_index >= 0 else ()
    return ConcreteScenario(
        scenario_id=scenario_id or f"{spec_id}_{offset_tag(offset)}",
        spec_id=spec_id,
        offset_variant=offset,
        programs=programs,
        ego_start=(ego0.lane, Fraction(0)),
        ego_route_length=egoN.pos - ego0.pos + EGO_ROUTE_MARGIN,
        phase_steps=phases,
    )


def concretize_all(trace: AbstractTrace, params: ModelParams = ModelParams(),
                   merge_drives: bool = False) -> list[ConcreteScenario]:
    return [concretize(trace, o, params, merge_drives) for o in offsets()]


def conservation_errors(scenario: ConcreteScenario, trace: AbstractTrace) -> list[str]:
    """Distance and lane bookkeeping of each program against the abstract trace.

    A lane change drives a fixed 12 m in the simulator whatever the abstract
    step covered, so distance is balanced over the abstract spans the nodes
    stand for, not over the concrete lane-change lengths.
    """
    out = []
    for prog in scenario.programs:
        first = getattr(trace.states[0], prog.vehicle_id)
        last = getattr(trace.states[-1], prog.vehicle_id)
        disp = last.pos - first.pos
        if prog.abstract_distance != disp:
            out.append(f"{prog.vehicle_id}: nodes cover {prog.abstract_distance}, trace moved {disp}")
        if prog.lane_delta != last.lane - first.lane:
            out.append(f"{prog.vehicle_id}: lane changes sum to {prog.lane_delta}, "
                       f"trace moved {last.lane - first.lane} lanes")
    return out


# --- JSON --------------------------------------------------------------------------------

def _fmt(x: Fraction) -> str:
    s = f"{float(x):.2f}"
    return "0.00" if s == "-0.00" else s


def _rat(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


class _Num:
    """A number rendered with two decimals inside otherwise ordinary JSON."""

    def __init__(self, x: Fraction):
        self.x = x


def _dump(obj) -> str:
    if isinstance(obj, _Num):
        return _fmt(obj.x)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    return json.dumps(obj)


def _node_json(n) -> dict:
    if isinstance(n, DriveDistance):
        d = {"kind": "drive_distance", "target_speed": n.target_speed, "distance": n.distance}
    elif isinstance(n, LaneChange):
        d = {"kind": "lane_change", "direction": n.direction.value, "speed": n.speed,
             "maneuver_distance": n.maneuver_distance, "total_distance": n.total_distance,
             "abstract_distance": n.abstract_distance}
    else:
        d = {"kind": "stand_still", "duration": n.duration,
             "abstract_distance": n.abstract_distance}
    exact = {k: _rat(v) for k, v in d.items() if isinstance(v, Fraction)}
    shown = {k: (_Num(v) if isinstance(v, Fraction) else v) for k, v in d.items()}
    shown["exact"] = exact
    return shown


def _node_from(d: dict):
    ex = {k: Fraction(v) for k, v in d.get("exact", {}).items()}
    get = lambda k: ex[k] if k in ex else q(str(d[k]))
    kind = d["kind"]
    if kind == "drive_distance":
        return DriveDistance(get("target_speed"), get("distance"))
    if kind == "lane_change":
        return LaneChange(Direction(d["direction"]), get("speed"), get("maneuver_distance"),
                          get("total_distance"), get("abstract_distance"))
    if kind == "stand_still":
        return StandStill(get("duration"), get("abstract_distance"))
    raise ValueError(f"unknown behavior kind {kind!r}")


def emit_scenario_file(s: ConcreteScenario) -> str:
    """Canonical JSON text; fixed key order, two-decimal numbers plus exact values."""
    doc = {
        "format": FORMAT_VERSION,
        "scenario_id": s.scenario_id,
        "spec_id": s.spec_id,
        "offset": _Num(s.offset_variant),
        "ego": {"lane": s.ego_start[0], "pos": _Num(s.ego_start[1]),
                "route_length": _Num(s.ego_route_length)},
        "phase_steps": list(s.phase_steps),
        "non_egos": [
            {"id": p.vehicle_id, "lane": p.initial_lane, "pos": _Num(p.initial_offset),
             "nodes": [_node_json(n) for n in p.nodes]}
            for p in s.programs
        ],
        "exact": {"offset": _rat(s.offset_variant), "ego_pos": _rat(s.ego_start[1]),
                  "route_length": _rat(s.ego_route_length),
                  "non_ego_pos": [_rat(p.initial_offset) for p in s.programs]},
    }
    parts = [f"  {json.dumps(k)}: {_dump(v)}" for k, v in doc.items() if k != "non_egos"]
    cars = ",\n".join("    " + _dump(c) for c in doc["non_egos"])
    parts.insert(6, f'  "non_egos": [\n{cars}\n  ]')
    return "{\n" + ",\n".join(parts) + "\n}\n"


def parse_scenario_file(text: str) -> ConcreteScenario:
    d = json.loads(text)
    if d.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported scenario format {d.get('format')!r}")
    ex = d.get("exact", {})
    num = lambda key, raw: Fraction(ex[key]) if key in ex else q(str(raw))
    cars_exact = ex.get("non_ego_pos")
    programs = []
    for i, c in enumerate(d["non_egos"]):
        pos = Fraction(cars_exact[i]) if cars_exact else q(str(c["pos"]))
        programs.append(BehaviorProgram(c["id"], int(c["lane"]), pos,
                                        [_node_from(n) for n in c["nodes"]]))
    return ConcreteScenario(
        scenario_id=d["scenario_id"], spec_id=d["spec_id"],
        offset_variant=num("offset", d["offset"]),
        programs=programs,
        ego_start=(int(d["ego"]["lane"]), num("ego_pos", d["ego"]["pos"])),
        ego_route_length=num("route_length", d["ego"]["route_length"]),
        phase_steps=tuple(d.get("phase_steps", ())),
    )


# --- ScenarioRunner-style export -----------------------------------------------------------

def _script_for(prog: BehaviorProgram) -> list[str]:
    v = prog.vehicle_id
    out = [f"def build_{v}_behavior(actor):",
           f'    {v} = py_trees.composites.Sequence("{v} behavior")']
    for k, n in enumerate(prog.nodes):
        if isinstance(n, DriveDistance):
            tag = f"drive_{k}"
            out += [f"    # drive {_fmt(n.distance)} m at {_fmt(n.target_speed)} m/s in the current lane",
                    f'    {tag} = py_trees.composites.Parallel("{tag}", policy=SUCCESS_ON_ONE)',
                    f"    {tag}.add_child(WaypointFollower(actor, {_fmt(n.target_speed)}))",
                    f"    {tag}.add_child(DriveDistance(actor, {_fmt(n.distance)}))"]
        elif isinstance(n, LaneChange):
            tag = f"lane_change_{k}"
            out += [f"    # change lane to the {n.direction.value} at {_fmt(n.speed)} m/s; the move takes "
                    f"{_fmt(n.maneuver_distance)} m, the node ends after {_fmt(n.total_distance)} m",
                    f'    {tag} = py_trees.composites.Parallel("{tag}", policy=SUCCESS_ON_ONE)',
                    f'    {tag}.add_child(LaneChange(actor, speed={_fmt(n.speed)}, '
                    f'direction="{n.direction.value}", distance_same_lane=0, '
                    f"distance_lane_change={_fmt(n.maneuver_distance)}))",
                    f"    {tag}.add_child(DriveDistance(actor, {_fmt(n.total_distance)}))"]
        else:
            tag = f"stand_still_{k}"
            out += [f"    # stop, then stand still for {_fmt(n.duration)} s",
                    f'    {tag} = py_trees.composites.Sequence("{tag}")',
                    f"    {tag}.add_child(StopVehicle(actor, brake_value=1.0))",
                    f'    {tag}_hold = py_trees.composites.Parallel("{tag}_hold", policy=SUCCESS_ON_ONE)',
                    f"    {tag}_hold.add_child(KeepVelocity(actor, 0.0))",
                    f"    {tag}_hold.add_child(TimeOut({_fmt(n.duration)}))",
                    f"    {tag}.add_child({tag}_hold)"]
        out.append(f"    {v}.add_child({tag})")
    out.append(f"    return {v}")
    return out


def export_scenariorunner_script(s: ConcreteScenario) -> str:
    """Python source for ScenarioRunner-style behavior trees, one per non-ego.

    The text is generated code for an external runner; nothing here executes it.
    """
    lines = [
        f"# Behavior trees for scenario {s.scenario_id} (abstract scenario {s.spec_id}, "
        f"offset {_fmt(s.offset_variant)} m).",
        "import py_trees",
        "from py_trees.common import ParallelPolicy",
        "from srunner.scenariomanager.scenarioatomics.atomic_behaviors import (",
        "    KeepVelocity, LaneChange, StopVehicle, WaypointFollower)",
        "from srunner.scenariomanager.scenarioatomics.atomic_trigger_conditions import DriveDistance",
        "from srunner.scenariomanager.timer import TimeOut",
        "",
        "SUCCESS_ON_ONE = ParallelPolicy.SuccessOnOne()",
        "",
        "# spawn points relative to the ego (lane index, longitudinal offset in m)",
        f"EGO_START = ({s.ego_start[0]}, {_fmt(s.ego_start[1])})",
        f"EGO_ROUTE_LENGTH = {_fmt(s.ego_route_length)}",
    ]
    for p in s.programs:
        lines.append(f"{p.vehicle_id.upper()}_START = ({p.initial_lane}, {_fmt(p.initial_offset)})")
    for p in s.programs:
        lines += ["", ""] + _script_for(p)
    return "\n".join(lines) + "\n"
