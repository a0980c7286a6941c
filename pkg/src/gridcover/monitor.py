"""Execution monitor: maps concrete traces onto the grid, checks scenario
compliance and the no-frontal-collision property, and classifies runs."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .catalog import ScenarioSpec, spec_to_objective
from .model import CONCRETE_BOUNDS, GridBounds, cells_for, lane_relation
from .sim import ConcreteTrace


class Outcome(str, enum.Enum):
    CoverOkPropOk = "CoverOkPropOk"
    CoverOkPropFail = "CoverOkPropFail"
    CoverFailPropOk = "CoverFailPropOk"
    CoverFailPropFail = "CoverFailPropFail"

    @property
    def compliance(self) -> bool:
        return self.value.startswith("CoverOk")

    @property
    def property_ok(self) -> bool:
        return self.value.endswith("PropOk")


def classify(compliance: bool, property_ok: bool) -> Outcome:
    return {
        (True, True): Outcome.CoverOkPropOk,
        (True, False): Outcome.CoverOkPropFail,
        (False, True): Outcome.CoverFailPropOk,
        (False, False): Outcome.CoverFailPropFail,
    }[(bool(compliance), bool(property_ok))]


def abstract_observation(trace: ConcreteTrace, bounds: GridBounds = CONCRETE_BOUNDS) -> list:
    """Per sample, the (car1, car2) grid cell sets seen from the ego.

    Lanes come from the trace, i.e. the lane whose center is nearest.
    """
    out = []
    for smp in trace.samples:
        ego = smp.vehicles["ego"]
        cells = []
        for name in ("car1", "car2"):
            car = smp.vehicles[name]
            cells.append(cells_for(lane_relation(car.lane, ego.lane), car.x - ego.x, bounds))
        out.append(tuple(cells))
    return out


def check_compliance(obs, spec: ScenarioSpec, times=None) -> tuple[bool, tuple | None]:
    """Whether A holds at some sample and B at a strictly later one.

    Returns the earliest such pair, as sample times when ``times`` is given
    and as sample indices otherwise.
    """
    hit = spec_to_objective(spec).earliest(obs)
    if hit is None:
        return False, None
    if times is not None:
        hit = (times[hit[0]], times[hit[1]])
    return True, hit


def check_property(trace: ConcreteTrace) -> bool:
    """No frontal collision; collisions not involving the ego from behind are ignored."""
    return not any(e.kind == "frontal_collision" for e in trace.events)


def first_violation(trace: ConcreteTrace):
    for e in trace.events:
        if e.kind == "frontal_collision":
            return e.t
    return None


@dataclass(frozen=True)
class MonitorVerdict:
    scenario_id: str
    spec_id: str
    offset: float | None
    compliance: bool
    property_ok: bool
    outcome: Outcome
    first_violation_t: float | None = None
    phase_times: tuple | None = None

    def __post_init__(self):
        if classify(self.compliance, self.property_ok) is not self.outcome:
            raise ValueError("outcome inconsistent with compliance/property")

    def as_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id, "spec_id": self.spec_id, "offset": self.offset,
            "compliance": self.compliance, "property_ok": self.property_ok,
            "outcome": self.outcome.value, "first_violation_t": self.first_violation_t,
            "phase_times": list(self.phase_times) if self.phase_times else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MonitorVerdict":
        pt = d.get("phase_times")
        return cls(d["scenario_id"], d["spec_id"], d.get("offset"), d["compliance"],
                   d["property_ok"], Outcome(d["outcome"]), d.get("first_violation_t"),
                   tuple(pt) if pt else None)


def monitor(trace: ConcreteTrace, spec: ScenarioSpec, bounds: GridBounds = CONCRETE_BOUNDS,
            scenario_id: str | None = None, offset: float | None = None) -> MonitorVerdict:
    obs = abstract_observation(trace, bounds)
    ok, phases = check_compliance(obs, spec, [s.t for s in trace.samples])
    prop = check_property(trace)
    return MonitorVerdict(scenario_id if scenario_id is not None else trace.scenario_id, spec.id,
                          offset, ok, prop, classify(ok, prop), first_violation(trace), phases)


def verdicts_to_jsonl(verdicts) -> str:
    return "".join(v.to_json() + "\n" for v in verdicts)


def verdicts_from_jsonl(text: str) -> list[MonitorVerdict]:
    return [MonitorVerdict.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
