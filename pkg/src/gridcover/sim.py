"""Fixed-step kinematic simulator for concrete scenarios.

Straight road, lanes of equal width; ``y`` is the lateral position of a
vehicle's center, ``y = lane * lane_width``. Non-egos execute their behavior
programs; the ego is driven by an adaptive-cruise agent that either sees the
world exactly (:func:`OracleACC`) or through a lossy, delayed perception
(:func:`FaultyPerceptionACC`). Vehicles do not react physically to contact:
an overlap is recorded as a collision event and the cars drive on.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .concretize import ConcreteScenario, DriveDistance, LaneChange, StandStill
from .model import ModelParams

VEHICLES = ("ego", "car1", "car2")


class ScenarioUnrunnable(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    max_sim_time: float = 120.0
    lane_width: float = 3.5
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    rng_seed: int = 0
    speed_gain: float = 2.0      # 1/s, non-ego speed controller
    accel_limit: float = 6.0     # m/s^2, non-ego acceleration clamp
    # drive and lane-change nodes never crawl slower than this, or a node whose
    # abstract step ended at rest would never cover its distance
    min_node_speed: float = 1.0

    def __post_init__(self):
        if self.dt <= 0 or self.max_sim_time <= 0:
            raise ValueError("dt and max_sim_time must be positive")
        if min(self.lane_width, self.vehicle_length, self.vehicle_width) <= 0:
            raise ValueError("dimensions must be positive")
        if self.speed_gain <= 0 or self.accel_limit <= 0 or self.min_node_speed < 0:
            raise ValueError("controller settings must be positive")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EgoAgentSpec:
    kind: str = "oracle"  # "oracle" | "faulty"
    dropout_prob: float = 0.0
    detection_latency: float = 0.0

    def __post_init__(self):
        if self.kind not in ("oracle", "faulty"):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if not 0 <= self.dropout_prob <= 1:
            raise ValueError("dropout_prob must be in [0, 1]")
        if self.detection_latency < 0:
            raise ValueError("detection_latency must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "EgoAgentSpec":
        """``oracle`` or ``faulty:<dropout>:<latency seconds>``."""
        parts = text.strip().split(":")
        if parts == ["oracle"]:
            return OracleACC()
        if parts[0] == "faulty" and len(parts) == 3:
            return FaultyPerceptionACC(float(parts[1]), float(parts[2]))
        raise ValueError(f"bad agent {text!r}; expected 'oracle' or 'faulty:P:L'")

    def label(self) -> str:
        if self.kind == "oracle":
            return "oracle"
        return f"faulty:{self.dropout_prob:g}:{self.detection_latency:g}"


def OracleACC() -> EgoAgentSpec:
    return EgoAgentSpec("oracle")


def FaultyPerceptionACC(dropout_prob: float = 0.3, detection_latency: float = 0.5) -> EgoAgentSpec:
    return EgoAgentSpec("faulty", dropout_prob, detection_latency)


class VehicleSample(NamedTuple):
    x: float
    y: float
    lane: int
    speed: float


@dataclass(frozen=True)
class Sample:
    t: float
    vehicles: dict  # name -> VehicleSample
    throttle: float
    brake: float


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    kind: str  # "frontal_collision" | "other_collision"
    pair: tuple

    def as_dict(self) -> dict:
        return {"t": self.t, "kind": self.kind, "pair": list(self.pair)}


@dataclass
class ConcreteTrace:
    samples: list
    events: list = field(default_factory=list)
    dt: float = 0.05
    lane_width: float = 3.5
    scenario_id: str = ""
    completed: bool = True  # all programs finished before max_sim_time

    def __len__(self) -> int:
        return len(self.samples)


# --- perception and ego agent --------------------------------------------------------------

def ego_observe(world: dict, agent: EgoAgentSpec, rng: random.Random,
                history=(), dt: float = 0.05) -> dict:
    """Non-ego states the ego agent perceives at this sample.

    ``world`` maps vehicle names to :class:`VehicleSample`; ``history`` holds
    earlier snapshots, oldest first. The faulty agent draws one number per
    non-ego per sample (so the drop pattern depends only on the seed), drops
    the car with probability ``dropout_prob``, and reports the surviving cars
    as they were ``detection_latency`` seconds ago.
    """
    cars = [n for n in sorted(world) if n != "ego"]
    if agent.kind == "oracle":
        return {n: world[n] for n in cars}
    dropped = {n: rng.random() < agent.dropout_prob for n in cars}
    lag = int(round(agent.detection_latency / dt))
    frames = list(history) + [world]
    if lag >= len(frames):
        return {}
    seen = frames[-1 - lag]
    return {n: seen[n] for n in cars if not dropped[n] and n in seen}


def acc_command(ego: VehicleSample, observed: dict, params: ModelParams, cfg: SimConfig) -> float:
    """Acceleration of the cruise policy: full braking when the bumper gap to a car
    in the ego's path is within speed**2 / |max_braking|, else approach cruise speed."""
    v = ego.speed
    brake_at = v * v / -float(params.max_braking)
    if v > 0:
        for car in observed.values():
            # a car straddling the lane boundary counts as in the ego's path
            if car.x >= ego.x and abs(car.y - ego.y) < cfg.lane_width:
                if car.x - ego.x - cfg.vehicle_length <= brake_at:
                    return float(params.max_braking)
    cruise = float(params.ego_cruise_speed)
    if v < cruise:
        return min(float(params.max_acceleration), (cruise - v) / cfg.dt)
    return 0.0


# --- non-ego program execution -------------------------------------------------------------

def _smoothstep(u: float) -> float:
    u = min(max(u, 0.0), 1.0)
    return u * u * (3 - 2 * u)


class _Car:
    def __init__(self, name: str, lane: int, x: float, nodes, cfg: SimConfig, max_lane: int):
        self.name = name
        self.x, self.y, self.speed = x, lane * cfg.lane_width, 0.0
        self.nodes = list(nodes)
        self.cfg = cfg
        self.max_lane = max_lane
        self.i = 0
        self.target = 0.0
        self._enter()

    def _enter(self):
        self.progress = 0.0
        self.hold_steps = 0
        self.y0 = self.y
        # past the last node a car keeps the speed it was last asked for
        if self.i < len(self.nodes):
            n = self.nodes[self.i]
            if isinstance(n, DriveDistance):
                self.target = max(float(n.target_speed), self.cfg.min_node_speed)
            elif isinstance(n, LaneChange):
                self.target = max(float(n.speed), self.cfg.min_node_speed)
            else:
                self.target = 0.0

    @property
    def done(self) -> bool:
        return self.i >= len(self.nodes)

    def _advance(self):
        self.i += 1
        self._enter()

    def step(self):
        cfg = self.cfg
        dt = cfg.dt
        # zero-length drive nodes finish without consuming time
        while not self.done and isinstance(self.nodes[self.i], DriveDistance) \
                and self.nodes[self.i].distance == 0:
            self._advance()
        node = None if self.done else self.nodes[self.i]
        if isinstance(node, StandStill):
            acc = -cfg.accel_limit if self.speed > 0 else 0.0
        else:
            acc = max(-cfg.accel_limit, min(cfg.accel_limit, cfg.speed_gain * (self.target - self.speed)))
        v0 = self.speed
        v1 = max(v0 + acc * dt, 0.0)
        dx = (v0 + v1) / 2 * dt
        self.x += dx
        self.speed = v1
        if node is None:
            return
        if isinstance(node, DriveDistance):
            self.progress += dx
            if self.progress >= float(node.distance):
                self._advance()
        elif isinstance(node, LaneChange):
            self.progress += dx
            frac = _smoothstep(self.progress / float(node.maneuver_distance)) \
                if node.maneuver_distance > 0 else 1.0
            self.y = self.y0 + node.direction.lane_delta * cfg.lane_width * frac
            if self.progress >= float(node.total_distance):
                self.y = self.y0 + node.direction.lane_delta * cfg.lane_width
                self._advance()
        else:
            if v0 == 0 and v1 == 0:
                self.hold_steps += 1
                if self.hold_steps >= round(float(node.duration) / dt):
                    self._advance()

    def sample(self) -> VehicleSample:
        return VehicleSample(self.x, self.y, lane_of(self.y, self.cfg, self.max_lane), self.speed)


def lane_of(y: float, cfg: SimConfig, max_lane: int) -> int:
    """Index of the lane whose center is nearest to ``y`` (ties go to the lower index)."""
    lane = math.floor(y / cfg.lane_width + 0.5)
    if abs(y / cfg.lane_width - (lane - 0.5)) < 1e-12:
        lane -= 1
    return min(max(lane, 0), max_lane)


# --- collisions ----------------------------------------------------------------------------

def _overlap(a: VehicleSample, b: VehicleSample, cfg: SimConfig) -> bool:
    return abs(a.x - b.x) < cfg.vehicle_length and abs(a.y - b.y) < cfg.vehicle_width


def detect_collisions(world: dict, cfg: SimConfig, t: float = 0.0) -> list[CollisionEvent]:
    """Collision events for every overlapping pair in one snapshot.

    Frontal: the ego overlaps a non-ego that is at or ahead of it in its lane.
    """
    out = []
    names = [n for n in VEHICLES if n in world]
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            va, vb = world[a], world[b]
            if not _overlap(va, vb, cfg):
                continue
            kind = "other_collision"
            if a == "ego" and vb.x >= va.x and vb.lane == va.lane:
                kind = "frontal_collision"
            out.append(CollisionEvent(t, kind, (a, b)))
    return out


# --- main loop -----------------------------------------------------------------------------

def run(s: ConcreteScenario, agent: EgoAgentSpec = OracleACC(), cfg: SimConfig = SimConfig(),
        params: ModelParams = ModelParams()) -> ConcreteTrace:
    """Simulate until both behavior programs finish or ``max_sim_time`` elapses."""
    max_lane = params.max_lane
    ego_lane, ego_x = s.ego_start
    cars = []
    for prog in s.programs:
        if not 0 <= prog.initial_lane <= max_lane:
            raise ScenarioUnrunnable(f"{prog.vehicle_id} starts in lane {prog.initial_lane}")
        cars.append(_Car(prog.vehicle_id, prog.initial_lane, float(ego_x + prog.initial_offset),
                         prog.nodes, cfg, max_lane))
    cars.sort(key=lambda c: c.name)
    ego = VehicleSample(float(ego_x), ego_lane * cfg.lane_width, ego_lane, 0.0)

    def snapshot(ego_state):
        w = {"ego": ego_state}
        for c in cars:
            w[c.name] = c.sample()
        return w

    world = snapshot(ego)
    if detect_collisions(world, cfg):
        raise ScenarioUnrunnable("vehicles overlap at spawn")

    rng = random.Random(cfg.rng_seed)
    lag = int(round(agent.detection_latency / cfg.dt)) if agent.kind == "faulty" else 0
    history = deque(maxlen=lag)
    samples, events = [], []
    touching = set()
    n_steps = int(round(cfg.max_sim_time / cfg.dt))
    k = 0
    while True:
        t = round(k * cfg.dt, 9)
        observed = ego_observe(world, agent, rng, history, cfg.dt)
        acc = acc_command(world["ego"], observed, params, cfg)
        throttle = acc / float(params.max_acceleration) if acc > 0 else 0.0
        brake = acc / float(params.max_braking) if acc < 0 else 0.0
        samples.append(Sample(t, world, throttle, brake))
        now = set()
        for ev in detect_collisions(world, cfg, t):
            now.add(ev.pair)
            if ev.pair not in touching:
                events.append(ev)
        touching = now
        if all(c.done for c in cars) or k >= n_steps:
            break
        if lag:
            history.append(world)
        e = world["ego"]
        v1 = max(e.speed + acc * cfg.dt, 0.0)
        ego = VehicleSample(e.x + (e.speed + v1) / 2 * cfg.dt, e.y, e.lane, v1)
        for c in cars:
            c.step()
        world = snapshot(ego)
        k += 1
    return ConcreteTrace(samples, events, cfg.dt, cfg.lane_width, s.scenario_id,
                         completed=all(c.done for c in cars))


# --- files ---------------------------------------------------------------------------------

CSV_HEADER = ["t", "veh", "x", "y", "lane", "speed", "throttle", "brake"]


def trace_to_csv(trace: ConcreteTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for smp in trace.samples:
        for name in VEHICLES:
            v = smp.vehicles[name]
            tb = (repr(smp.throttle), repr(smp.brake)) if name == "ego" else ("", "")
            w.writerow([repr(smp.t), name, repr(v.x), repr(v.y), v.lane, repr(v.speed), *tb])
    return buf.getvalue()


def events_to_json(trace: ConcreteTrace) -> str:
    doc = {"scenario_id": trace.scenario_id, "dt": trace.dt, "lane_width": trace.lane_width,
           "completed": trace.completed, "events": [e.as_dict() for e in trace.events]}
    return json.dumps(doc, indent=1) + "\n"


def trace_from_csv(text: str, events_json: str | None = None,
                   lane_width: float | None = None) -> ConcreteTrace:
    """Read the CSV format written by :func:`trace_to_csv`.

    Lanes are taken from the file. Throttle and brake may be empty for every
    vehicle, e.g. for logs converted from another simulator. Without an events
    file, collisions are recomputed from the samples with default geometry.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"expected CSV header {','.join(CSV_HEADER)}")
    by_t: dict = {}
    order = []
    for r in rows[1:]:
        if not r:
            continue
        t = float(r[0])
        if t not in by_t:
            by_t[t] = [{}, 0.0, 0.0]
            order.append(t)
        by_t[t][0][r[1]] = VehicleSample(float(r[2]), float(r[3]), int(r[4]), float(r[5]))
        if r[1] == "ego":
            by_t[t][1] = float(r[6]) if r[6] else 0.0
            by_t[t][2] = float(r[7]) if r[7] else 0.0
    if any(b <= a for a, b in zip(order, order[1:])):
        raise ValueError("sample times must be strictly increasing")
    samples = []
    for t in order:
        veh, thr, brk = by_t[t]
        missing = [n for n in VEHICLES if n not in veh]
        if missing:
            raise ValueError(f"t={t}: missing rows for {', '.join(missing)}")
        samples.append(Sample(t, veh, thr, brk))
    dt = order[1] - order[0] if len(order) > 1 else SimConfig.dt
    meta = json.loads(events_json) if events_json else {}
    lw = lane_width or meta.get("lane_width", SimConfig.lane_width)
    if meta:
        events = [CollisionEvent(e["t"], e["kind"], tuple(e["pair"])) for e in meta.get("events", [])]
    else:
        cfg = SimConfig(dt=dt, lane_width=lw)
        events, touching = [], set()
        for smp in samples:
            now = set()
            for ev in detect_collisions(smp.vehicles, cfg, smp.t):
                now.add(ev.pair)
                if ev.pair not in touching:
                    events.append(ev)
            touching = now
    return ConcreteTrace(samples, events, meta.get("dt", dt), lw, meta.get("scenario_id", ""),
                         meta.get("completed", True))
