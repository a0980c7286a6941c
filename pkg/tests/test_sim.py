import random
from fractions import Fraction as F

import pytest

from gridcover.concretize import (BehaviorProgram, ConcreteScenario, Direction, DriveDistance,
                                  LaneChange, StandStill, concretize_all)
from gridcover.model import ModelParams
from gridcover.sim import (CollisionEvent, EgoAgentSpec, FaultyPerceptionACC, OracleACC,
                           ScenarioUnrunnable, SimConfig, VehicleSample, acc_command,
                           detect_collisions, ego_observe, events_to_json, lane_of, run,
                           trace_from_csv, trace_to_csv)

CFG = SimConfig()
BLIND = FaultyPerceptionACC(1.0, 0.0)


def parked(name, lane, x):
    return BehaviorProgram(name, lane, F(x), (DriveDistance(F(1), F(1)),))


def scenario(p1, p2, ego=(1, 0), route=200):
    return ConcreteScenario("t", "t", 0, (p1, p2), ego, route)


def cutin(x0, after):
    """car1 drives next to the ego at cruise speed, merges in front, then drives at ``after``."""
    p1 = BehaviorProgram("car1", 0, F(x0), (DriveDistance(F(5), F(20)),
                                            LaneChange(Direction.RIGHT, F(5)),
                                            DriveDistance(F(after), F(40))))
    return scenario(p1, parked("car2", 2, -60))


def first_merge_index(trace):
    return next(i for i, s in enumerate(trace.samples) if s.vehicles["car1"].y > 0)


def W(**cars):
    return {n: VehicleSample(*v) for n, v in cars.items()}


class TestPrograms:
    def test_drive_distance_reaches_speed_and_covers_distance(self):
        s = scenario(BehaviorProgram("car1", 0, F(0), (DriveDistance(F(3), F(30)),)),
                     parked("car2", 2, -40))
        tr = run(s)
        c0, c1 = tr.samples[0].vehicles["car1"], tr.samples[-1].vehicles["car1"]
        assert tr.completed
        assert 30 <= c1.x - c0.x <= 30 + c1.speed * CFG.dt
        assert abs(c1.speed - 3) < 1e-6

    def test_lane_change_lateral_profile(self):
        p = BehaviorProgram("car1", 0, F(20), (LaneChange(Direction.RIGHT, F(4)),))
        tr = run(scenario(p, parked("car2", 2, -40)))
        ys = [s.vehicles["car1"].y for s in tr.samples]
        assert ys[0] == 0 and ys[-1] == CFG.lane_width
        assert all(a <= b for a, b in zip(ys, ys[1:]))
        assert tr.samples[-1].vehicles["car1"].lane == 1

    def test_standstill_holds(self):
        p = BehaviorProgram("car1", 0, F(0), (DriveDistance(F(3), F(5)), StandStill(F(2))))
        tr = run(scenario(p, parked("car2", 2, -40)))
        at_rest = [s for s in tr.samples if s.vehicles["car1"].speed == 0 and s.t > 1]
        assert len(at_rest) >= round(2 / CFG.dt)

    def test_invariants_over_a_campaign_scenario(self, s22_64_witness):
        for s in concretize_all(s22_64_witness):
            tr = run(s, FaultyPerceptionACC())
            for smp in tr.samples:
                for v in smp.vehicles.values():
                    assert v.speed >= 0
                    assert 0 <= v.y <= 2 * CFG.lane_width
            assert tr.samples[-1].t <= CFG.max_sim_time

    def test_times_are_a_uniform_grid(self, s22_64_witness):
        tr = run(concretize_all(s22_64_witness)[1])
        assert [s.t for s in tr.samples] == [round(k * CFG.dt, 9) for k in range(len(tr))]

    def test_spawn_overlap_rejected(self):
        with pytest.raises(ScenarioUnrunnable):
            run(scenario(parked("car1", 1, 2), parked("car2", 2, -40)))

    def test_max_time_stops_unfinished(self):
        p = BehaviorProgram("car1", 0, F(0), (StandStill(F(50)),))
        tr = run(scenario(p, parked("car2", 2, -40)), cfg=SimConfig(max_sim_time=5))
        assert not tr.completed and tr.samples[-1].t == 5


class TestCutIn:
    def test_oracle_brakes_on_five_metre_cut_in(self):
        tr = run(cutin("5.5", 5), OracleACC())
        i = first_merge_index(tr)
        smp = tr.samples[i]
        gap = smp.vehicles["car1"].x - smp.vehicles["ego"].x
        assert 4.5 < gap < 5.5 and smp.vehicles["ego"].speed == 5
        assert smp.brake == 1.0
        assert not [e for e in tr.events if e.kind == "frontal_collision"]

    def test_oracle_survives_slowing_cut_in(self):
        tr = run(cutin("5.5", 1), OracleACC())
        assert tr.events == []

    def test_blind_ego_hits_slowing_cut_in(self):
        tr = run(cutin("5.5", 1), BLIND)
        assert all(s.brake == 0 for s in tr.samples)
        assert [e.kind for e in tr.events] == ["frontal_collision"]
        assert tr.events[0].pair == ("ego", "car1")


class TestObserve:
    world = W(ego=(0, 3.5, 1, 5), car1=(10, 3.5, 1, 2), car2=(-5, 7, 2, 3))

    def test_oracle_is_ground_truth(self):
        assert ego_observe(self.world, OracleACC(), random.Random(0)) == \
            {"car1": self.world["car1"], "car2": self.world["car2"]}

    def test_dropout_zero_is_ground_truth(self):
        got = ego_observe(self.world, FaultyPerceptionACC(0, 0), random.Random(0))
        assert got == ego_observe(self.world, OracleACC(), random.Random(0))

    def test_dropout_one_sees_nothing(self):
        assert ego_observe(self.world, FaultyPerceptionACC(1, 0), random.Random(0)) == {}

    def test_drop_sequence_depends_only_on_seed(self):
        agent = FaultyPerceptionACC(0.5, 0)

        def seq(seed):
            rng = random.Random(seed)
            return [tuple(sorted(ego_observe(self.world, agent, rng))) for _ in range(200)]

        assert seq(3) == seq(3)
        assert seq(3) != seq(4)
        assert 0 < sum(len(x) for x in seq(3)) < 400

    def test_latency_serves_stale_frames(self):
        old = W(ego=(0, 3.5, 1, 5), car1=(30, 3.5, 1, 2), car2=(-5, 7, 2, 3))
        agent = FaultyPerceptionACC(0, 0.1)
        rng = random.Random(0)
        assert ego_observe(self.world, agent, rng, [old], dt=0.05) == {}
        got = ego_observe(self.world, agent, rng, [old, self.world], dt=0.05)
        assert got["car1"].x == 30


class TestAcc:
    P = ModelParams()

    def test_brakes_inside_stopping_gap(self):
        ego = VehicleSample(0, 3.5, 1, 5)
        # bumper gap 5.0 <= 25 / 4.6
        assert acc_command(ego, W(car1=(9.5, 3.5, 1, 0)), self.P, CFG) == -4.6
        assert acc_command(ego, W(car1=(10, 3.5, 1, 0)), self.P, CFG) == 0.0

    def test_ignores_other_lanes_and_cars_behind(self):
        ego = VehicleSample(0, 3.5, 1, 5)
        assert acc_command(ego, W(car1=(6, 0, 0, 0), car2=(-5, 3.5, 1, 9)), self.P, CFG) == 0.0

    def test_straddling_car_is_in_path(self):
        ego = VehicleSample(0, 3.5, 1, 5)
        assert acc_command(ego, W(car1=(7, 0.5, 0, 0)), self.P, CFG) == -4.6

    def test_accelerates_to_cruise(self):
        assert acc_command(VehicleSample(0, 3.5, 1, 0), {}, self.P, CFG) == 5.6
        assert acc_command(VehicleSample(0, 3.5, 1, 4.9), {}, self.P, CFG) == pytest.approx(2.0)


class TestCollisions:
    def test_same_lane_ahead_is_frontal(self):
        ev = detect_collisions(W(ego=(0, 3.5, 1, 5), car1=(4.4, 3.5, 1, 0), car2=(50, 7, 2, 0)), CFG)
        assert ev == [CollisionEvent(0.0, "frontal_collision", ("ego", "car1"))]

    def test_length_boundary_is_not_contact(self):
        assert detect_collisions(W(ego=(0, 3.5, 1, 5), car1=(4.5, 3.5, 1, 0), car2=(50, 7, 2, 0)),
                                 CFG) == []

    def test_adjacent_lane_is_not_contact(self):
        assert detect_collisions(W(ego=(0, 3.5, 1, 5), car1=(1, 0, 0, 0), car2=(0, 7, 2, 0)),
                                 CFG) == []

    def test_rear_end_into_ego_is_other(self):
        ev = detect_collisions(W(ego=(0, 3.5, 1, 5), car1=(-3, 3.5, 1, 9), car2=(50, 7, 2, 0)), CFG)
        assert [e.kind for e in ev] == ["other_collision"]

    def test_non_ego_pair_is_other(self):
        ev = detect_collisions(W(ego=(0, 3.5, 1, 5), car1=(30, 7, 2, 0), car2=(32, 7, 2, 0)), CFG)
        assert ev == [CollisionEvent(0.0, "other_collision", ("car1", "car2"))]

    def test_one_event_per_contact(self):
        tr = run(cutin("5.5", 1), BLIND)
        assert len(tr.events) == len({e.pair for e in tr.events})


def test_lane_of():
    assert [lane_of(y, CFG, 2) for y in (0, 1.74, 1.75, 1.76, 7, 9)] == [0, 0, 0, 1, 2, 2]


@pytest.fixture(scope="module")
def trace():
    return run(cutin("5.5", 1), FaultyPerceptionACC(0.3, 0.5), SimConfig(rng_seed=7))


class TestFiles:
    def test_deterministic_bytes(self, trace):
        again = run(cutin("5.5", 1), FaultyPerceptionACC(0.3, 0.5), SimConfig(rng_seed=7))
        assert trace_to_csv(again) == trace_to_csv(trace)

    def test_seed_matters_for_faulty_agent(self, trace):
        other = run(cutin("5.5", 1), FaultyPerceptionACC(0.3, 0.5), SimConfig(rng_seed=8))
        assert trace_to_csv(other) != trace_to_csv(trace)

    def test_round_trip(self, trace):
        back = trace_from_csv(trace_to_csv(trace), events_to_json(trace))
        assert back.samples == trace.samples and back.events == trace.events
        assert back.scenario_id == trace.scenario_id

    def test_import_without_sidecar_recomputes_events(self, trace):
        assert trace_from_csv(trace_to_csv(trace)).events == trace.events

    def test_header_checked(self):
        with pytest.raises(ValueError):
            trace_from_csv("a,b\n")


class TestAgentSpec:
    def test_parse(self):
        assert EgoAgentSpec.parse("oracle") == OracleACC()
        assert EgoAgentSpec.parse("faulty:0.3:0.5") == FaultyPerceptionACC(0.3, 0.5)
        assert FaultyPerceptionACC(0.3, 0.5).label() == "faulty:0.3:0.5"

    @pytest.mark.parametrize("text", ["", "faulty", "faulty:2:0", "faulty:0.1:-1", "human"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            EgoAgentSpec.parse(text)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(dt=0)
        with pytest.raises(ValueError):
            SimConfig(vehicle_length=-1)
