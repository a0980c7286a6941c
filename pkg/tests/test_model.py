from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from gridcover.model import (ABSTRACT_BOUNDS, CONCRETE_BOUNDS, ControlInput, GridBounds, GridCell,
                             ModelParams, PreconditionViolated, VehicleState, WorldState,
                             cells_for, check_invariants, collision_next, ego_step, grid_cells,
                             initial_world, step_vehicle)

from oracles import random_step_cases

P = ModelParams()
C = GridCell


def V(pos, lane=1, speed=0, since=6):
    return VehicleState(F(pos), lane, F(speed), since)


def world(ego, car1=None, car2=None):
    return WorldState(ego, car1 or V(-1000, 0), car2 or V(-1000, 2))


class TestParams:
    def test_defaults(self):
        assert (P.time_step, P.ego_cruise_speed, P.max_acceleration, P.max_braking) == (1, 5, F("5.6"), F("-4.6"))
        assert (P.safe_distance, P.max_lane, P.lane_change_spacing_steps) == (7, 2, 6)
        assert P.lane_change_pos_factor == F("0.95")

    @pytest.mark.parametrize("kw", [
        {"time_step": 0}, {"max_braking": 1}, {"max_acceleration": 0}, {"safe_distance": 0},
        {"non_ego_speed_min": 5, "non_ego_speed_max": 4}, {"lane_change_pos_factor": 0},
        {"lane_change_pos_factor": "1.1"},
    ])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ValueError):
            ModelParams(**kw)

    def test_dict_round_trip(self):
        assert ModelParams.from_dict(P.as_dict()) == P
        with pytest.raises(ValueError, match="unknown"):
            ModelParams.from_dict({"warp": 9})


class TestStepVehicle:
    def test_straight(self):
        s = step_vehicle(V(0, 1, 3), ControlInput(2, 0), P)
        assert (s.pos, s.speed, s.lane) == (4, 5, 1)

    def test_lane_change_scales_displacement(self):
        s = step_vehicle(V(0, 1, 2), ControlInput(0, 1), P)
        assert (s.pos, s.speed, s.lane, s.steps_since_lane_change) == (F("1.9"), 2, 2, 0)

    def test_speed_clamped_at_zero(self):
        s = step_vehicle(V(0, 1, 1), ControlInput(F("-4.6"), 0), P)
        assert (s.speed, s.pos) == (0, F(1, 2))

    @pytest.mark.parametrize("state,inp,which", [
        (V(0, 0, 0), ControlInput(0, -1), "lane_range"),
        (V(0, 1, 7), ControlInput(0, 1), "lane_change_speed"),
        (V(0, 1, 5), ControlInput(2, 1), "lane_change_next_speed"),
        (V(0, 1, 2), ControlInput(3, 1), "lane_change_acceleration"),
        (V(0, 1, 5), ControlInput(-3, 1), "lane_change_braking"),
        (V(0, 1, 2, since=5), ControlInput(0, 1), "lane_change_spacing"),
        (V(0, 1, 10), ControlInput(3, 0), "speed_bounds"),
    ])
    def test_preconditions_named(self, state, inp, which):
        with pytest.raises(PreconditionViolated) as e:
            step_vehicle(state, inp, P)
        assert e.value.constraint == which

    def test_counter_saturates(self):
        s = step_vehicle(V(0, 1, 2, since=6), ControlInput(0, 0), P)
        assert s.steps_since_lane_change == 6

    @given(st.fractions(0, 12), st.sampled_from([F("-4.6"), F(-2), F(0), F(2), F("5.6")]))
    def test_speed_nonnegative_and_monotone_position(self, v, a):
        try:
            s = step_vehicle(V(10, 1, v), ControlInput(a, 0), P)
        except PreconditionViolated:
            return
        assert s.speed >= 0 and s.pos >= 10


class TestEgo:
    def test_reaches_cruise_in_one_step(self):
        assert ego_step(world(V(0, 1, 0)), P).speed == 5

    def test_brakes_for_close_car(self):
        w = world(V(0, 1, 5), V(5, 1, 0))
        assert collision_next(w.ego, w.car1, P)
        assert ego_step(w, P).speed == F("0.4")

    def test_no_brake_for_distant_car(self):
        w = world(V(0, 1, 5), V(24, 1, 0))
        assert not collision_next(w.ego, w.car1, P)
        assert ego_step(w, P).speed == 5

    def test_collision_next_guards(self):
        assert not collision_next(V(0, 1, 5), V(0, 0, 0), P)
        assert not collision_next(V(0, 1, 0), V(1, 1, 0), P)
        assert not collision_next(V(10, 1, 5), V(5, 1, 0), P)

    def test_coasts_above_cruise(self):
        assert ego_step(world(V(0, 1, 6)), P).speed == 6

    @given(st.fractions(0, 6), st.fractions(-30, 30), st.integers(0, 2))
    def test_lane_fixed_and_cruise_identity(self, v, gap, lane):
        w = world(V(0, 1, v), V(gap, lane, 3))
        e = ego_step(w, P)
        assert e.lane == 1 and e.speed >= 0
        if v == 5 and not collision_next(w.ego, w.car1, P):
            assert e.speed == 5


class TestInvariants:
    def test_initial_world_is_safe(self):
        assert check_invariants(initial_world(P), P) == []

    def test_same_lane_too_close(self):
        w = WorldState(V(0, 1), V(0, 0), V(5, 0))
        assert check_invariants(w, P) == [("car1", "car2")]

    def test_boundary_is_a_violation(self):
        w = WorldState(V(0, 1), V(7, 1), V(0, 2))
        assert check_invariants(w, P) == [("ego", "car1")]
        w = WorldState(V(0, 1), V(F("7.01"), 1), V(0, 2))
        assert check_invariants(w, P) == []

    @given(st.fractions(-20, 20), st.integers(0, 2), st.integers(0, 2))
    def test_symmetric(self, d, l1, l2):
        a = WorldState(V(0, 1), V(d, l1), V(0, l2))
        b = WorldState(V(0, 1), V(0, l2), V(d, l1))
        assert len(check_invariants(a, P)) == len(check_invariants(b, P))


class TestGrid:
    def test_overlap_left_front(self):
        assert grid_cells(V(0, 1), V(10, 0), CONCRETE_BOUNDS) == {C.C1, C.C4}

    def test_same_lane_far(self):
        assert grid_cells(V(0, 1), V(30, 1), CONCRETE_BOUNDS) == {C.OUTSIDE}

    def test_same_lane_too_near(self):
        assert grid_cells(V(0, 1), V(3, 1), CONCRETE_BOUNDS) == {C.OUTSIDE}

    def test_right_behind(self):
        assert grid_cells(V(0, 1), V(-10, 2), CONCRETE_BOUNDS) == {C.C8, C.C5}
        assert grid_cells(V(0, 1), V(-11, 2), CONCRETE_BOUNDS) == {C.C8}

    @pytest.mark.parametrize("delta,cells", [
        (4, {C.C2}), (24, {C.C2}), (F("3.99"), {C.OUTSIDE}), (F("24.01"), {C.OUTSIDE}),
        (-4, {C.C7}), (-24, {C.C7}),
    ])
    def test_inclusive_bounds_same_lane(self, delta, cells):
        assert cells_for(0, delta, CONCRETE_BOUNDS) == cells

    @pytest.mark.parametrize("delta,cells", [
        (10, {C.C1, C.C4}), (-10, {C.C4, C.C6}), (F("10.01"), {C.C1}), (0, {C.C4}),
    ])
    def test_inclusive_bounds_left(self, delta, cells):
        assert cells_for(-1, delta, CONCRETE_BOUNDS) == cells

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            GridBounds(5, 5, 1)
        with pytest.raises(ValueError):
            GridBounds(1, 5, 0)

    @given(st.sampled_from([-1, 0, 1]), st.fractions(-40, 40))
    def test_abstract_cells_imply_concrete(self, rel, delta):
        a = cells_for(rel, delta, ABSTRACT_BOUNDS) - {C.OUTSIDE}
        assert a <= cells_for(rel, delta, CONCRETE_BOUNDS)

    def test_float_delta_accepted(self):
        assert cells_for(0, 10.5, CONCRETE_BOUNDS) == {C.C2}


def test_step_formulas_match_direct_evaluation_sample():
    bad = [(k, g, w) for k, g, w in random_step_cases(2000, seed=7) if g != w]
    assert bad == []
