import dataclasses
from fractions import Fraction as F

import pytest

from gridcover.catalog import GridConfig, make_spec, spec_to_objective
from gridcover.model import ABSTRACT_BOUNDS, CONCRETE_BOUNDS, ControlInput, ModelParams, WorldState
from gridcover.search import (AbstractTrace, BudgetExceeded, NotFound, SearchConfig,
                              exhaustive_reach, find_witness, params_hash, trace_from_jsonl,
                              trace_to_jsonl, validate_trace)

P = ModelParams()
S22_64 = make_spec(2, 2, 6, 4)
SMALL = SearchConfig(max_steps=6, accel_menu=("-4.6", "0", "5.6"), node_budget=10**6)


@pytest.fixture(scope="module")
def witness(s22_64_witness):
    return s22_64_witness


def test_s22_64_witness(witness):
    assert witness
    assert witness.phase2_index < 30
    assert validate_trace(witness, S22_64, P) == (True, [])
    s0 = witness.states[0]
    assert (s0.ego.lane, s0.car1.lane, s0.car2.lane) == (1, 0, 2)
    assert all(v.pos == 0 and v.speed == 0 for v in (s0.ego, s0.car1, s0.car2))


def test_phase_indices_are_earliest_under_abstract_bounds(witness):
    obs = witness.observations(ABSTRACT_BOUNDS)
    assert spec_to_objective(S22_64).earliest(obs) == (witness.phase1_index, witness.phase2_index)
    assert witness.phase2_index == len(witness)


def test_self_compliance_and_bounds_monotonicity(witness):
    obj = spec_to_objective(S22_64)
    assert obj.satisfied_by(witness.observations(ABSTRACT_BOUNDS))
    assert obj.satisfied_by(witness.observations(CONCRETE_BOUNDS))


def test_budget_zero():
    out = find_witness(S22_64, P, SearchConfig(node_budget=0))
    assert isinstance(out, NotFound) and out.reason == "budget" and not out


def test_unreachable_at_short_depth():
    out = find_witness(make_spec(7, 7, 2, 2), P, dataclasses.replace(SMALL, max_steps=2))
    assert not out and out.reason in ("depth", "budget")


def test_deterministic(witness):
    again = find_witness(S22_64)
    assert trace_to_jsonl(again, P, S22_64) == trace_to_jsonl(witness, P, S22_64)


def test_jsonl_round_trip(witness):
    text = trace_to_jsonl(witness, P, S22_64)
    back, header = trace_from_jsonl(text)
    assert back == witness
    assert header["params_hash"] == params_hash(P) and header["spec_id"] == "s22_64"
    assert '"5/2"' in text.splitlines()[2]
    with pytest.raises(ValueError):
        trace_from_jsonl(text.split("\n", 1)[1])


class TestValidate:
    def test_speed_perturbation(self, witness):
        k = 3
        w = witness.states[k]
        bad = dataclasses.replace(w, car1=dataclasses.replace(w.car1, speed=w.car1.speed + F(1, 1000)))
        tr = AbstractTrace(witness.states[:k] + [bad] + witness.states[k + 1:], witness.inputs,
                           witness.phase1_index, witness.phase2_index)
        ok, diag = validate_trace(tr, S22_64, P)
        assert not ok and diag[0].startswith("speed_update")

    def test_lane_change_spacing(self):
        # car1 changes to lane 1 and back three steps later
        from gridcover.model import VehicleState, step_vehicle, ego_step
        ins = [ControlInput(2, 0), ControlInput(0, 1), ControlInput(0, 0), ControlInput(0, 0),
               ControlInput(0, -1)]
        w = WorldState(VehicleState(-200, 1, 0, 6), VehicleState(0, 0, 0, 6), VehicleState(0, 2, 0, 6))
        states = [w]
        for inp in ins:
            # the model itself refuses the early change, so pretend the counter is full
            c1 = step_vehicle(dataclasses.replace(w.car1, steps_since_lane_change=6), inp, P) \
                if inp.lane_delta else step_vehicle(w.car1, inp, P)
            w = WorldState(ego_step(w, P), c1, step_vehicle(w.car2, ControlInput(0, 0), P),
                           w.step_index + 1)
            states.append(w)
        tr = AbstractTrace(states, [(i, ControlInput(0, 0)) for i in ins], -1, -1)
        ok, diag = validate_trace(tr, None, P, check_initial=False)
        assert not ok and diag[0].startswith("lane_change_spacing")

    def test_shape(self, witness):
        tr = AbstractTrace(witness.states[:-1], witness.inputs, 0, 1)
        assert validate_trace(tr, None, P)[1][0].startswith("shape")

    def test_wrong_phase_config(self, witness):
        ok, diag = validate_trace(witness, make_spec(1, 3, 6, 4), P)
        assert not ok and diag[0].startswith("phase1")


@pytest.fixture(scope="module")
def reach4():
    return exhaustive_reach(P, SMALL, 4)


class TestExhaustive:
    def test_depth_one_only_initial_configuration(self):
        # at step 0 car1 is in C4 and car2 in C5, and both can still be there at step 1
        got = exhaustive_reach(P, SMALL, 1)
        assert got and (GridConfig.of(4, 5), GridConfig.of(4, 5)) in got
        assert {a for a, _ in got} == {GridConfig.of(4, 5)}

    def test_monotone(self, reach4):
        assert exhaustive_reach(P, SMALL, 3) <= reach4

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            exhaustive_reach(P, dataclasses.replace(SMALL, node_budget=5), 4)

    def test_limits(self):
        with pytest.raises(ValueError):
            exhaustive_reach(P, SearchConfig(), 3)

    @pytest.mark.parametrize("cells", [(1, 1, 4, 5), (4, 5, 1, 1), (4, 5, 2, 5), (4, 5, 7, 7),
                                       (4, 5, 1, 3), (4, 5, 2, 2), (2, 2, 6, 4)])
    def test_agrees_with_find_witness(self, reach4, cells):
        spec = make_spec(*cells)
        out = find_witness(spec, P, dataclasses.replace(SMALL, max_steps=4))
        assert bool(out) == (spec.key in reach4)
        if out:
            assert validate_trace(out, spec, P)[0]


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(max_steps=1)
    with pytest.raises(ValueError):
        SearchConfig(accel_menu=())
    with pytest.raises(ValueError):
        find_witness(S22_64, P, SearchConfig(accel_menu=("7",)))
