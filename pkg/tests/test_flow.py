import numpy as np
import pytest

from dmorph import ControlField, FlowStall, StepBudgetExceeded, TimeGrid, TransitionSpec, transition_probability
from dmorph.flow import FlowConfig, climb, normalize_to_start
from dmorph.metrics import compute_r

from conftest import rabi_system, random_field


@pytest.fixture(scope="module")
def start(system, trans, grid):
    return normalize_to_start(system, trans, random_field(21, grid))


@pytest.fixture(scope="module")
def traj(system, trans, start):
    return climb(system, trans, start)


def test_normalize_lands_in_window(system, trans, start):
    assert abs(transition_probability(system, start, trans) - 0.01) <= 1e-6


def test_normalize_from_above(system, trans, grid):
    # a field that already gives a large yield is brought down to the start window
    cfg = FlowConfig(p_start=0.01, p_end=0.99)
    high = climb(system, trans, normalize_to_start(system, trans, random_field(5, grid)),
                 FlowConfig(p_end=0.5)).end
    assert transition_probability(system, high, trans) > 0.4
    low = normalize_to_start(system, trans, high, cfg)
    assert abs(transition_probability(system, low, trans) - 0.01) <= 1e-6


def test_climb_is_monotone_and_hits_target(traj):
    p = traj.probabilities
    assert np.all(np.diff(p) >= -1e-12)
    assert abs(p[-1] - 0.99) <= 1e-6
    assert abs(p[0] - 0.01) <= 1e-6
    assert np.all(np.diff(traj.s) > 0)
    assert traj.n_snapshots == traj.steps + 1
    assert traj.converged and traj.kind == "gradient"


def test_stride_records_subset(system, trans, start, traj):
    coarse = climb(system, trans, start, FlowConfig(stride=5))
    assert coarse.steps == traj.steps
    idx = list(range(0, traj.steps, 5)) + [traj.steps]
    assert np.array_equal(coarse.s, traj.s[idx])
    assert np.array_equal(coarse.fields, traj.fields[idx])
    assert np.array_equal(coarse.fields[-1], traj.fields[-1])


def test_step_size_cap(traj):
    assert np.max(np.diff(traj.probabilities)) <= 5e-3 + 1e-15


def test_tighter_cap_refines_r(system, trans, start, traj):
    fine = climb(system, trans, start, FlowConfig(max_dp=2.5e-3))
    assert abs(compute_r(fine).r - compute_r(traj).r) < 1e-3


def test_climb_from_top_is_trivial():
    g = TimeGrid(1.0, 100)
    top = ControlField(g, np.full(g.size, np.pi / 2))
    rec = climb(rabi_system(), TransitionSpec(1, 2), top)
    assert rec.n_snapshots == 1 and rec.s_max == 0.0


def test_zero_field_stalls(system, trans, grid):
    with pytest.raises(FlowStall) as info:
        normalize_to_start(system, trans, ControlField.zeros(grid))
    assert info.value.probability == 0.0


def test_step_budget(system, trans, start):
    with pytest.raises(StepBudgetExceeded):
        climb(system, trans, start, FlowConfig(max_steps=3))


def test_rabi_climb_is_straight():
    g = TimeGrid(1.0, 200)
    trans = TransitionSpec(1, 2)
    a = np.arcsin(np.sqrt(0.01))
    rec = climb(rabi_system(), trans, ControlField(g, np.full(g.size, a)))
    # the gradient is uniform in t, so the field stays constant and moves along a line
    assert np.ptp(rec.fields[-1]) <= 1e-12
    assert rec.fields[-1][0] == pytest.approx(np.arcsin(np.sqrt(0.99)), abs=1e-6)
    assert compute_r(rec).r - 1 <= 1e-9


@pytest.mark.parametrize("kwargs", [
    dict(p_start=0.5, p_end=0.4),
    dict(p_end=1.0),
    dict(endpoint_tol=0.0),
    dict(max_dp=-1.0),
    dict(stride=0),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FlowConfig(**kwargs)
