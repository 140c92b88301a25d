"""The hypograph LP: shape, exactness against resimulation, exhaustive
oracles on tiny instances, and the structure of known optima."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rampflow.controllers import make_controller
from rampflow.cumulative import tts_bounds
from rampflow.lp import (
    LpError,
    UnsupportedModelError,
    VarMap,
    brute_force_max_next_flows,
    brute_force_min_tts,
    build_lp,
    certify_relaxation,
    export_lp_text,
    solve_lp,
)
from rampflow.model import CellParams, FreewayModel
from rampflow.simulator import (
    DemandProfile,
    SimState,
    compute_flows,
    evaluate_metrics,
    simulate,
    step,
)
from rampflow.scenarios import builtin_example1, builtin_example2

from conftest import (
    random_demand,
    random_model,
    random_state,
    safe_one_step_instance,
)


def one_ramp_cell(dt=0.002):
    return FreewayModel([CellParams(length=1.0, v_free=100.0, rho_crit=50.0,
                                    rho_jam=250.0, ramp_flow_max=1000.0,
                                    queue_max=50.0)], dt=dt)


# ---------------------------------------------------------------------------
# shape

def test_variable_count_is_horizon_times_4n_plus_1():
    m = one_ramp_cell()
    d = DemandProfile(w0=np.array([3000.0]), w_ramp=np.array([[800.0]]))
    inst = build_lp(m, d)
    assert inst.varmap.size == 5            # one step, one cell
    assert inst.a_eq.shape[0] == 3          # inflow + density + queue
    assert inst.a_ub.shape[0] == 3          # two demand pieces + cap

    vm = VarMap(n=3, horizon=7)
    assert vm.size == 7 * 13
    # distinct indices covering the whole range exactly once
    seen = {vm.phi(t, k) for t in range(7) for k in range(4)}
    seen |= {vm.r(t, k) for t in range(7) for k in range(1, 4)}
    seen |= {vm.rho(t, k) for t in range(1, 8) for k in range(1, 4)}
    seen |= {vm.q(t, k) for t in range(1, 8) for k in range(1, 4)}
    assert seen == set(range(vm.size))


def test_zero_demand_has_zero_cost():
    m = one_ramp_cell()
    d = DemandProfile(w0=np.zeros(4), w_ramp=np.zeros((4, 1)))
    sol = solve_lp(build_lp(m, d))
    assert sol.objective == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(sol.rho, 0.0, atol=1e-9)


def test_initial_state_cost_enters_objective():
    m = one_ramp_cell(dt=0.01)
    d = DemandProfile(w0=np.zeros(2), w_ramp=np.zeros((2, 1)))
    init = SimState(rho=np.array([30.0]), q=np.array([4.0]))
    inst = build_lp(m, d, init)
    # contents drain at free flow; hand-rolled three-state sum
    traj = simulate(m, d, controller=None, initial_state=init)
    sol = solve_lp(inst)
    assert inst.objective_constant == pytest.approx(0.01 * 34.0)
    assert sol.objective == pytest.approx(evaluate_metrics(m, traj).tts,
                                          rel=1e-9)


def test_capacity_drop_models_are_rejected():
    from dataclasses import replace
    m = one_ramp_cell()
    bad = FreewayModel([replace(c, capacity_drop=0.1) for c in m.cells],
                       dt=m.dt)
    d = DemandProfile(w0=np.zeros(2), w_ramp=np.zeros((2, 1)))
    with pytest.raises(UnsupportedModelError):
        build_lp(bad, d)


def test_export_renders_cplex_lp_text():
    m = one_ramp_cell()
    d = DemandProfile(w0=np.array([3000.0]), w_ramp=np.array([[800.0]]))
    text = export_lp_text(build_lp(m, d))
    lines = text.splitlines()
    assert lines[0] == "Minimize"
    assert "Subject To" in lines and "Bounds" in lines and lines[-1] == "End"
    assert sum(1 for ln in lines if ln.startswith(" e")) == 3
    assert sum(1 for ln in lines if ln.startswith(" u")) == 3
    assert any("r_0_1" in ln and "<= 1000" in ln for ln in lines)


# ---------------------------------------------------------------------------
# exactness

def test_resimulated_rates_reproduce_the_objective_everywhere():
    rng = np.random.default_rng(21)
    for _ in range(12):
        model = random_model(rng, n_max=3)
        demand = random_demand(rng, model, 18, load=0.8)
        inst = build_lp(model, demand)
        sol = solve_lp(inst)
        cert = certify_relaxation(inst, sol)
        assert cert.exact, cert
        assert cert.max_rate_adjustment <= 1e-6 * max(
            1.0, float(model.ramp_flow_max.max()))


def test_lp_optimum_sits_between_certified_bounds():
    rng = np.random.default_rng(22)
    for _ in range(8):
        model = random_model(rng, n_max=3)
        demand = random_demand(rng, model, 15, load=0.7)
        b = tts_bounds(model, demand)
        sol = solve_lp(build_lp(model, demand))
        slack = 1e-6 * max(1.0, b.tts_be)
        assert b.tts_lb - slack <= sol.objective <= b.tts_be + slack


def test_exhaustive_search_on_saturating_instance_matches_exactly():
    """Heavy overload forces every optimal rate to an interval endpoint,
    which the search grid contains, so both methods agree to roundoff."""
    m = one_ramp_cell()
    d = DemandProfile(w0=np.array([2000.0, 3000.0, 0.0]),
                      w_ramp=np.array([[900.0], [900.0], [0.0]]))
    inst = build_lp(m, d)
    sol = solve_lp(inst)
    bf_tts, bf_rates = brute_force_min_tts(m, d, points=9)
    assert sol.objective == pytest.approx(bf_tts, rel=1e-9)
    assert certify_relaxation(inst, sol).exact
    assert bf_rates.shape == (3, 1)


def test_lp_lower_bounds_every_gridded_policy():
    rng = np.random.default_rng(23)
    for _ in range(6):
        model = random_model(rng, n_max=1)
        demand = random_demand(rng, model, 3, load=0.9)
        sol = solve_lp(build_lp(model, demand))
        bf_tts, _ = brute_force_min_tts(model, demand, points=6)
        assert sol.objective <= bf_tts + 1e-6 * max(1.0, bf_tts)


def test_exhaustive_search_refuses_oversized_instances():
    m = one_ramp_cell()
    d = DemandProfile(w0=np.zeros(40), w_ramp=np.zeros((40, 1)))
    with pytest.raises(ValueError):
        brute_force_min_tts(m, d, points=9)


# ---------------------------------------------------------------------------
# greedy one-step optimality against the gridded oracle

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_greedy_rates_attain_the_pointwise_flow_maximum(seed):
    # safe instances only: a gridded adversary tries max-release endpoints,
    # which on an arbitrarily congested state could overfill a cell and
    # abort the step before the comparison happens.
    rng = np.random.default_rng(seed)
    model, state, w_row = safe_one_step_instance(rng, n_max=3)
    ctrl = make_controller("best_effort", model)
    rates = ctrl.compute_rates(state, w_row)
    nxt, _ = step(model, state, rates, w_row)
    mine = compute_flows(model, nxt, 0.0)
    oracle = brute_force_max_next_flows(model, state, w_row, w0_next=0.0,
                                        points=13)
    cap = float(model.capacity.max())
    assert np.all(mine >= oracle - 1e-9 * cap)


# ---------------------------------------------------------------------------
# known optima on the builtin examples

def test_optimal_metering_beats_greedy_on_the_bottleneck_example():
    sc = builtin_example1()
    inst = build_lp(sc.model, sc.demand, sc.initial)
    sol = solve_lp(inst)
    assert certify_relaxation(inst, sol).exact
    b = tts_bounds(sc.model, sc.demand, sc.initial)
    assert sol.objective < b.tts_be - 0.2          # strictly better
    assert sol.objective > b.tts_lb + 0.5          # rate caps really bind
    # regression pins for the shipped fixture
    assert sol.objective == pytest.approx(13.1601, rel=1e-3)
    assert b.tts_be == pytest.approx(13.5305, rel=1e-3)
    assert b.tts_lb == pytest.approx(12.2315, rel=1e-3)

    # during the post-surge drain the optimum parks the bottleneck at the
    # density that just sustains its discharge cap, not at critical
    be = simulate(sc.model, sc.demand,
                  make_controller("best_effort", sc.model),
                  initial_state=sc.initial)
    target = sc.model.capacity[1] / (sc.model.beta_bar[1]
                                     * sc.model.v_free[1])
    assert target == pytest.approx(5.0)
    np.testing.assert_allclose(sol.rho[60:80, 1], target, atol=1e-3)
    np.testing.assert_allclose(be.rho[60:80, 1], sc.model.rho_crit[1],
                               atol=1e-3)


def test_metering_cannot_help_on_the_single_cell_example():
    sc = builtin_example2()
    inst = build_lp(sc.model, sc.demand, sc.initial)
    sol = solve_lp(inst)
    assert certify_relaxation(inst, sol).exact
    ol = evaluate_metrics(sc.model, simulate(
        sc.model, sc.demand, None, initial_state=sc.initial)).tts
    assert sol.objective == pytest.approx(ol, rel=1e-6)
    b = tts_bounds(sc.model, sc.demand, sc.initial)
    assert b.tts_lb == pytest.approx(sol.objective, rel=1e-6)
    assert b.tts_be > sol.objective + 0.5
    assert sol.objective == pytest.approx(4.0491, rel=1e-3)
