"""Saddle-point texture solver and the transport distances built on it."""

import numpy as np
import pytest

from ottv.grid import ScalarField, VectorField, div_dirichlet
from ottv.w1 import (
    TRACE_COLUMNS,
    DivergenceError,
    PdhgConfig,
    W1State,
    dual_lipschitz_norm,
    solve_v_subproblem,
    w1_distance,
)

from oracles import w1_flow_oracle

TIGHT = dict(eps=1e-12, max_iters=60000)


def dirac_pair(n, k, row=None, h=1.0):
    """+1 and -1 diracs k pixels apart along one row, as two mass fields."""
    row = n // 2 if row is None else row
    j = (n - k) // 2
    mu = np.zeros((n, n))
    nu = np.zeros((n, n))
    mu[row, j] = 1.0
    nu[row, j + k] = 1.0
    return ScalarField(mu, h=h), ScalarField(nu, h=h)


# ---------------------------------------------------------------------------
# configuration

def test_default_certificate_is_exactly_half():
    assert PdhgConfig().step_certificate() == 0.5
    assert PdhgConfig(tau=4.0).step_certificate() == 0.5
    assert PdhgConfig(tau=2.0, h=0.5).step_certificate() == 0.5


def test_derived_steps_follow_tau_and_h():
    cfg = PdhgConfig(tau=2.0, h=0.5)
    assert cfg.mu == 0.25 / 64.0
    assert cfg.nu == 0.125
    assert cfg.eps == 0.25


def test_config_validation():
    with pytest.raises(ValueError):
        PdhgConfig(tau=0.0)
    with pytest.raises(ValueError):
        PdhgConfig(alpha=-1.0)
    with pytest.raises(ValueError):
        PdhgConfig(eps=0.0)
    with pytest.raises(ValueError):
        PdhgConfig(max_iters=0)
    with pytest.raises(ValueError):
        PdhgConfig(mu=1.0, nu=1.0)  # certificate 9 >= 1


# ---------------------------------------------------------------------------
# texture subproblem

def test_zero_data_is_a_fixed_point():
    f1 = ScalarField(np.zeros((8, 8)), h=1.0)
    state, trace = solve_v_subproblem(f1, PdhgConfig())
    assert state.converged
    assert state.iterations == 1
    assert state.residual == 0.0
    assert np.all(state.texture == 0.0)
    assert np.all(state.flux_x == 0.0) and np.all(state.flux_y == 0.0)
    assert np.all(state.potential == 0.0)


def test_trace_schema_and_row_count():
    rng = np.random.default_rng(0)
    f1 = ScalarField(rng.standard_normal((8, 8)), h=1.0)
    cfg = PdhgConfig(eps=1e-6)
    state, trace = solve_v_subproblem(f1, cfg)
    assert trace.columns == TRACE_COLUMNS
    assert len(trace) == state.iterations
    assert trace.last("iter") == state.iterations
    assert trace.last("residual") == state.residual


def test_residual_trace_nonnegative_and_terminal():
    rng = np.random.default_rng(1)
    f1 = ScalarField(rng.standard_normal((12, 12)), h=1.0)
    cfg = PdhgConfig(eps=1e-8)
    state, trace = solve_v_subproblem(f1, cfg)
    res = np.array(trace.column("residual"))
    assert np.all(res >= -1e-12)
    assert state.converged
    assert res[-1] <= cfg.eps


def test_v_update_first_order_condition_is_exact():
    rng = np.random.default_rng(2)
    f1 = ScalarField(rng.standard_normal((10, 10)), h=1.0)
    cfg = PdhgConfig(alpha=3.0, eps=1e-6)
    state, _ = solve_v_subproblem(f1, cfg)
    lhs = state.texture * (cfg.alpha + 1.0 / cfg.nu)
    rhs = state.potential_prev + cfg.alpha * f1.data + state.texture_prev / cfg.nu
    assert np.allclose(lhs, rhs, rtol=0.0, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def test_flux_divergence_sums_to_zero():
    rng = np.random.default_rng(3)
    f1 = ScalarField(rng.standard_normal((9, 9)), h=1.0)
    state, _ = solve_v_subproblem(f1, PdhgConfig(eps=1e-6))
    div = div_dirichlet(VectorField(state.flux_x, state.flux_y, h=1.0))
    assert abs(div.data.sum()) < 1e-10


def test_warm_restart_stops_within_two_iterations():
    rng = np.random.default_rng(4)
    f1 = ScalarField(rng.standard_normal((10, 10)), h=1.0)
    cfg = PdhgConfig(eps=1e-8)
    state, _ = solve_v_subproblem(f1, cfg)
    again, _ = solve_v_subproblem(f1, cfg, warm=state)
    assert again.converged
    assert again.iterations <= 2


def test_mismatched_h_rejected():
    f1 = ScalarField(np.zeros((8, 8)), h=0.5)
    with pytest.raises(ValueError):
        solve_v_subproblem(f1, PdhgConfig(h=1.0))


def test_corrupted_warm_state_raises_divergence_error():
    f1 = ScalarField(np.zeros((6, 6)), h=1.0)
    cfg = PdhgConfig()
    state, _ = solve_v_subproblem(f1, cfg)
    bad = np.full((6, 6), np.nan)
    warm = W1State(
        flux_x=bad, flux_y=bad, texture=bad, potential=bad,
        flux_x_prev=bad, flux_y_prev=bad, texture_prev=bad,
        potential_prev=bad, h=1.0, iterations=1, residual=0.0,
        constraint_ratio=0.0, converged=False,
    )
    with pytest.raises(DivergenceError):
        solve_v_subproblem(f1, cfg, warm=warm)


# ---------------------------------------------------------------------------
# transport distance

def test_identical_fields_have_zero_distance():
    rng = np.random.default_rng(5)
    mass = ScalarField(rng.uniform(0.0, 1.0, (8, 8)), h=1.0)
    assert w1_distance(mass, mass) == 0.0


def test_distance_preconditions():
    good = ScalarField(np.full((4, 4), 0.5), h=1.0)
    neg = ScalarField(np.full((4, 4), -0.5), h=1.0)
    heavier = ScalarField(np.full((4, 4), 0.6), h=1.0)
    other_grid = ScalarField(np.full((6, 6), 0.5), h=1.0)
    with pytest.raises(ValueError):
        w1_distance(good, neg)
    with pytest.raises(ValueError):
        w1_distance(good, heavier)
    with pytest.raises(ValueError):
        w1_distance(good, other_grid)


def test_dirac_pair_distance_is_path_length():
    mu, nu = dirac_pair(16, 3)
    value = w1_distance(mu, nu, PdhgConfig(tau=4.0, **TIGHT))
    assert abs(value - 3.0) <= 0.01 * 3.0


def test_dirac_distance_scales_with_h():
    mu, nu = dirac_pair(12, 4, h=0.5)
    value = w1_distance(mu, nu, PdhgConfig(tau=4.0, h=0.5, **TIGHT))
    assert abs(value - 2.0) <= 0.01 * 2.0


def test_dirac_distance_doubles_with_separation():
    mu1, nu1 = dirac_pair(16, 2)
    mu2, nu2 = dirac_pair(16, 4)
    cfg = PdhgConfig(tau=4.0, **TIGHT)
    d1 = w1_distance(mu1, nu1, cfg)
    d2 = w1_distance(mu2, nu2, cfg)
    assert abs(d2 / d1 - 2.0) <= 0.04


def test_distance_matches_flow_oracle_on_random_masses():
    pytest.importorskip("cvxpy")
    rng = np.random.default_rng(6)
    a = rng.uniform(0.0, 1.0, (6, 6))
    b = rng.uniform(0.0, 1.0, (6, 6))
    a /= a.sum()
    b /= b.sum()
    value = w1_distance(
        ScalarField(a, h=1.0), ScalarField(b, h=1.0), PdhgConfig(tau=4.0, **TIGHT)
    )
    reference = w1_flow_oracle(a - b)
    assert abs(value - reference) <= 0.005 * max(reference, 1e-12)


def test_detail_returns_state_and_trace():
    mu, nu = dirac_pair(8, 2)
    value, state, trace = w1_distance(
        mu, nu, PdhgConfig(tau=4.0, **TIGHT), detail=True
    )
    assert value == state.flux_norm
    assert state.converged
    assert len(trace) == state.iterations
    # the texture channel stays pinned to mu - nu in distance mode
    assert np.array_equal(state.texture, mu.data - nu.data)


# ---------------------------------------------------------------------------
# dual Lipschitz norm

def test_dual_norm_of_zero_is_zero():
    v = ScalarField(np.zeros((8, 8)), h=1.0)
    assert dual_lipschitz_norm(v) == 0.0


def test_dual_norm_rejects_nonzero_mean():
    v = ScalarField(np.full((8, 8), 1e-3), h=1.0)
    with pytest.raises(ValueError):
        dual_lipschitz_norm(v)


def test_dual_norm_of_dipole_and_homogeneity():
    mu, nu = dirac_pair(16, 3)
    v = ScalarField(mu.data - nu.data, h=1.0)
    cfg = PdhgConfig(tau=4.0, **TIGHT)
    base = dual_lipschitz_norm(v, cfg)
    assert abs(base - 3.0) <= 0.01 * 3.0
    for c in (-2.0, 0.5):
        scaled = dual_lipschitz_norm(v.with_data(c * v.data), cfg)
        assert abs(scaled - abs(c) * base) <= 0.01 * abs(c) * base


def test_dual_norm_matches_flow_oracle():
    pytest.importorskip("cvxpy")
    rng = np.random.default_rng(7)
    data = rng.standard_normal((5, 5))
    data -= data.mean()
    value = dual_lipschitz_norm(
        ScalarField(data, h=1.0), PdhgConfig(tau=4.0, **TIGHT)
    )
    reference = w1_flow_oracle(data)
    assert abs(value - reference) <= 0.005 * reference
