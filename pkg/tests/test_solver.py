import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from odeepc.behavioral import BehavioralModel, ConstraintBox, advance_measurements
from odeepc.errors import DimensionError, DivergenceError
from odeepc.hankel import build_hankel
from odeepc.solver import (
    Boxes,
    SaddleParams,
    SolverState,
    TrackingCost,
    contraction_factor,
    cost_gradient,
    data_norm,
    default_step_size,
    estimate_saddle_constants,
    lagrangian_value,
    online_step,
    project_box,
    saddle_norm,
    saddle_operator,
    shift_state,
    static_step,
    step_size_limit,
)
from oracles import DenseController, kkt_saddle_point, power_iteration_norm


def make_model(m=1, p=1, t_ini=2, horizon=3, kappa=8, seed=0, kernel="fft"):
    rng = np.random.default_rng(seed)
    T = kappa + t_ini + horizon - 1
    return BehavioralModel.from_data(rng.uniform(-1, 1, (T, m)), rng.standard_normal((T, p)), t_ini, horizon,
                                     require_pe=False, kernel=kernel)


def random_state(model, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return SolverState(scale * rng.standard_normal(model.m * model.horizon),
                       scale * rng.standard_normal(model.p * model.horizon),
                       scale * rng.standard_normal(model.kappa), scale * rng.standard_normal(model.n_dual))


def oracle_for(model, params, cost, u_bound=np.inf, y_bound=np.inf):
    U, Y = model._dense
    return DenseController(U, Y, model.u_ini, model.y_ini, model.m, model.p, model.t_ini, model.horizon,
                           params.alpha, params.eps_g, params.eps_nu, cost.reference,
                           cost.q_weight, cost.r_weight, u_bound, y_bound)


# cost and projection

def test_gradient_examples():
    cost = TrackingCost(np.array([1.0]))
    gu, gy = cost_gradient(cost, np.array([0.7]), np.array([3.0]))
    np.testing.assert_allclose(gy, [4.0])
    np.testing.assert_allclose(gu, [0.0])
    ref = np.array([0.1, 0.2])
    gu, gy = cost_gradient(TrackingCost(ref), np.zeros(2), ref.copy())
    assert not gu.any() and not gy.any()


@given(seed=st.integers(0, 10**6), q=st.floats(0, 5), r=st.floats(0, 5))
def test_gradient_matches_central_differences(seed, q, r):
    rng = np.random.default_rng(seed)
    cost = TrackingCost(rng.standard_normal(4), q, r)
    u, y = rng.standard_normal(3), rng.standard_normal(4)
    gu, gy = cost_gradient(cost, u, y)
    h = 1e-5
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (cost.value(u + e, y) - cost.value(u - e, y)) / (2 * h)
        assert abs(fd - gu[k]) <= 1e-6 * max(1.0, abs(gu[k]))
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (cost.value(u, y + e) - cost.value(u, y - e)) / (2 * h)
        assert abs(fd - gy[k]) <= 1e-6 * max(1.0, abs(gy[k]))


def test_project_box_examples():
    box = ConstraintBox.symmetric(2, 1.0)
    np.testing.assert_array_equal(project_box([2.0, -3.0], box), [1.0, -1.0])
    np.testing.assert_array_equal(project_box([0.2, -0.3], box), [0.2, -0.3])


@given(seed=st.integers(0, 10**6))
def test_project_box_is_entrywise_clamp(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-2, 0, 6)
    hi = lo + rng.uniform(0, 2, 6)
    v = rng.uniform(-4, 4, 6)
    expect = [min(max(x, a), b) for x, a, b in zip(v, lo, hi)]
    np.testing.assert_array_equal(project_box(v, ConstraintBox(lo, hi)), expect)


def test_tracking_cost_validation():
    with pytest.raises(ValueError):
        TrackingCost(np.zeros(2), q_weight=-1.0)
    with pytest.raises(DimensionError):
        TrackingCost(np.zeros(2)).gradient(np.zeros(1), np.zeros(3))


def test_params_validation():
    with pytest.raises(ValueError):
        SaddleParams(-0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        SaddleParams(0.1, 0.0, 1.0)
    SaddleParams(0.0, 0.1, 0.1)


# Lagrangian

def test_lagrangian_with_zero_multipliers_is_the_cost():
    model = make_model()
    params = SaddleParams(0.1, 0.3, 0.4)
    zero_ref = TrackingCost(np.zeros(3))
    s = random_state(model, 1)
    isolated = SolverState(s.u, s.y, np.zeros(model.kappa), np.zeros(model.n_dual))
    assert lagrangian_value(model, isolated, zero_ref, params) == pytest.approx(zero_ref.value(s.u, s.y))


def test_lagrangian_zero_model_state():
    model = make_model()
    model = BehavioralModel(model.u_hankel, model.y_hankel, 2, 3, np.zeros(2), np.zeros(2))
    assert lagrangian_value(model, SolverState.zeros(model), TrackingCost(np.zeros(3)),
                            SaddleParams(0.1, 0.1, 0.1)) == 0.0


def test_lagrangian_matches_dense_terms():
    model = make_model(2, 1, 2, 3, 9, seed=3)
    cost = TrackingCost(np.linspace(0, 1, 3), 2.0, 0.5)
    params = SaddleParams(0.1, 0.3, 0.7)
    s = random_state(model, 5)
    H = model.to_dense()
    h = np.concatenate([model.u_ini, s.u, model.y_ini, s.y])
    expect = (np.sum(2.0 * (s.y - cost.reference) ** 2) + np.sum(0.5 * s.u ** 2)
              + 0.15 * s.g @ s.g + s.nu @ (H @ s.g - h) - 0.35 * s.nu @ s.nu)
    assert lagrangian_value(model, s, cost, params) == pytest.approx(expect, rel=1e-12)


# static step

def test_hand_unrolled_single_step():
    # T_ini = N = 1, m = p = 1, kappa = 2: data u = (a0, a1, a2), y = (b0, b1, b2)
    u_data, y_data = np.array([0.5, -1.0, 2.0]), np.array([1.5, 0.25, -0.5])
    model = BehavioralModel(build_hankel(u_data, 2), build_hankel(y_data, 2), 1, 1, [0.3], [-0.2], "dense")
    cost = TrackingCost(np.array([0.4]), 1.0, 0.0)
    a, eg, en = 0.1, 0.2, 0.3
    s = SolverState(np.array([0.1]), np.array([0.2]), np.array([1.0, -1.0]), np.array([0.5, -0.5, 0.25, 1.0]))
    new = static_step(model, s, cost, SaddleParams(a, eg, en))
    # rows of H: u_p = (0.5, -1), u_f = (-1, 2), y_p = (1.5, 0.25), y_f = (0.25, -0.5)
    Hg = [0.5 - (-1.0), -1.0 - 2.0, 1.5 - 0.25, 0.25 - (-0.5)]
    h = [0.3, 0.1, -0.2, 0.2]
    nu = [0.5, -0.5, 0.25, 1.0]
    u_exp = 0.1 - a * (0.0 - nu[1])
    y_exp = 0.2 - a * (2 * (0.2 - 0.4) - nu[3])
    HTnu = [0.5 * nu[0] + -1.0 * nu[1] + 1.5 * nu[2] + 0.25 * nu[3],
            -1.0 * nu[0] + 2.0 * nu[1] + 0.25 * nu[2] + -0.5 * nu[3]]
    g_exp = [1.0 - a * (HTnu[0] + eg * 1.0), -1.0 - a * (HTnu[1] + eg * -1.0)]
    nu_exp = [nu[k] + a * (Hg[k] - h[k] - en * nu[k]) for k in range(4)]
    np.testing.assert_allclose(new.u, [u_exp], atol=1e-15)
    np.testing.assert_allclose(new.y, [y_exp], atol=1e-15)
    np.testing.assert_allclose(new.g, g_exp, atol=1e-15)
    np.testing.assert_allclose(new.nu, nu_exp, atol=1e-15)


def test_zero_step_size_freezes_iterate():
    model = make_model()
    s = random_state(model, 2)
    new = static_step(model, s, TrackingCost(np.ones(3)), SaddleParams(0.0, 0.1, 0.1))
    for a, b in zip(new.as_vector(), s.as_vector()):
        assert a == b


@pytest.mark.parametrize("seed", range(3))
def test_kkt_saddle_point_is_fixed_point(seed):
    model = make_model(1, 1, 2, 3, 10, seed=seed)
    cost = TrackingCost(np.random.default_rng(seed).uniform(0, 0.1, 3), 1.0, 0.2)
    params = SaddleParams(0.05, 0.1, 0.2)
    U, Y = model._dense
    star = kkt_saddle_point(U, Y, model.u_ini, model.y_ini, 2, 3, 1, 1, 0.1, 0.2, cost.reference, 1.0, 0.2)
    z = SolverState(*star)
    new = static_step(model, z, cost, params)
    assert np.max(np.abs(new.as_vector() - z.as_vector())) <= 1e-10


@given(seed=st.integers(0, 10**6), bound=st.floats(0.05, 2.0))
def test_static_step_matches_dense_oracle_and_stays_feasible(seed, bound):
    model = make_model(2, 2, 2, 3, 12, seed=seed % 1000)
    cost = TrackingCost(np.random.default_rng(seed).uniform(0, 0.1, 6), 1.5, 0.1)
    params = SaddleParams(0.03, 0.1, 0.2)
    boxes = Boxes(ConstraintBox.symmetric(6, bound), ConstraintBox.symmetric(6, bound))
    s = random_state(model, seed, scale=2.0)
    oracle = oracle_for(model, params, cost, bound, bound)
    new = static_step(model, s, cost, params, boxes)
    expect = oracle.step(s.u, s.y, s.g, s.nu)
    for got, exp in zip((new.u, new.y, new.g, new.nu), expect):
        np.testing.assert_allclose(got, exp, rtol=1e-12, atol=1e-12)
    assert boxes.u.contains(new.u) and boxes.y.contains(new.y)


def test_fft_and_dense_kernels_agree_for_100_steps():
    fast = make_model(2, 2, 3, 4, 15, seed=9)
    dense = BehavioralModel(fast.u_hankel, fast.y_hankel, 3, 4, fast.u_ini, fast.y_ini, "dense")
    cost = TrackingCost(np.full(8, 0.05))
    params = SaddleParams(0.02, 0.1, 0.1)
    a = b = random_state(fast, 0)
    for _ in range(100):
        a = static_step(fast, a, cost, params)
        b = static_step(dense, b, cost, params)
    np.testing.assert_allclose(a.as_vector(), b.as_vector(), rtol=0, atol=1e-9)


def test_divergence_carries_iterate_dump():
    model = make_model()
    s = random_state(model, 0)
    params = SaddleParams(1e5, 0.1, 0.1)
    with pytest.raises(DivergenceError) as info:
        for _ in range(50):
            s = static_step(model, s, TrackingCost(np.zeros(3)), params)
    assert set(info.value.iterate) == {"u", "y", "g", "nu"}
    assert np.all(np.isfinite(info.value.state.as_vector()))


def test_state_dimension_checks():
    model = make_model()
    with pytest.raises(DimensionError):
        static_step(model, SolverState(np.zeros(2), np.zeros(3), np.zeros(8), np.zeros(10)),
                    TrackingCost(np.zeros(3)), SaddleParams(0.1, 0.1, 0.1))
    with pytest.raises(DimensionError):
        SolverState.from_vector(model, np.zeros(5))
    z = random_state(model, 1)
    np.testing.assert_array_equal(SolverState.from_vector(model, z.as_vector()).nu, z.nu)


# online step

def test_shift_drops_first_block():
    model = make_model(2, 1, 2, 3, 10)
    s = random_state(model, 0)
    sh = shift_state(model, s)
    np.testing.assert_array_equal(sh.u, np.concatenate([s.u[2:], [0.0, 0.0]]))
    np.testing.assert_array_equal(sh.y, np.concatenate([s.y[1:], [0.0]]))
    np.testing.assert_array_equal(sh.g, s.g)
    k = 2 * model.t_tot
    np.testing.assert_array_equal(sh.nu[:k], np.concatenate([s.nu[2:k], [0.0, 0.0]]))
    np.testing.assert_array_equal(sh.nu[k:], np.concatenate([s.nu[k + 1:], [0.0]]))


@given(seed=st.integers(0, 10**6))
def test_online_step_matches_dense_oracle(seed):
    model = make_model(2, 1, 2, 3, 10, seed=seed % 500)
    rng = np.random.default_rng(seed)
    cost = TrackingCost(rng.uniform(0, 0.1, 3), 1.0, 0.05)
    params = SaddleParams(0.04, 0.1, 0.3)
    s = random_state(model, seed)
    oracle = oracle_for(model, params, cost)
    u_new, y_new = rng.standard_normal(2), rng.standard_normal(1)
    nxt = advance_measurements(model, u_new, y_new)
    oracle.advance(u_new, y_new)
    got = online_step(nxt, s, cost, params)
    for a, b in zip((got.u, got.y, got.g, got.nu), oracle.online_step(s.u, s.y, s.g, s.nu)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_single_block_horizon_online_equals_static_on_shifted_state():
    model = make_model(1, 1, 2, 1, 8, seed=3)
    cost = TrackingCost(np.array([0.05]))
    params = SaddleParams(0.05, 0.1, 0.1)
    s = random_state(model, 4)
    got = online_step(model, s, cost, params)
    k = model.t_tot
    nu_hat = np.concatenate([np.append(s.nu[1:k], 0.0), np.append(s.nu[k + 1:], 0.0)])
    expect = static_step(model, SolverState(np.zeros(1), np.zeros(1), s.g, nu_hat), cost, params)
    np.testing.assert_array_equal(got.as_vector(), expect.as_vector())


# convergence diagnostics

def test_contraction_factor_examples():
    assert contraction_factor(0.0, 3.0, 1.0).rho == 1.0
    c = contraction_factor(1.0, 1.0, 1.0)
    assert c.rho == 0.0 and c.contracting
    with pytest.raises(ValueError):
        contraction_factor(1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        contraction_factor(-1.0, 1.0, 0.5)


@given(sigma=st.floats(0.5, 20), frac=st.floats(0.01, 1.0))
def test_contraction_minimised_at_eta_over_sigma_squared(sigma, frac):
    eta = frac * sigma
    best = eta / sigma ** 2
    sweep = np.linspace(0, 2 * eta / sigma ** 2, 2001)
    rhos = [contraction_factor(a, sigma, eta).rho for a in sweep]
    assert contraction_factor(best, sigma, eta).rho <= min(rhos) + 1e-12
    assert abs(sweep[int(np.argmin(rhos))] - best) <= 2 * (sweep[1] - sweep[0])


def test_pure_regularisation_constants():
    model = make_model(1, 1, 2, 2, 6)
    zero = BehavioralModel(build_hankel(np.zeros(9), 4), build_hankel(np.zeros(9), 4), 2, 2,
                           np.zeros(2), np.zeros(2))
    cost = TrackingCost(np.zeros(2), 0.0, 0.0)
    sigma, eta = estimate_saddle_constants(zero, cost, SaddleParams(1.0, 0.3, 0.3))
    # u, y rows still couple to nu through the prediction slots
    assert eta == pytest.approx(0.0, abs=1e-12)
    cost = TrackingCost(np.zeros(2), 0.15, 0.15)
    sigma, eta = estimate_saddle_constants(zero, cost, SaddleParams(1.0, 0.3, 0.3))
    assert eta == pytest.approx(0.3, abs=1e-12)
    assert model.kappa == 6


def test_saddle_constants_power_iteration_and_monotonicity():
    model = make_model(1, 2, 2, 3, 9, seed=6)
    cost = TrackingCost(np.full(6, 0.05), 1.0, 0.2)
    params = SaddleParams(1.0, 0.3, 0.5)
    sigma, eta = estimate_saddle_constants(model, cost, params)
    M, b = saddle_operator(model, cost, params)
    assert power_iteration_norm(lambda v: M @ v, lambda v: M.T @ v, M.shape[0]) == pytest.approx(sigma, abs=1e-8)
    assert saddle_norm(model, cost, params, tol=1e-10) == pytest.approx(sigma, rel=1e-8)
    rng = np.random.default_rng(0)
    for _ in range(100):
        z1, z2 = rng.standard_normal((2, M.shape[0]))
        d = z1 - z2
        assert (M @ z1 + b - (M @ z2 + b)) @ d >= eta * d @ d - 1e-10


def test_saddle_operator_is_the_step_direction():
    model = make_model(2, 1, 2, 2, 9, seed=1)
    cost = TrackingCost(np.full(2, 0.05), 1.0, 0.1)
    params = SaddleParams(0.07, 0.2, 0.3)
    M, b = saddle_operator(model, cost, params)
    s = random_state(model, 3)
    new = static_step(model, s, cost, params)
    z = s.as_vector()
    np.testing.assert_allclose(new.as_vector(), z - 0.07 * (M @ z + b), atol=1e-12)


def test_dense_limit_error():
    model = make_model(1, 1, 2, 2, 4000)
    with pytest.raises(ValueError):
        estimate_saddle_constants(model, TrackingCost(np.zeros(2)), SaddleParams(1, 0.1, 0.1))


def _spectral_radius(model, cost, params, alpha):
    M, _ = saddle_operator(model, cost, params)
    return np.max(np.abs(np.linalg.eigvals(np.eye(M.shape[0]) - alpha * M)))


@pytest.mark.parametrize("eps", [(0.1, 0.1), (0.3, 0.05), (1.0, 1.0)])
def test_step_size_rule_tracks_exact_stability_limit(eps):
    model = make_model(1, 1, 3, 4, 14, seed=2)
    cost = TrackingCost(np.full(4, 0.05))
    params = SaddleParams(1.0, *eps)
    sigma_h = data_norm(model)
    np.testing.assert_allclose(sigma_h, np.linalg.norm(model.to_dense(), 2), rtol=1e-6)
    limit = step_size_limit(sigma_h, *eps)
    lo, hi = 0.0, 4 * limit
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if _spectral_radius(model, cost, params, mid) < 1 else (lo, mid)
    assert 0.8 * lo <= limit <= 1.05 * lo
    alpha = default_step_size(model, cost, params, safety=0.8)
    assert _spectral_radius(model, cost, params, alpha) < 1
