import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradpush import costs

from conftest import identity_quadratic


def _fd_grad(ens, j, x):
    h = 1e-5 * (1 + np.linalg.norm(x))
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (ens.local_value(j, x + e) - ens.local_value(j, x - e)) / (2 * h)
    return g


def _power_iteration_norm(H, iters=5000):
    v = np.random.default_rng(0).standard_normal(H.shape[0])
    lam = 0.0
    for _ in range(iters):
        u = H @ v
        lam = np.linalg.norm(u) / np.linalg.norm(v)
        v = u / np.linalg.norm(u)
    return lam


@pytest.fixture(params=["least_squares", "quadratic"])
def ensemble(request):
    if request.param == "least_squares":
        return costs.least_squares_ensemble(10, 5, 3, seed=1)
    return costs.quadratic_ensemble(10, 5, seed=1)


def test_shapes(ensemble):
    assert ensemble.hessians.shape == (10, 5, 5)
    assert ensemble.w_star.shape == (5,)
    assert ensemble.beta_sum > 0
    assert ensemble.beta == pytest.approx(ensemble.beta_sum / 10)


def test_total_gradient_vanishes_at_w_star(ensemble):
    assert np.linalg.norm(costs.total_grad(ensemble, ensemble.w_star)) <= 1e-8
    H = ensemble.hessians.sum(axis=0)
    g = ensemble.linear_terms.sum(axis=0)
    np.testing.assert_allclose(ensemble.w_star, np.linalg.solve(H, -g), atol=1e-10)


def test_gradient_matches_finite_differences(ensemble):
    rng = np.random.default_rng(7)
    for j in range(ensemble.n):
        x = rng.standard_normal(5)
        fd = _fd_grad(ensemble, j, x)
        ex = costs.grad(ensemble, j, x)
        assert np.linalg.norm(ex - fd) <= 1e-6 * max(1.0, np.linalg.norm(ex))


def test_grad_all_matches_per_agent(ensemble):
    X = np.random.default_rng(3).standard_normal((10, 5))
    stacked = costs.grad_all(ensemble, X)
    for j in range(10):
        np.testing.assert_allclose(stacked[j], costs.grad(ensemble, j, X[j]), atol=1e-12)


def test_local_smoothness_matches_power_iteration(ensemble):
    for j in range(ensemble.n):
        assert ensemble.local_smoothness[j] == pytest.approx(_power_iteration_norm(ensemble.hessians[j]), abs=1e-8)
    Li, L, beta = costs.constants(ensemble)
    assert L == Li.max()
    assert 0 < beta <= L


def test_least_squares_lipschitz_nonnegative():
    ens = costs.least_squares_ensemble(6, 4, 2, seed=0)
    assert np.all(ens.local_smoothness >= 0)
    assert not ens.nonconvex_local


def test_quadratic_family_has_nonconvex_locals():
    ens = costs.quadratic_ensemble(10, 5, seed=1)
    assert ens.nonconvex_local
    for H in ens.hessians:
        np.testing.assert_array_equal(H, H.T)


def test_least_squares_local_minimizer_gradient_zero():
    ens = costs.least_squares_ensemble(3, 2, 4, seed=2)  # m > d: unique local minimizer
    for j in range(3):
        A, b = ens.data["A"][j], ens.data["b"][j]
        w_loc = np.linalg.solve(A.T @ A, A.T @ b)
        assert np.linalg.norm(costs.grad(ens, j, w_loc)) <= 1e-10


def test_identity_fixture():
    ens = identity_quadratic(4, 3)
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(costs.grad(ens, 2, v), v)
    np.testing.assert_allclose(ens.local_smoothness, 1.0)
    np.testing.assert_allclose(ens.w_star, 0.0)
    assert ens.beta == pytest.approx(1.0)  # average convention
    assert ens.beta_sum == pytest.approx(4.0)


def test_single_agent_identity_least_squares():
    ens = costs.least_squares_from_data(np.eye(3)[None], np.zeros((1, 3)))
    np.testing.assert_allclose(ens.w_star, 0.0)


def test_grad_validation(ensemble):
    with pytest.raises(IndexError):
        costs.grad(ensemble, 10, np.zeros(5))
    with pytest.raises(ValueError):
        costs.grad(ensemble, 0, np.zeros(4))
    with pytest.raises(ValueError):
        costs.grad(ensemble, 0, np.array([np.nan, 0, 0, 0, 0]))


def test_quadratic_requires_symmetry():
    C = np.zeros((1, 2, 2))
    C[0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        costs.quadratic_from_data(C, np.zeros((1, 2)))


def test_singular_draw_is_resampled():
    # m * n < d makes every draw singular
    with pytest.raises(costs.EnsembleError):
        costs.least_squares_ensemble(1, 4, 2, seed=0, max_resamples=3)


def test_quadratic_resample_trail_recorded():
    for seed in range(50):
        ens = costs.quadratic_ensemble(2, 6, seed=seed)
        assert ens.requested_seed == seed
        assert ens.seed >= seed
        assert ens.beta_sum > 0


def test_reproducible(ensemble):
    again = (costs.least_squares_ensemble(10, 5, 3, seed=1) if ensemble.kind == "least_squares"
             else costs.quadratic_ensemble(10, 5, seed=1))
    for k in ensemble.data:
        np.testing.assert_array_equal(ensemble.data[k], again.data[k])


def test_serialization_roundtrip(ensemble, tmp_path):
    costs.save(ensemble, tmp_path / "e.txt")
    back = costs.load(tmp_path / "e.txt")
    assert back.kind == ensemble.kind and back.seed == ensemble.seed
    for k in ensemble.data:
        np.testing.assert_array_equal(back.data[k], ensemble.data[k])


def test_data_read_only(ensemble):
    key = next(iter(ensemble.data))
    with pytest.raises(ValueError):
        ensemble.data[key][0] = 0.0


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 6), d=st.integers(1, 5), m=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_least_squares_properties(n, d, m, seed):
    try:
        ens = costs.least_squares_ensemble(n, d, m, seed=seed, max_resamples=5)
    except costs.EnsembleError:
        assert n * m < d
        return
    assert ens.beta_sum > 0
    assert ens.beta <= ens.L + 1e-12
    assert np.linalg.norm(costs.total_grad(ens, ens.w_star)) <= 1e-8 * max(1.0, ens.L * np.linalg.norm(ens.w_star))


def test_coercivity_of_average_cost(ensemble):
    """<grad f(x) - grad f(y), x - y> >= gamma ||x-y||^2 + ||grad f(x) - grad f(y)||^2 / (L + beta)."""
    L, beta = ensemble.L, ensemble.beta
    gamma = L * beta / (L + beta)
    rng = np.random.default_rng(11)
    for _ in range(100):
        x, y = rng.standard_normal((2, 5)) * 3
        g = costs.total_grad(ensemble, x) - costs.total_grad(ensemble, y)
        lhs = float(g @ (x - y))
        rhs = gamma * float((x - y) @ (x - y)) + float(g @ g) / (L + beta)
        assert lhs >= rhs - 1e-9
