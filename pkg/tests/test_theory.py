import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradpush import costs, digraph, engine, mixing, theory

from conftest import identity_quadratic


@pytest.fixture(scope="module")
def admissible_run(default_instance):
    _, mix, ens, delta = default_instance
    probe = theory.compute_constants(mix, ens, 1e-4, delta, check_gate=False)
    alpha = 0.5 * min(probe.alpha_max_gate, probe.alpha_max_smooth)
    consts = theory.compute_constants(mix, ens, alpha, delta)
    rec = engine.run(mix, ens, alpha, 1500)
    return mix, ens, alpha, consts, rec


def _complete(n=4, d=3, lin=None):
    mix = mixing.build_mixing(digraph.complete_digraph(n))
    return mix, identity_quadratic(n, d, lin)


def test_complete_graph_constants():
    mix, ens = _complete(lin=np.arange(12.0).reshape(4, 3))
    c = theory.compute_constants(mix, ens, 0.1)
    assert c.sigma_w == pytest.approx(0.0, abs=1e-14)
    assert c.rho == pytest.approx(0.0, abs=1e-13)
    assert c.t0 in (0, 1)
    assert c.alpha_max_gate > 1e10


def test_gamma_when_beta_equals_L():
    mix, ens = _complete()
    c = theory.compute_constants(mix, ens, 0.1)
    assert ens.beta == pytest.approx(ens.L)
    assert c.gamma == pytest.approx(ens.L / 2)


def test_constants_recomputed_from_serialized_inputs(default_instance, tmp_path):
    g, mix, ens, delta = default_instance
    digraph.save(g, tmp_path / "g.txt")
    costs.save(ens, tmp_path / "e.txt")
    mix2 = mixing.build_mixing(digraph.load(tmp_path / "g.txt"))
    ens2 = costs.load(tmp_path / "e.txt")
    a = theory.compute_constants(mix, ens, 1e-4, delta).as_dict()
    b = theory.compute_constants(mix2, ens2, 1e-4, engine.empirical_delta(mix2)).as_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12), k
        assert math.isfinite(a[k]), k


def test_constants_by_hand(default_instance):
    _, mix, ens, delta = default_instance
    c = theory.compute_constants(mix, ens, 1e-4, delta)
    n, L, beta, s = 10, ens.L, ens.beta, mix.sigma_w
    imb = math.sqrt(np.sum((1 - n * mix.pi) ** 2 / mix.pi))
    ssip = math.sqrt(np.sum(1 / mix.pi))
    gamma = beta * L / (beta + L)
    b = n * gamma / (4 * L * delta)
    assert c.gamma == pytest.approx(gamma)
    assert c.rho == pytest.approx(s * (1 + 1e-4 * L * delta))
    assert c.D1 == pytest.approx(delta * imb + ssip)
    assert c.b == pytest.approx(b)
    assert c.D1_at(0) == pytest.approx(c.D1) and c.D2_at(0) == pytest.approx(c.D2)
    assert c.D1_at(5) < c.D1
    # t0: first t with L delta / n * imb * sigma^t <= gamma / 2
    assert L * delta / n * imb * s**c.t0 <= gamma / 2
    if c.t0 > 0:
        assert L * delta / n * imb * s ** (c.t0 - 1) > gamma / 2


def test_gate_hand_evaluation(default_instance):
    _, mix, ens, delta = default_instance
    c = theory.compute_constants(mix, ens, 1e-3, delta, check_gate=False)
    s, L, b = mix.sigma_w, ens.L, c.b
    cond1 = 1e-3 <= 2 / (L + ens.beta)
    cond2 = 1e-3 < b * (1 - s) / (L * s * (delta * b + delta * c.norm_1n_minus_npi + c.sqrt_sum_inv_pi))
    assert bool(theory.stepsize_gate(c)) == (cond1 and cond2)


def test_gate_with_zero_sigma():
    mix, ens = _complete()
    edge = 2 / (ens.L + ens.beta)
    c = theory.compute_constants(mix, ens, edge)
    assert theory.stepsize_gate(c)  # non-strict at the boundary
    assert not theory.stepsize_gate(c, edge * (1 + 1e-9))
    assert not theory.stepsize_gate(c, 0.0)


def test_inadmissible_stepsize_raises(default_instance):
    _, mix, ens, delta = default_instance
    with pytest.raises(theory.StepsizeError, match="stepsize_gate"):
        theory.compute_constants(mix, ens, 0.1, delta)
    c = theory.compute_constants(mix, ens, 0.1, delta, check_gate=False)
    assert c.R == math.inf


def test_delta_below_floor_rejected(default_instance):
    _, mix, ens, _ = default_instance
    with pytest.raises(ValueError):
        theory.compute_constants(mix, ens, 1e-4, 0.5)


def test_envelope_examples(admissible_run):
    _, _, _, c, _ = admissible_run
    assert theory.envelope_B(c, 2.0, 0) >= 2.0
    assert theory.envelope_A(c, 3.0, 2.0, 0) >= 3.0
    env = theory.envelope_B(c, 2.0, np.arange(50))
    assert np.all(np.diff(env) <= 0)


def test_envelopes_vanish_without_network_error():
    mix, ens = _complete(lin=np.ones((4, 3)))
    c = theory.compute_constants(mix, ens, 0.2)
    t = np.arange(1, 20)
    np.testing.assert_allclose(theory.envelope_B(c, 1.5, t), 0.0, atol=1e-12)
    np.testing.assert_allclose(theory.envelope_A(c, 2.0, 0.0, t), (1 - c.gamma * 0.2) ** t * 2.0, atol=1e-12)


def test_envelope_rejects_rho_at_least_one(default_instance):
    _, mix, ens, delta = default_instance
    c = theory.compute_constants(mix, ens, 5.0, delta, check_gate=False)
    assert c.rho >= 1
    with pytest.raises(ValueError):
        theory.envelope_B(c, 1.0, 3)
    with pytest.raises(ValueError):
        theory.envelope_A(c, 1.0, 1.0, 3)


def test_floor_terms_increase_with_alpha(default_instance):
    _, mix, ens, delta = default_instance
    probe = theory.compute_constants(mix, ens, 1e-6, delta)
    grid = np.linspace(1e-6, 0.99 * probe.alpha_max_gate, 25)
    floors = []
    for a in grid:
        c = theory.compute_constants(mix, ens, a, delta)
        c = c.with_radius(theory.theorem_radius(c, 1.0, 1.0))
        floors.append(theory.floor_terms(c))
    floors = np.array(floors)
    assert np.all(np.diff(floors[:, 0]) > 0)
    assert np.all(np.diff(floors[:, 1]) > 0)


def test_scalar_recursions_examples():
    b81, b82 = theory.scalar_recursions(0.0, 0.1, 0.5, 0.8, 7)
    assert b81 == pytest.approx(5.0)
    assert b82 == pytest.approx(0.5 * 7 * 0.9**6)
    b81, b82 = theory.scalar_recursions(2.0, 0.1, 0.5, 0.8, 1)
    assert b81 == pytest.approx(0.9 * 2.0 + 0.5 / 0.1)
    assert b82 == pytest.approx(0.9 * 2.0 + 0.5)
    for bad in [(1.0, 0.0, 1.0, 0.5, 1), (1.0, 0.5, 0.0, 0.5, 1), (1.0, 0.5, 1.0, 1.0, 1), (1.0, 0.5, 1.0, 0.5, -1)]:
        with pytest.raises(ValueError):
            theory.scalar_recursions(*bad)


def _iterate(Y0, alpha, C, rho, t):
    y1 = y2 = Y0
    for s in range(t):
        y1 = (1 - alpha) * y1 + C
        y2 = (1 - alpha) * y2 + C * rho**s
    return y1, y2


def test_scalar_recursions_dominate_loop():
    b81, b82 = theory.scalar_recursions(1.0, 0.1, 0.5, 0.8, 20)
    y1, y2 = _iterate(1.0, 0.1, 0.5, 0.8, 20)
    assert b81 >= y1 and b82 >= y2


@settings(max_examples=300, deadline=None)
@given(Y0=st.floats(0, 100), alpha=st.floats(1e-3, 0.999), C=st.floats(1e-6, 10),
       rho=st.floats(1e-3, 0.999), t=st.integers(0, 200))
def test_scalar_recursions_property(Y0, alpha, C, rho, t):
    b81, b82 = theory.scalar_recursions(Y0, alpha, C, rho, t)
    y1, y2 = _iterate(Y0, alpha, C, rho, t)
    assert y1 <= b81 * (1 + 1e-12) + 1e-300
    assert y2 <= b82 * (1 + 1e-12) + 1e-300


def test_monitors_clean_on_admissible_run(admissible_run):
    mix, ens, alpha, c, rec = admissible_run
    rep = theory.monitor_inequalities(rec, c, mix, ens, alpha)
    assert rep.ok, rep.to_text()
    assert set(rep.families) >= {"push_sum_decay", "z_consensus", "intuition_consensus", "coercivity",
                                 "gd_contraction", "weighted_consensus_step", "recursion_B",
                                 "average_step_vs_z", "recursion_A", "iterated_recursions"}
    assert all(f.checked > 0 for f in rep.families.values())
    kv = rep.to_kv()
    assert "ok=true" in kv and "np.float64" not in kv


def test_envelopes_and_certificate_on_admissible_run(admissible_run):
    _, _, _, c, rec = admissible_run
    env = theory.check_envelopes(rec, c)
    assert env.ok, env.to_text()
    cert = theory.check_boundedness_certificate(rec, c)
    assert cert.ok and cert.margin_A >= 0 and cert.margin_B > 0


def test_certificate_refuses_inadmissible(default_instance):
    _, mix, ens, delta = default_instance
    c = theory.compute_constants(mix, ens, 1e-2, delta, check_gate=False)
    rec = engine.run(mix, ens, 1e-2, 20)
    cert = theory.check_boundedness_certificate(rec, c)
    assert not cert.certified and "gate" in cert.reason


def test_monitors_detect_injected_violation(admissible_run):
    mix, ens, alpha, c, rec = admissible_run
    bad = engine.RunRecord(**{k: getattr(rec, k).copy() for k in engine.CSV_COLUMNS}, alpha=alpha)
    bad.B[200] *= 1 + 1e-6
    with pytest.raises(ValueError, match="replay"):
        theory.monitor_inequalities(bad, c, mix, ens, alpha)
    # tamper with a trajectory-free check instead: envelopes read the record directly
    bad.B[200] = 1e6
    assert not theory.check_envelopes(bad, c).ok


def test_monitors_reject_mismatched_alpha(admissible_run):
    mix, ens, alpha, c, rec = admissible_run
    with pytest.raises(ValueError):
        theory.monitor_inequalities(rec, c, mix, ens, alpha * 2)


def test_zero_stepsize_contracts_weighted_consensus(default_instance):
    _, mix, ens, _ = default_instance
    rec = engine.run(mix, ens, 0.0, 60, x0=np.random.default_rng(0).standard_normal((10, 5)))
    # B bottoms out near 1e-12: pi itself is only accurate to the power-iteration tolerance
    assert np.all(rec.B[1:] <= mix.sigma_w * rec.B[:-1] + 1e-9 * (1 + mix.sigma_w * rec.B[:-1]))


def test_single_agent_monitors_and_certificate():
    mix = mixing.build_mixing(digraph.ring_digraph(1))
    ens = costs.least_squares_ensemble(1, 3, 5, seed=2)
    alpha = 1.0 / ens.L
    c = theory.compute_constants(mix, ens, alpha)
    rec = engine.run(mix, ens, alpha, 200)
    assert theory.monitor_inequalities(rec, c, mix, ens, alpha).ok
    cert = theory.check_boundedness_certificate(rec, c)
    assert cert.ok
    assert np.all(np.diff(rec.A) <= 1e-15)


def test_iterated_recursions_dominate(admissible_run):
    _, _, _, c, rec = admissible_run
    Ahat, Bhat = theory.iterate_recursions(c, rec.A[0], rec.B[0], rec.iterations)
    assert np.all(rec.A <= Ahat * (1 + 1e-9))
    assert np.all(rec.B <= Bhat * (1 + 1e-9))
