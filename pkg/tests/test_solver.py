import numpy as np
import pytest

from pareto_impact import (
    UtilityFunction,
    eval_G0,
    expansion_residual,
    impact_report,
    weight_variance_diagnostics,
    make_problem,
    solve_indifference,
)
from pareto_impact.solver import solve_saddle
from pareto_impact.verify import exp_closed_form_price

import oracles
from corpus import corpus, log_cosh, log_cosh_pair, mixed_small, random_exponential, random_mixed, random_order

CORPUS = corpus()


@pytest.mark.parametrize("name, problem", CORPUS)
def test_identity_at_zero_order(name, problem):
    res = solve_indifference(problem, np.zeros(problem.space.j_claims))
    assert abs(res.x_q) <= 1e-10
    np.testing.assert_allclose(res.w_q, problem.initial.lambda0, atol=1e-9)
    np.testing.assert_allclose(res.alloc1, problem.initial.alpha0, atol=1e-9)


def test_log_cosh_price():
    assert solve_indifference(log_cosh(), [1.0]).x_q == pytest.approx(oracles.LN_COSH_1, abs=1e-14)


def test_unit_pair_price():
    u = UtilityFunction.exponential()
    p = make_problem([0.5, 0.5], [[1.0], [-1.0]], [u, u], lambda0=[0.5, 0.5])
    res = solve_indifference(p, [1.0])
    assert res.x_q == pytest.approx(oracles.TWO_LN_COSH_HALF, abs=1e-14)
    np.testing.assert_allclose(res.w_q, [0.5, 0.5], rtol=1e-13)


def test_aggregate_tolerance_one_reproduces_log_cosh():
    assert solve_indifference(log_cosh_pair(), [1.0]).x_q == pytest.approx(oracles.LN_COSH_1, abs=1e-14)


@pytest.mark.parametrize("q", [-25.0, -8.0, 6.0, 30.0])
def test_large_orders(q):
    expected = abs(q) + np.log1p(np.exp(-2 * abs(q))) - np.log(2)
    res = solve_indifference(log_cosh(), [q])
    assert res.x_q == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_large_orders_mixed(seed):
    p = random_mixed(seed)
    rng = np.random.default_rng(seed)
    res = solve_indifference(p, random_order(p, rng, 8.0))
    assert np.max(np.abs(res.utility_residuals)) <= 1e-10


@pytest.mark.parametrize("q, grad, H", [(0.0, 0.0, 1.0), (1.0, oracles.TANH_1, oracles.SECH2_1)])
def test_log_cosh_gradient_and_hessian(q, grad, H):
    p = log_cosh()
    rep = impact_report(p, solve_indifference(p, [q]))
    assert rep.gradient[0] == pytest.approx(grad, abs=1e-14)
    assert rep.H[0, 0] == pytest.approx(H, rel=1e-13)


@pytest.mark.parametrize("name, problem", CORPUS)
def test_indifference_preserved(name, problem):
    rng = np.random.default_rng(len(name))
    res = solve_indifference(problem, random_order(problem, rng, 2.0))
    assert np.max(np.abs(res.utility_residuals)) <= 1e-10
    u1 = [problem.space.expect(u.value(a)) for u, a in zip(problem.utilities, res.alloc1)]
    np.testing.assert_allclose(u1, problem.initial.u0, atol=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_exponential_matches_closed_form(seed):
    p = random_exponential(seed)
    rng = np.random.default_rng(seed)
    q = random_order(p, rng, 3.0)
    x = solve_indifference(p, q).x_q
    assert abs(x - exp_closed_form_price(p, q)) <= 1e-8 * (1 + abs(x))


def test_warm_start_agrees():
    p = mixed_small()
    q = np.array([0.7, -1.2])
    cold = solve_indifference(p, q)
    near = solve_indifference(p, q + 0.05)
    warm = solve_indifference(p, q, start=(near.v_raw, near.x_q))
    assert warm.diagnostics["warm_start"]
    assert warm.x_q == pytest.approx(cold.x_q, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_price_is_convex(seed):
    p = random_mixed(seed)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        q1, q2 = random_order(p, rng, 2.0), random_order(p, rng, 2.0)
        mid = solve_indifference(p, 0.5 * (q1 + q2)).x_q
        ends = 0.5 * (solve_indifference(p, q1).x_q + solve_indifference(p, q2).x_q)
        assert mid <= ends + 1e-12


@pytest.mark.parametrize("name, problem", CORPUS)
def test_quadratic_terms_nonnegative(name, problem):
    rng = np.random.default_rng(3)
    rep = impact_report(problem, solve_indifference(problem, random_order(problem, rng)))
    assert np.linalg.eigvalsh(rep.H)[0] >= -1e-10
    for _ in range(5):
        dq = random_order(problem, rng)
        t = rep.expansion_terms(dq)
        assert min(t["quad1"], t["quad2"], t["quad3"]) >= -1e-12
        # the three terms reassemble the Hessian form
        assert 2 * (t["quad1"] + t["quad2"] + t["quad3"]) == pytest.approx(dq @ rep.H @ dq, rel=1e-9, abs=1e-14)


def test_zero_increment_gives_zero_terms():
    p = mixed_small()
    rep = impact_report(p, solve_indifference(p, [0.3, 0.1]))
    t = rep.expansion_terms([0.0, 0.0])
    assert t == {"linear": 0.0, "quad1": 0.0, "quad2": 0.0, "quad3": 0.0}
    assert expansion_residual(p, [0.3, 0.1], [0.0, 0.0])["residual"] == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_exponential_quad1_vanishes(seed):
    p = random_exponential(seed)
    rng = np.random.default_rng(seed)
    rep = impact_report(p, solve_indifference(p, random_order(p, rng)))
    for _ in range(5):
        r = random_order(p, rng)
        assert rep.expansion_terms(r)["quad1"] <= 1e-12
        diag = weight_variance_diagnostics(p, rep, r)
        assert all(diag["vanish"])
        assert max(diag["weighted_rho_variance"], diag["z_r_norm"], diag["measure_gap"]) < 1e-12


def test_mixed_weight_variance_verdicts_agree():
    p = mixed_small()
    rep = impact_report(p, solve_indifference(p, [0.5, -0.5]))
    diag = weight_variance_diagnostics(p, rep, [1.0, 0.3])
    assert diag["vanish"] == [False, False, False]
    assert rep.expansion_terms([1.0, 0.3])["quad1"] > 1e-6
    zero = weight_variance_diagnostics(p, rep, [0.0, 0.0])
    assert zero["vanish"] == [True, True, True]


def test_log_cosh_expansion():
    out = expansion_residual(log_cosh(), [0.0], [0.1])
    assert out["actual"] == pytest.approx(oracles.LN_COSH_01, abs=1e-15)
    assert out["predicted"] == pytest.approx(0.005, abs=1e-15)
    assert out["residual"] == pytest.approx(oracles.LN_COSH_01 - 0.005, abs=1e-14)


@pytest.mark.parametrize("problem", [log_cosh(), mixed_small(), random_mixed(3)])
def test_expansion_residual_is_small_o(problem):
    J = problem.space.j_claims
    q = np.full(J, 0.3)
    base = solve_indifference(problem, q)
    direction = np.linspace(1.0, -0.5, J)
    ratios = []
    for k in range(6):
        dq = 0.2 * 0.5 ** k * direction
        out = expansion_residual(problem, q, dq, base=base)
        ratios.append(abs(out["residual"]) / (dq @ dq))
    assert all(b <= 0.6 * a for a, b in zip(ratios, ratios[1:]))


def test_G0_examples():
    p = log_cosh()
    assert eval_G0(p, p.initial.u0, 1.0, [1.0]) == pytest.approx(oracles.LN_COSH_1, abs=1e-14)
    assert eval_G0(p, [-2.0], 1.0, [0.0]) == pytest.approx(-oracles.LN_2, abs=1e-14)


@pytest.mark.parametrize("problem", [log_cosh(), mixed_small()])
def test_G0_homogeneous_in_y(problem):
    q = np.full(problem.space.j_claims, 0.4)
    u = problem.initial.u0 * 1.3
    assert eval_G0(problem, u, 2.0, q) == pytest.approx(2 * eval_G0(problem, u, 1.0, q), abs=1e-11)


def test_saddle_at_initial_state():
    p = log_cosh()
    sp = solve_saddle(p, [-1.0], 1.0, [0.0])
    assert sp.v[0] == pytest.approx(1.0, abs=1e-14)
    assert sp.x == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("u, y", [([0.5], 1.0), ([-1.0], 0.0), ([-1.0], -1.0)])
def test_saddle_rejects_bad_targets(u, y):
    with pytest.raises(ValueError):
        solve_saddle(log_cosh(), u, y, [0.0])
