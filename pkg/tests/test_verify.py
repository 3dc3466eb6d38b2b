import numpy as np
import pytest

from pareto_impact import UtilityFunction, make_problem, solve_indifference
from pareto_impact.verify import (
    brute_force_for,
    conjugacy_battery,
    conjugacy_point,
    derivative,
    exp_closed_form_price,
    hessian,
    jacobian,
)

import oracles
from corpus import log_cosh, mixed_small, tiny

UNIT = UtilityFunction.exponential()


def unit_pair():
    return make_problem([0.5, 0.5], [[1.0], [-1.0]], [UNIT, UNIT], lambda0=[0.5, 0.5])


@pytest.mark.parametrize(
    "problem, q, expected",
    [
        (log_cosh(), 1.0, oracles.LN_COSH_1),
        (log_cosh(), 0.0, 0.0),
        (unit_pair(), 1.0, oracles.TWO_LN_COSH_HALF),
        (log_cosh(), -2.0, oracles.LN_COSH_2),
    ],
)
def test_closed_form_examples(problem, q, expected):
    assert exp_closed_form_price(problem, [q]) == pytest.approx(expected, abs=1e-15)


def test_closed_form_needs_exponential_makers():
    with pytest.raises(ValueError):
        exp_closed_form_price(mixed_small(), [1.0, 0.0])


def test_closed_form_handles_extreme_orders():
    x = exp_closed_form_price(log_cosh(), [800.0])
    assert x == pytest.approx(800.0 - np.log(2), rel=1e-15)


def test_derivative_examples():
    d, _ = derivative(lambda t: t * t, 3.0)
    assert d == pytest.approx(6.0, abs=1e-9)
    d, _ = derivative(lambda t: 5.0, 1.0)
    assert abs(d) <= 1e-12
    p = log_cosh()
    d, _ = derivative(lambda q: solve_indifference(p, [q]).x_q, 1.0)
    assert d == pytest.approx(oracles.TANH_1, abs=1e-7)


def test_jacobian_and_hessian_of_quadratic():
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = lambda p: 0.5 * p @ M @ p
    g, err = jacobian(f, [0.3, -0.7])
    np.testing.assert_allclose(g, M @ [0.3, -0.7], atol=1e-10)
    assert np.all(err < 1e-8)
    H, _ = hessian(f, [0.3, -0.7])
    np.testing.assert_allclose(H, M, atol=1e-8)


def test_brute_force_initial_fixed_point():
    p = log_cosh()
    bf = brute_force_for(p, [-1.0], 1.0, [0.0])
    assert bf["v"][0] == pytest.approx(1.0, abs=2 * bf["pitch"])
    assert bf["x"] == pytest.approx(0.0, abs=1e-9)
    assert bf["value"] == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1])
def test_brute_force_agrees_with_newton(seed):
    p = tiny(seed)
    q = np.array([0.8])
    res = solve_indifference(p, q)
    bf = brute_force_for(p, p.initial.u0, 1.0, q)
    assert abs(bf["x"] - res.x_q) <= 2 * bf["pitch"]
    assert abs(bf["value"] - bf["inf_sup"]) <= bf["pitch"] ** 2


def test_conjugacy_on_log_cosh():
    rep = conjugacy_battery(log_cosh())
    assert rep["passed"], rep["failing"]
    assert max(max(pt["errors"].values()) for pt in rep["points"]) <= 1e-6


def test_hessian_identity_at_symmetric_origin():
    pt = conjugacy_point(log_cosh(), [0.0])
    assert pt["errors"]["H_matrix"] <= 1e-6


def test_unit_pair_row_sums():
    pt = conjugacy_point(unit_pair(), [0.5])
    np.testing.assert_allclose(pt["B_inverse_row_sums"], [1.0, 1.0], atol=1e-6)
    assert pt["passed"]


def test_conjugacy_on_mixed():
    rep = conjugacy_battery(mixed_small(), grid=[np.array([0.4, -0.6])])
    assert rep["passed"], rep["failing"]
