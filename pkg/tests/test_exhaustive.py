import math

import numpy as np
import pytest
from scipy.optimize import minimize

from kellyopt.core import Bet, Logits, single_bet_log_wealth
from kellyopt.errors import CapacityError
from kellyopt.exhaustive import (
    ExhaustiveOracle,
    enumerate_scenarios,
    eval_portfolio,
    grad_hess_weights,
    solve_exhaustive,
    value_weights,
)
from tests.conftest import random_bets


def test_scenario_table_two_bets_by_hand():
    bets = [Bet(p=0.6, b=1.0), Bet(p=0.3, b=3.0)]
    table = enumerate_scenarios(bets)
    assert table.gross.shape == (4, 2)
    # Scenario index bit i says whether bet i wins.
    assert np.allclose(table.gross[0], [0.0, 0.0])
    assert np.allclose(table.gross[1], [2.0, 0.0])
    assert np.allclose(table.gross[2], [0.0, 4.0])
    assert np.allclose(table.gross[3], [2.0, 4.0])
    assert table.probs[0] == pytest.approx(0.4 * 0.7)
    assert table.probs[1] == pytest.approx(0.6 * 0.7)
    assert table.probs[2] == pytest.approx(0.4 * 0.3)
    assert table.probs[3] == pytest.approx(0.6 * 0.3)
    assert table.probs.sum() == pytest.approx(1.0, abs=1e-14)


def test_capacity_cap():
    bets = random_bets(np.random.default_rng(0), 25)
    with pytest.raises(CapacityError):
        enumerate_scenarios(bets)


def test_value_matches_monte_carlo():
    """Exact enumeration against a direct simulation of the bet outcomes."""
    rng = np.random.default_rng(123)
    bets = random_bets(rng, 5)
    table = enumerate_scenarios(bets)
    w = np.array([0.05, 0.1, 0.02, 0.08, 0.04])
    w0 = 1.0 - w.sum()
    exact = value_weights(table, w0, w)

    n_mc = 400_000
    p = np.array([bet.p for bet in bets])
    b = np.array([bet.b for bet in bets])
    wins = rng.uniform(size=(n_mc, 5)) < p
    wealth = w0 + (wins * (w * (b + 1.0))).sum(axis=1)
    sample = np.log(wealth)
    mc = sample.mean()
    se = sample.std() / math.sqrt(n_mc)
    assert abs(mc - exact) < 5.0 * se


def test_single_bet_value_matches_closed_form():
    bets = [Bet(p=0.6, b=1.0)]
    table = enumerate_scenarios(bets)
    for f in (0.05, 0.2, 0.6):
        assert value_weights(table, 1.0 - f, np.array([f])) == pytest.approx(
            single_bet_log_wealth(f, 0.6, 1.0), abs=1e-14
        )


def test_weight_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    bets = random_bets(rng, 6)
    table = enumerate_scenarios(bets)
    w = rng.uniform(0.01, 0.1, size=6)
    w0 = 1.0 - w.sum()
    f, grad, hess = grad_hess_weights(table, w0, w)
    assert f == pytest.approx(value_weights(table, w0, w), abs=1e-14)
    eps = 1e-6
    # Entry 0 differentiates in the cash weight, entries 1.. in the bets.
    fd0 = (value_weights(table, w0 + eps, w) - value_weights(table, w0 - eps, w)) / (2 * eps)
    assert grad[0] == pytest.approx(fd0, rel=1e-6, abs=1e-8)
    for i in range(6):
        dw = np.zeros(6)
        dw[i] = eps
        fd = (value_weights(table, w0, w + dw) - value_weights(table, w0, w - dw)) / (2 * eps)
        assert grad[1 + i] == pytest.approx(fd, rel=1e-6, abs=1e-8)
    # Hessian columns via FD of the gradient.
    _, gp, _ = grad_hess_weights(table, w0 + eps, w)
    _, gm, _ = grad_hess_weights(table, w0 - eps, w)
    assert np.allclose(hess[:, 0], (gp - gm) / (2 * eps), rtol=1e-5, atol=1e-6)
    for i in range(6):
        dw = np.zeros(6)
        dw[i] = eps
        _, gp, _ = grad_hess_weights(table, w0, w + dw)
        _, gm, _ = grad_hess_weights(table, w0, w - dw)
        assert np.allclose(hess[:, 1 + i], (gp - gm) / (2 * eps), rtol=1e-5, atol=1e-6)


def test_weight_hessian_negative_semidefinite_everywhere():
    """The weight Hessian is a negated Gram matrix, NSD at any feasible point."""
    rng = np.random.default_rng(13)
    bets = random_bets(rng, 8)
    table = enumerate_scenarios(bets)
    for _ in range(5):
        w = rng.uniform(0.005, 0.11, size=8)
        _, _, hess = grad_hess_weights(table, 1.0 - w.sum(), w)
        for _ in range(100):
            v = rng.normal(size=9)
            v /= np.linalg.norm(v)
            assert float(v @ hess @ v) <= 1e-10


def test_oracle_gradient_and_hvp_match_finite_differences():
    rng = np.random.default_rng(19)
    bets = random_bets(rng, 7)
    oracle = ExhaustiveOracle(enumerate_scenarios(bets))
    theta = rng.normal(scale=0.5, size=8)
    theta -= theta.mean()
    f, grad = oracle.value_grad(theta)
    eps = 1e-6
    for i in range(8):
        d = np.zeros(8)
        d[i] = eps
        fd = (oracle.value(theta + d) - oracle.value(theta - d)) / (2 * eps)
        assert grad[i] == pytest.approx(fd, rel=2e-6, abs=1e-9)
    for _ in range(5):
        v = rng.normal(size=8)
        hv = oracle.hvp(theta, v)
        _, gp = oracle.value_grad(theta + eps * v)
        _, gm = oracle.value_grad(theta - eps * v)
        fd = (gp - gm) / (2 * eps)
        assert np.allclose(hv, fd, rtol=5e-5, atol=1e-7)


def test_solver_single_bet_closed_form():
    res = solve_exhaustive([Bet(p=0.6, b=1.0)])
    assert res.converged
    assert res.portfolio.w[0] == pytest.approx(0.2, abs=1e-8)
    assert res.f == pytest.approx(single_bet_log_wealth(0.2, 0.6, 1.0), abs=1e-12)


def test_solver_matches_constrained_scipy():
    """Independent check against SLSQP on the weight simplex."""
    rng = np.random.default_rng(29)
    bets = random_bets(rng, 3)
    table = enumerate_scenarios(bets)
    res = solve_exhaustive(bets)

    def neg(w):
        return -value_weights(table, 1.0 - w.sum(), np.asarray(w))

    cons = [{"type": "ineq", "fun": lambda w: 1.0 - w.sum() - 1e-12}]
    slsqp = minimize(neg, np.full(3, 0.05), method="SLSQP",
                     bounds=[(1e-12, 1.0)] * 3, constraints=cons,
                     options={"ftol": 1e-14, "maxiter": 500})
    assert slsqp.success
    assert res.f == pytest.approx(-slsqp.fun, abs=1e-9)
    assert np.allclose(res.portfolio.w, slsqp.x, atol=1e-5)


def test_every_positive_edge_bet_gets_weight():
    rng = np.random.default_rng(43)
    for trial in range(8):
        bets = random_bets(rng, int(rng.integers(2, 11)))
        res = solve_exhaustive(bets)
        assert res.converged
        assert np.all(res.portfolio.w > 0.0)
        assert res.portfolio.leverage < 1.0
        # Stationarity at the reported solution.
        oracle = ExhaustiveOracle(enumerate_scenarios(bets))
        _, grad = oracle.value_grad(res.logits.theta)
        grad = grad - grad.mean()
        assert np.linalg.norm(grad) < 1e-9


def test_eval_portfolio_consistent_with_value_weights():
    rng = np.random.default_rng(53)
    bets = random_bets(rng, 4)
    table = enumerate_scenarios(bets)
    theta = rng.normal(size=5)
    port = Logits(theta).to_portfolio()
    assert eval_portfolio(table, port) == pytest.approx(
        value_weights(table, port.w0, port.w), abs=1e-15
    )


def test_warm_start_converges_faster():
    rng = np.random.default_rng(61)
    bets = random_bets(rng, 8)
    cold = solve_exhaustive(bets)
    warm = solve_exhaustive(bets, theta0=cold.logits)
    assert warm.converged
    assert warm.n_iter <= 2
    assert warm.f == pytest.approx(cold.f, abs=1e-13)
