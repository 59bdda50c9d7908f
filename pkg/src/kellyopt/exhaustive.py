"""Exact expected-log-wealth optimization by outcome enumeration.

With N independent binary bets there are 2^N joint outcomes. This module
materializes the full outcome table (gross return per unit weight and joint
probability per scenario), evaluates the expected log wealth exactly, and
maximizes it with the shared Newton solver. Cost and memory grow as 2^N,
so the table is hard-capped; use the transform solver beyond that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Bet, Logits, Portfolio, bet_arrays, softmax
from .errors import CapacityError, EdgeError
from .newton import SolveResult, maximize

# 2^24 scenarios is ~3 GB of table; anything beyond is refused outright.
MAX_EXACT_BETS = 24


@dataclass(frozen=True)
class ScenarioTable:
    """All joint outcomes of a bet set.

    gross[k, i] is the gross return per unit staked on bet i in scenario k:
    b_i + 1 on a win, 0 on a loss. probs[k] is the joint probability.
    Bit i of the scenario index k encodes bet i's outcome (1 = win).
    """

    gross: np.ndarray
    probs: np.ndarray

    @property
    def n_bets(self) -> int:
        return self.gross.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.gross.shape[0]


def enumerate_scenarios(bets: Sequence[Bet], cap: int = MAX_EXACT_BETS) -> ScenarioTable:
    """Build the full outcome table for up to ``cap`` bets."""
    n = len(bets)
    if n > cap:
        raise CapacityError(
            f"{n} bets needs 2^{n} scenarios; exact enumeration is capped at {cap}"
        )
    p, b = bet_arrays(bets)
    probs = np.ones(1)
    for i in range(n):
        # Appending [lose, win] at stage i makes bit i of the index bet i's outcome.
        probs = np.concatenate([probs * (1.0 - p[i]), probs * p[i]])
    idx = np.arange(1 << n)
    gross = np.empty((1 << n, n))
    for i in range(n):
        won = (idx >> i) & 1
        gross[:, i] = np.where(won, b[i] + 1.0, 0.0)
    return ScenarioTable(gross=gross, probs=probs)


def _final_wealth(table: ScenarioTable, w0: float, w: np.ndarray) -> np.ndarray:
    x = w0 + table.gross @ w
    if x.min() <= 0.0:
        raise EdgeError("nonpositive wealth in some scenario; weights must keep w0 > 0")
    return x


def value_weights(table: ScenarioTable, w0: float, w: np.ndarray) -> float:
    """Expected log wealth at the given cash/bet weights."""
    x = _final_wealth(table, w0, w)
    return float(table.probs @ np.log(x))


def grad_hess_weights(table: ScenarioTable, w0: float, w: np.ndarray):
    """(f, grad, hess) with respect to the full weight vector (w0, w).

    The gradient entry for cash is sum(probs/X); bet entries weight it by
    gross returns. The Hessian is the negative Gram matrix of the scenario
    returns under probs/X^2 and is negative semidefinite everywhere.
    """
    x = _final_wealth(table, w0, w)
    f = float(table.probs @ np.log(x))
    y = table.probs / x
    y2 = y / x
    grad = np.empty(len(w) + 1)
    grad[0] = y.sum()
    grad[1:] = table.gross.T @ y
    n1 = len(w) + 1
    hess = np.empty((n1, n1))
    gy2 = table.gross.T @ y2
    hess[0, 0] = -y2.sum()
    hess[0, 1:] = -gy2
    hess[1:, 0] = -gy2
    hess[1:, 1:] = -(table.gross.T @ (table.gross * y2[:, None]))
    return f, grad, hess


def _theta_grad(s: np.ndarray, grad_w: np.ndarray) -> np.ndarray:
    m = float(s @ grad_w)
    return s * (grad_w - m)


def _theta_hess(s: np.ndarray, grad_w: np.ndarray, hess_w: np.ndarray) -> np.ndarray:
    # Chain rule through softmax: H_theta = J H J + diag(u) - u s^T - s u^T
    # with J = diag(s) - s s^T and u the logit gradient. Rows/cols sum to 0.
    u = _theta_grad(s, grad_w)
    hs = hess_w @ s
    shs = float(s @ hs)
    jhj = s[:, None] * s[None, :] * (hess_w - hs[:, None] - hs[None, :] + shs)
    return jhj + np.diag(u) - np.outer(u, s) - np.outer(s, u)


class ExhaustiveOracle:
    """Newton oracle backed by the full outcome table.

    Line-search trials only need values, so gradient and Hessian work is
    deferred until requested and cached per iterate.
    """

    def __init__(self, table: ScenarioTable):
        self.table = table
        self._theta = None
        self._grad = None
        self._hess = None

    def _weights(self, theta: np.ndarray):
        s = softmax(theta)
        return s, float(s[0]), s[1:]

    def value(self, theta: np.ndarray) -> float:
        _, w0, w = self._weights(theta)
        return value_weights(self.table, w0, w)

    def value_grad(self, theta: np.ndarray):
        s, w0, w = self._weights(theta)
        f, grad_w, hess_w = grad_hess_weights(self.table, w0, w)
        self._theta = theta.copy()
        self._grad = _theta_grad(s, grad_w)
        self._hess = _theta_hess(s, grad_w, hess_w)
        return f, self._grad

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self._theta is None or not np.array_equal(theta, self._theta):
            self.value_grad(theta)
        return self._hess @ v


def solve_exhaustive(
    bets: Sequence[Bet],
    tol: float = 1e-10,
    theta0: Optional[Logits] = None,
    max_iter: int = 100,
) -> SolveResult:
    """Maximize expected log wealth exactly over the simplex.

    Exponential in len(bets); refuses more than MAX_EXACT_BETS bets.
    """
    table = enumerate_scenarios(bets)
    oracle = ExhaustiveOracle(table)
    start = (theta0.theta if theta0 is not None
             else Logits.uniform(len(bets)).theta)
    return maximize(oracle, start, tol=tol, max_iter=max_iter)


def eval_portfolio(table: ScenarioTable, portfolio: Portfolio) -> float:
    """Expected log wealth of a portfolio under the exact outcome table."""
    return value_weights(table, portfolio.w0, portfolio.w)
