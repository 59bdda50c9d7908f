"""Domain types and closed-form results for binary-bet growth optimization.

A bet stakes a fraction of wealth on a binary event: win probability ``p``,
net gain ``b`` per staked dollar on a win, total loss of the stake otherwise.
Everything downstream (scenario enumeration, the transform solver, bound
construction) consumes the types defined here. All log-wealth quantities are
in nats.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EdgeError

# Sampled probabilities are clamped into this open interval before any logit
# transform so degenerate draws cannot produce infinities.
PROB_FLOOR = 1e-9

_SIMPLEX_TOL = 1e-12


def logit(x):
    """log(x / (1 - x)), elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.log(x) - np.log1p(-x)
    return float(out) if out.ndim == 0 else out


def logistic(z):
    """Inverse of :func:`logit`; numerically stable for large |z|."""
    z = np.asarray(z, dtype=float)
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


def softmax(theta: np.ndarray) -> np.ndarray:
    """Simplex weights from unconstrained logits (shift-invariant)."""
    shifted = np.asarray(theta, dtype=float) - np.max(theta)
    e = np.exp(shifted)
    return e / e.sum()


def clamp_probability(p):
    """Clip probabilities into [PROB_FLOOR, 1 - PROB_FLOOR]."""
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


class Regime(enum.Enum):
    """Disagreement model used to generate subjective probabilities."""

    LAPLACE = "laplace"
    NORMAL = "normal"
    GND6 = "gnd6"
    BETA = "beta"

    @property
    def gnd_shape(self) -> Optional[float]:
        """Shape of the logit-offset distribution; None for the Beta model."""
        return {"laplace": 1.0, "normal": 2.0, "gnd6": 6.0}.get(self.value)


class VarianceLevel(enum.Enum):
    """Logit-offset variance bucket."""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def variance(self) -> float:
        return {"low": 0.01, "medium": 0.025, "high": 0.05}[self.value]


@dataclass(frozen=True)
class Bet:
    """One binary lottery: win probability ``p``, net win payoff ``b``.

    Losing forfeits the full stake, so the net return per staked dollar is
    ``b`` with probability ``p`` and ``-1`` otherwise.
    """

    p: float
    b: float

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise EdgeError(f"win probability must lie in (0,1), got {self.p}")
        if not self.b > 0.0:
            raise EdgeError(f"win payoff must be positive, got {self.b}")

    @property
    def has_edge(self) -> bool:
        """True when the expected gross return exceeds 1."""
        return self.p * (1.0 + self.b) > 1.0

    @property
    def mu(self) -> float:
        """Expected net return."""
        return self.p * (1.0 + self.b) - 1.0


@dataclass(frozen=True)
class Contract:
    """A YES contract priced at ``q`` paired with a subjective probability ``p``."""

    q: float
    p: float

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise EdgeError(f"contract price must lie in (0,1), got {self.q}")
        if not (0.0 < self.p < 1.0):
            raise EdgeError(f"subjective probability must lie in (0,1), got {self.p}")


@dataclass(frozen=True)
class ProblemInstance:
    """A set of positive-edge bets plus the metadata needed to regenerate it."""

    bets: tuple[Bet, ...]
    regime: Regime
    variance_level: VarianceLevel
    seed: int
    contracts: Optional[tuple[Contract, ...]] = None

    def __post_init__(self):
        if len(self.bets) < 1:
            raise EdgeError("an instance needs at least one bet")

    @property
    def n_bets(self) -> int:
        return len(self.bets)


def bet_arrays(bets: Sequence[Bet]) -> tuple[np.ndarray, np.ndarray]:
    """(p, b) vectors for vectorized code paths."""
    p = np.array([bet.p for bet in bets], dtype=float)
    b = np.array([bet.b for bet in bets], dtype=float)
    return p, b


@dataclass(frozen=True)
class Portfolio:
    """Nonnegative weights over cash plus bets, summing to one."""

    w0: float
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if self.w0 < 0.0 or np.any(w < 0.0):
            raise EdgeError("portfolio weights must be nonnegative")
        total = self.w0 + float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise EdgeError(f"portfolio weights must sum to 1, got {total}")

    @property
    def leverage(self) -> float:
        """Total fraction of wealth staked on risky bets."""
        return float(self.w.sum())

    def win_payouts(self, bets: Sequence[Bet]) -> np.ndarray:
        """Fraction of wealth credited when each bet wins: w_i * (b_i + 1)."""
        _, b = bet_arrays(bets)
        return self.w * (b + 1.0)

    @staticmethod
    def all_cash(n_bets: int) -> "Portfolio":
        return Portfolio(w0=1.0, w=np.zeros(n_bets))


@dataclass(frozen=True)
class Logits:
    """Unconstrained simplex parameterization; index 0 is cash."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    @property
    def n_bets(self) -> int:
        return len(self.theta) - 1

    def gauge_projected(self) -> "Logits":
        """Center the logits; softmax is invariant to this shift."""
        return Logits(self.theta - self.theta.mean())

    def to_portfolio(self) -> Portfolio:
        weights = softmax(self.theta)
        return Portfolio(w0=float(weights[0]), w=weights[1:])

    @staticmethod
    def uniform(n_bets: int) -> "Logits":
        return Logits(np.zeros(n_bets + 1))

    @staticmethod
    def from_portfolio(portfolio: Portfolio, floor: float = 1e-12) -> "Logits":
        """Logits that softmax back to the given weights (up to flooring)."""
        weights = np.concatenate(([portfolio.w0], portfolio.w))
        return Logits(np.log(np.maximum(weights, floor))).gauge_projected()


def single_bet_kelly(p: float, b: float) -> float:
    """Growth-optimal stake fraction for a single bet: p - (1-p)/b.

    Requires a positive edge, p*(1+b) > 1; the optimum is then in (0, p).
    """
    if not p * (1.0 + b) > 1.0:
        raise EdgeError(f"bet (p={p}, b={b}) has no positive edge")
    return p - (1.0 - p) / b


def mu_sigma(p: float, b: float) -> tuple[float, float]:
    """Expected net return and return variance of one bet."""
    mu = p * (1.0 + b) - 1.0
    sigma2 = p * (1.0 - p) * (1.0 + b) ** 2
    return mu, sigma2


def kelly_from_mu_sigma(mu: float, sigma2: float) -> float:
    """Optimal stake in mean/variance form: mu / (mu + sigma2/(1+mu)).

    Tends to mu/sigma2 for small edges and to full investment as mu grows.
    """
    if not mu > 0.0:
        raise EdgeError(f"expected net return must be positive, got {mu}")
    if not sigma2 > 0.0:
        raise EdgeError(f"return variance must be positive, got {sigma2}")
    return mu / (mu + sigma2 / (1.0 + mu))


def bet_from_contract(contract: Contract) -> Optional[Bet]:
    """Convert a priced contract into the positive-edge side, if any.

    Buys YES when p > q (costs q, pays 1) and NO when p < q (costs 1-q,
    pays 1). Returns None when p == q: there is no edge on either side.
    """
    p, q = contract.p, contract.q
    if p > q:
        return Bet(p=p, b=(1.0 - q) / q)
    if p < q:
        return Bet(p=1.0 - p, b=q / (1.0 - q))
    return None


def single_bet_log_wealth(f: float, p: float, b: float) -> float:
    """Expected log wealth p*log(1+f*b) + (1-p)*log(1-f) for stake f."""
    if not 0.0 <= f < 1.0:
        raise EdgeError(f"stake fraction must lie in [0,1), got {f} (f >= 1 risks ruin)")
    return p * math.log1p(f * b) + (1.0 - p) * math.log1p(-f)
