"""Synthetic prediction-market instance generation.

Each contract pairs a market price q ~ U(0.1, 0.9) with a subjective win
probability p. Disagreement between them comes from one of two families:

* logit-offset: logit(p) = logit(q) + eps with eps drawn from a
  generalized normal distribution (shape 1 = Laplace, 2 = Gaussian,
  6 = platykurtic), scale calibrated to a target variance;
* Beta-prior: p ~ Beta(a, b) parameterized so the mode equals q, with a
  concentration chosen so the average best-side expected return matches
  the Gaussian logit-offset family at the same variance level.

Contracts with no edge on either side (or probabilities clamped to the
working range) are redrawn, so instances always contain exactly N bets.
All randomness flows through explicit seed streams keyed by grid
coordinates, making every instance reproducible in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln
from scipy.stats import beta as beta_dist

from .core import (
    Contract,
    ProblemInstance,
    Regime,
    VarianceLevel,
    bet_from_contract,
    clamp_probability,
    logistic,
    logit,
)
from .errors import CalibrationError, InputError

_REGIME_IDS = {Regime.LAPLACE: 0, Regime.NORMAL: 1, Regime.GND6: 2, Regime.BETA: 3}
_LEVEL_IDS = {VarianceLevel.LOW: 0, VarianceLevel.MEDIUM: 1, VarianceLevel.HIGH: 2}

Q_LOW, Q_HIGH = 0.1, 0.9


@dataclass(frozen=True)
class RegimeSpec:
    """One cell of the disagreement grid with its derived scale."""

    regime: Regime
    variance_level: VarianceLevel

    @property
    def target_variance(self) -> float:
        return self.variance_level.variance

    @property
    def alpha(self) -> Optional[float]:
        """Calibrated generalized-normal scale; None for the Beta family."""
        shape = self.regime.gnd_shape
        if shape is None:
            return None
        return gnd_calibrate(shape, self.target_variance)


@dataclass(frozen=True)
class RngStream:
    """Deterministic per-instance randomness keyed by grid coordinates."""

    base_seed: int
    regime: Regime
    variance_level: VarianceLevel
    n_bets: int
    index: int

    def instance_seed(self) -> int:
        """A 64-bit seed unique to these coordinates."""
        seq = np.random.SeedSequence(
            entropy=self.base_seed,
            spawn_key=(
                _REGIME_IDS[self.regime],
                _LEVEL_IDS[self.variance_level],
                self.n_bets,
                self.index,
            ),
        )
        words = seq.generate_state(2)
        return (int(words[0]) << 32) | int(words[1])

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.instance_seed())


def gnd_calibrate(shape: float, target_var: float) -> float:
    """Scale alpha with Var = alpha^2 Gamma(3/shape)/Gamma(1/shape)."""
    if shape <= 0.0 or target_var <= 0.0:
        raise InputError("shape and target variance must be positive")
    log_ratio = gammaln(1.0 / shape) - gammaln(3.0 / shape)
    return math.sqrt(target_var * math.exp(log_ratio))


def gnd_sample(shape: float, alpha: float, rng: np.random.Generator, size=None):
    """Generalized-normal draws via the gamma-power representation.

    |eps|^shape / alpha^shape is Gamma(1/shape)-distributed, so a gamma
    draw raised to 1/shape and signed uniformly is exact (no rejection).
    """
    g = rng.gamma(1.0 / shape, 1.0, size=size)
    sign = rng.integers(0, 2, size=size) * 2 - 1
    out = sign * alpha * g ** (1.0 / shape)
    return float(out) if size is None else out


def _edge_ok(p: float, q: float) -> bool:
    # Reject zero-edge draws and anything squashed onto the probability
    # clamp (those would distort the offset distribution).
    return p != q and 1e-9 < p < 1.0 - 1e-9


def gen_logit_offset_instance(
    n_bets: int,
    regime: Regime,
    variance_level: VarianceLevel,
    rng: np.random.Generator,
    seed: int = 0,
) -> ProblemInstance:
    """Instance with logit(p) = logit(q) + generalized-normal offset."""
    shape = regime.gnd_shape
    if shape is None:
        raise InputError("use gen_beta_instance for the Beta regime")
    alpha = gnd_calibrate(shape, variance_level.variance)
    contracts = []
    while len(contracts) < n_bets:
        q = rng.uniform(Q_LOW, Q_HIGH)
        eps = gnd_sample(shape, alpha, rng)
        p = float(clamp_probability(logistic(logit(q) + eps)))
        if _edge_ok(p, q):
            contracts.append(Contract(q=q, p=p))
    bets = tuple(bet_from_contract(c) for c in contracts)
    return ProblemInstance(bets=bets, regime=regime, variance_level=variance_level,
                           seed=seed, contracts=tuple(contracts))


def beta_mode_params(q: float, kappa: float) -> tuple[float, float]:
    """Beta(a, b) with mode q and concentration kappa (= a + b, > 2)."""
    return 1.0 + q * (kappa - 2.0), 1.0 + (1.0 - q) * (kappa - 2.0)


def gen_beta_instance(
    n_bets: int,
    variance_level: VarianceLevel,
    rng: np.random.Generator,
    seed: int = 0,
    kappa: Optional[float] = None,
) -> ProblemInstance:
    """Instance with p drawn from a Beta centered (by mode) on q."""
    if kappa is None:
        kappa = calibrate_beta_concentration(variance_level)
    contracts = []
    while len(contracts) < n_bets:
        q = rng.uniform(Q_LOW, Q_HIGH)
        a, b = beta_mode_params(q, kappa)
        p = float(clamp_probability(rng.beta(a, b)))
        if _edge_ok(p, q):
            contracts.append(Contract(q=q, p=p))
    bets = tuple(bet_from_contract(c) for c in contracts)
    return ProblemInstance(bets=bets, regime=Regime.BETA,
                           variance_level=variance_level, seed=seed,
                           contracts=tuple(contracts))


def best_side_return(p, q):
    """Expected net return of the better contract side: max(p/q, (1-p)/(1-q)) - 1."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.maximum(p / q, (1.0 - p) / (1.0 - q)) - 1.0
    return float(out) if out.ndim == 0 else out


# Calibration is deterministic by construction: a fixed internal seed for
# the Monte Carlo draws, cached per (level, sample count).
_CALIBRATION_SEED = 858213
_KAPPA_CACHE: dict[tuple[str, int], float] = {}


def calibrate_beta_concentration(
    variance_level: VarianceLevel,
    n_samples: int = 10**6,
    rel_tol: float = 0.01,
) -> float:
    """Concentration kappa matching the Gaussian regime's mean return.

    The matching metric is the Monte-Carlo average of the best-side
    expected return over contracts. The Gaussian logit-offset family at
    the same variance level provides the target; bisection in kappa uses
    common uniform draws (through the Beta quantile function) so the
    estimate is monotone in kappa and the search is stable.
    """
    key = (variance_level.value, n_samples)
    if key in _KAPPA_CACHE:
        return _KAPPA_CACHE[key]

    rng = np.random.default_rng(_CALIBRATION_SEED)
    q = rng.uniform(Q_LOW, Q_HIGH, size=n_samples)
    alpha = gnd_calibrate(2.0, variance_level.variance)
    eps = gnd_sample(2.0, alpha, rng, size=n_samples)
    p_gauss = clamp_probability(logistic(logit(q) + eps))
    target = float(np.mean(best_side_return(p_gauss, q)))

    u = rng.uniform(0.0, 1.0, size=n_samples)

    def mean_return(kappa: float) -> float:
        a, b = beta_mode_params(q, kappa)
        p = clamp_probability(beta_dist.ppf(u, a, b))
        return float(np.mean(best_side_return(p, q)))

    lo, hi = 2.0 + 1e-6, 1e4
    if mean_return(lo) < target:
        raise CalibrationError(
            f"target mean return {target:.4g} unreachable even at kappa -> 2"
        )
    while mean_return(hi) > target:
        hi *= 10.0
        if hi > 1e9:
            raise CalibrationError(
                f"no concentration reaches mean return {target:.4g}"
            )
    kappa = hi
    for _ in range(200):
        kappa = 0.5 * (lo + hi)
        est = mean_return(kappa)
        if abs(est - target) <= rel_tol * target:
            break
        if est > target:
            lo = kappa
        else:
            hi = kappa
    else:
        raise CalibrationError("bisection failed to meet the matching tolerance")

    _KAPPA_CACHE[key] = kappa
    return kappa


def generate_instance(stream: RngStream, kappa: Optional[float] = None) -> ProblemInstance:
    """Generate the instance at the stream's grid coordinates."""
    seed = stream.instance_seed()
    rng = np.random.default_rng(seed)
    if stream.regime is Regime.BETA:
        return gen_beta_instance(stream.n_bets, stream.variance_level, rng,
                                 seed=seed, kappa=kappa)
    return gen_logit_offset_instance(stream.n_bets, stream.regime,
                                     stream.variance_level, rng, seed=seed)
