import math

import numpy as np
import pytest
from scipy.stats import kstest

from kellyopt.core import Regime, VarianceLevel
from kellyopt.datagen import (
    Q_HIGH,
    Q_LOW,
    RegimeSpec,
    RngStream,
    best_side_return,
    beta_mode_params,
    calibrate_beta_concentration,
    gen_beta_instance,
    gen_logit_offset_instance,
    gnd_calibrate,
    gnd_sample,
)
from kellyopt.errors import InputError

# Closed-form scales: Var = alpha^2 Gamma(3/shape) / Gamma(1/shape).
SQRT_0_1 = 0.31622776601683794
SQRT_0_005 = 0.07071067811865475


def test_gnd_calibration_frozen_values():
    # Gaussian (shape 2): Var = alpha^2 / 2, so alpha = sqrt(2 * 0.05).
    assert gnd_calibrate(2.0, 0.05) == pytest.approx(SQRT_0_1, rel=1e-12)
    # Laplace (shape 1): Var = 2 alpha^2, so alpha = sqrt(0.01 / 2).
    assert gnd_calibrate(1.0, 0.01) == pytest.approx(SQRT_0_005, rel=1e-12)


def test_gnd_calibrate_validation():
    with pytest.raises(InputError):
        gnd_calibrate(0.0, 0.05)
    with pytest.raises(InputError):
        gnd_calibrate(2.0, -1.0)


@pytest.mark.parametrize("shape,kurt", [(1.0, 6.0), (2.0, 3.0), (6.0, 2.0)])
def test_gnd_sample_variance_and_kurtosis(shape, kurt):
    """Sample moments against the analytic variance and kurtosis.

    Kurtosis of the family is Gamma(5/s)Gamma(1/s)/Gamma(3/s)^2: 6 for
    Laplace, 3 for Gaussian, and exactly 2 at shape 6 (reflection
    formula), which is the platykurtic case.
    """
    target_var = 0.025
    alpha = gnd_calibrate(shape, target_var)
    rng = np.random.default_rng(int(shape * 1000))
    x = gnd_sample(shape, alpha, rng, size=200_000)
    assert float(np.mean(x)) == pytest.approx(0.0, abs=5e-3 * math.sqrt(target_var))
    assert float(np.var(x)) == pytest.approx(target_var, rel=0.05)
    c = x - x.mean()
    sample_kurt = float(np.mean(c**4) / np.mean(c**2) ** 2)
    assert sample_kurt == pytest.approx(kurt, rel=0.10)


def test_gnd_matches_reference_samplers():
    """Shape 1 and 2 reduce to Laplace and Gaussian; check by KS test."""
    rng = np.random.default_rng(404)
    alpha1 = gnd_calibrate(1.0, 0.025)
    x = gnd_sample(1.0, alpha1, rng, size=50_000)
    # Laplace density exp(-|x|/alpha): scale parameter is alpha itself.
    assert kstest(x, "laplace", args=(0.0, alpha1)).pvalue > 1e-3

    alpha2 = gnd_calibrate(2.0, 0.025)
    y = gnd_sample(2.0, alpha2, rng, size=50_000)
    # Gaussian density exp(-(x/alpha)^2): sigma = alpha / sqrt(2).
    assert kstest(y, "norm", args=(0.0, alpha2 / math.sqrt(2.0))).pvalue > 1e-3


def test_regime_spec_alpha():
    spec = RegimeSpec(Regime.NORMAL, VarianceLevel.HIGH)
    assert spec.alpha == pytest.approx(SQRT_0_1, rel=1e-12)
    assert RegimeSpec(Regime.BETA, VarianceLevel.HIGH).alpha is None
    assert spec.target_variance == 0.05


def test_stream_seeds_unique_and_stable():
    seeds = set()
    for regime in Regime:
        for level in VarianceLevel:
            for n in (5, 10):
                for idx in (0, 1, 2):
                    s = RngStream(base_seed=7, regime=regime, variance_level=level,
                                  n_bets=n, index=idx)
                    seed = s.instance_seed()
                    assert seed == s.instance_seed()
                    seeds.add(seed)
    assert len(seeds) == 4 * 3 * 2 * 3
    other = RngStream(base_seed=8, regime=Regime.LAPLACE,
                      variance_level=VarianceLevel.LOW, n_bets=5, index=0)
    assert other.instance_seed() not in seeds


def test_generate_instance_deterministic(make_instance):
    a = make_instance(Regime.GND6, VarianceLevel.HIGH, 12, index=3)
    b = make_instance(Regime.GND6, VarianceLevel.HIGH, 12, index=3)
    assert a.seed == b.seed
    assert all(x.p == y.p and x.b == y.b for x, y in zip(a.bets, b.bets))
    c = make_instance(Regime.GND6, VarianceLevel.HIGH, 12, index=4)
    assert any(x.p != y.p for x, y in zip(a.bets, c.bets))


def test_generated_instances_well_formed(make_instance):
    for regime in Regime:
        for level in VarianceLevel:
            inst = make_instance(regime, level, 15)
            assert inst.n_bets == 15
            assert inst.regime is regime
            assert inst.variance_level is level
            assert inst.contracts is not None and len(inst.contracts) == 15
            for contract, bet in zip(inst.contracts, inst.bets):
                assert Q_LOW < contract.q < Q_HIGH
                assert 0.0 < contract.p < 1.0
                assert contract.p != contract.q
                assert bet.has_edge


def test_logit_offset_requires_gnd_regime():
    rng = np.random.default_rng(0)
    with pytest.raises(InputError):
        gen_logit_offset_instance(5, Regime.BETA, VarianceLevel.LOW, rng)


def test_beta_mode_parameterization():
    rng = np.random.default_rng(31)
    for _ in range(50):
        q = rng.uniform(0.1, 0.9)
        kappa = rng.uniform(5.0, 500.0)
        a, b = beta_mode_params(q, kappa)
        assert a + b == pytest.approx(kappa, rel=1e-12)
        assert (a - 1.0) / (a + b - 2.0) == pytest.approx(q, rel=1e-10)


def test_kappa_monotone_in_variance(small_kappas):
    # More disagreement needs a flatter prior around the price.
    assert small_kappas[VarianceLevel.LOW] > small_kappas[VarianceLevel.MEDIUM]
    assert small_kappas[VarianceLevel.MEDIUM] > small_kappas[VarianceLevel.HIGH]


def test_kappa_calibration_cached(small_kappas):
    again = calibrate_beta_concentration(VarianceLevel.MEDIUM, n_samples=20_000)
    assert again == small_kappas[VarianceLevel.MEDIUM]


def test_beta_concentration_matches_gaussian_returns(small_kappas):
    """Independent draws reproduce the return matching the calibration targets.

    The Beta family at the calibrated concentration should offer the same
    average best-side expected return as the Gaussian logit-offset family
    at the same variance level.
    """
    level = VarianceLevel.MEDIUM
    kappa = small_kappas[level]
    n = 100_000

    rng = np.random.default_rng(777)
    q = rng.uniform(Q_LOW, Q_HIGH, size=n)
    alpha = gnd_calibrate(2.0, level.variance)
    eps = gnd_sample(2.0, alpha, rng, size=n)
    p_gauss = 1.0 / (1.0 + np.exp(-(np.log(q / (1 - q)) + eps)))
    gauss_mean = float(np.mean(best_side_return(p_gauss, q)))

    a, b = beta_mode_params(q, kappa)
    p_beta = rng.beta(a, b)
    beta_mean = float(np.mean(best_side_return(p_beta, q)))
    assert beta_mean == pytest.approx(gauss_mean, rel=0.05)


def test_best_side_return_shapes():
    assert best_side_return(0.6, 0.5) == pytest.approx(0.2)
    assert best_side_return(0.4, 0.5) == pytest.approx(0.2)
    out = best_side_return(np.array([0.6, 0.4]), np.array([0.5, 0.5]))
    assert np.allclose(out, [0.2, 0.2])


def test_beta_instance_uses_passed_kappa(small_kappas):
    rng = np.random.default_rng(99)
    inst = gen_beta_instance(10, VarianceLevel.LOW, rng, seed=1,
                             kappa=small_kappas[VarianceLevel.LOW])
    assert inst.n_bets == 10
    assert inst.regime is Regime.BETA
