import numpy as np
import pytest

from kellyopt.core import Bet, Regime, VarianceLevel
from kellyopt.datagen import RngStream, calibrate_beta_concentration, generate_instance

BASE_SEED = 20240817

# Populated by the acceptance tests; echoed after the run so the measured
# margins are visible even when everything passes.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert."""

    def report(num: int, ok: bool, details: str):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'} ({details})"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        assert ok, line

    return report


@pytest.fixture(scope="session")
def small_kappas():
    """Beta concentrations calibrated on a reduced sample budget.

    Calibration at the production sample count takes ~10 s per variance
    level; 20k samples reproduces kappa to about a percent, which is
    plenty for tests that only need plausible Beta instances.
    """
    return {level: calibrate_beta_concentration(level, n_samples=20_000)
            for level in VarianceLevel}


@pytest.fixture(scope="session")
def make_instance(small_kappas):
    def build(regime, level, n_bets, index=0, base_seed=BASE_SEED):
        stream = RngStream(base_seed=base_seed, regime=regime,
                          variance_level=level, n_bets=n_bets, index=index)
        kappa = small_kappas[level] if regime is Regime.BETA else None
        return generate_instance(stream, kappa=kappa)
    return build


def random_bets(rng: np.random.Generator, n: int) -> list[Bet]:
    """Positive-edge bets with spread-out odds, for solver-agnostic tests."""
    bets = []
    while len(bets) < n:
        p = rng.uniform(0.15, 0.9)
        b = rng.uniform(0.2, 4.0)
        if p * (1.0 + b) > 1.005:
            bets.append(Bet(p=p, b=b))
    return bets
