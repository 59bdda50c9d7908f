"""Certified lower and upper bounds on achievable expected log wealth.

Lower bounds come from solving subproblems: either grow the bet set one
bet at a time, re-optimizing over every candidate addition (stepwise), or
rank bets once by standalone quality and solve prefixes (greedy). Both
return feasible portfolios, so their values are attainable.

Upper bounds replace the bet holding the n-th highest expected net return
with a risk-free asset earning that same return. This strictly enlarges
the opportunity set, and every lower-ranked bet becomes nonpositive-edge
in units of the new numeraire and drops out, leaving an (n-1)-asset
problem. Expected log wealth splits into the numeraire's growth plus the
redenominated subproblem's optimum:

    f_upper(n) = log(1 + mu_(n)) + f'*,   b'_i = (1 + b_i)/(1 + mu_(n)) - 1.

A profile pairs, at each subproblem size n, the n-bet greedy lower bound
with the rank-(n+1) replacement upper bound (which also solves n assets),
and reports their ratio. At n = N both sides are the full problem, so the
ratio reaches 1 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .core import (
    Bet,
    Logits,
    Portfolio,
    ProblemInstance,
    single_bet_kelly,
    single_bet_log_wealth,
)
from .errors import ConvergenceError, EdgeError, InputError
from .newton import SolveResult
from .transform import QuadratureGrid, build_grid, solve_itm
from .exhaustive import solve_exhaustive

# Exact enumeration is faster than quadrature up to roughly this size, and
# the bounds do not depend on which solver produced them.
EXHAUSTIVE_CUTOFF = 12

# Bound values are compared against each other at absolute slacks down to
# 1e-12 (sandwich and monotonicity checks), which requires each subproblem
# value to be resolved well past the solvers' looser general-purpose
# defaults. Bets with nearly zero edge carry tiny optimal weights, and
# their approach to optimum moves the objective in sub-1e-12 increments,
# hence the generous iteration cap and the best-effort polish pass.
SUBSOLVE_TOL = 1e-11
SUBSOLVE_MAX_ITER = 250
POLISH_TOL = 1e-13
POLISH_MAX_ITER = 40


@dataclass(frozen=True)
class LowerBound:
    """Attainable bound: a feasible portfolio on a subset of the bets."""

    n: int
    selected: tuple[int, ...]
    f: float
    w0: float
    weights: np.ndarray  # full-length, zero off the selected set

    def portfolio(self) -> Portfolio:
        return Portfolio(w0=self.w0, w=self.weights)


@dataclass(frozen=True)
class BoundEntry:
    n: int
    x: float
    f_lower: float
    f_upper: float
    shortfall: float
    selected: tuple[int, ...]


@dataclass(frozen=True)
class BoundsProfile:
    n_total: int
    entries: tuple[BoundEntry, ...]

    @property
    def x(self) -> np.ndarray:
        return np.array([e.x for e in self.entries])

    @property
    def y(self) -> np.ndarray:
        return np.array([e.shortfall for e in self.entries])


@dataclass
class _SubSolve:
    f: float
    w0: float
    w: np.ndarray  # aligned with the bet list handed to the solver


def single_bet_optimum(bet: Bet) -> float:
    """Expected log wealth of one bet at its closed-form optimal stake."""
    return single_bet_log_wealth(single_bet_kelly(bet.p, bet.b), bet.p, bet.b)


def certify_solve(
    bets: Sequence[Bet],
    solver: str = "auto",
    theta0: Optional[Logits] = None,
    grid: Optional[QuadratureGrid] = None,
    tol: float = SUBSOLVE_TOL,
    polish: bool = True,
) -> SolveResult:
    """Solve at certification tolerance, then polish the value.

    The gradient in logit space scales each bet's first-order condition by
    its current weight, so a bet stuck far below its (already small)
    optimal weight contributes almost nothing to the gradient norm while
    the value deficit shrinks only like the norm itself rather than its
    square. The polish pass therefore continues from the solution at a
    tolerance near the gradient's floating point floor and keeps whatever
    value improvement materializes. It often cannot certify that final
    tolerance; that is fine, only the value is kept, and the gains decay
    geometrically so a short iteration budget captures nearly all.
    """
    if solver == "auto":
        solver = "exhaustive" if len(bets) <= EXHAUSTIVE_CUTOFF else "itm"
    if solver == "exhaustive":
        solve = partial(solve_exhaustive, bets)
    elif solver == "itm":
        solve = partial(solve_itm, bets, grid=grid)
    else:
        raise InputError(f"unknown solver {solver!r}; use auto, exhaustive, or itm")
    res = solve(tol=tol, theta0=theta0, max_iter=SUBSOLVE_MAX_ITER)
    if not polish:
        return res
    try:
        polished = solve(tol=POLISH_TOL, theta0=res.logits,
                         max_iter=POLISH_MAX_ITER)
    except ConvergenceError as err:
        polished = err.result
    if polished is not None and polished.f >= res.f:
        res = replace(polished, converged=polished.converged or res.converged)
    return res


def _solve_subset(
    bets: Sequence[Bet],
    solver: str = "auto",
    theta0: Optional[Logits] = None,
    grid: Optional[QuadratureGrid] = None,
    tol: float = SUBSOLVE_TOL,
    polish: bool = True,
) -> _SubSolve:
    if len(bets) == 1:
        f_star = single_bet_kelly(bets[0].p, bets[0].b)
        return _SubSolve(f=single_bet_optimum(bets[0]), w0=1.0 - f_star,
                         w=np.array([f_star]))
    res = certify_solve(bets, solver, theta0=theta0, grid=grid,
                        tol=tol, polish=polish)
    return _SubSolve(f=res.f, w0=res.portfolio.w0, w=res.portfolio.w)


def stepwise_lower(bets: Sequence[Bet], n_max: int, solver: str = "auto",
                   tol: float = SUBSOLVE_TOL,
                   polish: bool = True) -> list[LowerBound]:
    """Grow the bet set one at a time, best candidate by re-optimization.

    Entry n tries every unselected bet joined to the current selection and
    keeps the max, so step n costs N - n + 1 subproblem solves. Entry 1 is
    the closed-form single-bet optimum.
    """
    n_bets = len(bets)
    if not 1 <= n_max <= n_bets:
        raise InputError(f"n_max must lie in [1, {n_bets}], got {n_max}")
    singles = np.array([single_bet_optimum(bet) for bet in bets])
    best0 = int(np.argmax(singles))
    kelly0 = single_bet_kelly(bets[best0].p, bets[best0].b)
    weights = np.zeros(n_bets)
    weights[best0] = kelly0
    out = [LowerBound(n=1, selected=(best0,), f=float(singles[best0]),
                      w0=1.0 - kelly0, weights=weights)]
    selected = [best0]
    grid = build_grid() if n_max > EXHAUSTIVE_CUTOFF else None
    for n in range(2, n_max + 1):
        best = None
        for j in range(n_bets):
            if j in selected:
                continue
            subset = sorted(selected + [j])
            sub = _solve_subset([bets[i] for i in subset], solver, grid=grid,
                                tol=tol, polish=polish)
            if best is None or sub.f > best[0].f:
                best = (sub, j, subset)
        sub, j, subset = best
        selected.append(j)
        weights = np.zeros(n_bets)
        weights[subset] = sub.w
        out.append(LowerBound(n=n, selected=tuple(subset), f=sub.f,
                              w0=sub.w0, weights=weights))
    return out


def greedy_rank(bets: Sequence[Bet]) -> list[int]:
    """Bet indices sorted by standalone optimal log wealth, descending.

    The sort is stable, so equal-quality bets keep their original order.
    """
    singles = [single_bet_optimum(bet) for bet in bets]
    return sorted(range(len(bets)), key=lambda j: -singles[j])


def greedy_lower(bets: Sequence[Bet], n: int, solver: str = "auto",
                 theta0: Optional[Logits] = None,
                 grid: Optional[QuadratureGrid] = None,
                 tol: float = SUBSOLVE_TOL, polish: bool = True) -> LowerBound:
    """Solve the subproblem on the top-n ranked bets."""
    n_bets = len(bets)
    if not 1 <= n <= n_bets:
        raise InputError(f"n must lie in [1, {n_bets}], got {n}")
    order = greedy_rank(bets)[:n]
    sub = _solve_subset([bets[i] for i in order], solver, theta0=theta0,
                        grid=grid, tol=tol, polish=polish)
    weights = np.zeros(n_bets)
    weights[order] = sub.w
    return LowerBound(n=n, selected=tuple(sorted(order)), f=sub.f,
                      w0=sub.w0, weights=weights)


def _mu_order(bets: Sequence[Bet]) -> list[int]:
    mus = [bet.mu for bet in bets]
    return sorted(range(len(bets)), key=lambda j: -mus[j])


def _redenominate(bets: Sequence[Bet], keep: Sequence[int], mu_n: float) -> list[Bet]:
    return [Bet(p=bets[i].p, b=(1.0 + bets[i].b) / (1.0 + mu_n) - 1.0) for i in keep]


def upper_bound(bets: Sequence[Bet], n: int, solver: str = "auto",
                tol: float = SUBSOLVE_TOL, polish: bool = True) -> float:
    """Replace the rank-n bet (by expected net return) with a bond.

    Bets whose expected return ties the replaced one are dropped: they are
    exactly zero-edge in the new numeraire and take zero weight in the
    limit.
    """
    n_bets = len(bets)
    if not 1 <= n <= n_bets:
        raise InputError(f"n must lie in [1, {n_bets}], got {n}")
    order = _mu_order(bets)
    mu_n = bets[order[n - 1]].mu
    if mu_n <= 0.0:
        raise EdgeError("replacement return must be positive; rank-n bet has no edge")
    base = float(np.log1p(mu_n))
    keep = [i for i in order[: n - 1] if bets[i].mu > mu_n]
    if not keep:
        return base
    sub = _solve_subset(_redenominate(bets, keep, mu_n), solver,
                        tol=tol, polish=polish)
    return base + sub.f


def default_n_grid(n_bets: int, n_steps: int = 20) -> list[int]:
    """Subproblem sizes in increments of N / n_steps, always ending at N."""
    step = max(1, round(n_bets / n_steps))
    grid = list(range(step, n_bets + 1, step))
    if grid[-1] != n_bets:
        grid.append(n_bets)
    return grid


def bounds_profile(
    instance: ProblemInstance | Sequence[Bet],
    n_grid: Optional[Sequence[int]] = None,
    solver: str = "auto",
    lower_method: str = "greedy",
    stop_at_shortfall: Optional[float] = None,
    tol: float = SUBSOLVE_TOL,
    polish: bool = True,
) -> BoundsProfile:
    """Lower/upper bound pairs across subproblem sizes.

    Entry n holds the n-bet lower bound and the rank-(n+1) replacement
    upper bound, so both sides solve n assets; the final entry (n = N)
    is the full problem on both sides. Every subproblem is solved from the
    uniform start: chaining warm starts across sizes can silently freeze a
    newly added bet at a negligible weight, because a weight far below its
    optimum also has a gradient component far below any tolerance.
    ``stop_at_shortfall`` truncates the profile at the first entry
    reaching that ratio. ``tol`` and ``polish`` trade bound sharpness for
    speed; the defaults resolve values to ~1e-13, while fitting-oriented
    callers can pass a looser tolerance and skip the polish pass.
    """
    bets = list(instance.bets) if isinstance(instance, ProblemInstance) else list(instance)
    n_bets = len(bets)
    grid_n = sorted(set(n_grid)) if n_grid is not None else default_n_grid(n_bets)
    if grid_n and (grid_n[0] < 1 or grid_n[-1] > n_bets):
        raise InputError(f"n_grid must lie within [1, {n_bets}]")
    if not grid_n:
        raise InputError("n_grid is empty")

    rank = greedy_rank(bets)
    mu_rank = _mu_order(bets)
    quad = build_grid() if n_bets > EXHAUSTIVE_CUTOFF else None

    if lower_method == "stepwise":
        stepwise_chain = {lb.n: lb for lb in stepwise_lower(
            bets, max(grid_n), solver, tol=tol, polish=polish)}
    elif lower_method != "greedy":
        raise InputError(f"unknown lower_method {lower_method!r}")

    entries = []
    for n in grid_n:
        if lower_method == "stepwise":
            lb = stepwise_chain[n]
        else:
            order = rank[:n]
            sub = _solve_subset([bets[i] for i in order], solver, grid=quad,
                                tol=tol, polish=polish)
            weights = np.zeros(n_bets)
            weights[order] = sub.w
            lb = LowerBound(n=n, selected=tuple(sorted(order)), f=sub.f,
                            w0=sub.w0, weights=weights)

        if n == n_bets:
            # Both sides are the full problem; reuse the lower solve so the
            # final ratio is exactly 1.
            ub = lb.f
        else:
            mu_n1 = bets[mu_rank[n]].mu
            keep = [i for i in mu_rank[:n] if bets[i].mu > mu_n1]
            if not keep:
                ub = float(np.log1p(mu_n1))
            else:
                sub_bets = _redenominate(bets, keep, mu_n1)
                sub_u = _solve_subset(sub_bets, solver, grid=quad,
                                      tol=tol, polish=polish)
                ub = float(np.log1p(mu_n1)) + sub_u.f

        entry = BoundEntry(n=n, x=n / n_bets, f_lower=lb.f, f_upper=ub,
                           shortfall=lb.f / ub, selected=lb.selected)
        entries.append(entry)
        if stop_at_shortfall is not None and entry.shortfall >= stop_at_shortfall:
            break
    return BoundsProfile(n_total=n_bets, entries=tuple(entries))
