"""Damped Newton conjugate-gradient maximizer on simplex logits.

The portfolio lives on the probability simplex via softmax, which is
invariant to a constant shift of the logits. The solver works in the
shift-free gauge: gradients, CG iterates, and accepted steps are all
projected onto the zero-mean subspace, so the one flat direction never
enters the curvature solve.

Objectives plug in through a small oracle interface:

    value(theta)      -> f
    value_grad(theta) -> (f, grad)   gradient w.r.t. the logits
    hvp(theta, v)     -> H @ v       Hessian-vector product w.r.t. the logits

Oracles raise EdgeError for iterates outside their numerical domain; such
trial points are treated as failed line-search steps, not fatal errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Logits, Portfolio
from .errors import ConvergenceError, EdgeError


@dataclass
class SolveResult:
    """Outcome of a logit-space Newton solve."""

    logits: Logits
    portfolio: Portfolio
    f: float
    grad_norm: float
    n_iter: int
    n_cg: int
    converged: bool


def _project(x: np.ndarray) -> np.ndarray:
    """Remove the mean component (the softmax gauge direction)."""
    return x - x.mean()


def _cg(apply_a, b: np.ndarray, rel_tol: float, max_iter: int):
    """Conjugate gradients for A x = b on the zero-mean subspace.

    Returns (x, n_iter, hit_negative_curvature). On negative curvature the
    current iterate is returned; if that happens on the first iteration the
    right-hand side itself (steepest ascent) is returned instead.
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = np.sqrt(rs)
    if b_norm == 0.0:
        return x, 0, False
    for k in range(max_iter):
        if np.sqrt(rs) <= rel_tol * b_norm:
            return x, k, False
        ap = apply_a(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            if k == 0:
                return b.copy(), 1, True
            return x, k, True
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iter, False


def maximize(
    oracle,
    theta0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100,
    cg_rel_tol: float = 1e-8,
    armijo_c1: float = 1e-4,
    max_backtracks: int = 40,
) -> SolveResult:
    """Maximize oracle's objective over logits.

    Converges when the projected gradient norm drops below ``tol``.
    Raises ConvergenceError (with the best iterate attached as ``.result``)
    if the iteration stalls or exhausts ``max_iter`` first.
    """
    theta = _project(np.asarray(theta0, dtype=float).copy())
    n = len(theta)
    lam = 1e-6
    lam_floor = 1e-12
    lam_cap = 1e8

    f, grad = oracle.value_grad(theta)
    n_cg_total = 0
    stalled = 0

    for it in range(max_iter):
        g = _project(grad)
        g_norm = float(np.linalg.norm(g))
        if g_norm < tol:
            logits = Logits(theta)
            return SolveResult(logits, logits.to_portfolio(), f, g_norm,
                              it, n_cg_total, True)

        # Newton step in minimization form: (-M + lam I) d = g. Far from the
        # optimum M is a concavified model of the logit Hessian: the
        # objective is concave in the weights but softmax is not affine, so
        # the chain rule adds diag(u) - u s^T - s u^T (u the logit gradient,
        # s the weights) to the always-semidefinite pullback term.
        # Subtracting the positive part of that addition leaves
        # M = JHJ + diag(min(u, 0)), negative semidefinite everywhere, so no
        # large isotropic damping is needed while weights traverse orders of
        # magnitude. Near the optimum the correction terms (all O(|grad|))
        # would instead cap how far the gradient can fall, because steps in
        # low-curvature coordinates amplify the model error back into the
        # gradient; the exact Hessian is essentially semidefinite there, so
        # switch to it and let the rare leftover negative-curvature event be
        # absorbed by raising lam, Levenberg style.
        use_model = g_norm > 1e-6
        s_vec = np.exp(theta - theta.max())
        s_vec /= s_vec.sum()
        u_plus = np.maximum(g, 0.0)
        cg_tol = max(cg_rel_tol, min(0.1, np.sqrt(g_norm)))
        d = None
        while True:
            def apply_a(v, _theta=theta, _lam=lam, _s=s_vec, _up=u_plus,
                        _g=g, _model=use_model):
                pv = _project(v)
                hv = oracle.hvp(_theta, pv)
                if _model:
                    hv = hv - _up * pv + _g * (_s @ pv) + _s * (_g @ pv)
                return -_project(hv) + _lam * v

            # Floating-point CG needs room beyond the subspace dimension:
            # the spectrum spans ten orders once near-zero-edge bets settle
            # near their tiny weights, and with the cap at n the flattest
            # modes never get resolved, leaving Newton directions that creep.
            d, n_cg, neg_curv = _cg(apply_a, g, cg_tol, 3 * n)
            n_cg_total += n_cg
            if not neg_curv:
                break
            lam = max(lam, 1e-8) * 10.0
            if lam > lam_cap:
                d = g
                break
        slope = float(g @ d)
        if slope <= 0.0:
            d = g
            slope = float(g @ g)

        # Backtracking line search on the ascent direction.
        alpha = 1.0
        accepted = False
        f_acc = f
        theta_acc = theta
        for _ in range(max_backtracks):
            trial = _project(theta + alpha * d)
            try:
                f_trial = oracle.value(trial)
            except EdgeError:
                alpha *= 0.5
                continue
            if np.isfinite(f_trial) and f_trial >= f + armijo_c1 * alpha * slope:
                theta_acc, f_acc, accepted = trial, f_trial, True
                break
            alpha *= 0.5

        if accepted and abs(f_acc - f) >= 1e-14:
            theta, f = theta_acc, f_acc
            grad = oracle.value_grad(theta)[1]
            lam = max(lam / 10.0, lam_floor)
            stalled = 0
            continue

        # Objective improvements have dropped below float resolution (or the
        # search failed outright). Values can no longer certify progress, but
        # the analytic gradient still can: accept a (possibly shortened)
        # Newton step on sufficient decrease of the projected gradient norm.
        # Short steps matter because the logit parameterization gives a
        # near-converged tiny weight a Newton basin of about one logit; at
        # the basin edge the full step bounces while a half step still
        # contracts. Any value change here is below resolution, so the
        # monotonicity guard only has to exclude outright collapse.
        endgame = False
        for alpha_e in (1.0, 0.5, 0.25):
            try:
                trial = _project(theta + alpha_e * d)
                f_trial, grad_trial = oracle.value_grad(trial)
            except EdgeError:
                continue
            g_trial = float(np.linalg.norm(_project(grad_trial)))
            if (np.isfinite(f_trial)
                    and g_trial <= (1.0 - 0.25 * alpha_e) * g_norm
                    and f_trial >= f - 1e-12 * max(1.0, abs(f))):
                theta, f, grad = trial, f_trial, grad_trial
                lam = max(lam / 10.0, lam_floor)
                stalled = 0
                endgame = True
                break

        if not endgame:
            if accepted:
                theta, f = theta_acc, f_acc
                grad = oracle.value_grad(theta)[1]
                lam = max(lam / 10.0, lam_floor)
            else:
                lam = min(max(lam, 1e-8) * 10.0, lam_cap)
            stalled += 1

        if stalled >= 10:
            g_norm = float(np.linalg.norm(_project(grad)))
            logits = Logits(theta)
            if g_norm < tol:
                return SolveResult(logits, logits.to_portfolio(), f, g_norm,
                                  it + 1, n_cg_total, True)
            result = SolveResult(logits, logits.to_portfolio(), f, g_norm,
                                 it + 1, n_cg_total, False)
            raise ConvergenceError(
                f"stalled with projected gradient norm {g_norm:.3e} > {tol:.1e}",
                result=result,
            )

    g_norm = float(np.linalg.norm(_project(grad)))
    logits = Logits(theta)
    if g_norm < tol:
        return SolveResult(logits, logits.to_portfolio(), f, g_norm,
                          max_iter, n_cg_total, True)
    result = SolveResult(logits, logits.to_portfolio(), f, g_norm,
                         max_iter, n_cg_total, False)
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations "
        f"(projected gradient norm {g_norm:.3e} > {tol:.1e})",
        result=result,
    )
