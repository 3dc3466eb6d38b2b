"""Independent oracles and identity checks for the solver.

* ``exp_closed_form_price``: indifference price of an all-exponential
  economy.  Exponential makers share risk linearly, the representative maker
  is exponential with risk tolerance T = sum_m 1/a_m, and keeping every
  expected utility fixed reduces to E[exp(-Sigma(x, q)/T)] = E[exp(-Sigma0/T)],
  i.e. x(q) = T log(E[exp(-(Sigma0 + <q, psi>)/T)] / E[exp(-Sigma0/T)]).
* ``brute_force_saddle``: grid search over weights; the inner convex
  minimization over x brackets the root of dF0/dx = y.  Nothing from the
  Newton solver is reused.
* ``jacobian``/``derivative``/``hessian``: central differences with one
  Richardson extrapolation step.  Every finite-difference audit goes through
  these functions.
* ``conjugacy_battery``: the F0/G0 identity suite at conjugate points.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .pareto_field import F0_batch
from .scenario import Problem
from .solver import solve_indifference, solve_saddle

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# -- closed form ------------------------------------------------------------

def aggregate_tolerance(problem: Problem) -> float:
    if not problem.all_exponential:
        raise ValueError("closed-form price needs every maker to have a single exponential utility")
    return float(sum(1.0 / u.ara_lo for u in problem.utilities))


def exp_closed_form_price(problem: Problem, q, aggregate_tol: float | None = None) -> float:
    T = aggregate_tolerance(problem) if aggregate_tol is None else float(aggregate_tol)
    space = problem.space
    s0 = problem.initial.sigma0
    shifted = s0 + space.payoffs @ np.asarray(q, dtype=float).reshape(space.j_claims)
    logp = np.log(space.probs)
    return float(T * (logsumexp(logp - shifted / T) - logsumexp(logp - s0 / T)))


# -- finite differences -----------------------------------------------------

def _steps(point, step):
    h = step * np.maximum(1.0, np.abs(point))
    if np.any(point + h == point) or np.any(h == 0):
        raise FloatingPointError("finite-difference step underflows at this point")
    return h


def jacobian(fn: Callable, point, step: float = 1e-4):
    """Richardson-extrapolated central-difference Jacobian.

    Returns ``(estimate, error)`` where ``estimate[..., i]`` is the
    derivative of ``fn`` along coordinate ``i`` and ``error`` the gap
    between the extrapolated and the finer plain estimate.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    h = _steps(point, step)
    cols, errs = [], []
    for i in range(point.size):
        e = np.zeros_like(point)
        e[i] = 1.0
        d = []
        for hi in (h[i], h[i] / 2):
            fp = np.asarray(fn(point + hi * e), dtype=float)
            fm = np.asarray(fn(point - hi * e), dtype=float)
            d.append((fp - fm) / (2 * hi))
        rich = (4 * d[1] - d[0]) / 3
        cols.append(rich)
        errs.append(np.abs(rich - d[1]))
    return np.stack(cols, axis=-1), np.stack(errs, axis=-1)


def derivative(fn: Callable, x: float, step: float = 1e-4):
    est, err = jacobian(lambda p: fn(p[0]), [x], step)
    return float(est[0]), float(err[0])


def gradient(fn: Callable, point, step: float = 1e-4):
    return jacobian(fn, point, step)


def hessian(fn: Callable, point, step: float = 1e-3):
    """Hessian of a scalar function as the Jacobian of its difference gradient."""
    est, err = jacobian(lambda p: jacobian(fn, p, step)[0], point, step)
    return 0.5 * (est + est.T), err


# -- brute-force saddle -------------------------------------------------------

def _golden_min(fn, lo, hi, iters=90):
    """Vectorized golden-section minimization of convex 1-D slices."""
    a, b = lo.copy(), hi.copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _GOLDEN * (b - a)
        new_d = a + _GOLDEN * (b - a)
        c_keep = np.where(left, new_c, d)
        d_keep = np.where(left, c, new_d)
        f_new = fn(np.where(left, new_c, new_d))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_keep, d_keep
    x = 0.5 * (a + b)
    return x, fn(x)


def _decreasing_root(g, lo, hi, iters=200, xtol=1e-13, gtol=0.0):
    """Vectorized root of a decreasing g with g(lo) > 0 > g(hi).

    ``g`` returns the value and the slope.  Newton steps that leave the
    current bracket are replaced by bisection.  Entries without a sign
    change return the nearer end.
    """
    a, b = lo.copy(), hi.copy()
    ga, _ = g(a)
    gb, _ = g(b)
    ok = (ga > 0) & (gb < 0)
    x = np.where(ok, 0.5 * (a + b), a)
    for _ in range(iters):
        gx, dg = g(x)
        a = np.where(gx > 0, x, a)
        b = np.where(gx < 0, x, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - gx / dg
        inside = (newton > a) & (newton < b)
        x_new = np.where(inside, newton, 0.5 * (a + b))
        done = ~ok | (np.abs(gx) <= gtol) | (np.abs(x_new - x) <= xtol * np.maximum(1.0, np.abs(x)))
        x = np.where(done, x, x_new)
        if np.all(done):
            break
    return np.where(ok, x, np.where(ga <= 0, lo, hi))


def _simplex_grid(center, half, n):
    """Points of the open simplex near ``center`` (M-1 free coordinates)."""
    axes = [np.linspace(c - half, c + half, n) for c in center]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")]) if axes else np.zeros((0, 1))
    last = 1.0 - mesh.sum(axis=0)
    keep = np.all(mesh > 0, axis=0) & (last > 0)
    return mesh[:, keep]


def brute_force_saddle(f0: Callable, u, y: float, *, n: int = 17, levels: int = 3,
                       x_bound: float = 40.0, log_scale_half: float = 8.0) -> dict:
    """Grid saddle of sup_v inf_x [<v, u> + x y - f0(v, x)].

    ``f0(V, X)`` evaluates the saddle function with its first and second
    x-derivatives on a batch: ``V`` is (M, K), ``X`` is (K,).  The inner infimum is convex in x
    and is located by bracketing the root of f0_x = y.  Weights are v = s * w with w on the simplex and log s on
    a uniform grid; each level re-centers a grid of the same size two pitches
    wide around the incumbent.  Also returns the on-grid inf-sup value.
    """
    u = np.asarray(u, dtype=float)
    M = u.size
    y = float(y)
    w_center = np.full(M - 1, 1.0 / M)
    w_half = 0.5 - 0.5 / n if M > 1 else 0.0
    s_center, s_half = math.log(y), log_scale_half

    def inner(V):
        K = V.shape[1]
        lo, hi = np.full(K, -x_bound), np.full(K, x_bound)
        def g(X):
            _, f_x, f_xx = f0(V, X)
            return f_x - y, f_xx

        x = _decreasing_root(g, lo, hi, gtol=8 * np.finfo(float).eps * y)
        val = x * y - f0(V, x)[0] + u @ V
        at_edge = (np.abs(x) > x_bound * (1 - 1e-6))
        return x, np.where(at_edge, -np.inf, val)

    for level in range(levels + 1):
        if M > 1:
            W = _simplex_grid(w_center, w_half, n)
            W = np.vstack([W, 1.0 - W.sum(axis=0)])
        else:
            W = np.ones((1, 1))
        S = np.linspace(s_center - s_half, s_center + s_half, n)
        V = (W[:, :, None] * np.exp(S)[None, None, :]).reshape(M, -1)
        X, vals = inner(V)
        best = int(np.argmax(vals))
        iw, js = divmod(best, S.size)
        w_pitch = 2 * w_half / (n - 1) if M > 1 else 0.0
        s_pitch = 2 * s_half / (n - 1)
        if level < levels:
            w_center = W[:-1, iw] if M > 1 else w_center
            s_center = S[js]
            w_half, s_half = 2 * w_pitch, 2 * s_pitch

    v_best, x_best, sup_inf = V[:, best], float(X[best]), float(vals[best])

    # inf over x of the on-grid sup over v (same grid)
    def outer(Xs):
        out = np.empty_like(Xs)
        for k, xk in enumerate(Xs):
            out[k] = np.max(u @ V + xk * y - f0(V, np.full(V.shape[1], xk))[0])
        return out

    x_is, inf_sup = _golden_min(outer, np.array([x_best - 1.0]), np.array([x_best + 1.0]), iters=60)
    return {
        "v": v_best,
        "x": x_best,
        "value": sup_inf,
        "inf_sup": float(inf_sup[0]),
        "x_inf_sup": float(x_is[0]),
        "pitch": float(max(w_pitch, s_pitch)),
        "w_pitch": float(w_pitch),
        "log_scale_pitch": float(s_pitch),
    }


def brute_force_for(problem: Problem, u, y: float, q, **kw) -> dict:
    q = np.asarray(q, dtype=float)
    return brute_force_saddle(lambda V, X: F0_batch(problem, V, X, q), u, y, **kw)


# -- conjugacy battery ------------------------------------------------------

def _bounded(values, lo, hi, slack):
    values = np.asarray(values, dtype=float)
    return float(min(np.min(values) - lo, hi - np.max(values))) >= -slack


def conjugacy_point(problem: Problem, q, step: float = 1e-4) -> dict:
    """All conjugacy identities at the saddle conjugate to (U0, 1, q)."""
    c = problem.c
    q = np.asarray(q, dtype=float)
    res = solve_indifference(problem, q)
    sp = res.saddle
    u0, v, x = problem.initial.u0, sp.v, sp.x
    start = (v, x)
    fd = sp.derivs
    A, C, D = fd.A, fd.C, fd.D
    M = v.size

    def v_of_u(uu):
        return solve_saddle(problem, uu, 1.0, q, start=start).v

    def x_of_q(qq):
        return solve_indifference(problem, qq, start=start).x_q

    def v_of_q(qq):
        return solve_indifference(problem, qq, start=start).v_raw

    def grad_of_q(qq):
        r = solve_indifference(problem, qq, start=start)
        pt = r.saddle.point
        return -(pt.q_density * problem.space.probs) @ problem.space.payoffs

    g_uu, _ = jacobian(v_of_u, u0, step)
    B = g_uu / np.outer(v, v)
    B = 0.5 * (B + B.T)
    dv_dq, _ = jacobian(v_of_q, q, step)
    E_fd = dv_dq / v[:, None]
    H_fd, _ = jacobian(grad_of_q, q, step)
    H_fd = 0.5 * (H_fd + H_fd.T)
    dx_dq, _ = jacobian(lambda qq: np.array([x_of_q(qq)]), q, step)
    dx_dq = dx_dq[0]

    AinvC = np.linalg.solve(A, C)
    E_cf = -AinvC
    H_cf = C.T @ AinvC + D
    ident = np.eye(M)
    z = np.linalg.solve(B, np.ones(M))

    errs = {
        "f_equals_uv": abs(fd.f0 - u0 @ v) / max(1.0, abs(fd.f0)),
        "saddle_f_x": abs(fd.f0_x - 1.0),
        "saddle_f_v": float(np.max(np.abs(fd.f0_v - u0))),
        "envelope_q": float(np.max(np.abs(dx_dq + fd.f0_q)) / max(1.0, np.max(np.abs(fd.f0_q)))),
        "BA_identity": float(np.max(np.abs(B @ A - ident))),
        "E_matrix": float(np.max(np.abs(E_fd - E_cf))),
        "H_matrix": float(np.max(np.abs(H_fd - H_cf))),
    }
    tol = {
        "f_equals_uv": 1e-10, "saddle_f_x": 1e-10, "saddle_f_v": 1e-10,
        "envelope_q": 1e-6, "BA_identity": 1e-5, "E_matrix": 1e-5, "H_matrix": 1e-5,
    }
    checks = {k: errs[k] <= tol[k] for k in errs}
    eigA = np.linalg.eigvalsh(A)
    eigB = np.linalg.eigvalsh(B)
    checks.update({
        "tolerance_bounds": _bounded(-u0 * v, 1 / c, c, 1e-10) and _bounded(-v * fd.f0_v / fd.f0_x, 1 / c, c, 1e-10),
        "spectral_bounds": _bounded(eigA, 1 / c, c, 1e-8) and _bounded(eigB, 1 / c, c, 1e-5),
        "row_sum_bounds": _bounded(A @ np.ones(M), 1 / c, c, 1e-10) and _bounded(z, 1 / c, c, 1e-5),
    })
    return {
        "q": q.tolist(),
        "passed": all(checks.values()),
        "checks": checks,
        "errors": errs,
        "B_eigs": eigB.tolist(),
        "A_eigs": eigA.tolist(),
        "B_inverse_row_sums": z.tolist(),
    }


def conjugacy_battery(problem: Problem, grid=None, step: float = 1e-4) -> dict:
    J = problem.space.j_claims
    if grid is None:
        grid = [np.zeros(J)]
        for j in range(min(J, 3)):
            for s in (-1.0, 1.0):
                q = np.zeros(J)
                q[j] = s
                grid.append(q)
    points = [conjugacy_point(problem, q, step) for q in grid]
    failing = sorted({k for p in points for k, ok in p["checks"].items() if not ok})
    return {"passed": not failing, "failing": failing, "points": points}
