"""Indifference prices, the conjugate G0 and the price-impact expansion.

The saddle point of F0 conjugate to (u, y, q) solves

    dF0/dv (v, x, q) = u,    dF0/dx (v, x, q) = y,

and then G0(u, y, q) = x * y.  With u = U0 (initial expected utilities) and
y = 1 the solution gives the indifference cash amount x(q) and the
post-trade Pareto weights w(q) = v / sum(v).  Newton runs in (log v, x) with
the exact Hessian of F0; it is globalized by continuation from the known
solution at (U0, q = 0) along a straight path in (u, q).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .pareto_field import FieldDerivatives, ParetoPoint, eval_point, field_derivatives
from .representative import ConvergenceError
from .scenario import Problem

log = logging.getLogger(__name__)

RESID_TOL = 1e-11
MAX_STAGES = 30
MAX_NEWTON = 50
MAX_HALVINGS = 30


class SolverError(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SaddlePoint:
    u: np.ndarray
    y: float
    q: np.ndarray
    v: np.ndarray
    x: float
    point: ParetoPoint
    derivs: FieldDerivatives
    diagnostics: dict


@dataclass(frozen=True)
class IndifferenceResult:
    q: np.ndarray
    x_q: float
    w_q: np.ndarray
    v_raw: np.ndarray
    u0: np.ndarray
    alloc1: np.ndarray
    diagnostics: dict
    saddle: SaddlePoint = field(repr=False)

    @property
    def utility_residuals(self) -> np.ndarray:
        return self.saddle.derivs.f0_v - self.u0


@dataclass(frozen=True)
class ImpactReport:
    q: np.ndarray
    gradient: np.ndarray
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E_mat: np.ndarray
    H: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    point: ParetoPoint = field(repr=False)
    payoffs: np.ndarray = field(repr=False)
    probs: np.ndarray = field(repr=False)

    def expansion_terms(self, dq) -> dict:
        """Linear and the three nonnegative quadratic terms of x(q + dq) - x(q)."""
        dq = np.asarray(dq, dtype=float).reshape(self.gradient.shape)
        pt = self.point
        xi = self.payoffs @ dq                      # <dq, psi> per state
        rw = pt.r_density * self.probs              # R-weights
        dqdr = pt.q_over_r
        z = self.Z @ dq                             # (M,)
        zbar = (pt.rho * z[:, None]).sum(axis=0)
        var_rho = (pt.rho * (z[:, None] - zbar) ** 2).sum(axis=0)
        xi_c = xi - np.sum(xi * rw)
        cov = np.sum((dqdr - np.sum(dqdr * rw)) * xi_c * rw)
        var = np.sum(xi_c * xi_c * rw)
        return {
            "linear": float(self.gradient @ dq),
            "quad1": float(0.5 * pt.r0 * np.sum(dqdr ** 2 * var_rho * rw)),
            "quad2": float(cov ** 2 / (2 * pt.r0)),
            "quad3": float(var / (2 * pt.r0)),
        }


def _system(problem, v, x, q):
    pt = eval_point(problem, v, x, q)
    return pt, field_derivatives(problem, pt)


def _residual(fd, u, y):
    return np.concatenate([(fd.f0_v - u) / np.abs(u), [(fd.f0_x - y) / y]])


def _jacobian(fd, v, u, y):
    """Jacobian of the scaled residual in (log v, x)."""
    M = v.size
    J = np.empty((M + 1, M + 1))
    J[:M, :M] = fd.f0_vv * v[None, :] / np.abs(u)[:, None]
    J[:M, M] = fd.f0_vx / np.abs(u)
    J[M, :M] = fd.f0_vx * v / y
    J[M, M] = fd.f0_xx / y
    return J


def _newton(problem, v, x, u, y, q, max_iter=MAX_NEWTON, tol=RESID_TOL):
    M = v.size
    theta = np.concatenate([np.log(v), [x]])
    pt, fd = _system(problem, v, x, q)
    res = _residual(fd, u, y)
    norm = np.max(np.abs(res))
    halvings = 0
    polished = 0
    it = 0
    for it in range(1, max_iter + 1):
        # two extra steps past the tolerance push the residual to rounding level
        if norm == 0 or (norm <= tol and polished >= 2):
            break
        step = np.linalg.solve(_jacobian(fd, np.exp(theta[:M]), u, y), -res)
        accepted = False
        lam = 1.0
        for _ in range(MAX_HALVINGS if norm > tol else 1):
            trial = theta + lam * step
            try:
                with np.errstate(over="raise", invalid="raise", divide="raise"):
                    pt_t, fd_t = _system(problem, np.exp(trial[:M]), trial[M], q)
                    res_t = _residual(fd_t, u, y)
                norm_t = np.max(np.abs(res_t))
            except (FloatingPointError, ValueError, ConvergenceError):
                norm_t = np.inf
            if norm_t < norm:
                accepted = True
                break
            lam *= 0.5
            halvings += 1
        if not accepted:
            break
        if norm <= tol:
            polished += 1
        theta, pt, fd, res, norm = trial, pt_t, fd_t, res_t, norm_t
    diag = {"iterations": it, "halvings": halvings, "residual": float(norm)}
    if norm > tol:
        return None, diag
    return (np.exp(theta[:M]), float(theta[M]), pt, fd), diag


def _tangent(fd, v, u_dir, y, q_dir, u):
    """d(log v, x)/dt along the path (u + t u_dir, q + t q_dir)."""
    rhs = np.concatenate([(fd.f0_vq @ q_dir - u_dir) / np.abs(u), [fd.f0_xq @ q_dir / y]])
    return np.linalg.solve(_jacobian(fd, v, u, y), -rhs)


def solve_saddle(problem: Problem, u, y: float, q, start=None) -> SaddlePoint:
    """Saddle point (v, x) of F0 conjugate to (u, y, q).

    ``start`` may carry a nearby solution ``(v, x)``; Newton is then tried
    directly from it before falling back to continuation.
    """
    space, init = problem.space, problem.initial
    u = np.asarray(u, dtype=float).reshape(space.m_makers)
    q = np.asarray(q, dtype=float).reshape(space.j_claims)
    y = float(y)
    if np.any(~(u < 0)):
        raise ValueError("indirect utilities must be strictly negative")
    if not y > 0:
        raise ValueError("saddle scale y must be positive")
    if not np.all(np.isfinite(q)):
        raise ValueError("order must be finite")

    if start is not None:
        sol, diag = _newton(problem, np.asarray(start[0], dtype=float), float(start[1]), u, y, q)
        if sol is not None:
            diag.update(stages=1, warm_start=True)
            return SaddlePoint(u, y, q, sol[0], sol[1], sol[2], sol[3], diag)

    u0 = init.u0
    u_dir = u - u0
    q_dir = q.copy()
    _, fd0 = _system(problem, init.lambda0, 0.0, np.zeros_like(q))
    v = init.lambda0 * y / fd0.f0_x
    sol, diag = _newton(problem, v, 0.0, u0, y, np.zeros_like(q))
    if sol is None:
        raise SolverError("Newton failed at the initial state", diag)
    v, x, pt, fd = sol
    iters, halvings = diag["iterations"], diag["halvings"]

    t, dt, stages = 0.0, 1.0, 0
    while t < 1.0:
        stages += 1
        if stages > MAX_STAGES:
            raise SolverError(
                f"continuation stalled at t={t:.4g} after {MAX_STAGES} stages",
                {"t": t, "stages": stages, "residual": diag.get("residual")},
            )
        t_new = min(1.0, t + dt)
        u_t = u0 + t * u_dir
        tan = _tangent(fd, v, u_dir, y, q_dir, u_t)
        guess = np.concatenate([np.log(v), [x]]) + (t_new - t) * tan
        u_new = u0 + t_new * u_dir
        try:
            sol, diag = _newton(problem, np.exp(guess[:-1]), guess[-1], u_new, y, t_new * q_dir)
        except (ValueError, ConvergenceError, np.linalg.LinAlgError, FloatingPointError):
            sol, diag = None, {"iterations": 0, "halvings": 0, "residual": np.inf}
        iters += diag["iterations"]
        halvings += diag["halvings"]
        if sol is None:
            dt *= 0.5
            log.debug("continuation step rejected at t=%.4g, dt -> %.3g", t, dt)
            continue
        v, x, pt, fd = sol
        t = t_new
        dt = min(2 * dt, 1.0)

    diag = {
        "iterations": iters,
        "halvings": halvings,
        "stages": stages,
        "residual": diag["residual"],
        "warm_start": False,
    }
    return SaddlePoint(u, y, q, v, x, pt, fd, diag)


def solve_indifference(problem: Problem, q, start=None) -> IndifferenceResult:
    """Cash amount x(q) keeping every maker's expected utility at U0."""
    sp = solve_saddle(problem, problem.initial.u0, 1.0, q, start=start)
    return IndifferenceResult(
        q=sp.q,
        x_q=sp.x,
        w_q=sp.v / sp.v.sum(),
        v_raw=sp.v,
        u0=problem.initial.u0,
        alloc1=sp.point.pi,
        diagnostics=sp.diagnostics,
        saddle=sp,
    )


def eval_G0(problem: Problem, u, y: float, q, start=None) -> float:
    sp = solve_saddle(problem, u, y, q, start=start)
    return sp.x * float(y)


def impact_report(problem: Problem, result: IndifferenceResult) -> ImpactReport:
    pt = eval_point(problem, result.w_q, result.x_q, result.q)
    fd = field_derivatives(problem, pt)
    A, C, D = fd.A, fd.C, fd.D
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise SolverError(f"impact matrix A is singular (condition number {cond:.3e})")
    AinvC = np.linalg.solve(A, C)
    E = -AinvC
    H = C.T @ AinvC + D
    H = 0.5 * (H + H.T)
    Z = E - result.w_q @ E
    return ImpactReport(
        q=result.q,
        gradient=-(pt.q_density * problem.space.probs) @ problem.space.payoffs,
        A=A, C=C, D=D, E_mat=E, H=H, Z=Z, w=result.w_q,
        point=pt,
        payoffs=problem.space.payoffs,
        probs=problem.space.probs,
    )


def weight_variance_diagnostics(problem: Problem, report: ImpactReport, r_dir, tol: float = 1e-9) -> dict:
    """The three equivalent conditions for the weight-variance term to vanish."""
    r_dir = np.asarray(r_dir, dtype=float).reshape(report.gradient.shape)
    pt = report.point
    probs = report.probs
    xi = report.payoffs @ r_dir
    z = report.Z @ r_dir
    term1 = 2 * report.expansion_terms(r_dir)["quad1"] / pt.r0
    term2 = float(np.max(np.abs(z))) if z.size else 0.0
    qw = pt.q_density * probs
    e_q_rho = (pt.rho * qw).sum(axis=1)
    e_rm = (pt.rho * xi * qw).sum(axis=1) / e_q_rho
    term3 = float(np.max(np.abs(e_rm - np.sum(xi * qw))))
    scale = max(1.0, float(np.max(np.abs(r_dir))) if r_dir.size else 1.0)
    verdicts = [term1 <= tol * scale ** 2, term2 <= tol * scale, term3 <= tol * scale]
    return {
        "weighted_rho_variance": term1,
        "z_r_norm": term2,
        "measure_gap": term3,
        "vanish": verdicts,
        "agree": len(set(verdicts)) == 1,
        "rho_spread": float(np.max(pt.rho.max(axis=1) - pt.rho.min(axis=1))),
    }


def expansion_residual(problem: Problem, q, dq, base: IndifferenceResult | None = None) -> dict:
    """Actual change x(q + dq) - x(q) against the second-order prediction."""
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float).reshape(q.shape)
    if base is None:
        base = solve_indifference(problem, q)
    rep = impact_report(problem, base)
    t = rep.expansion_terms(dq)
    if np.any(dq != 0):
        moved = solve_indifference(problem, q + dq, start=(base.v_raw, base.x_q))
        actual = moved.x_q - base.x_q
    else:
        actual = 0.0
    predicted = t["linear"] + t["quad1"] + t["quad2"] + t["quad3"]
    return {"actual": actual, "predicted": predicted, "residual": actual - predicted, "terms": t}
