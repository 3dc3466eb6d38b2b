"""Pareto allocation field pi(a), indirect utility F0 and its impact matrices.

For a = (v, x, q) the total endowment in state w is
Sigma0(w) + x + <q, psi(w)>; the representative split of that total is the
Pareto allocation pi(a).  F1(a) = r(v, Sigma(x, q)) per state and
F0(a) = E[F1(a)].  All expectations are exact finite sums over states, taken
along the trailing axis so the reduction order is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .representative import eval_representative
from .scenario import Problem


@dataclass(frozen=True)
class ParetoPoint:
    v: np.ndarray
    x: float
    q: np.ndarray
    total: np.ndarray        # (N,)
    pi: np.ndarray           # (M, N)
    utils: np.ndarray        # (M, N), u_m(pi^m)
    f1: np.ndarray           # (N,)
    f1_x: np.ndarray         # (N,)
    f1_xx: np.ndarray        # (N,)
    q_density: np.ndarray    # (N,)
    r_density: np.ndarray    # (N,)
    tau: np.ndarray          # (M, N)
    rho: np.ndarray          # (M, N)
    r1: np.ndarray           # (N,)
    r0: float

    @property
    def q_over_r(self) -> np.ndarray:
        """dQ/dR per state."""
        return self.r1 / self.r0


@dataclass(frozen=True)
class FieldDerivatives:
    f0: float
    f0_v: np.ndarray
    f0_x: float
    f0_q: np.ndarray
    f0_xx: float
    f0_vx: np.ndarray
    f0_vv: np.ndarray
    f0_vq: np.ndarray
    f0_xq: np.ndarray
    f0_qq: np.ndarray
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def hessian(self) -> np.ndarray:
        """Full Hessian of F0 in the (v, x, q) ordering."""
        M, J = self.f0_vq.shape
        H = np.empty((M + 1 + J, M + 1 + J))
        H[:M, :M] = self.f0_vv
        H[:M, M] = H[M, :M] = self.f0_vx
        H[:M, M + 1:] = self.f0_vq
        H[M + 1:, :M] = self.f0_vq.T
        H[M, M] = self.f0_xx
        H[M, M + 1:] = H[M + 1:, M] = self.f0_xq
        H[M + 1:, M + 1:] = self.f0_qq
        return H


def total_endowment(problem: Problem, x, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(problem.space.j_claims)
    return problem.initial.sigma0 + x + problem.space.payoffs @ q


def eval_point(problem: Problem, v, x, q) -> ParetoPoint:
    space = problem.space
    v = np.asarray(v, dtype=float)
    q = np.asarray(q, dtype=float).reshape(space.j_claims)
    x = float(x)
    total = total_endowment(problem, x, q)
    ev = eval_representative(problem.utilities, v, total)
    r1 = ev.tolerances.sum(axis=0)
    f1_x = ev.r_x
    f1_xx = -f1_x / r1
    e_x = space.expect(f1_x)
    e_xx = space.expect(f1_xx)
    return ParetoPoint(
        v=v, x=x, q=q, total=total,
        pi=ev.alloc, utils=ev.utils,
        f1=ev.r_value, f1_x=f1_x, f1_xx=f1_xx,
        q_density=f1_x / e_x,
        r_density=f1_xx / e_xx,
        tau=ev.tolerances,
        rho=ev.tolerances / r1,
        r1=r1,
        r0=float(-e_x / e_xx),
    )


def impact_matrices(f_x, f_xx, f_vx, f_vv, f_vq, f_xq, f_qq, v):
    """A, C, D from raw second derivatives of a saddle function.

    Works for F0 as well as for a single sample path of F1, and is the
    definition-level route used to cross-check the expectation formulas.
    """
    v = np.asarray(v, dtype=float)
    A = np.outer(v, v) / f_x * (f_vv - np.outer(f_vx, f_vx) / f_xx)
    C = v[:, None] / f_x * (f_vq - np.outer(f_vx, f_xq) / f_xx)
    D = (-f_qq + np.outer(f_xq, f_xq) / f_xx) / f_x
    return A, C, D


def _cov(dens, probs, a, b):
    """Covariance under the measure with density ``dens`` w.r.t. ``probs``.

    ``a`` is (K, N) and ``b`` is (L, N); returns (K, L).
    """
    w = dens * probs
    ac = a - np.sum(a * w, axis=-1, keepdims=True)
    bc = b - np.sum(b * w, axis=-1, keepdims=True)
    return np.einsum("kn,ln->kl", ac * w, bc)


def field_derivatives(problem: Problem, point: ParetoPoint) -> FieldDerivatives:
    space = problem.space
    probs = space.probs
    psi = space.payoffs.T          # (J, N)
    v = point.v
    M = v.size
    tau, f1_xx = point.tau, point.f1_xx
    E = space.expect

    f0_xx = float(E(f1_xx))
    f0_x = float(E(point.f1_x))
    # per-state identities for the second derivatives of F1
    f0_vx = E(-f1_xx * tau) / v
    cross = tau[:, None, :] * (np.eye(M)[:, :, None] * point.r1 - tau[None, :, :])
    f0_vv = E(-f1_xx * cross) / np.outer(v, v)
    f0_vq = E(-f1_xx * tau[:, None, :] * psi[None, :, :]) / v[:, None]
    f0_xq = E(f1_xx * psi)
    f0_qq = E(f1_xx * psi[:, None, :] * psi[None, :, :])

    r0, rd = point.r0, point.r_density
    e_tau = E(rd * tau)
    A = (E(rd * cross) + np.outer(e_tau, e_tau)) / r0
    C = _cov(rd, probs, tau, psi) / r0
    D = _cov(rd, probs, psi, psi) / r0
    return FieldDerivatives(
        f0=float(E(point.f1)),
        f0_v=E(point.utils),
        f0_x=f0_x,
        f0_q=E(point.f1_x * psi),
        f0_xx=f0_xx,
        f0_vx=f0_vx,
        f0_vv=f0_vv,
        f0_vq=f0_vq,
        f0_xq=f0_xq,
        f0_qq=f0_qq,
        A=0.5 * (A + A.T),
        C=C,
        D=0.5 * (D + D.T),
    )


def F0(problem: Problem, v, x, q) -> float:
    """Indirect utility of the representative maker."""
    total = total_endowment(problem, x, q)
    return float(problem.space.expect(eval_representative(problem.utilities, v, total).r_value))


def F0_batch(problem: Problem, V, X, q):
    """F0, dF0/dx and d2F0/dx2 on a batch of points.

    ``V`` has shape (M, K) and ``X`` shape (K,); ``q`` is shared.
    """
    base = problem.initial.sigma0 + problem.space.payoffs @ np.asarray(q, dtype=float)
    total = np.asarray(X, dtype=float)[:, None] + base[None, :]
    ev = eval_representative(problem.utilities, np.asarray(V, dtype=float)[:, :, None], total)
    E = problem.space.expect
    return E(ev.r_value), E(ev.r_x), E(-ev.r_x / ev.tolerances.sum(axis=0))


def check_F_space_properties(problem: Problem, grid=None) -> dict:
    """Spot-check the saddle-function properties of F0 on a grid.

    ``grid`` is an iterable of (v, x, q); when omitted a default grid is
    built with weights on the simplex interior, x in {-2, 0, 2} and q in
    {-1, 0, 1} per component (first three claims only).  Boundary-limit
    behaviour is reported as a trend along weights approaching a vertex.
    """
    c = problem.c
    if grid is None:
        grid = default_grid(problem)
    worst = {
        "homogeneity": 0.0,
        "f0_x_min": np.inf,
        "f0_xx_max": -np.inf,
        "value_ratio_margin": np.inf,
        "cross_ratio_margin": np.inf,
        "A_spectrum_margin": np.inf,
        "A_eig_min": np.inf,
        "A_eig_max": -np.inf,
    }
    n_points = 0
    for v, x, q in grid:
        n_points += 1
        v = np.asarray(v, dtype=float)
        pt = eval_point(problem, v, x, q)
        fd = field_derivatives(problem, pt)
        f2 = F0(problem, 2 * v, x, q)
        worst["homogeneity"] = max(worst["homogeneity"], abs(f2 - 2 * fd.f0) / max(1.0, abs(fd.f0)))
        worst["f0_x_min"] = min(worst["f0_x_min"], fd.f0_x)
        worst["f0_xx_max"] = max(worst["f0_xx_max"], fd.f0_xx)
        ratio_v = -v * fd.f0_v / fd.f0_x
        worst["value_ratio_margin"] = min(worst["value_ratio_margin"], float(np.min(ratio_v) - 1 / c), float(c - np.max(ratio_v)))
        ratio_vx = v * fd.f0_vx / -fd.f0_xx
        worst["cross_ratio_margin"] = min(worst["cross_ratio_margin"], float(np.min(ratio_vx) - 1 / c), float(c - np.max(ratio_vx)))
        eig = np.linalg.eigvalsh(fd.A)
        worst["A_eig_min"] = min(worst["A_eig_min"], float(eig[0]))
        worst["A_eig_max"] = max(worst["A_eig_max"], float(eig[-1]))
        worst["A_spectrum_margin"] = min(worst["A_spectrum_margin"], float(eig[0] - 1 / c), float(c - eig[-1]))

    checks = {
        "homogeneity": worst["homogeneity"] <= 1e-12,
        "increasing_in_x": worst["f0_x_min"] > 0,
        "concave_in_x": worst["f0_xx_max"] < 0,
        "value_ratio_bounds": worst["value_ratio_margin"] >= -1e-10,
        "cross_ratio_bounds": worst["cross_ratio_margin"] >= -1e-10,
        "A_spectrum": worst["A_spectrum_margin"] >= -1e-8,
    }
    report = {
        "passed": all(checks.values()),
        "points": n_points,
        "c": c,
        "checks": checks,
        "worst": {k: float(v) for k, v in worst.items()},
    }
    if problem.space.m_makers > 1:
        report["boundary_trend"] = boundary_trend(problem)
    return report


def default_grid(problem: Problem):
    M, J = problem.space.m_makers, problem.space.j_claims
    weights = [np.full(M, 1.0 / M)]
    if M > 1:
        for m in range(M):
            for tilt in (0.1, 10.0):
                w = np.ones(M)
                w[m] = tilt
                weights.append(w / w.sum())
    qs = [np.zeros(J)]
    for j in range(min(J, 3)):
        for s in (-1.0, 1.0):
            q = np.zeros(J)
            q[j] = s
            qs.append(q)
    return [(w, x, q) for w in weights for x in (-2.0, 0.0, 2.0) for q in qs]


def boundary_trend(problem: Problem, x: float = 0.0, q=None) -> dict:
    """Behaviour of F0 as the weight of maker 1 goes to zero.

    F0 itself and maker 1's part of it, v^1 E[u_1(pi^1)], should rise to 0
    while sum_m dF0/dv^m falls without bound.  These are limit statements
    (the approach can be slow, like a fractional power of the weight), so
    only monotone trends are reported.
    """
    M, J = problem.space.m_makers, problem.space.j_claims
    q = np.zeros(J) if q is None else q
    eps = [10.0 ** -k for k in range(2, 9)]
    f0s, share, dsum = [], [], []
    for e in eps:
        w = np.full(M, (1 - e) / (M - 1))
        w[0] = e
        pt = eval_point(problem, w, x, q)
        ev = problem.space.expect(pt.utils)
        f0s.append(float(problem.space.expect(pt.f1)))
        share.append(float(e * ev[0]))
        dsum.append(float(ev.sum()))
    return {
        "eps": eps,
        "f0": f0s,
        "maker1_share": share,
        "dv_sum": dsum,
        "f0_to_zero_monotone": bool(np.all(np.diff(np.abs(f0s)) < 0)),
        "maker1_share_to_zero": bool(np.all(np.diff(np.abs(share)) < 0)),
        "dv_sum_decreasing": bool(np.all(np.diff(dsum) < 0)),
    }
