"""Representative market maker r(v, x) = sup_{sum x^m = x} sum_m v^m u_m(x^m).

The first-order conditions v^m u_m'(x^m) = y make the maximization a scalar
root-find in y = dr/dx.  It is solved in log y, where the map
log y -> sum_m I_m(y / v^m) has slope -sum_m t_m in [-T_max, -T_min]; one
function value therefore brackets the root exactly.

Everything broadcasts: ``v`` has shape (M,) or (M, *S) and ``x`` has shape S,
so a whole scenario (or a grid of scenarios) is solved in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .utility import UtilityFunction

MAX_ITER = 200
_V_FLOOR = 1e-300


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RepresentativeEval:
    v: np.ndarray
    x: np.ndarray
    r_value: np.ndarray
    r_x: np.ndarray
    alloc: np.ndarray
    tolerances: np.ndarray
    utils: np.ndarray  # u_m(alloc^m) = dr/dv^m
    iterations: int


@dataclass(frozen=True)
class RepresentativeSecond:
    r_xx: np.ndarray
    r_vx: np.ndarray
    r_vv: np.ndarray
    d_alloc_dx: np.ndarray
    d_alloc_dv: np.ndarray
    A_r: np.ndarray


def _prepare(utilities, v, x):
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    M = len(utilities)
    if v.shape[0] != M:
        raise ValueError(f"weight vector has {v.shape[0]} entries for {M} makers")
    if np.any(~(v >= _V_FLOOR)) or not np.all(np.isfinite(v)):
        raise ValueError("representative weights must be finite and strictly positive")
    if not np.all(np.isfinite(x)):
        raise ValueError("total wealth must be finite")
    shape = np.broadcast_shapes(v.shape[1:], x.shape)
    v = np.broadcast_to(v.reshape(v.shape + (1,) * (len(shape) - (v.ndim - 1))), (M,) + shape)
    x = np.broadcast_to(x, shape)
    return v, x


def _allocate(utilities, log_v, eta):
    return np.stack([u.inverse_marginal(None, log_y=eta - lv) for u, lv in zip(utilities, log_v)])


def eval_representative(utilities: Sequence[UtilityFunction], v, x) -> RepresentativeEval:
    """Maximizing split of total wealth ``x`` under Pareto weights ``v``."""
    v, x = _prepare(utilities, v, x)
    M = len(utilities)
    # normalize by the largest weight: the split depends on v only through
    # its ray, and v / max(v) is exactly invariant under scaling by 2^k
    v_top = v.max(axis=0)
    log_w = np.log(v / v_top)

    t_min = sum(1.0 / u.ara_hi for u in utilities)
    t_max = sum(1.0 / u.ara_lo for u in utilities)
    scale = np.maximum(1.0, np.abs(x))

    x_even = x / M
    eta = np.mean([u.log_deriv(x_even) + lw for u, lw in zip(utilities, log_w)], axis=0)
    alloc = _allocate(utilities, log_w, eta)
    h = alloc.sum(axis=0) - x
    # cancellation among large opposite allocations limits attainable accuracy
    tol = 1e-13 * np.maximum(scale, np.abs(alloc).sum(axis=0))
    # the root lies h/t_max .. h/t_min to the right of eta
    lo = np.where(h > 0, eta + h / t_max, eta + h / t_min)
    hi = np.where(h > 0, eta + h / t_min, eta + h / t_max)
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)

    it = 0
    for it in range(1, MAX_ITER + 1):
        if np.all(np.abs(h) <= tol):
            break
        tsum = sum(u.risk_tolerance(a) for u, a in zip(utilities, alloc))
        cand = eta + h / tsum
        outside = ~((cand >= lo) & (cand <= hi))
        cand = np.where(outside, 0.5 * (lo + hi), cand)
        eta_new = np.where(np.abs(h) <= tol, eta, cand)
        alloc = _allocate(utilities, log_w, eta_new)
        h_new = alloc.sum(axis=0) - x
        tol = 1e-13 * np.maximum(scale, np.abs(alloc).sum(axis=0))
        lo = np.where(h_new > 0, np.maximum(lo, eta_new), lo)
        hi = np.where(h_new < 0, np.minimum(hi, eta_new), hi)
        stalled = (eta_new == eta) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(eta_new)))
        eta, h = eta_new, h_new
        if np.all((np.abs(h) <= tol) | stalled):
            break
    else:
        raise ConvergenceError(
            f"representative split did not converge in {MAX_ITER} iterations; "
            f"max residual {np.max(np.abs(h)):.3e}"
        )
    if np.any(np.abs(h) > 1e-10 * np.maximum(scale, np.abs(alloc).sum(axis=0))):
        raise ConvergenceError(f"representative split residual {np.max(np.abs(h)):.3e} too large")

    # the last sum residual is absorbed by the maker with the largest tolerance
    tol_m = np.stack([u.risk_tolerance(a) for u, a in zip(utilities, alloc)])
    alloc = alloc - h * tol_m / tol_m.sum(axis=0)
    utils = np.stack([u.value(a) for u, a in zip(utilities, alloc)])
    r_x = v_top * np.exp(eta)
    return RepresentativeEval(
        v=v,
        x=x,
        r_value=(v * utils).sum(axis=0),
        r_x=r_x,
        alloc=alloc,
        tolerances=np.stack([u.risk_tolerance(a) for u, a in zip(utilities, alloc)]),
        utils=utils,
        iterations=it,
    )


def second_derivatives(utilities: Sequence[UtilityFunction], v, x, ev: RepresentativeEval | None = None) -> RepresentativeSecond:
    """Closed-form second derivatives of r and derivatives of the split.

    Shapes follow the leading-axis convention: vectors are (M, *S) and
    matrices (M, M, *S); ``d_alloc_dv[m, l]`` is d alloc^m / d v^l.
    """
    if ev is None:
        ev = eval_representative(utilities, v, x)
    t = ev.tolerances
    v = ev.v
    T = t.sum(axis=0)
    M = t.shape[0]
    eye = np.eye(M).reshape((M, M) + (1,) * (t.ndim - 1))
    share = t / T
    r_xx = -ev.r_x / T
    r_vx = ev.r_x * share / v
    # v^l v^m r_{v^l v^m} = r_x t_l (delta_lm - t_m / T)
    r_vv = ev.r_x * t[:, None] * (eye - share[None, :]) / (v[:, None] * v[None, :])
    # v^l d alloc^m / d v^l = t_m (delta_lm - t_l / T)
    d_alloc_dv = t[:, None] * (eye - share[None, :]) / v[None, :]
    A_r = eye * t[None, :]
    return RepresentativeSecond(r_xx, r_vx, r_vv, share, d_alloc_dv, A_r)
