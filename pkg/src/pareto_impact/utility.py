"""Exponential-mixture utilities u(x) = -sum_k c_k exp(-a_k x).

Every member of the family is strictly increasing, strictly concave, bounded
above by 0 and has absolute risk aversion trapped between min(a_k) and
max(a_k), so it can be used on the whole real line.  All evaluators accept
scalars or numpy arrays and broadcast elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

_EPS = np.finfo(float).eps


class UtilityEval(NamedTuple):
    value: np.ndarray
    deriv: np.ndarray
    second: np.ndarray
    tolerance: np.ndarray


@dataclass(frozen=True)
class UtilityFunction:
    """Finite positive mixture of exponential utilities.

    Parameters
    ----------
    terms : sequence of (weight, alpha) pairs
        Each pair contributes ``-weight * exp(-alpha * x)``.  Both numbers
        must be finite and strictly positive.
    """

    terms: tuple[tuple[float, float], ...]
    _logc: np.ndarray = field(init=False, repr=False, compare=False)
    _a: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple((float(c), float(a)) for c, a in self.terms)
        if not terms:
            raise ValueError("utility needs at least one exponential term")
        for c, a in terms:
            if not (np.isfinite(c) and np.isfinite(a)):
                raise ValueError(f"non-finite utility term ({c}, {a})")
            if c <= 0 or a <= 0:
                raise ValueError(f"utility term ({c}, {a}) must have positive weight and alpha")
        object.__setattr__(self, "terms", terms)
        c = np.array([t[0] for t in terms])
        a = np.array([t[1] for t in terms])
        object.__setattr__(self, "_logc", np.log(c))
        object.__setattr__(self, "_a", a)

    @classmethod
    def exponential(cls, alpha: float = 1.0, weight: float = 1.0) -> "UtilityFunction":
        return cls(((weight, alpha),))

    @property
    def ara_lo(self) -> float:
        return float(self._a.min())

    @property
    def ara_hi(self) -> float:
        return float(self._a.max())

    @property
    def is_exponential(self) -> bool:
        """True when the absolute risk aversion is constant."""
        return bool(np.all(self._a == self._a[0]))

    @property
    def bound_constant(self) -> float:
        """Smallest c with 1/c <= ARA(x) <= c for all x."""
        return max(self.ara_hi, 1.0 / self.ara_lo)

    def to_dict(self) -> dict:
        return {
            "type": "exp_mixture",
            "terms": [{"weight": c, "alpha": a} for c, a in self.terms],
        }

    # -- evaluation ---------------------------------------------------------

    def _shifted(self, x):
        """Log-magnitudes of the terms, shifted by their running maximum."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("utility evaluated at a non-finite point")
        s = self._logc - self._a * x[..., None]
        top = s.max(axis=-1)
        return np.exp(s - top[..., None]), top

    def eval(self, x) -> UtilityEval:
        w, top = self._shifted(x)
        a = self._a
        s0 = w.sum(axis=-1)
        s1 = (w * a).sum(axis=-1)
        s2 = (w * a * a).sum(axis=-1)
        scale = np.exp(top)
        return UtilityEval(-scale * s0, scale * s1, -scale * s2, s1 / s2)

    def value(self, x):
        w, top = self._shifted(x)
        return -np.exp(top) * w.sum(axis=-1)

    def deriv(self, x):
        w, top = self._shifted(x)
        return np.exp(top) * (w * self._a).sum(axis=-1)

    def risk_tolerance(self, x):
        w, _ = self._shifted(x)
        return (w * self._a).sum(axis=-1) / (w * self._a * self._a).sum(axis=-1)

    def risk_aversion(self, x):
        return 1.0 / self.risk_tolerance(x)

    def log_deriv(self, x):
        """log u'(x), finite even where u'(x) itself over/underflows."""
        w, top = self._shifted(x)
        return top + np.log((w * self._a).sum(axis=-1))

    def inverse_marginal(self, y, *, log_y=None):
        """Solve u'(x) = y for x.

        ``log_y`` may be passed instead of ``y`` to avoid forming y when it
        lies outside the double range.
        """
        if log_y is None:
            y = np.asarray(y, dtype=float)
            if np.any(~(y > 0)):
                raise ValueError("marginal utility must be strictly positive")
            log_y = np.log(y)
        log_y = np.asarray(log_y, dtype=float)
        lca = self._logc + np.log(self._a)
        single = (lca - log_y[..., None]) / self._a
        if len(self.terms) == 1:
            return single[..., 0]
        # Each term alone dominates at its own single-term root, so the true
        # root sits to the right of all of them; phi = log u' is convex and
        # decreasing, hence Newton from the left climbs monotonically.
        x = single.max(axis=-1)
        hi = ((lca + np.log(len(self.terms)) - log_y[..., None]) / self._a).max(axis=-1)
        for _ in range(100):
            s = lca - self._a * x[..., None]
            top = s.max(axis=-1)
            w = np.exp(s - top[..., None])
            sw = w.sum(axis=-1)
            phi = top + np.log(sw)
            slope = -(w * self._a).sum(axis=-1) / sw
            step = -(phi - log_y) / slope
            x_new = np.minimum(x + step, hi)
            # at the root phi - log_y only jitters at rounding level
            done = (np.abs(x_new - x) <= 4 * _EPS * np.maximum(1.0, np.abs(x))) | (
                np.abs(phi - log_y) <= 4 * _EPS * np.maximum(1.0, np.abs(log_y))
            )
            x = x_new
            if np.all(done):
                break
        return x


def verify_assumptions(u: UtilityFunction, grid: Iterable[float]) -> dict:
    """Check sign conditions and risk-aversion bounds on a grid.

    Returns a report with ``passed`` and the worst margins seen; nothing is
    raised on failure.
    """
    xs = np.asarray(list(grid), dtype=float)
    if xs.size == 0 or not np.all(np.isfinite(xs)):
        raise ValueError("grid must be nonempty and finite")
    ev = u.eval(xs)
    ara = -ev.second / ev.deriv
    ratio = -ev.deriv / ev.value
    slack = 1e-12 * u.ara_hi
    checks = {
        "value_negative": bool(np.all(ev.value < 0)),
        "deriv_positive": bool(np.all(ev.deriv > 0)),
        "second_negative": bool(np.all(ev.second < 0)),
        "ara_in_bounds": bool(np.all((ara >= u.ara_lo - slack) & (ara <= u.ara_hi + slack))),
        "ratio_in_bounds": bool(np.all((ratio >= u.ara_lo - slack) & (ratio <= u.ara_hi + slack))),
    }
    return {
        "passed": all(checks.values()),
        "checks": checks,
        "ara_min": float(ara.min()),
        "ara_max": float(ara.max()),
        "ratio_min": float(ratio.min()),
        "ratio_max": float(ratio.max()),
        "ara_margin": float(min(ara.min() - u.ara_lo, u.ara_hi - ara.max())),
        "ratio_margin": float(min(ratio.min() - u.ara_lo, u.ara_hi - ratio.max())),
    }


def economy_constant(utilities: Sequence[UtilityFunction]) -> float:
    """Common bound c for all makers' risk aversion and tolerance."""
    return max(u.bound_constant for u in utilities)


def utility_from_spec(spec: dict) -> UtilityFunction:
    if spec.get("type") != "exp_mixture":
        raise ValueError(f"unsupported utility type {spec.get('type')!r}")
    terms = spec.get("terms")
    if not isinstance(terms, list) or not terms:
        raise ValueError("exp_mixture utility needs a nonempty 'terms' list")
    return UtilityFunction(tuple((t["weight"], t["alpha"]) for t in terms))
