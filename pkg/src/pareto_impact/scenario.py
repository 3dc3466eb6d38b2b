"""Finite scenario spaces, initial Pareto allocations and the JSON format.

On a finite state space every payoff is bounded, so the exponential-moment
condition on the claims holds automatically and is not checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .representative import eval_representative
from .utility import UtilityFunction, economy_constant, utility_from_spec

PROB_TOL = 1e-12
SIGMA_TOL = 1e-10
PARETO_TOL = 1e-8


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent problem descriptions."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScenarioSpace:
    probs: np.ndarray
    payoffs: np.ndarray
    m_makers: int

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        payoffs = np.asarray(self.payoffs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ScenarioError("probabilities must be a nonempty vector")
        if payoffs.ndim != 2 or payoffs.shape[0] != probs.size or payoffs.shape[1] == 0:
            raise ScenarioError(
                f"payoff matrix has shape {payoffs.shape}, expected ({probs.size}, J) with J >= 1"
            )
        if not np.all(np.isfinite(probs)) or not np.all(np.isfinite(payoffs)):
            raise ScenarioError("probabilities and payoffs must be finite")
        if np.any(probs == 0):
            raise ScenarioError(f"zero-probability state at index {int(np.flatnonzero(probs == 0)[0])}")
        if np.any(probs < 0) or np.any(probs > 1):
            raise ScenarioError("probabilities must lie in (0, 1]")
        total = probs.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise ScenarioError(f"probabilities sum to {total:.12g}, outside tolerance")
        if int(self.m_makers) < 1:
            raise ScenarioError("need at least one market maker")
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "payoffs", _frozen(payoffs))
        object.__setattr__(self, "m_makers", int(self.m_makers))

    @property
    def n_states(self) -> int:
        return self.probs.size

    @property
    def j_claims(self) -> int:
        return self.payoffs.shape[1]

    def expect(self, values) -> np.ndarray:
        """P-expectation over the trailing (state) axis."""
        return np.sum(np.asarray(values) * self.probs, axis=-1)


@dataclass(frozen=True)
class InitialState:
    sigma0: np.ndarray
    lambda0: np.ndarray
    alpha0: np.ndarray
    u0: np.ndarray

    def __post_init__(self):
        for name in ("sigma0", "lambda0", "alpha0", "u0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if np.any(self.u0 >= 0):
            raise ScenarioError("initial expected utilities must be strictly negative")
        if np.any(self.lambda0 <= 0) or abs(self.lambda0.sum() - 1) > PROB_TOL:
            raise ScenarioError("initial Pareto weights must lie in the open simplex")


@dataclass(frozen=True)
class Problem:
    space: ScenarioSpace
    utilities: tuple[UtilityFunction, ...]
    initial: InitialState

    @property
    def c(self) -> float:
        return economy_constant(self.utilities)

    @property
    def all_exponential(self) -> bool:
        return all(u.is_exponential for u in self.utilities)


def _require(cond, msg):
    if not cond:
        raise ScenarioError(msg)


def load_scenario(document):
    """Validate a scenario document (dict, JSON text or path).

    Returns ``(space, utility_specs, initial_spec)``.
    """
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        try:
            document = json.loads(Path(document).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc
    elif isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc
    _require(isinstance(document, dict), "scenario must be a JSON object")
    for key in ("states", "makers", "initial"):
        _require(key in document, f"missing key {key!r}")
    states, makers, initial = document["states"], document["makers"], document["initial"]
    _require(isinstance(states, list) and states, "'states' must be a nonempty array")
    _require(isinstance(makers, list) and makers, "'makers' must be a nonempty array")
    _require(isinstance(initial, dict), "'initial' must be an object")

    probs, payoffs = [], []
    for i, st in enumerate(states):
        _require(isinstance(st, dict) and "prob" in st and "payoffs" in st,
                 f"state {i} needs 'prob' and 'payoffs'")
        _require(isinstance(st["payoffs"], list), f"state {i} payoffs must be an array")
        probs.append(st["prob"])
        payoffs.append(st["payoffs"])
    widths = {len(p) for p in payoffs}
    _require(len(widths) == 1, "all states must list the same number of payoffs")
    try:
        probs = np.array(probs, dtype=float)
        payoffs = np.array(payoffs, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"non-numeric state data: {exc}") from exc

    utility_specs = []
    for i, mk in enumerate(makers):
        _require(isinstance(mk, dict) and isinstance(mk.get("utility"), dict),
                 f"maker {i} needs a 'utility' object")
        utility_specs.append(mk["utility"])

    space = ScenarioSpace(probs, payoffs, len(makers))
    N, M = space.n_states, space.m_makers
    mode = initial.get("mode")
    if mode == "weights":
        lam = np.asarray(initial.get("lambda", []), dtype=float)
        sig = np.asarray(initial.get("sigma0", []), dtype=float)
        _require(lam.shape == (M,), f"'lambda' must have {M} entries")
        _require(sig.shape == (N,), f"'sigma0' must have {N} entries")
        _require(np.all(lam > 0) and abs(lam.sum() - 1) <= PROB_TOL,
                 "'lambda' must be strictly positive and sum to 1")
        _require(np.all(np.isfinite(sig)), "'sigma0' must be finite")
    elif mode == "allocations":
        alpha = np.asarray(initial.get("alpha0", []), dtype=float)
        _require(alpha.shape == (M, N), f"'alpha0' must be {M} x {N}")
        _require(np.all(np.isfinite(alpha)), "'alpha0' must be finite")
    else:
        raise ScenarioError(f"initial mode must be 'weights' or 'allocations', got {mode!r}")
    return space, utility_specs, initial


def build_initial(mode: str, data: dict, utilities: Sequence[UtilityFunction], space: ScenarioSpace) -> InitialState:
    """Construct the initial Pareto allocation from weights or recover the weights."""
    M = len(utilities)
    _require(M == space.m_makers, "utility count does not match the number of makers")
    if mode == "weights":
        lam = np.asarray(data["lambda"], dtype=float)
        sigma0 = np.asarray(data["sigma0"], dtype=float)
        alpha0 = eval_representative(utilities, lam, sigma0).alloc
    elif mode == "allocations":
        alpha0 = np.asarray(data["alpha0"], dtype=float)
        sigma0 = alpha0.sum(axis=0)
        lam = recover_weights(utilities, alpha0)
    else:
        raise ScenarioError(f"unknown initial mode {mode!r}")
    u0 = np.array([space.expect(u.value(a)) for u, a in zip(utilities, alpha0)])
    return InitialState(sigma0=sigma0, lambda0=lam, alpha0=alpha0, u0=u0)


def recover_weights(utilities: Sequence[UtilityFunction], alpha0) -> np.ndarray:
    """Pareto weights lambda with lambda^m u_m'(alpha^m) equal across makers.

    Raises ScenarioError naming the worst state when no common lambda exists.
    """
    alpha0 = np.asarray(alpha0, dtype=float)
    logd = np.stack([u.log_deriv(a) for u, a in zip(utilities, alpha0)])
    # per-state candidate: lambda^m proportional to 1 / u_m'
    logl = -logd
    logl = logl - logl.max(axis=0)
    per_state = np.exp(logl)
    per_state = per_state / per_state.sum(axis=0)
    lam = per_state.mean(axis=1)
    lam = lam / lam.sum()
    dev = np.abs(per_state / lam[:, None] - 1.0).max(axis=0)
    worst = int(np.argmax(dev))
    if dev[worst] > PARETO_TOL:
        raise ScenarioError(
            f"initial allocation is not Pareto optimal: state {worst} has relative "
            f"weight deviation {dev[worst]:.3e}"
        )
    return lam


def problem_from_document(document) -> Problem:
    space, uspecs, ispec = load_scenario(document)
    try:
        utilities = tuple(utility_from_spec(s) for s in uspecs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad utility spec: {exc}") from exc
    mode = ispec["mode"]
    data = {"lambda": ispec.get("lambda"), "sigma0": ispec.get("sigma0"), "alpha0": ispec.get("alpha0")}
    initial = build_initial(mode, data, utilities, space)
    return Problem(space, utilities, initial)


def make_problem(probs, payoffs, utilities, *, lambda0=None, sigma0=None, alpha0=None) -> Problem:
    """Programmatic counterpart of :func:`problem_from_document`."""
    probs = np.asarray(probs, dtype=float)
    payoffs = np.asarray(payoffs, dtype=float)
    if payoffs.ndim == 1:
        payoffs = payoffs[:, None]
    utilities = tuple(utilities)
    space = ScenarioSpace(probs, payoffs, len(utilities))
    if alpha0 is not None:
        initial = build_initial("allocations", {"alpha0": alpha0}, utilities, space)
    else:
        M = len(utilities)
        lam = np.full(M, 1.0 / M) if lambda0 is None else lambda0
        sig = np.zeros(space.n_states) if sigma0 is None else sigma0
        initial = build_initial("weights", {"lambda": lam, "sigma0": sig}, utilities, space)
    return Problem(space, utilities, initial)


def scenario_to_document(problem: Problem, mode: str = "weights") -> dict:
    space = problem.space
    doc = {
        "states": [
            {"prob": float(p), "payoffs": [float(v) for v in row]}
            for p, row in zip(space.probs, space.payoffs)
        ],
        "makers": [{"utility": u.to_dict()} for u in problem.utilities],
    }
    if mode == "weights":
        doc["initial"] = {
            "mode": "weights",
            "lambda": [float(v) for v in problem.initial.lambda0],
            "sigma0": [float(v) for v in problem.initial.sigma0],
        }
    else:
        doc["initial"] = {
            "mode": "allocations",
            "alpha0": [[float(v) for v in row] for row in problem.initial.alpha0],
        }
    return doc
