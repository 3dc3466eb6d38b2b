"""Command-line front end.

    pareto-impact price  -s scenario.json -q 1,0
    pareto-impact curve  -s scenario.json --axis 1 --from -2 --to 2 --steps 9
    pareto-impact impact -s scenario.json -q 1 --dq 0.1
    pareto-impact check  -s scenario.json --level full

Reports go to standard output (or ``--out``); diagnostics go to standard
error.  Exit codes: 0 ok, 1 input error, 2 solver failure, 3 check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .pareto_field import check_F_space_properties
from .representative import ConvergenceError
from .scenario import Problem, ScenarioError, problem_from_document
from .solver import (
    SolverError,
    expansion_residual,
    impact_report,
    weight_variance_diagnostics,
    solve_indifference,
)
from .utility import verify_assumptions

log = logging.getLogger("pareto_impact")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
CURVE_COLUMNS = ("q_j", "x", "gradient_j", "H_jj", "quad1", "quad2", "quad3", "status")


class InputError(Exception):
    pass


def fmt(value: float) -> str:
    """Locale-independent 17-significant-digit rendering."""
    return format(float(value), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def parse_floats(text: str, what: str, count: int | None = None) -> np.ndarray:
    try:
        vals = np.array([float(t) for t in text.split(",")], dtype=float)
    except ValueError:
        raise InputError(f"cannot parse {what} {text!r}: expected comma-separated reals") from None
    if not np.all(np.isfinite(vals)):
        raise InputError(f"{what} must be finite")
    if count is not None and vals.size != count:
        raise InputError(f"{what} has {vals.size} components, the scenario has {count} claims")
    return vals


def load_problem(path: str) -> Problem:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"scenario file not found: {path}")
    try:
        return problem_from_document(p)
    except (ScenarioError, ValueError) as exc:
        raise InputError(f"invalid scenario {path}: {exc}") from exc


def emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def dump_json(payload: dict) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=False) + "\n"


# -- commands ---------------------------------------------------------------

def price_payload(problem: Problem, q) -> dict:
    res = solve_indifference(problem, q)
    rep = impact_report(problem, res)
    if np.any(q != 0):
        buy = solve_indifference(problem, -q, start=(res.v_raw, res.x_q)).x_q
    else:
        buy = 0.0
    return {
        "q": q,
        "x": res.x_q,
        "w": res.w_q,
        "gradient": rep.gradient,
        "u0_residuals": res.utility_residuals,
        "iterations": res.diagnostics["iterations"],
        "investor_pays_for_q": buy,
        "convention": "x is cash received by the market makers for taking on q; "
                      "investor_pays_for_q = x(-q) is the cash an investor pays to buy q",
    }


def cmd_price(args) -> int:
    problem = load_problem(args.scenario)
    q = parse_floats(args.order, "order", problem.space.j_claims)
    emit(dump_json(price_payload(problem, q)), args.out)
    return EXIT_OK


def curve_rows(problem: Problem, axis: int, grid, base_q) -> list[dict]:
    """Sweep q_axis over ``grid``; successive solves are warm-started."""
    rows, start = [], None
    unit = np.zeros(problem.space.j_claims)
    unit[axis] = 1.0
    for qj in grid:
        q = base_q.copy()
        q[axis] = qj
        row = {"q_j": float(qj)}
        try:
            res = solve_indifference(problem, q, start=start)
            rep = impact_report(problem, res)
            terms = rep.expansion_terms(unit)
            row.update(
                x=res.x_q,
                gradient_j=rep.gradient[axis],
                H_jj=rep.H[axis, axis],
                quad1=terms["quad1"],
                quad2=terms["quad2"],
                quad3=terms["quad3"],
                status="ok",
            )
            start = (res.v_raw, res.x_q)
        except (SolverError, ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("curve point q_j=%s failed: %s", fmt(qj), exc)
            row.update({k: math.nan for k in CURVE_COLUMNS[1:-1]}, status=f"failed: {exc}")
        rows.append(row)
    return rows


def render_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([r[c] if c == "status" else fmt(r[c]) for c in CURVE_COLUMNS])
    return buf.getvalue()


def plot_curve(rows, axis: int, path: str):
    """Write a figure of x(q) and its gradient along the swept axis."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise InputError("--plot needs matplotlib; install the 'plot' extra") from None
    ok = [r for r in rows if r["status"] == "ok"]
    qs = [r["q_j"] for r in ok]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax0.plot(qs, [r["x"] for r in ok], marker="o", ms=3)
    ax0.set_xlabel(f"q_{axis + 1}")
    ax0.set_ylabel("x(q)")
    ax0.set_title("indifference price")
    ax1.plot(qs, [r["gradient_j"] for r in ok], marker="o", ms=3)
    ax1.set_xlabel(f"q_{axis + 1}")
    ax1.set_ylabel("marginal price")
    ax1.set_title("gradient component")
    for ax in (ax0, ax1):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_curve(args) -> int:
    problem = load_problem(args.scenario)
    J = problem.space.j_claims
    if not 1 <= args.axis <= J:
        raise InputError(f"--axis must lie in 1..{J}")
    if args.steps < 2:
        raise InputError("--steps must be at least 2")
    base = parse_floats(args.order, "order", J) if args.order else np.zeros(J)
    grid = np.linspace(args.lo, args.hi, args.steps)
    rows = curve_rows(problem, args.axis - 1, grid, base)
    if args.format == "json":
        emit(dump_json({"axis": args.axis, "rows": rows}), args.out)
    else:
        emit(render_csv(rows), args.out)
    if args.plot:
        plot_curve(rows, args.axis - 1, args.plot)
    return EXIT_OK if any(r["status"] == "ok" for r in rows) else EXIT_SOLVER


def default_dq(q) -> np.ndarray:
    """0.1 (|q| + 1) along every coordinate."""
    return 0.1 * (np.abs(q) + 1.0)


def impact_payload(problem: Problem, q, dq) -> dict:
    res = solve_indifference(problem, q)
    rep = impact_report(problem, res)
    terms = rep.expansion_terms(dq)
    exp = expansion_residual(problem, q, dq, base=res)
    return {
        "q": q,
        "dq": dq,
        "x": res.x_q,
        "w": res.w_q,
        "gradient": rep.gradient,
        "H": rep.H,
        "Z": rep.Z,
        "E": rep.E_mat,
        "quad_terms": {k: terms[k] for k in ("quad1", "quad2", "quad3")},
        "linear_term": terms["linear"],
        "expansion": {k: exp[k] for k in ("actual", "predicted", "residual")},
        "weight_variance": weight_variance_diagnostics(problem, rep, dq),
    }


def cmd_impact(args) -> int:
    problem = load_problem(args.scenario)
    J = problem.space.j_claims
    q = parse_floats(args.order, "order", J) if args.order else np.zeros(J)
    dq = parse_floats(args.dq, "dq", J) if args.dq else default_dq(q)
    emit(dump_json(impact_payload(problem, q, dq)), args.out)
    return EXIT_OK


def run_checks(problem: Problem, level: str) -> dict:
    """Invariant suites on one instance; ``full`` adds the heavy oracles."""
    from . import verify

    space = problem.space
    J, M, N = space.j_claims, space.m_makers, space.n_states
    checks, details = {}, {}

    span = np.linspace(float(problem.initial.sigma0.min()) - 5, float(problem.initial.sigma0.max()) + 5, 41)
    for m, u in enumerate(problem.utilities):
        checks[f"utility_{m + 1}_assumptions"] = verify_assumptions(u, span)["passed"]
    fprops = check_F_space_properties(problem)
    for k, ok in fprops["checks"].items():
        checks[f"F0_{k}"] = ok

    zero = solve_indifference(problem, np.zeros(J))
    checks["identity_x0"] = abs(zero.x_q) <= 1e-10
    checks["identity_w0"] = bool(np.max(np.abs(zero.w_q - problem.initial.lambda0)) <= 1e-9)

    q = np.full(J, 0.5)
    res = solve_indifference(problem, q)
    rep = impact_report(problem, res)
    checks["indifference_preserved"] = bool(np.max(np.abs(res.utility_residuals)) <= 1e-10)
    start = (res.v_raw, res.x_q)
    g_fd, _ = verify.jacobian(lambda qq: np.array([solve_indifference(problem, qq, start=start).x_q]), q)
    g_err = float(np.max(np.abs(g_fd[0] - rep.gradient)) / max(1.0, np.max(np.abs(rep.gradient))))
    checks["gradient_law"] = g_err <= 1e-6

    def grad_at(qq):
        r = solve_indifference(problem, qq, start=start)
        return impact_report(problem, r).gradient

    H_fd, _ = verify.jacobian(grad_at, q)
    h_err = float(np.max(np.abs(0.5 * (H_fd + H_fd.T) - rep.H)))
    checks["hessian_law"] = h_err <= 1e-5
    eig = np.linalg.eigvalsh(rep.H)
    checks["hessian_psd"] = bool(eig[0] >= -1e-10)

    dq = default_dq(q)
    terms = rep.expansion_terms(dq)
    checks["quad_terms_nonnegative"] = all(terms[k] >= -1e-12 for k in ("quad1", "quad2", "quad3"))
    wv = weight_variance_diagnostics(problem, rep, dq)
    checks["weight_variance_conditions_agree"] = wv["agree"]
    # quad1 vanishes identically only when every maker's tolerance share is state-independent
    rho_det = wv["rho_spread"] <= 1e-12
    if problem.all_exponential:
        checks["exp_closed_form"] = abs(res.x_q - verify.exp_closed_form_price(problem, q)) <= 1e-8 * (1 + abs(res.x_q))
        checks["exp_quad1_zero"] = terms["quad1"] <= 1e-12
    details.update(
        q=q, x=res.x_q, gradient_fd_error=g_err, hessian_fd_error=h_err,
        hessian_min_eig=float(eig[0]), quad_terms=terms, weight_variance=wv,
        rho_deterministic=rho_det, quad1_expected_nonzero=not wv["vanish"][0],
        F0_properties=fprops,
    )

    if level == "full":
        if M <= 3 and N <= 3:
            bf = verify.brute_force_for(problem, problem.initial.u0, 1.0, q)
            pitch = bf["pitch"]
            checks["brute_force_x"] = abs(bf["x"] - res.x_q) <= 2 * pitch
            checks["brute_force_w"] = bool(np.max(np.abs(bf["v"] / bf["v"].sum() - res.w_q)) <= 2 * pitch)
            checks["brute_force_minimax"] = abs(bf["value"] - bf["inf_sup"]) <= pitch ** 2
            details["brute_force"] = bf
        else:
            details["brute_force"] = "skipped: only run when M <= 3 and N <= 3"
        conj = verify.conjugacy_battery(problem)
        checks["conjugacy"] = conj["passed"]
        details["conjugacy_failing"] = conj["failing"]

    failing = sorted(k for k, ok in checks.items() if not ok)
    return {"level": level, "passed": not failing, "failing": failing, "checks": checks, "details": details}


def cmd_check(args) -> int:
    problem = load_problem(args.scenario)
    report = run_checks(problem, args.level)
    emit(dump_json(report), args.out)
    if not report["passed"]:
        print("check failed: " + ", ".join(report["failing"]), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pareto-impact",
        description="Indifference prices and price impact against utility-maximizing market makers.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-s", "--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", help="write the report here instead of standard output")

    p = sub.add_parser("price", help="indifference cash amount x(q)")
    common(p)
    p.add_argument("-q", "--order", required=True, help="order q as comma-separated reals")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("curve", help="sweep one order component")
    common(p)
    p.add_argument("--axis", type=int, default=1, help="claim index, 1-based")
    p.add_argument("--from", dest="lo", type=float, default=-1.0)
    p.add_argument("--to", dest="hi", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("-q", "--order", help="fixed values of the other components")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot", metavar="PNG", help="also save a figure (needs matplotlib)")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("impact", help="gradient, Hessian and second-order expansion")
    common(p)
    p.add_argument("-q", "--order", help="order q (default 0)")
    p.add_argument("--dq", help="order increment (default 0.1 (|q| + 1))")
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("check", help="run verification suites on a scenario")
    common(p)
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
