"""Command-line front end: ``smdp-risk <command> MODEL ...``.

Exit codes: 0 success, 1 validation or cross-check failure, 2 non-convergence,
3 I/O or usage error. File formats are described in docs/formats.md.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from smdp_risk import __version__
from smdp_risk.bellman import GridMismatch
from smdp_risk.exponential import solve_exponential, split_values, splitting_residual
from smdp_risk.io import ModelFileError, fixture_path, load_model, model_hash, read_policy, write_policy
from smdp_risk.model import NoCertificate, certify_assumption1, validate
from smdp_risk.numerics import build_grid, build_quadrature
from smdp_risk.simulate import estimate_value
from smdp_risk.solver_finite import jump_order, solve_finite
from smdp_risk.solver_infinite import (
    NonConvergence,
    grid_budget,
    infinite_budget,
    policy_iteration,
    solve_infinite,
)
from smdp_risk.utility import Utility

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGENCE, EXIT_IO = 0, 1, 2, 3

logger = logging.getLogger("smdp_risk")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _grid_spec(text: str):
    try:
        w, l = text.lower().split("x")
        W, L = int(w), int(l)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 64x64, got {text!r}")
    if W < 2 or L < 2:
        raise argparse.ArgumentTypeError("grid needs at least 2 nodes per axis")
    return W, L


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {n}")
    return n


def _positive_float(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {x}")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smdp-risk", description="Risk-sensitive SMDP solver with discounted cost.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_arg(sp):
        sp.add_argument("model", help="model JSON file, or the name of a bundled fixture (e.g. maintenance)")

    def utility_args(sp):
        g = sp.add_argument_group("utility (overrides the model file)")
        g.add_argument("--utility", choices=["exponential", "power", "log1p", "linear"])
        g.add_argument("--gamma", type=float, help="exponential risk parameter (nonzero)")
        g.add_argument("--p", type=float, dest="power_p", help="power exponent")

    def numeric_args(sp, grid=True):
        if grid:
            sp.add_argument("--grid", type=_grid_spec, default=(64, 64), metavar="WxL", help="w and lam nodes (64x64)")
            sp.add_argument("--w-min", type=_positive_float, default=1e-3, help="smallest w node (1e-3)")
        sp.add_argument("--quad", type=_positive_int, default=64 if grid else None, metavar="M",
                        help="quadrature atoms per law (64)" if grid else "quadrature atoms per law (the policy's, else 64)")
        sp.add_argument("--tol", type=_positive_float, default=1e-4, help="sandwich gap tolerance (1e-4)")
        sp.add_argument("--max-iter", type=_positive_int, default=10000, help="sweep cap (10000)")

    def out_arg(sp):
        sp.add_argument("--out", type=Path, default=Path("smdp-out"), help="output directory (smdp-out)")

    sp = sub.add_parser("validate", help="check a model file")
    model_arg(sp)

    sp = sub.add_parser("certify", help="find (delta, epsilon) with P(sojourn >= delta) >= epsilon")
    model_arg(sp)
    sp.add_argument("--delta", type=_positive_float, help="sojourn threshold (default: automatic)")

    sp = sub.add_parser("solve", help="optimal values and policy")
    model_arg(sp)
    mode = sp.add_mutually_exclusive_group(required=True)
    mode.add_argument("--horizon", type=int, metavar="N", help="N-jump problem")
    mode.add_argument("--infinite", action="store_true", help="infinite-horizon problem")
    sp.add_argument("--exponential", action="store_true", help="use the split h-solver (exponential utility only)")
    sp.add_argument("--no-budget", action="store_true", help="skip the coarse-grid error estimate")
    utility_args(sp)
    numeric_args(sp)
    out_arg(sp)

    sp = sub.add_parser("improve", help="policy improvement from a stationary policy file")
    model_arg(sp)
    sp.add_argument("--policy", type=Path, required=True)
    sp.add_argument("--rounds", type=_positive_int, default=1, help="improvement rounds (1)")
    sp.add_argument("--margin", type=float, help="switching margin (default 10 * tol)")
    utility_args(sp)
    numeric_args(sp, grid=False)
    out_arg(sp)

    sp = sub.add_parser("simulate", help="Monte Carlo estimate under a policy file")
    model_arg(sp)
    sp.add_argument("--policy", type=Path, required=True)
    sp.add_argument("--n-traj", type=_positive_int, default=100000)
    sp.add_argument("--seed", type=int, default=0)
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--horizon", type=int, metavar="N")
    mode.add_argument("--infinite", action="store_true")
    sp.add_argument("--state", help="initial state (default: every state)")
    sp.add_argument("--tol", type=_positive_float, default=1e-4, help="infinite-mode bracket width (1e-4)")
    sp.add_argument("--threads", type=_positive_int, help="worker threads (env SMDP_RISK_THREADS)")
    utility_args(sp)
    out_arg(sp)

    sp = sub.add_parser("compare", help="general vs split solver under exponential utility")
    model_arg(sp)
    sp.add_argument("--gamma", type=float, help="risk parameter (default: the model's)")
    numeric_args(sp)
    out_arg(sp)
    return p


def _load(name: str):
    path = Path(name)
    if not path.exists() and fixture_path(name).exists():
        path = fixture_path(name)
    return load_model(path)


def _check_model(model) -> Optional[int]:
    problems = validate(model)
    for msg in problems:
        print(f"invalid model: {msg}", file=sys.stderr)
    return EXIT_INVALID if problems else None


def _utility(args, file_utility: Optional[Utility]) -> Utility:
    kind = getattr(args, "utility", None)
    if kind is None:
        if file_utility is None:
            raise UsageError("the model file has no utility; pass --utility")
        u = file_utility
        if getattr(args, "gamma", None) is not None and u.kind == "exponential":
            u = Utility.exponential(args.gamma)
        return u
    if kind == "exponential":
        return Utility.exponential(args.gamma if args.gamma is not None else 1.0)
    if kind == "power":
        return Utility.power(args.power_p if args.power_p is not None else 2.0)
    if kind == "log1p":
        return Utility.log1p()
    return Utility.linear()


def _header(model, utility, grid=None, M=None, tol=None, seed=None, command="") -> dict:
    h = {"tool": f"smdp-risk {__version__}", "command": command, "model": model.name, "model_hash": model_hash(model)}
    if utility is not None:
        h["utility"] = json.dumps(utility.to_dict(), sort_keys=True)
    if grid is not None:
        h["grid"] = f"{grid.W}x{grid.L_reach}+{grid.headroom}"
        h["w_min"] = grid.w_min
        h["w_shift"] = grid.w_shift
    h["quad_M"] = M
    h["tol"] = tol
    h["seed"] = seed
    return h


def _write_json(path: Path, header: dict, body: dict) -> None:
    path.write_text(json.dumps({"header": header, **body}, indent=2) + "\n")


def _write_rows(path: Path, header: dict, columns: List[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}: {v}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _per_state(model, values) -> dict:
    return {s: float(values[i]) for i, s in enumerate(model.states)}


def cmd_validate(args) -> int:
    model, _ = _load(args.model)
    if _check_model(model) is not None:
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


def cmd_certify(args) -> int:
    model, _ = _load(args.model)
    if (code := _check_model(model)) is not None:
        return code
    try:
        cert = certify_assumption1(model, delta=args.delta)
    except NoCertificate as exc:
        print(f"no certificate: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"delta = {cert.delta:.6g}")
    print(f"epsilon = {cert.epsilon:.6g}")
    print(f"rho = {cert.rho(model.alpha):.6g}")
    return EXIT_OK


def _solve_setup(args, model, utility):
    W, L = args.grid
    grid = build_grid(model, W, L, args.w_min)
    quad = build_quadrature(model, args.quad)
    return grid, quad


def _convergence_log(path, header, history):
    _write_rows(path, header, ["n", "gap", "bound"], [[h["n"], repr(h["gap"]), repr(h["bound"])] for h in history])


def cmd_solve(args) -> int:
    model, file_u = _load(args.model)
    if (code := _check_model(model)) is not None:
        return code
    utility = _utility(args, file_u)
    if args.horizon is not None and args.horizon < 1:
        raise UsageError("--horizon must be at least 1")
    if args.exponential and (utility.kind != "exponential" or args.horizon is not None):
        raise UsageError("--exponential needs --infinite and an exponential utility")
    grid, quad = _solve_setup(args, model, utility)
    header = _header(model, utility, grid, quad.M, args.tol, None, "solve")
    args.out.mkdir(parents=True, exist_ok=True)
    names = list(model.states)
    if args.horizon is not None:
        return _solve_finite(args, model, utility, grid, quad, header, names)
    cert = certify_assumption1(model)
    if args.exponential:
        return _solve_exponential(args, model, utility, grid, quad, cert, header, names)
    try:
        res = _solve_general(model, utility, grid, quad, cert, args.tol, args.max_iter)
    except NonConvergence as exc:
        if exc.result is not None:
            _convergence_log(args.out / "convergence.csv", header, exc.result.history)
        print(str(exc), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    res.value.to_csv(args.out / "values.csv", header=header, state_names=names)
    _convergence_log(args.out / "convergence.csv", header, res.history)
    write_policy(args.out / "policy.json", [res.policy], "stationary", header)
    summary = {
        "J": _per_state(model, res.J()),
        "lower": _per_state(model, res.lower.origin()),
        "upper": _per_state(model, res.upper.origin()),
        "half_gap": res.half_gap,
        "iterations": res.n_iters,
        "analytic_bound": float(res.bound.max()),
        "fixed_point_residual": res.residual,
        "certificate": {"delta": cert.delta, "epsilon": cert.epsilon, "rho": cert.rho(model.alpha)},
    }
    if not args.no_budget:
        b = infinite_budget(model, utility, grid, quad, result=res, tol=args.tol, cert=cert)
        summary["grid_budget"] = {"interpolation": b.interpolation, "tail": b.tail, "total": b.total}
    _write_json(args.out / "summary.json", header, summary)
    for s, j in summary["J"].items():
        print(f"J_inf({s}) = {j:.6g} +/- {res.half_gap:.2g}")
    return EXIT_OK


def _solve_general(model, utility, grid, quad, cert, tol, max_iter):
    return solve_infinite(model, utility, grid, quad, cert=cert, tol=tol, max_iter=max_iter)


def _solve_finite(args, model, utility, grid, quad, header, names) -> int:
    N = args.horizon
    values, policies = solve_finite(model, utility, grid, quad, N)
    for n, v in enumerate(values):
        v.to_csv(args.out / f"values_n{n}.csv", header={**header, "jumps_to_go": n}, state_names=names)
    pol_header = {**header, "order": "jump order: table k is used at jump k, i.e. f*_{N-k}"}
    write_policy(args.out / "policy.json", jump_order(policies), "markov", pol_header)
    summary = {"horizon": N, "J": _per_state(model, values[N].origin())}
    if not args.no_budget:
        b = grid_budget(lambda g, q: solve_finite(model, utility, g, q, N)[0][N], model, utility, grid, quad, fine=values[N])
        summary["grid_budget"] = {"interpolation": b.interpolation, "tail": b.tail, "total": b.total}
    _write_json(args.out / "summary.json", header, summary)
    for s, j in summary["J"].items():
        print(f"J_{N}({s}) = {j:.6g}")
    return EXIT_OK


def _solve_exponential(args, model, utility, grid, quad, cert, header, names) -> int:
    try:
        res = solve_exponential(model, utility.gamma, grid, quad, cert=cert, tol=args.tol, max_iter=args.max_iter)
    except NonConvergence as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    h = res.h
    rows = [[names[i], repr(float(grid.w_nodes[k])), repr(float(h.values[i, k]))] for i in range(model.n_states) for k in range(grid.W)]
    _write_rows(args.out / "h_table.csv", header, ["state", "w", "h"], rows)
    _convergence_log(args.out / "convergence.csv", header, res.history)
    write_policy(args.out / "policy.json", [res.policy], "stationary", header)
    summary = {
        "J": _per_state(model, res.J()),
        "gap": res.gap,
        "iterations": res.n_iters,
        "log_domain": res.log_domain,
    }
    _write_json(args.out / "summary.json", header, summary)
    for s, j in summary["J"].items():
        print(f"J_inf({s}) = {j:.6g}")
    return EXIT_OK


def cmd_improve(args) -> int:
    model, file_u = _load(args.model)
    if (code := _check_model(model)) is not None:
        return code
    utility = _utility(args, file_u)
    kind, tables, pol_header = read_policy(args.policy)
    if kind != "stationary":
        raise UsageError("improve needs a stationary policy file")
    f0 = tables[0]
    f0.check(model)
    grid = f0.grid
    M = args.quad or pol_header.get("quad_M") or 64
    quad = build_quadrature(model, int(M))
    header = _header(model, utility, grid, quad.M, args.tol, None, "improve")
    rounds = policy_iteration(
        model, utility, grid, quad, f0, tol=args.tol, max_rounds=args.rounds, margin=args.margin, max_iter=args.max_iter
    )
    f_last, v_last = rounds[-1]
    args.out.mkdir(parents=True, exist_ok=True)
    write_policy(args.out / "policy.json", [f_last], "stationary", header)
    v_last.to_csv(args.out / "values.csv", header=header, state_names=list(model.states))
    summary = {
        "rounds": len(rounds) - 1,
        "improved": len(rounds) > 1,
        "J_history": [_per_state(model, v.origin()) for _, v in rounds],
        "changed_nodes": int(np.count_nonzero(f_last.choice != f0.choice)),
    }
    _write_json(args.out / "summary.json", header, summary)
    print(f"improved: {'yes' if summary['improved'] else 'no'} ({summary['changed_nodes']} nodes changed)")
    for s, j in summary["J_history"][-1].items():
        print(f"J({s}) = {j:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model, file_u = _load(args.model)
    if (code := _check_model(model)) is not None:
        return code
    utility = _utility(args, file_u)
    kind, tables, _ = read_policy(args.policy)
    for t in tables:
        t.check(model)
    policy = tables[0] if kind == "stationary" else tables
    N = args.horizon
    if N is not None and N < 1:
        raise UsageError("--horizon must be at least 1")
    if N is None and not args.infinite and kind == "markov":
        N = len(tables)
    if kind == "markov" and (args.infinite or N > len(tables)):
        raise UsageError(f"the Markov policy covers {len(tables)} jumps")
    if args.state is None:
        starts = list(range(model.n_states))
    elif args.state in model.states:
        starts = [model.states.index(args.state)]
    else:
        raise UsageError(f"unknown state {args.state!r}")
    header = _header(model, utility, tables[0].grid, None, args.tol if N is None else None, args.seed, "simulate")
    args.out.mkdir(parents=True, exist_ok=True)
    results, rows = {}, []
    for x0 in starts:
        est = estimate_value(
            model, utility, policy, N=N, n_traj=args.n_traj, seed=args.seed, x0=x0,
            tol=args.tol, threads=args.threads, keep_samples=True,
        )
        results[model.states[x0]] = est.to_dict()
        hi = est.upper_samples if est.upper_samples is not None else est.samples
        rows.extend([model.states[x0], k, repr(float(a)), repr(float(b))] for k, (a, b) in enumerate(zip(est.samples, hi)))
        lo_, hi_ = est.interval
        print(f"{model.states[x0]}: mean {est.mean:.6g}, 95% CI [{est.ci[0]:.6g}, {est.ci[1]:.6g}], interval [{lo_:.6g}, {hi_:.6g}]")
    _write_rows(args.out / "trajectories.csv", header, ["state", "trajectory", "U_lower", "U_upper"], rows)
    _write_json(args.out / "simulation.json", header, {"mode": "infinite" if N is None else "finite", "estimates": results})
    return EXIT_OK


def cmd_compare(args) -> int:
    model, file_u = _load(args.model)
    if (code := _check_model(model)) is not None:
        return code
    if args.gamma is not None:
        gamma = args.gamma
    elif file_u is not None and file_u.kind == "exponential":
        gamma = file_u.gamma
    else:
        raise UsageError("pass --gamma (the model file has no exponential utility)")
    if gamma == 0:
        raise UsageError("--gamma must be nonzero")
    utility = Utility.exponential(gamma)
    W, L = args.grid
    grid = build_grid(model, W, L, args.w_min)
    quad = build_quadrature(model, args.quad)
    cert = certify_assumption1(model)
    header = _header(model, utility, grid, quad.M, args.tol, None, "compare")
    try:
        general = _solve_general(model, utility, grid, quad, cert, args.tol, args.max_iter)
        split = solve_exponential(model, gamma, grid, quad, cert=cert, tol=args.tol, max_iter=args.max_iter)
    except NonConvergence as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    residual = splitting_residual(general, split)
    mask = grid.reachable()
    split_gap = float(np.max(np.abs(split_values(split.upper) - split_values(split.lower))[:, mask]))
    b = infinite_budget(model, utility, grid, quad, result=general, tol=args.tol, cert=cert)
    budget = general.gap + split_gap + b.total
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(
        args.out / "compare.json",
        header,
        {
            "splitting_residual": residual,
            "budget": budget,
            "general_gap": general.gap,
            "split_gap": split_gap,
            "grid_budget": b.total,
            "J_general": _per_state(model, general.J()),
            "J_split": _per_state(model, split.J()),
        },
    )
    ok = residual <= budget
    print(f"splitting residual {'≤' if ok else '>'} {budget:.3g} (residual {residual:.3g})")
    return EXIT_OK if ok else EXIT_INVALID


COMMANDS = {
    "validate": cmd_validate,
    "certify": cmd_certify,
    "solve": cmd_solve,
    "improve": cmd_improve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ModelFileError as exc:
        print(f"bad input file: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GridMismatch as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonConvergence as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (NoCertificate, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
