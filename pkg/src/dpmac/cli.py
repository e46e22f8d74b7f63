"""Command-line front end: analyze, sweep, design, construct, simulate.

JSON output is one object ``{"manifest": ..., "results": ...}`` with sorted
keys; CSV output starts with a ``# manifest: {...}`` comment line followed
by a header row. Exit codes: 0 success, 1 usage error, 2 infeasible.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .designer import DesignProblem, solve_design
from .exceptions import InfeasibleError
from .game import NetworkConfig
from .private import (
    DEFAULT_L_CAP,
    DEFAULT_ROBUST_L_CAP,
    PrivateReviewProtocol,
    analyze_private,
    construct_near_optimal_private,
    construct_robust_eps_dp,
    state_count,
)
from .public import (
    EpsNeSchedule,
    PublicReviewProtocol,
    analyze_public,
    construct_eps_ne,
    eps_ne_lower_bounds,
    public_state_count,
)
from .simulator import DeviantSpec, SimConfig, compare_to_analytic, run

OUTPUT_DIR_ENV = "DPMAC_OUTPUT_DIR"

SWEEP_COLUMNS = {
    "pf": ["signal", "B", "L", "pf"],
    "pm": ["signal", "B", "L", "p_d", "pm"],
    "mmin": ["signal", "B", "L", "p_d", "g", "m_min", "m_min_ceil"],
    "loss": ["signal", "B", "L", "p_d", "M", "efficiency_loss", "is_dp"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_range(text: str, integer: bool = False) -> list:
    """Parse ``start..end[:step]``, a comma list, or a single value."""
    text = text.strip()
    conv = int if integer else float
    try:
        if ".." in text:
            span, _, step = text.partition(":")
            start, end = (conv(x) for x in span.split("..", 1))
            step = conv(step) if step else (1 if integer else None)
            if step is None:
                if start != end:
                    raise UsageError(f"range {text!r} needs a step (start..end:step)")
                return [start]
            if step <= 0 or end < start:
                raise UsageError(f"bad range {text!r}")
            if integer:
                return list(range(start, end + 1, step))
            n = int(math.floor((end - start) / step + 1e-9)) + 1
            return [float(f"{start + i * step:.12g}") for i in range(n)]
        return [conv(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse {text!r}: {exc}") from None


def _clean(obj):
    """Make a result JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "inf" if value == math.inf else f"{value:.12g}"
    return str(value)


def _resolve_out(path):
    if path is None or path == "-":
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _manifest(args, params: dict, seed=None) -> dict:
    return {
        "tool": "dpmac",
        "version": __version__,
        "subcommand": args.command,
        "parameters": params,
        "master_seed": seed,
        "outputs": [str(_resolve_out(args.out)) if _resolve_out(args.out) else "-"],
    }


def _emit(args, text: str) -> None:
    path = _resolve_out(args.out)
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump_json(args, params, results, seed=None) -> None:
    doc = {"manifest": _manifest(args, params, seed), "results": results}
    _emit(args, json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _network(args) -> NetworkConfig:
    try:
        return NetworkConfig(args.n, args.pc)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _protocol(args, net, margin, L, M):
    cls = PrivateReviewProtocol if args.signal == "private" else PublicReviewProtocol
    return cls(margin, L, M, net.n_nodes, net.p_c)


def _common(p):
    p.add_argument("--signal", choices=("private", "public"), default="private")
    p.add_argument("--n", type=int, default=5, help="number of nodes (default 5)")
    p.add_argument("--pc", type=float, default=None, help="cooperation probability (default 1/N)")
    p.add_argument("--out", default=None, help="output file; relative paths honour $" + OUTPUT_DIR_ENV)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpmac", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dpmac {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("analyze", help="closed-form analysis of one protocol")
    _common(p)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--pd", type=float, required=True)

    p = sub.add_parser("sweep", help="CSV curves over L or B")
    _common(p)
    p.add_argument("--quantity", choices=sorted(SWEEP_COLUMNS), required=True)
    p.add_argument("--b", required=True, help="margin value, list or range start..end:step")
    p.add_argument("--l", required=True, help="review length value, list or range start..end[:step]")
    p.add_argument("--pd", type=float, default=None)

    p = sub.add_parser("design", help="minimum-loss protocol under a state budget")
    _common(p)
    p.add_argument("--b", required=True, help="margin grid: value, list or range")
    p.add_argument("--ns-budget", type=int, required=True)
    p.add_argument("--pd", type=float, required=True)

    p = sub.add_parser("construct", help="robust eps-DP (private) or eps-NE (public) construction")
    _common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--l-cap", type=int, default=DEFAULT_ROBUST_L_CAP)
    p.add_argument("--grid-step", type=float, default=1e-3)
    p.add_argument("--pd", type=float, default=None,
                   help="private only: build against this single p_d with --b instead")
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=0.75)
    p.add_argument("--mu", type=float, default=None, help="default N")

    p = sub.add_parser("simulate", help="Monte-Carlo run compared with the closed forms")
    _common(p)
    p.add_argument("--config", default=None, help="JSON simulation config (overrides protocol flags)")
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--l", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--epochs", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=10_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--deviant", action="append", default=[],
                   help="KIND:NODE[:P_D[:P_R[:PHASE]]], KIND in constant, punish_aware, best_response")
    p.add_argument("--pd", type=float, default=None, help="p_d for the closed-form comparison")
    return parser


def _cmd_analyze(args):
    net = _network(args)
    proto = _protocol(args, net, args.b, args.l, args.m)
    if args.signal == "private":
        analysis = analyze_private(proto, args.pd)
        n_states = state_count(proto)
    else:
        analysis = analyze_public(proto, args.pd)
        n_states = public_state_count(proto)
    results = dict(analysis.to_dict(), n_states=n_states)
    _dump_json(args, {"signal": args.signal, "N": net.n_nodes, "p_c": net.p_c,
                      "B": args.b, "L": args.l, "M": args.m, "p_d": args.pd}, results)


def _sweep_row(args, net, margin, L):
    row = {"signal": args.signal, "B": margin, "L": L}
    if args.quantity == "pf":
        if args.signal == "private":
            from .private import private_error_probs as errs
        else:
            from .public import public_error_probs as errs
        row["pf"] = errs(margin, L, None, net).false_punishment
        return row
    proto = _protocol(args, net, margin, L, 1)
    analysis = analyze_private(proto, args.pd) if args.signal == "private" else analyze_public(proto, args.pd)
    row["p_d"] = args.pd
    if args.quantity == "pm":
        row["pm"] = analysis.errors.miss_detection
    elif args.quantity == "mmin":
        row.update(g=analysis.g, m_min=analysis.m_min, m_min_ceil=analysis.m_min_ceil)
    else:
        M = analysis.m_min_ceil
        if M >= 1:
            full = analyze_private(proto.with_recip_len(M), args.pd) if args.signal == "private" \
                else analyze_public(proto.with_punish_len(M), args.pd)
            row.update(M=M, efficiency_loss=full.efficiency_loss, is_dp=full.is_dp)
        else:
            row.update(M=None, efficiency_loss=None, is_dp=False)  # no M deters this deviation
    return row


def _cmd_sweep(args):
    net = _network(args)
    if args.quantity != "pf" and args.pd is None:
        raise UsageError(f"--pd is required for --quantity {args.quantity}")
    margins = parse_range(args.b)
    lengths = parse_range(args.l, integer=True)
    if not margins or not lengths or min(lengths) < 1:
        raise UsageError("empty or invalid sweep range")
    columns = SWEEP_COLUMNS[args.quantity]
    params = {"signal": args.signal, "N": net.n_nodes, "p_c": net.p_c, "quantity": args.quantity,
              "B": args.b, "L": args.l, "p_d": args.pd}
    buf = io.StringIO()
    buf.write("# manifest: " + json.dumps(_clean(_manifest(args, params)), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for margin in margins:
        for L in lengths:
            row = _sweep_row(args, net, margin, L)
            writer.writerow([_fmt(row.get(c)) for c in columns])
    _emit(args, buf.getvalue())


def _cmd_design(args):
    if args.signal != "private":
        raise UsageError("design is defined for the private (ACK) signal only")
    net = _network(args)
    grid = parse_range(args.b)
    problem = DesignProblem(tuple(grid), args.ns_budget, args.pd, net)
    result = solve_design(problem)
    _dump_json(args, {"signal": "private", "N": net.n_nodes, "p_c": net.p_c, "B": grid,
                      "ns_budget": args.ns_budget, "p_d": args.pd}, result.to_dict())


def _cmd_construct(args):
    net = _network(args)
    params = {"signal": args.signal, "N": net.n_nodes, "p_c": net.p_c,
              "epsilon": args.epsilon, "delta": args.delta}
    if args.signal == "private":
        if args.pd is not None:
            if args.b is None:
                raise UsageError("--pd construction needs --b")
            l_cap = min(args.l_cap, DEFAULT_L_CAP) if args.l_cap == DEFAULT_ROBUST_L_CAP else args.l_cap
            res = construct_near_optimal_private(args.pd, args.delta, args.b, net, l_cap)
            params.update(p_d=args.pd, B=args.b, l_cap=l_cap)
            results = {"kind": "near_optimal", "protocol": res.protocol.to_dict(),
                       "efficiency_loss": res.efficiency_loss, "analysis": res.analysis.to_dict()}
        else:
            res = construct_robust_eps_dp(args.epsilon, args.delta, net, args.l_cap, args.grid_step)
            params.update(l_cap=args.l_cap, grid_step=args.grid_step)
            results = dict(res.to_dict(), kind="robust_eps_dp")
    else:
        mu = float(net.n_nodes) if args.mu is None else args.mu
        sched = EpsNeSchedule(args.beta, args.rho, mu)
        bounds = eps_ne_lower_bounds(args.epsilon, args.delta, sched, net)
        proto = construct_eps_ne(args.epsilon, args.delta, sched, net)
        params.update(beta=args.beta, rho=args.rho, mu=mu)
        results = {"kind": "eps_ne", "protocol": proto.to_dict(), "lower_bounds": bounds}
    _dump_json(args, params, results)


def _parse_deviant(text: str) -> DeviantSpec:
    parts = text.split(":")
    kind = parts[0]
    try:
        node = int(parts[1])
        if kind == "constant":
            return DeviantSpec.constant(node, float(parts[2]))
        if kind == "punish_aware":
            p_r = float(parts[3]) if len(parts) > 3 else 1.0
            phase = parts[4] if len(parts) > 4 else "review"
            return DeviantSpec.punish_aware(node, float(parts[2]), p_r, phase)
        if kind == "best_response":
            return DeviantSpec.best_response(node, float(parts[2]) if len(parts) > 2 else 1.0)
    except (IndexError, ValueError) as exc:
        raise UsageError(f"bad --deviant {text!r}: {exc}") from None
    raise UsageError(f"unknown deviant kind in {text!r}")


def _cmd_simulate(args):
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        cfg = SimConfig.from_dict(data)
    else:
        if None in (args.b, args.l, args.m):
            raise UsageError("simulate needs --b, --l and --m (or --config)")
        net = _network(args)
        cfg = SimConfig(_protocol(args, net, args.b, args.l, args.m),
                        tuple(_parse_deviant(d) for d in args.deviant),
                        args.epochs, args.seed, args.batch_size, args.jobs)
    report = run(cfg)

    p_d = args.pd
    if p_d is None:
        p_d = next((d.p_d for d in cfg.deviants if d.p_d is not None), 1.0)
    proto = cfg.protocol
    analysis = analyze_private(proto, p_d) if cfg.mode == "private" else analyze_public(proto, p_d)
    try:
        comparison = compare_to_analytic(report, analysis).to_dict()
    except ValueError as exc:
        comparison = {"skipped": str(exc)}
    results = {"report": report.to_dict(), "analysis": analysis.to_dict(), "comparison": comparison}
    _dump_json(args, dict(cfg.to_dict(), comparison_p_d=p_d), results, seed=int(cfg.master_seed))


_COMMANDS = {
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "design": _cmd_design,
    "construct": _cmd_construct,
    "simulate": _cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(_COMMANDS))
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dpmac: error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleError as exc:
        print(f"dpmac: infeasible: {exc}", file=sys.stderr)
        print(json.dumps(_clean(exc.diagnostics), sort_keys=True), file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"dpmac: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dpmac: cannot write output: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
