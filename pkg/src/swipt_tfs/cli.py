"""Command-line entry point ``swipt-tfs``.

Exit codes: 0 success, 1 verification failed, 2 bad input or usage,
3 solver refused the instance.  Every failure prints one line to stderr:

    error: kind=<ExceptionName> message=<JSON string>
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .channel import FADING_MODES, ChannelConfig, generate
from .core import (
    Allocation,
    ProblemInstance,
    QosRequirements,
    SolveResult,
    SystemParams,
    dbm_to_watt,
)
from .scfb import InfeasibleProblemError, SolverConfig, solve

EXIT_FAIL, EXIT_INPUT, EXIT_REFUSED = 1, 2, 3


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.kind, self.code = kind, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("UsageError", message)


def _load_config(path) -> SolverConfig:
    if path is None:
        return SolverConfig()
    data = json.loads(Path(path).read_text())
    known = {f.name for f in fields(SolverConfig)}
    unknown = set(data) - known
    if unknown:
        raise CliError("ConfigError", f"unknown solver config keys {sorted(unknown)}")
    return SolverConfig(**data)


def _floats(values) -> list:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def result_dict(res: SolveResult) -> dict:
    out = {
        "strategy": res.strategy,
        "status": res.status,
        "iterations": int(res.iterations),
        "objective_bps": float(res.objective),
        "rates_bps": _floats(res.rates),
        "energies_w": _floats(res.energies),
        "allocation": res.allocation.to_dict(),
        "message": res.message,
    }
    if res.strategy == "ss-greedy":
        out["label"] = "SS (greedy reimplementation)"
    return out


def _dump(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _trace_csv(res: SolveResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "modified_objective_bps", "objective_bps", "max_violation",
                "alpha_max", "beta_max", "gamma_mean", "lambda"])
    for r in res.trace:
        w.writerow([ex.fmt(r.iteration), ex.fmt(r.modified_objective), ex.fmt(r.objective),
                    ex.fmt(r.max_violation), ex.fmt(r.alpha_max), ex.fmt(r.beta_max),
                    ex.fmt(r.gamma_mean), ex.fmt(r.lam)])
    return buf.getvalue()


def _load_instance(path) -> ProblemInstance:
    try:
        return ProblemInstance.load(path)
    except FileNotFoundError:
        raise CliError("FileNotFoundError", f"no such instance file: {path}")
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("InstanceError", f"{path}: {exc}")


def _load_allocation(path) -> Allocation:
    data = json.loads(Path(path).read_text())
    if "allocation" in data:
        data = data["allocation"]
    return Allocation.from_dict(data)


# -- subcommands ----------------------------------------------------------------


def cmd_solve(args) -> int:
    inst = _load_instance(args.instance)
    cfg = _load_config(args.config)
    if args.strategy == "tfs":
        res = solve(inst, cfg)
    else:
        res = ex.run_strategy(inst, args.strategy, cfg.regularizer_weight)
    _emit(_dump(result_dict(res)), args.output)
    if args.trace:
        Path(args.trace).write_text(_trace_csv(res))
    return 0


def cmd_gen_channel(args) -> int:
    K, N = args.users, args.subcarriers
    params = SystemParams(K, N, args.bandwidth, dbm_to_watt(args.noise_density_dbm),
                          dbm_to_watt(args.max_power_dbm), args.efficiency)
    cfg = ChannelConfig(seed=args.seed, d_min=args.d_min, d_max=args.d_max,
                        shadow_std=args.shadow_std, fading=args.fading)
    qos = QosRequirements(np.full(K, args.min_rate), np.full(K, args.min_energy))
    inst = ProblemInstance(params, qos, generate(K, N, cfg))
    _emit(json.dumps(inst.to_dict(), indent=2) + "\n", args.output)
    return 0


def cmd_sweep(args) -> int:
    spec = ex.SweepSpec.load(args.spec)
    out = Path(args.output or spec.output)
    rows = ex.run_sweep(spec, out, jobs=args.jobs, timing=args.timing)
    if args.plot:
        from .plotting import plot_sweep

        plot_sweep(ex.summarize(rows), out.with_suffix(".png"))
    return 0


def cmd_convergence(args) -> int:
    inst = _load_instance(args.instance)
    cfg = _load_config(args.config)
    results = ex.run_convergence(inst, args.x_values, args.output, cfg)
    if args.plot:
        from .plotting import plot_convergence

        plot_convergence(results, Path(args.output).with_suffix(".png"))
    return 0


def cmd_fairness(args) -> int:
    inst = _load_instance(args.instance)
    results = ex.run_fairness(inst, args.output)
    if args.plot:
        from .plotting import plot_fairness

        plot_fairness(results, Path(args.output).with_suffix(".png"))
    return 0


def cmd_verify(args) -> int:
    inst = _load_instance(args.instance)
    cfg = _load_config(args.config)
    alloc = _load_allocation(args.allocation) if args.allocation else None
    report = ex.verify(inst, cfg, alloc)
    text = _dump(report.to_dict()) if args.json else "\n".join(report.lines()) + "\n"
    _emit(text, args.output)
    return 0 if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swipt-tfs", description="Sum-rate allocation for OFDM SWIPT with time-frequency splitting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one instance file")
    s.add_argument("instance")
    s.add_argument("--config", help="JSON file of solver settings")
    s.add_argument("--strategy", choices=ex.STRATEGIES, default="tfs")
    s.add_argument("-o", "--output", help="result JSON (default: stdout)")
    s.add_argument("--trace", help="write the per-iteration trace CSV here")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("gen-channel", help="write a seeded instance file")
    g.add_argument("--users", "-K", type=int, default=4)
    g.add_argument("--subcarriers", "-N", type=int, default=15)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--min-rate", type=float, default=5e6, help="bit/s per user")
    g.add_argument("--min-energy", type=float, default=36e-6, help="W per user")
    g.add_argument("--bandwidth", type=float, default=10e6, help="Hz per subcarrier")
    g.add_argument("--noise-density-dbm", type=float, default=-174.0)
    g.add_argument("--max-power-dbm", type=float, default=17.0)
    g.add_argument("--efficiency", type=float, default=0.2)
    g.add_argument("--d-min", type=float, default=ChannelConfig.d_min, help="km")
    g.add_argument("--d-max", type=float, default=ChannelConfig.d_max, help="km")
    g.add_argument("--shadow-std", type=float, default=4.0, help="dB")
    g.add_argument("--fading", choices=FADING_MODES, default="rayleigh")
    g.add_argument("-o", "--output", help="instance JSON (default: stdout)")
    g.set_defaults(func=cmd_gen_channel)

    w = sub.add_parser("sweep", help="run a sweep spec")
    w.add_argument("spec")
    w.add_argument("-o", "--output", help="CSV path (default: the sweep file's output entry)")
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--timing", action="store_true", help="add a wall_time_s column (not reproducible)")
    w.add_argument("--plot", action="store_true", help="also render a PNG next to the CSV")
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("convergence", help="solver traces for several regularizer weights")
    c.add_argument("instance")
    c.add_argument("--x-values", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    c.add_argument("--config")
    c.add_argument("-o", "--output", default="convergence.csv")
    c.add_argument("--plot", action="store_true")
    c.set_defaults(func=cmd_convergence)

    f = sub.add_parser("fairness", help="per-user rates of every strategy")
    f.add_argument("instance")
    f.add_argument("-o", "--output", default="fairness.csv")
    f.add_argument("--plot", action="store_true")
    f.set_defaults(func=cmd_fairness)

    v = sub.add_parser("verify", help="self-checks and oracle comparison")
    v.add_argument("instance")
    v.add_argument("--allocation", help="allocation or result JSON to check for feasibility")
    v.add_argument("--config")
    v.add_argument("--json", action="store_true", help="machine-readable report")
    v.add_argument("-o", "--output")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        kind, code, msg = exc.kind, exc.code, str(exc)
    except InfeasibleProblemError as exc:
        kind, code, msg = type(exc).__name__, EXIT_REFUSED, str(exc)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        kind, code, msg = type(exc).__name__, EXIT_INPUT, str(exc)
    sys.stderr.write(f"error: kind={kind} message={json.dumps(msg)}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
