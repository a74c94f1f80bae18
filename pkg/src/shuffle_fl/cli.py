"""Command-line entry point: ``shuffle-fl <subcommand> [flags]``.

Config files are JSON. Keys mirror the long flags (``sync_shuf`` for
``--sync-shuf``); the construction lives under ``"problem"``. Inline flags
override file values. Exit codes: 0 success, 2 invalid configuration,
3 divergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path


from . import concentration, harness, rates
from .algorithms import ALGORITHMS, RECORD_MODES, RunConfig, simulate
from .errors import ConfigError, InvalidArgument
from .harness import AXES, MEASURES, ProblemSpec, SweepSpec
from .problem import PROBLEM_KINDS

__all__ = ["main", "load_config", "ResolvedConfig", "build_parser", "RUN_KEYS", "SWEEP_KEYS", "PROBLEM_KEYS"]

RUN_KEYS = ("algorithm", "M", "N", "K", "B", "step_size", "sync_shuf", "seed", "record", "x0",
            "relax_batch_limits")
PROBLEM_KEYS = ("kind", "L", "mu", "nu", "tau")
SWEEP_KEYS = ("axis", "values", "trials", "measure")

_INT_KEYS = {"M", "N", "K", "B", "seed", "trials"}
_BOOL_KEYS = {"sync_shuf", "relax_batch_limits"}


@dataclass
class ResolvedConfig:
    run: RunConfig
    problem: ProblemSpec
    axis: str | None = None
    values: tuple[int, ...] = ()
    trials: int = 1
    measure: str = "mean_suboptimality"

    def sweep_spec(self) -> SweepSpec:
        if self.axis is None:
            raise ConfigError("axis", "a sweep needs an axis")
        return SweepSpec(self.run, self.problem, self.axis, self.values, self.trials,
                         self.run.seed, self.measure)

    def to_dict(self) -> dict:
        run = asdict(self.run)
        if run["x0"] is not None:
            run["x0"] = list(run["x0"])
        doc = dict(run, problem=asdict(self.problem))
        if self.axis is not None:
            doc.update(axis=self.axis, values=list(self.values), trials=self.trials, measure=self.measure)
        return doc


def _check_int(key: str, v, minimum: int | None = None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {v}")
    return v


def _check_number(key: str, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(key, f"must be a finite number, got {v!r}")
    return float(v)


def load_config(source, overrides: dict | None = None, sweep: bool = False) -> ResolvedConfig:
    """Resolve a JSON file (path), a dict, or None, plus inline overrides.

    Errors are ``ConfigError`` naming the offending field path.
    """
    if source is None:
        doc = {}
    elif isinstance(source, dict):
        doc = json.loads(json.dumps(source))
    else:
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"no such file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a JSON object")

    prob = doc.pop("problem", {}) or {}
    if isinstance(prob, str):
        prob = {"kind": prob}
    if not isinstance(prob, dict):
        raise ConfigError("problem", "must be an object or a construction name")
    for key, v in (overrides or {}).items():
        if v is None:
            continue
        if key.startswith("problem."):
            prob[key.split(".", 1)[1]] = v
        else:
            doc[key] = v

    allowed = set(RUN_KEYS) | (set(SWEEP_KEYS) if sweep else set())
    for key in doc:
        if key not in allowed:
            raise ConfigError(key, "unknown field")
    for key in prob:
        if key not in PROBLEM_KEYS:
            raise ConfigError(f"problem.{key}", "unknown field")

    run_kwargs = {}
    for key in RUN_KEYS:
        if key not in doc:
            continue
        v = doc[key]
        if key in _INT_KEYS:
            _check_int(key, v, 0 if key in ("K", "seed") else 1)
        elif key in _BOOL_KEYS:
            if not isinstance(v, bool):
                raise ConfigError(key, f"must be true or false, got {v!r}")
        elif key == "x0" and v is not None:
            if not isinstance(v, list):
                v = [v]
            v = tuple(_check_number(f"x0[{i}]", e) for i, e in enumerate(v))
        elif key == "step_size" and v is not None and not isinstance(v, str):
            v = _check_number(key, v)
        run_kwargs[key] = v
    run = RunConfig(**run_kwargs)
    if run.step_size is None:
        run.step_size = run.default_rule()

    pkw = {}
    for key, v in prob.items():
        if key == "kind":
            if v not in PROBLEM_KINDS:
                raise ConfigError("problem.kind", f"must be one of {PROBLEM_KINDS}, got {v!r}")
            pkw[key] = v
        else:
            pkw[key] = _check_number(f"problem.{key}", v)
    problem = ProblemSpec(**pkw).validate()

    resolved = ResolvedConfig(run, problem)
    if sweep:
        axis = doc.get("axis")
        if axis not in AXES:
            raise ConfigError("axis", f"must be one of {AXES}, got {axis!r}")
        values = doc.get("values")
        if isinstance(values, str):
            try:
                values = [int(t) for t in values.split(",") if t.strip()]
            except ValueError:
                raise ConfigError("values", f"expected comma-separated integers, got {doc['values']!r}") from None
        if not isinstance(values, list) or not values:
            raise ConfigError("values", "must be a non-empty list of integers")
        for i, v in enumerate(values):
            _check_int(f"values[{i}]", v, 1)
        resolved.axis = axis
        resolved.values = tuple(values)
        resolved.trials = _check_int("trials", doc.get("trials", 100), 1)
        resolved.measure = doc.get("measure", "mean_suboptimality")
        resolved.sweep_spec().validate()
    else:
        run.validate()
        if (run.algorithm, run.step_size) != ("gd", None):
            _resolve_rule_check(run)
    return resolved


def _resolve_rule_check(run: RunConfig):
    # make sure a rule-based step size is computable before any work starts
    if isinstance(run.step_size, float):
        return
    rule = run.step_size or run.default_rule()
    if rule is not None and run.M * run.N * max(run.K, 1) ** 2 <= 1:
        raise ConfigError("step_size", "rule step sizes need M*N*K^2 > 1")


# parser ---------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON config file; inline flags override it")
    g.add_argument("--algorithm", choices=ALGORITHMS)
    g.add_argument("--M", type=int, help="number of machines")
    g.add_argument("--N", type=int, help="components per machine")
    g.add_argument("--K", type=int, help="number of epochs")
    g.add_argument("--B", type=int, help="synchronization interval / minibatch size")
    g.add_argument("--step-size", dest="step_size",
                   help="explicit step size or a rule name (minibatch-rr, local-rr, T1, ...)")
    g.add_argument("--eta", type=float, help="explicit step size (overrides --step-size)")
    g.add_argument("--sync-shuf", dest="sync_shuf", action=argparse.BooleanOptionalAction, default=None,
                   help="synchronized shuffling")
    g.add_argument("--seed", type=int)
    g.add_argument("--record", choices=RECORD_MODES)
    g.add_argument("--x0", help="initial point, comma separated")
    g.add_argument("--relax-batch-limits", dest="relax_batch_limits",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="allow B=N for minibatch and B=1 for local algorithms")
    g = p.add_argument_group("problem")
    g.add_argument("--problem", dest="kind", choices=PROBLEM_KINDS, help="construction name")
    g.add_argument("--L", type=float, help="smoothness constant")
    g.add_argument("--mu", type=float, help="PL constant")
    g.add_argument("--nu", type=float, help="intra-machine deviation")
    g.add_argument("--tau", type=float, help="inter-machine deviation (hetero)")


def _add_output_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("output")
    g.add_argument("--out", help="output path (stdout when omitted)")
    g.add_argument("--format", choices=("csv", "json"), help="defaults from the --out suffix")
    g.add_argument("--strict", action="store_true", help="exit 3 if any run diverges")
    g.add_argument("--threads", type=int, help="worker threads (env SHUFFLE_FL_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shuffle-fl",
                                     description="Shuffling-based distributed optimization simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    _add_run_flags(p)
    _add_output_flags(p)

    p = sub.add_parser("sweep", help="sweep one axis and fit a log-log slope")
    _add_run_flags(p)
    g = p.add_argument_group("sweep")
    g.add_argument("--axis", choices=AXES)
    g.add_argument("--values", help="comma separated axis values")
    g.add_argument("--trials", type=int, help="trials per point")
    g.add_argument("--measure", choices=MEASURES)
    _add_output_flags(p)

    p = sub.add_parser("bounds", help="evaluate step sizes, thresholds and bounds")
    p.add_argument("--theorem", required=True, choices=rates.UPPER_THEOREMS + rates.LOWER_THEOREMS)
    for name, kind, default in (("L", float, 1.0), ("mu", float, 1.0), ("nu", float, 0.0),
                                ("tau", float, 0.0), ("rho", float, 1.0), ("lam", float, 0.0),
                                ("M", int, 1), ("N", int, 2), ("K", int, 1), ("B", int, 1),
                                ("F0-gap", float, 1.0)):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=kind, default=default)
    p.add_argument("--delta", type=float, help="failure probability for explicit constants")
    p.add_argument("--c2", type=float, default=1.0, help="regime constant for T3/T4")
    p.add_argument("--c4", type=float, default=1.0, help="regime constant for T4")
    p.add_argument("--out", help="output path (JSON); stdout when omitted")

    p = sub.add_parser("verify-concentration", help="Monte-Carlo check of the Hoeffding-Serfling bound")
    p.add_argument("--M", type=int, default=1)
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--n", type=int, default=5, help="prefix length")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--dim", type=int, choices=(1, 3), default=1,
                   help="1: +/-nu scalars, 3: antipodal sphere points")
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (JSON); stdout when omitted")

    p = sub.add_parser("oracle", help="exact-oracle cross-checks")
    p.add_argument("--check", required=True, choices=("phi_vs_sim", "hetero_vs_sim", "brute_force_epoch"))
    for name, kind in (("N", int), ("B", int), ("M", int), ("K", int), ("eta", float), ("L", float),
                       ("mu", float), ("nu", float), ("tau", float), ("x0", float), ("y0", float),
                       ("trials", int), ("seed", int)):
        p.add_argument(f"--{name}", type=kind)
    p.add_argument("--out", help="output path (JSON); stdout when omitted")
    return parser


def _overrides(args, sweep: bool) -> dict:
    ov = {k: getattr(args, k) for k in RUN_KEYS if k not in ("x0",) and getattr(args, k, None) is not None}
    if args.eta is not None:
        ov["step_size"] = args.eta
    elif args.step_size is not None:
        try:
            ov["step_size"] = float(args.step_size)
        except ValueError:
            ov["step_size"] = args.step_size
    if args.x0 is not None:
        try:
            ov["x0"] = [float(t) for t in args.x0.split(",")]
        except ValueError:
            raise ConfigError("x0", f"expected comma-separated numbers, got {args.x0!r}") from None
    for k in PROBLEM_KEYS:
        if getattr(args, k, None) is not None:
            ov[f"problem.{k}"] = getattr(args, k)
    if sweep:
        for k in SWEEP_KEYS:
            if getattr(args, k, None) is not None:
                ov[k] = getattr(args, k)
    return ov


def _emit(doc: dict, out: str | None):
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args, False))
    problem = cfg.problem.build(cfg.run.M, cfg.run.N)
    res = simulate(problem, cfg.run, [cfg.run.seed])
    diverged = int(res.diverged_epoch[0])
    doc = {
        "config": cfg.to_dict(),
        "step_size": res.step_size,
        "suboptimality": [float(v) for v in res.suboptimality[0]],
        "final_x": [float(v) for v in res.final_x[0]],
        "epochs_run": cfg.run.K,
        "gradient_evaluations": res.gradient_evaluations,
        "communication_rounds": res.communication_rounds,
        "diverged_epoch": diverged,
    }
    fmt = args.format or ("csv" if args.out and args.out.endswith(".csv") else "json")
    if fmt == "csv" and args.out:
        lines = ["record,suboptimality"] + [f"{i},{v!r}" for i, v in enumerate(doc["suboptimality"])]
        Path(args.out).write_text("\n".join(lines) + "\n")
        meta = {k: v for k, v in doc.items() if k != "suboptimality"}
        harness.sidecar_path(args.out).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    else:
        _emit(doc, args.out)
    if diverged:
        print(f"run diverged in epoch {diverged}", file=sys.stderr)
        if args.strict:
            return 3
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args, True), sweep=True)
    threads = args.threads if args.threads is not None else harness.default_threads()
    if threads < 1:
        raise ConfigError("threads", f"must be positive, got {threads}")
    log = (lambda msg: print(msg, file=sys.stderr))
    result = harness.run_sweep(cfg.sweep_spec(), threads=threads, log=log)
    if args.out:
        harness.persist(result, args.out, args.format)
    else:
        doc = harness._meta(result)
        doc["points"] = [asdict(p) for p in result.points]
        _emit(doc, None)
    print(f"slope={result.slope:.4f} stderr={result.slope_stderr:.3g} r2={result.r_squared:.4f}",
          file=sys.stderr)
    if args.strict and any(p.diverged for p in result.points):
        return 3
    return 0


def _cmd_bounds(args) -> int:
    params = rates.RateParams(L=args.L, mu=args.mu, nu=args.nu, tau=args.tau, rho=args.rho, lam=args.lam,
                              M=args.M, N=args.N, K=args.K, B=args.B, F0_gap=args.F0_gap)
    doc = {"config": {f.name: getattr(params, f.name) for f in fields(params)}, "theorem": args.theorem}
    doc["config"].update(delta=args.delta, c2=args.c2, c4=args.c4)
    if args.theorem in rates.UPPER_THEOREMS:
        bv = rates.upper_bound(args.theorem, params, args.delta)
        doc.update(step_size=rates.step_size(args.theorem, params),
                   epoch_threshold=bv.threshold, in_regime=bv.in_regime,
                   order_bound=bv.order, explicit_bound=bv.explicit)
    else:
        doc["lower_bound"] = rates.lower_bound(args.theorem, params, args.c2, args.c4)
    _emit(doc, args.out)
    return 0


def _cmd_concentration(args) -> int:
    if args.dim == 1:
        spec = concentration.sign_population(args.nu, args.M, args.N, args.n, args.delta)
    else:
        spec = concentration.sphere_population(args.nu, args.M, args.N, args.n, args.delta, 3, args.seed)
    rep = concentration.mc_violation_rate(spec, args.trials, args.seed)
    doc = {"config": {k: v for k, v in vars(args).items() if k != "out"}, "bound": rep.bound, "violation_rate": rep.rate,
           "stderr": rep.stderr, "violations": rep.violations, "trials": rep.trials,
           "result": "PASS" if rep.passed else "FAIL"}
    _emit(doc, args.out)
    print(f"bound={rep.bound:.6g} rate={rep.rate:.6g} stderr={rep.stderr:.3g} "
          f"{'PASS' if rep.passed else 'FAIL'}", file=sys.stderr)
    return 0 if rep.passed else 1


def _cmd_oracle(args) -> int:
    params = {k: v for k, v in vars(args).items()
              if k not in ("command", "check", "out") and v is not None}
    rep = harness.oracle_cross_check(args.check, **params)
    doc = {"config": dict(params, check=args.check)} | {
        k: getattr(rep, k) for k in ("exact", "closed_form", "monte_carlo", "mc_stderr",
                                     "max_abs_discrepancy", "details")}
    _emit(doc, args.out)
    return 0


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "bounds": _cmd_bounds,
             "verify-concentration": _cmd_concentration, "oracle": _cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
