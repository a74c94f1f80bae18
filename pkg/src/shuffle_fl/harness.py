"""Parameter sweeps, trial aggregation, log-log fits, oracle cross-checks
and result persistence.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations, product
from pathlib import Path

import numpy as np

from . import rates
from .algorithms import RunConfig, _minibatch_epoch, simulate
from .errors import ConfigError, InvalidArgument
from .problem import PROBLEM_KINDS, Problem, make_problem

__all__ = [
    "AXES",
    "MEASURES",
    "ProblemSpec",
    "SweepSpec",
    "SweepPoint",
    "SweepResult",
    "LogLogFit",
    "run_sweep",
    "fit_loglog_slope",
    "CrossCheckReport",
    "oracle_cross_check",
    "persist",
    "load_result",
    "default_threads",
]

AXES = ("M", "N", "K", "B")
MEASURES = ("mean_suboptimality", "mean_abs_iterate", "second_moment")
DIVERGED_EXCLUSION = 0.01
_CHUNK = 1000


def default_threads() -> int:
    env = os.environ.get("SHUFFLE_FL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("SHUFFLE_FL_THREADS", f"not an integer: {env!r}") from None
        if n < 1:
            raise ConfigError("SHUFFLE_FL_THREADS", f"must be positive, got {n}")
        return n
    return 1


@dataclass(frozen=True)
class ProblemSpec:
    """A named construction; M and N come from the run configuration."""

    kind: str = "f3"
    L: float = 1.0
    mu: float = 1.0
    nu: float = 1.0
    tau: float = 1.0

    def validate(self) -> "ProblemSpec":
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError("problem.kind", f"must be one of {PROBLEM_KINDS}, got {self.kind!r}")
        for name in ("L", "mu", "nu", "tau"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"problem.{name}", f"must be a finite number, got {v!r}")
        if self.mu <= 0 or self.L < self.mu:
            raise ConfigError("problem.L", f"need L >= mu > 0, got L={self.L}, mu={self.mu}")
        if self.nu < 0 or self.tau < 0:
            raise ConfigError("problem.nu", "nu and tau must be nonnegative")
        return self

    def build(self, M: int, N: int) -> Problem:
        return make_problem(self.kind, M=M, N=N, L=self.L, mu=self.mu, nu=self.nu, tau=self.tau)


@dataclass
class SweepSpec:
    base_config: RunConfig
    problem: ProblemSpec
    axis: str
    values: tuple[int, ...]
    trials: int = 100
    seed: int = 0
    measure: str = "mean_suboptimality"

    def validate(self) -> "SweepSpec":
        self.problem.validate()
        if self.axis not in AXES:
            raise ConfigError("axis", f"must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("values", "need at least one axis value")
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials", f"must be a positive integer, got {self.trials!r}")
        if self.measure not in MEASURES:
            raise ConfigError("measure", f"must be one of {MEASURES}, got {self.measure!r}")
        for v in self.values:
            try:
                self.config_at(v).validate()
            except ConfigError as exc:
                raise ConfigError(f"values[{v}].{exc.field}", exc.message) from None
        return self

    def config_at(self, value: int) -> RunConfig:
        return replace(self.base_config, **{self.axis: int(value)})

    def to_dict(self) -> dict:
        cfg = asdict(self.base_config)
        if cfg["x0"] is not None:
            cfg["x0"] = list(cfg["x0"])
        return {
            "base_config": cfg,
            "problem": asdict(self.problem),
            "axis": self.axis,
            "values": [int(v) for v in self.values],
            "trials": self.trials,
            "seed": self.seed,
            "measure": self.measure,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class SweepPoint:
    value: int
    mean: float
    stderr: float
    trials: int
    diverged: int = 0
    excluded: bool = False


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    stderr: float
    r_squared: float
    intercept: float


@dataclass
class SweepResult:
    axis: str
    points: list[SweepPoint]
    slope: float
    slope_stderr: float
    r_squared: float
    seed: int = 0
    spec_hash: str = ""
    spec: dict = field(default_factory=dict)


def fit_loglog_slope(points) -> LogLogFit:
    """Ordinary least squares of ln y on ln x."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise InvalidArgument(f"need at least 3 points, got {len(pts)}")
    if any(not (x > 0 and y > 0) for x, y in pts):
        raise InvalidArgument("log-log fit needs strictly positive x and y")
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    xm, ym = lx.mean(), ly.mean()
    sxx = float(((lx - xm) ** 2).sum())
    if sxx == 0:
        raise InvalidArgument("x values must not all coincide")
    slope = float(((lx - xm) * (ly - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = ly - (intercept + slope * lx)
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((ly - ym) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    stderr = math.sqrt(ss_res / (len(pts) - 2) / sxx)
    return LogLogFit(slope, stderr, r2, intercept)


def _measure(problem: Problem, res, measure: str) -> np.ndarray:
    if measure == "mean_suboptimality":
        return res.suboptimality[:, -1]
    err = res.final_x - np.asarray(problem.x_star, dtype=float)
    if measure == "mean_abs_iterate":
        return np.linalg.norm(err, axis=1)
    return (err ** 2).sum(axis=1)


def _run_point(spec: SweepSpec, value: int, threads: int) -> SweepPoint:
    cfg = spec.config_at(value).validate()
    problem = spec.problem.build(cfg.M, cfg.N)
    seeds = spec.seed + np.arange(spec.trials, dtype=np.int64)
    chunks = [seeds[i:i + _CHUNK] for i in range(0, seeds.size, _CHUNK)]

    def work(chunk):
        res = simulate(problem, replace(cfg, record="final_only"), chunk)
        return _measure(problem, res, spec.measure), res.diverged_epoch

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    # reassemble in trial order so the reduction below never depends on scheduling
    vals = np.concatenate([p[0] for p in parts])
    bad = np.concatenate([p[1] for p in parts]) > 0
    good = vals[~bad]
    n = int(good.size)
    mean = float(good.sum() / n) if n else math.nan
    stderr = float(good.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    n_bad = int(bad.sum())
    excluded = n_bad > DIVERGED_EXCLUSION * spec.trials or n == 0
    if excluded:
        warnings.warn(f"{spec.axis}={value}: {n_bad}/{spec.trials} trials diverged; point excluded from fit",
                      RuntimeWarning, stacklevel=3)
    return SweepPoint(int(value), mean, stderr, n, n_bad, excluded)


def run_sweep(spec: SweepSpec, threads: int | None = None, log=None) -> SweepResult:
    """Run every axis value with seeds ``seed + t`` and fit ln(mean) on ln(value)."""
    spec.validate()
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ConfigError("threads", f"must be positive, got {threads}")
    points = []
    for v in spec.values:
        pt = _run_point(spec, v, threads)
        points.append(pt)
        if log is not None:
            log(f"{spec.axis}={pt.value} mean={pt.mean:.6g} stderr={pt.stderr:.3g} "
                f"trials={pt.trials} diverged={pt.diverged}")
    usable = [(p.value, p.mean) for p in points if not p.excluded and p.mean > 0]
    if len(usable) >= 3:
        fit = fit_loglog_slope(usable)
        slope, se, r2 = fit.slope, fit.stderr, fit.r_squared
    else:
        slope = se = r2 = math.nan
    return SweepResult(spec.axis, points, slope, se, r2, spec.seed, spec.digest(), spec.to_dict())


# oracle cross-checks --------------------------------------------------------

@dataclass(frozen=True)
class CrossCheckReport:
    name: str
    exact: float | None
    closed_form: float | None
    monte_carlo: float | None
    mc_stderr: float | None
    max_abs_discrepancy: float
    details: dict = field(default_factory=dict)

    def within(self, n_stderr: float = 4.0, atol: float = 1e-10) -> bool:
        """Exact/closed-form agreement to ``atol`` and Monte-Carlo within n stderr."""
        ok = True
        if self.exact is not None and self.closed_form is not None:
            ok &= abs(self.exact - self.closed_form) <= atol
        if self.monte_carlo is not None:
            ref = self.exact if self.exact is not None else self.closed_form
            ok &= abs(self.monte_carlo - ref) <= n_stderr * (self.mc_stderr or 0.0) + atol
        return bool(ok)


def _sign_orderings(N: int) -> np.ndarray:
    """One 0-based ordering per placement of the N/2 '+' components.

    Every placement is hit by the same number of permutations, so averaging
    over these representatives equals averaging over all of S_N.
    """
    rows = []
    for plus in combinations(range(N), N // 2):
        order = np.empty(N, dtype=np.int64)
        order[list(plus)] = np.arange(N // 2)
        order[[j for j in range(N) if j not in plus]] = np.arange(N // 2, N)
        rows.append(order)
    return np.array(rows)


def _enumerate_epoch(problem: Problem, eta: float, B: int, x0: float, M: int, N: int) -> np.ndarray:
    base = _sign_orderings(N)
    combos = np.array(list(product(range(len(base)), repeat=M)))
    P = base[combos]  # (C^M, M, N)
    X = np.full((P.shape[0], 1), float(x0))
    return _minibatch_epoch(X, problem, eta, B, P)[:, 0]


def _mc_second_moment(problem, M, N, B, eta, x0, trials, seed):
    if eta == 0:
        return float(x0) ** 2, 0.0  # iterate never moves
    cfg = RunConfig("minibatch-rr", M=M, N=N, K=1, B=B, step_size=eta, record="final_only",
                    x0=(float(x0),), relax_batch_limits=True)
    res = simulate(problem, cfg, seed + np.arange(trials))
    v = res.final_x[:, 0] ** 2
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0


def _f3_moment_closed_form(N, B, M, eta, L, nu, x0):
    alpha = 1.0 - eta * L
    phi = rates.phi_closed_form(N, B, alpha) if N // B >= 2 else 0.0
    return alpha ** (2 * N // B) * x0 ** 2 + eta ** 2 * nu ** 2 / (M * B ** 2) * phi


def oracle_cross_check(name: str, **params) -> CrossCheckReport:
    """Compare an exact small-size oracle, a closed form, and simulation.

    ``brute_force_epoch``: N, B, M, eta, L, nu, x0, trials, seed (N <= 6, M <= 2).
    ``phi_vs_sim``: same keys without size limits (no enumeration).
    ``hetero_vs_sim``: mu, tau, eta, B, N, K, M, L, y0.
    """
    if name in ("brute_force_epoch", "phi_vs_sim"):
        N = int(params.get("N", 4))
        B = int(params.get("B", 2))
        M = int(params.get("M", 1))
        eta = float(params.get("eta", 0.1))
        L = float(params.get("L", 1.0))
        nu = float(params.get("nu", 1.0))
        x0 = float(params.get("x0", 0.0))
        trials = int(params.get("trials", 10000))
        seed = int(params.get("seed", 0))
        if eta < 0:
            raise InvalidArgument(f"eta must be nonnegative, got {eta}")
        if N % 2 or N % B or N // B < 2:
            raise InvalidArgument(f"need N even, B | N and N/B >= 2; got N={N}, B={B}")
        problem = make_problem("f3", M=M, N=N, L=L, mu=min(L, 1.0), nu=nu)
        closed = _f3_moment_closed_form(N, B, M, eta, L, nu, x0)
        mc, se = (_mc_second_moment(problem, M, N, B, eta, x0, trials, seed)
                  if trials > 0 else (None, None))
        exact = None
        details = {"N": N, "B": B, "M": M, "eta": eta, "L": L, "nu": nu, "x0": x0, "trials": trials}
        if name == "brute_force_epoch":
            if N > 6 or M > 2:
                raise InvalidArgument(f"enumeration limited to N <= 6, M <= 2; got N={N}, M={M}")
            ends = _enumerate_epoch(problem, eta, B, x0, M, N)
            exact = float((ends ** 2).mean())
            details["mean_endpoint"] = float(ends.mean())
            details["patterns"] = int(ends.size)
        refs = [v for v in (exact, closed, mc) if v is not None]
        return CrossCheckReport(name, exact, closed, mc, se, max(refs) - min(refs), details)

    if name == "hetero_vs_sim":
        mu = float(params.get("mu", 1.0))
        tau = float(params.get("tau", 1.0))
        eta = float(params.get("eta", 0.1))
        B = int(params.get("B", 2))
        N = int(params.get("N", 8))
        K = int(params.get("K", 8))
        M = int(params.get("M", 2))
        L = float(params.get("L", max(2.0 * mu, 1.0)))
        y0 = float(params.get("y0", 0.0))
        closed = rates.hetero_trajectory(mu, tau, eta, B, N, K, y0)
        problem = make_problem("hetero", M=M, N=N, L=L, mu=mu, tau=tau)
        cfg = RunConfig("local-rr", M=M, N=N, K=K, B=B, step_size=eta, record="per_round",
                        x0=(y0,), seed=int(params.get("seed", 0)))
        sim = simulate(problem, cfg, [cfg.seed], keep_iterates=True).iterates[0, :, 0]
        gap = float(np.max(np.abs(sim - closed)))
        return CrossCheckReport(name, None, float(closed[-1]), None, None, gap,
                                {"rounds": int(closed.size - 1), "final_sim": float(sim[-1])})

    raise InvalidArgument(f"unknown cross-check {name!r}; "
                          "expected phi_vs_sim, hetero_vs_sim or brute_force_epoch")


# persistence ----------------------------------------------------------------

CSV_COLUMNS = ("axis", "value", "mean", "stderr", "trials")


def _meta(result: SweepResult) -> dict:
    return {
        "axis": result.axis,
        "slope": result.slope,
        "slope_stderr": result.slope_stderr,
        "r_squared": result.r_squared,
        "spec_hash": result.spec_hash,
        "seed": result.seed,
        "diverged": [p.diverged for p in result.points],
        "excluded": [p.excluded for p in result.points],
        "spec": result.spec,
    }


def _dumps(doc) -> str:
    # NaN survives as a bare token, which json.loads accepts back
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def persist(result: SweepResult, path, format: str | None = None) -> None:
    """Write ``result`` as CSV (plus a JSON sidecar) or as one JSON document."""
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    try:
        if fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for p in result.points:
                w.writerow([result.axis, p.value, repr(p.mean), repr(p.stderr), p.trials])
            path.write_text(buf.getvalue())
            sidecar_path(path).write_text(_dumps(_meta(result)))
        elif fmt == "json":
            doc = _meta(result)
            doc["points"] = [asdict(p) for p in result.points]
            path.write_text(_dumps(doc))
        else:
            raise InvalidArgument(f"format must be csv or json, got {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc


def load_result(path, format: str | None = None) -> SweepResult:
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        doc = json.loads(path.read_text())
        points = [SweepPoint(**p) for p in doc["points"]]
    else:
        doc = json.loads(sidecar_path(path).read_text())
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        points = [SweepPoint(int(r["value"]), float(r["mean"]), float(r["stderr"]), int(r["trials"]), d, e)
                  for r, d, e in zip(rows, doc["diverged"], doc["excluded"])]
    return SweepResult(doc["axis"], points, doc["slope"], doc["slope_stderr"], doc["r_squared"],
                       doc["seed"], doc["spec_hash"], doc["spec"])
