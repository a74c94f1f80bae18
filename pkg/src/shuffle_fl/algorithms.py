"""Epoch-structured optimizers: minibatch/local RR, their SGD baselines, and GD.

The engine works on a batch of independent trials at once: iterates have
shape (T, dim) and epoch orderings (T, M, N). Each trial's randomness is a
function of its own seed only, so a batch of size T reproduces T separate
single-trial runs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rates
from .errors import ConfigError, DivergedError, InvalidArgument
from .problem import Problem
from .shuffle import PermutationSet, epoch_permutations, uniform_indices

__all__ = [
    "ALGORITHMS",
    "RECORD_MODES",
    "DIVERGENCE_LIMIT",
    "RunConfig",
    "RunResult",
    "BatchResult",
    "minibatch_rr_epoch",
    "local_rr_epoch",
    "minibatch_sgd_epoch",
    "local_sgd_epoch",
    "gd_epoch",
    "resolve_step_size",
    "simulate",
    "run",
]

ALGORITHMS = ("minibatch-rr", "local-rr", "minibatch-sgd", "local-sgd", "gd")
RECORD_MODES = ("final_only", "per_epoch", "per_round")
DIVERGENCE_LIMIT = 1e12

_DEFAULT_RULE = {
    ("minibatch-rr", False): "ThmMinibatchRR",
    ("minibatch-rr", True): "ThmMinibatchRRSync",
    ("local-rr", False): "ThmLocalRR",
    ("local-rr", True): "ThmLocalRRSync",
    ("minibatch-sgd", False): "ThmMinibatchRR",
    ("local-sgd", False): "ThmLocalRR",
}


@dataclass
class RunConfig:
    """One optimizer run.

    ``step_size`` is an explicit eta, a rule name understood by
    ``rates.step_size``, or None for the algorithm's theorem rule (1/L for
    GD). ``relax_batch_limits`` admits B = N for minibatch RR and B = 1
    for local RR, which the equivalence checks need.
    """

    algorithm: str = "minibatch-rr"
    M: int = 1
    N: int = 2
    K: int = 1
    B: int = 1
    step_size: float | str | None = None
    sync_shuf: bool = False
    seed: int = 0
    record: str = "per_epoch"
    x0: tuple[float, ...] | None = None
    relax_batch_limits: bool = False

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("M", "N", "B"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if not isinstance(self.K, (int, np.integer)) or self.K < 0:
            raise ConfigError("K", f"must be a nonnegative integer, got {self.K!r}")
        if self.N % self.B:
            raise ConfigError("B", "B must divide N")
        if not self.relax_batch_limits:
            if self.algorithm in ("minibatch-rr", "minibatch-sgd") and self.B > self.N // 2:
                raise ConfigError("B", "minibatch algorithms need 1 <= B <= N/2")
            if self.algorithm in ("local-rr", "local-sgd") and self.B < 2:
                raise ConfigError("B", "local algorithms need 2 <= B <= N")
        if self.sync_shuf:
            if self.algorithm not in ("minibatch-rr", "local-rr"):
                raise ConfigError("sync_shuf", "SyncShuf applies to minibatch-rr and local-rr only")
            if self.N % self.M:
                raise ConfigError("sync_shuf", "M must divide N under SyncShuf")
        if self.record not in RECORD_MODES:
            raise ConfigError("record", f"must be one of {RECORD_MODES}, got {self.record!r}")
        if isinstance(self.step_size, (int, float)) and not isinstance(self.step_size, bool):
            if not self.step_size > 0:
                raise ConfigError("step_size", f"must be positive, got {self.step_size}")
        elif isinstance(self.step_size, str):
            try:
                rates.theorem_for_rule(self.step_size)
            except InvalidArgument as exc:
                raise ConfigError("step_size", str(exc)) from None
        elif self.step_size is not None:
            raise ConfigError("step_size", f"must be a number, a rule name or null, got {self.step_size!r}")
        return self

    def default_rule(self) -> str | None:
        return _DEFAULT_RULE.get((self.algorithm, self.sync_shuf))


@dataclass
class RunResult:
    suboptimality: list[float]
    final_x: np.ndarray
    epochs_run: int
    gradient_evaluations: int
    communication_rounds: int
    step_size: float | None = None


@dataclass
class BatchResult:
    """Per-trial traces; rows of diverged trials are NaN after divergence.

    ``diverged_epoch[t]`` is the epoch in which trial t diverged, or 0.
    """

    suboptimality: np.ndarray  # (T, n_records)
    final_x: np.ndarray  # (T, dim)
    diverged_epoch: np.ndarray  # (T,)
    step_size: float | None
    gradient_evaluations: int
    communication_rounds: int
    seeds: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    iterates: np.ndarray | None = None


def resolve_step_size(problem: Problem, config: RunConfig) -> float:
    """Explicit eta, or the named / default rule evaluated for this run."""
    if isinstance(config.step_size, (int, float)) and not isinstance(config.step_size, bool):
        return float(config.step_size)
    rule = config.step_size or config.default_rule()
    if rule is None:  # GD
        return 1.0 / problem.constants.L
    c = problem.constants
    params = rates.RateParams(L=c.L, mu=c.mu, nu=c.nu, tau=c.tau, rho=c.rho,
                              lam=c.lam if np.isfinite(c.lam) else 0.0,
                              M=config.M, N=config.N, K=config.K, B=config.B)
    return rates.step_size(rule, params)


# batched epoch kernels ------------------------------------------------------
# X: (T, d); P: (T, M, N) 0-based orderings (or i.i.d. draws for SGD).

def _minibatch_epoch(X, problem, eta, B, P, inner_sum=False, on_round=None):
    T, M, N = P.shape
    oracle = problem.epoch_oracle(P)
    scale = eta / M if inner_sum else eta / (M * B)
    for r in range(N // B):
        X = X - scale * oracle.block_sum(r, B, X)
        if on_round is not None:
            on_round(X)
    return X


def _local_epoch(X, problem, eta, B, P, on_round=None):
    T, M, N = P.shape
    oracle = problem.epoch_oracle(P)
    Xm = np.repeat(X[:, None, :], M, axis=1)
    for i in range(N):
        Xm = Xm - eta * oracle.step_grads(i, Xm)
        if (i + 1) % B == 0:
            Y = Xm.mean(axis=1)
            Xm = np.repeat(Y[:, None, :], M, axis=1)
            if on_round is not None:
                on_round(Y)
    return Xm[:, 0, :].copy()


def _gd_epoch(X, problem, eta, on_round=None):
    X = X - eta * problem.global_gradients(X)
    if on_round is not None:
        on_round(X)
    return X


# single-trial public wrappers ------------------------------------------------

def _as_perm_array(perms, problem: Problem) -> np.ndarray:
    if isinstance(perms, PermutationSet):
        arr = perms.as_array()
    else:
        arr = np.asarray(perms)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape != (problem.M, problem.N):
        raise InvalidArgument(f"expected orderings of shape ({problem.M}, {problem.N}), got {arr.shape}")
    return arr[None, :, :] - 1


def _as_point(x, problem: Problem) -> np.ndarray:
    return problem._check_x(x)[None, :]


def _check_batch(B: int, N: int):
    if B < 1 or N % B:
        raise InvalidArgument(f"B must divide N, got B={B}, N={N}")


def minibatch_rr_epoch(x, problem: Problem, eta: float, B: int, perms, inner_sum: bool = False) -> np.ndarray:
    """One epoch of minibatch RR from ``x`` under the given 1-based orderings.

    With ``inner_sum`` the per-machine minibatch gradient is summed rather
    than averaged, i.e. the update with step ``eta`` replaced by ``eta * B``.
    """
    _check_batch(B, problem.N)
    return _minibatch_epoch(_as_point(x, problem), problem, eta, B,
                            _as_perm_array(perms, problem), inner_sum)[0]


def local_rr_epoch(x, problem: Problem, eta: float, B: int, perms) -> np.ndarray:
    """One epoch of local RR; returns the last synchronized average."""
    _check_batch(B, problem.N)
    return _local_epoch(_as_point(x, problem), problem, eta, B, _as_perm_array(perms, problem))[0]


def minibatch_sgd_epoch(x, problem: Problem, eta: float, B: int, rng) -> np.ndarray:
    """Minibatch RR's round structure with i.i.d. uniform component draws."""
    _check_batch(B, problem.N)
    rng = np.random.default_rng(rng)
    draws = rng.integers(0, problem.N, size=(1, problem.M, problem.N))
    return _minibatch_epoch(_as_point(x, problem), problem, eta, B, draws)[0]


def local_sgd_epoch(x, problem: Problem, eta: float, B: int, rng) -> np.ndarray:
    """Local RR's round structure with i.i.d. uniform component draws."""
    _check_batch(B, problem.N)
    rng = np.random.default_rng(rng)
    draws = rng.integers(0, problem.N, size=(1, problem.M, problem.N))
    return _local_epoch(_as_point(x, problem), problem, eta, B, draws)[0]


def gd_epoch(x, problem: Problem, eta: float) -> np.ndarray:
    return _gd_epoch(_as_point(x, problem), problem, eta)[0]


# orchestration --------------------------------------------------------------

def _initial_point(problem: Problem, config: RunConfig) -> np.ndarray:
    if config.x0 is None:
        return np.zeros(problem.dim)
    x0 = np.asarray(config.x0, dtype=float).reshape(-1)
    if x0.shape != (problem.dim,):
        raise ConfigError("x0", f"must have {problem.dim} entries, got {x0.size}")
    return x0


def _check_problem(problem: Problem, config: RunConfig):
    if (problem.M, problem.N) != (config.M, config.N):
        raise ConfigError("problem", f"problem has (M, N) = ({problem.M}, {problem.N}), "
                                     f"config asks for ({config.M}, {config.N})")


def simulate(problem: Problem, config: RunConfig, seeds, keep_iterates: bool = False) -> BatchResult:
    """Run ``config`` once per seed, vectorized over trials.

    With ``keep_iterates`` the iterates behind every recorded value are
    returned as well, shape (T, n_records, dim).
    """
    config.validate()
    _check_problem(problem, config)
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.int64))
    T = seeds.size
    M, N, K, B = config.M, config.N, config.K, config.B
    X = np.broadcast_to(_initial_point(problem, config), (T, problem.dim)).copy()
    alg = config.algorithm

    records: list[np.ndarray] = []
    points: list[np.ndarray] = []

    def record(Z):
        records.append(problem.global_values(Z) - problem.f_star)
        if keep_iterates:
            points.append(Z.copy())

    if config.record != "final_only" or K == 0:
        record(X)

    if alg == "gd":
        grad_evals, rounds = M * N * K, K
    else:
        grad_evals, rounds = M * N * K, N * K // B
    if K == 0:
        return _batch(records, points, X, np.zeros(T, dtype=np.int64), None, 0, 0, seeds)

    eta = resolve_step_size(problem, config)
    diverged = np.zeros(T, dtype=np.int64)
    on_round = record if config.record == "per_round" else None

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, K + 1):
            if alg == "gd":
                X = _gd_epoch(X, problem, eta, on_round)
            else:
                if alg.endswith("-rr"):
                    P = epoch_permutations(seeds, k, M, N, config.sync_shuf)
                else:
                    P = uniform_indices(seeds, k, M, N)
                if alg.startswith("minibatch"):
                    X = _minibatch_epoch(X, problem, eta, B, P, on_round=on_round)
                else:
                    X = _local_epoch(X, problem, eta, B, P, on_round=on_round)
            bad = (~np.isfinite(X) | (np.abs(X) > DIVERGENCE_LIMIT)).any(axis=1) & (diverged == 0)
            if bad.any():
                diverged[bad] = k
                X[bad] = np.nan
            if config.record == "per_epoch":
                record(X)
    if config.record == "final_only":
        record(X)
    return _batch(records, points, X, diverged, eta, grad_evals, rounds, seeds)


def _batch(records, points, X, diverged, eta, grad_evals, rounds, seeds) -> BatchResult:
    res = BatchResult(np.stack(records, axis=1), X, diverged, eta, grad_evals, rounds, seeds)
    if points:
        res.iterates = np.stack(points, axis=1)
    return res


def run(problem: Problem, config: RunConfig) -> RunResult:
    """Single deterministic run; raises ``DivergedError`` on blow-up."""
    res = simulate(problem, config, [config.seed])
    if res.diverged_epoch[0]:
        raise DivergedError(int(res.diverged_epoch[0]))
    return RunResult(
        suboptimality=[float(v) for v in res.suboptimality[0]],
        final_x=res.final_x[0],
        epochs_run=config.K,
        gradient_evaluations=res.gradient_evaluations,
        communication_rounds=res.communication_rounds,
        step_size=res.step_size,
    )
