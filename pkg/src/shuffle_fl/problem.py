"""Finite-sum distributed objectives and the worst-case constructions.

A problem has M machines with N components each. ``F^m`` is the mean of
machine m's components and ``F`` the mean over machines. Machine and
component indices are 1-based in the scalar oracles
(``component_grad(m, i, x)``) and 0-based in the batched ``grads`` used
by the simulator.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "Constants",
    "ConstantsEstimate",
    "Problem",
    "EpochOracle",
    "CallableProblem",
    "SeparableQuadratic",
    "make_skewed_quadratic_1d",
    "make_composite_3d",
    "make_hetero_linear_quadratic",
    "make_problem",
    "global_gradient",
    "estimate_constants",
    "PROBLEM_KINDS",
]


@dataclass(frozen=True)
class Constants:
    """Smoothness, PL and deviation constants of a problem.

    ``lam`` is the component-wise inter-machine deviation; ``math.inf``
    when no uniform bound exists.
    """

    L: float
    mu: float
    nu: float = 0.0
    tau: float = 0.0
    rho: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if not (self.mu > 0 and self.L >= self.mu):
            raise InvalidArgument(f"need L >= mu > 0, got L={self.L}, mu={self.mu}")
        if min(self.nu, self.tau, self.lam) < 0:
            raise InvalidArgument("nu, tau and lambda must be nonnegative")
        if self.rho < 1:
            raise InvalidArgument(f"rho must be >= 1, got {self.rho}")

    @property
    def kappa(self) -> float:
        return self.L / self.mu


class Problem:
    """Base class: subclasses provide ``grads`` and ``values`` in batch form.

    ``grads(machines, comps, X)`` takes broadcastable 0-based index arrays
    and iterates ``X`` of shape ``(..., dim)``; the result broadcasts all
    three. ``values`` is the same without the trailing axis.
    """

    name = "problem"

    def __init__(self, M: int, N: int, dim: int, constants: Constants,
                 f_star: float, x_star=None):
        if M < 1 or N < 1 or dim < 1:
            raise InvalidArgument("M, N and dim must be positive")
        self.M = M
        self.N = N
        self.dim = dim
        self.constants = constants
        self.f_star = float(f_star)
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)

    # batch oracles -------------------------------------------------------
    def grads(self, machines, comps, X) -> np.ndarray:
        raise NotImplementedError

    def values(self, machines, comps, X) -> np.ndarray:
        raise NotImplementedError

    def epoch_oracle(self, P: np.ndarray) -> "EpochOracle":
        """Gradient access for one epoch with fixed 0-based orderings P (T, M, N)."""
        return EpochOracle(self, P)

    def _all_grads(self, X: np.ndarray) -> np.ndarray:
        """Gradients of every component at each point: (..., M, N, dim)."""
        X = np.asarray(X, dtype=float)
        m = np.arange(self.M)[:, None]
        i = np.arange(self.N)[None, :]
        return self.grads(m, i, X[..., None, None, :])

    def global_values(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        m = np.arange(self.M)[:, None]
        i = np.arange(self.N)[None, :]
        return self.values(m, i, X[..., None, None, :]).mean(axis=(-2, -1))

    def global_gradients(self, X) -> np.ndarray:
        return self._all_grads(X).mean(axis=(-3, -2))

    def local_gradients(self, X) -> np.ndarray:
        """Gradients of each F^m: (..., M, dim)."""
        return self._all_grads(X).mean(axis=-2)

    # scalar oracles ------------------------------------------------------
    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 and self.dim == 1:
            x = x.reshape(1)
        if x.shape != (self.dim,):
            raise InvalidArgument(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        return x

    def _check_mi(self, m: int, i: int):
        if not (1 <= m <= self.M and 1 <= i <= self.N):
            raise InvalidArgument(f"component ({m}, {i}) outside [{self.M}] x [{self.N}]")

    def component_grad(self, m: int, i: int, x) -> np.ndarray:
        self._check_mi(m, i)
        return np.asarray(self.grads(m - 1, i - 1, self._check_x(x)), dtype=float)

    def component_value(self, m: int, i: int, x) -> float:
        self._check_mi(m, i)
        return float(self.values(m - 1, i - 1, self._check_x(x)))

    def value(self, x) -> float:
        return float(self.global_values(self._check_x(x)))

    def gradient(self, x) -> np.ndarray:
        return self.global_gradients(self._check_x(x))

    def suboptimality(self, x) -> float:
        return self.value(x) - self.f_star


class EpochOracle:
    """Gradients of the components an epoch visits, in visiting order.

    ``block_sum(r, B, X)`` sums the gradients of round r's minibatch over
    all machines at the common iterates X (T, dim); ``step_grads(i, Xm)``
    returns each machine's i-th visited gradient at its own iterate
    Xm (T, M, dim). Subclasses may precompute; results must not change.
    """

    def __init__(self, problem: Problem, P: np.ndarray):
        self.problem = problem
        self.P = P
        self._machines = np.arange(P.shape[1])

    def block_sum(self, r: int, B: int, X: np.ndarray) -> np.ndarray:
        comps = self.P[:, :, r * B:(r + 1) * B]
        g = self.problem.grads(self._machines[None, :, None], comps, X[:, None, None, :])
        return g.sum(axis=(1, 2))

    def step_grads(self, i: int, Xm: np.ndarray) -> np.ndarray:
        return self.problem.grads(self._machines[None, :], self.P[:, :, i], Xm)


class _SeparableEpochOracle(EpochOracle):
    def __init__(self, problem: "SeparableQuadratic", P: np.ndarray):
        super().__init__(problem, P)
        T, M, N = P.shape
        flat = P + (np.arange(M) * N)[None, :, None]
        self.coef = np.take(problem._coef_table, flat, axis=0)  # (T, M, N, 3, d)
        self.hinged = problem.hinged
        self._blocks: dict[int, np.ndarray] = {}

    def _block_coefficients(self, B: int) -> np.ndarray:
        if B not in self._blocks:
            T, M, N, _, d = self.coef.shape
            per_step = self.coef.sum(axis=1)
            self._blocks[B] = per_step.reshape(T, N // B, B, 3, d).sum(axis=2)
        return self._blocks[B]

    def block_sum(self, r, B, X):
        c = self._block_coefficients(B)[:, r]  # (T, 3, d)
        curv = np.where(X <= 0, c[:, 0], c[:, 1]) if self.hinged else c[:, 1]
        return curv * X + c[:, 2]

    def step_grads(self, i, Xm):
        c = self.coef[:, :, i]  # (T, M, 3, d)
        curv = np.where(Xm <= 0, c[:, :, 0], c[:, :, 1]) if self.hinged else c[:, :, 1]
        return curv * Xm + c[:, :, 2]


class CallableProblem(Problem):
    """Problem built from user oracles ``grad(m, i, x)`` / ``value(m, i, x)``.

    Indices passed to the callables are 1-based. Batched calls loop in
    Python, so this class suits constant estimation more than long runs.
    """

    name = "callable"

    def __init__(self, M, N, dim, grad: Callable, value: Callable, constants: Constants,
                 f_star: float, x_star=None):
        super().__init__(M, N, dim, constants, f_star, x_star)
        self._grad = grad
        self._value = value

    def grads(self, machines, comps, X):
        machines, comps = np.broadcast_arrays(np.asarray(machines), np.asarray(comps))
        X = np.asarray(X, dtype=float)
        shape = np.broadcast_shapes(machines.shape, X.shape[:-1])
        mb = np.broadcast_to(machines, shape)
        cb = np.broadcast_to(np.broadcast_to(comps, machines.shape), shape)
        Xb = np.broadcast_to(X, shape + (self.dim,))
        out = np.empty(shape + (self.dim,))
        for idx in np.ndindex(shape):
            out[idx] = self._grad(int(mb[idx]) + 1, int(cb[idx]) + 1, Xb[idx])
        return out

    def values(self, machines, comps, X):
        machines, comps = np.broadcast_arrays(np.asarray(machines), np.asarray(comps))
        X = np.asarray(X, dtype=float)
        shape = np.broadcast_shapes(machines.shape, X.shape[:-1])
        mb = np.broadcast_to(machines, shape)
        cb = np.broadcast_to(np.broadcast_to(comps, machines.shape), shape)
        Xb = np.broadcast_to(X, shape + (self.dim,))
        out = np.empty(shape)
        for idx in np.ndindex(shape):
            out[idx] = self._value(int(mb[idx]) + 1, int(cb[idx]) + 1, Xb[idx])
        return out


class SeparableQuadratic(Problem):
    """Coordinate-separable components with a curvature hinge at zero.

    Component (m, i) in coordinate d is
    ``(a_neg 1{x<=0} + a_pos 1{x>0}) x^2 / 2 + b x`` with coefficient
    arrays of shape (M, N, dim). Every construction here is of this form.
    """

    name = "separable-quadratic"

    def __init__(self, curv_neg, curv_pos, lin, constants: Constants, f_star: float,
                 x_star=None, name: str | None = None):
        curv_neg = np.asarray(curv_neg, dtype=float)
        curv_pos = np.asarray(curv_pos, dtype=float)
        lin = np.asarray(lin, dtype=float)
        if not (curv_neg.shape == curv_pos.shape == lin.shape and curv_neg.ndim == 3):
            raise InvalidArgument("coefficient arrays must share shape (M, N, dim)")
        M, N, dim = lin.shape
        super().__init__(M, N, dim, constants, f_star, x_star)
        self.curv_neg = curv_neg
        self.curv_pos = curv_pos
        self.lin = lin
        self.hinged = not np.array_equal(curv_neg, curv_pos)
        self._coef_table = np.stack([curv_neg, curv_pos, lin], axis=2).reshape(M * N, 3, dim)
        self._mean_neg = curv_neg.mean(axis=(0, 1))
        self._mean_pos = curv_pos.mean(axis=(0, 1))
        self._mean_lin = lin.mean(axis=(0, 1))
        if name:
            self.name = name

    def epoch_oracle(self, P):
        return _SeparableEpochOracle(self, P)

    def _curv(self, machines, comps, X):
        if not self.hinged:
            return self.curv_pos[machines, comps]
        return np.where(X <= 0, self.curv_neg[machines, comps], self.curv_pos[machines, comps])

    def grads(self, machines, comps, X):
        X = np.asarray(X, dtype=float)
        return self._curv(machines, comps, X) * X + self.lin[machines, comps]

    def values(self, machines, comps, X):
        X = np.asarray(X, dtype=float)
        return (0.5 * self._curv(machines, comps, X) * X * X
                + self.lin[machines, comps] * X).sum(axis=-1)

    def global_values(self, X):
        X = np.asarray(X, dtype=float)
        a = np.where(X <= 0, self._mean_neg, self._mean_pos)
        return (0.5 * a * X * X + self._mean_lin * X).sum(axis=-1)

    def global_gradients(self, X):
        X = np.asarray(X, dtype=float)
        return np.where(X <= 0, self._mean_neg, self._mean_pos) * X + self._mean_lin


def _signs(N: int) -> np.ndarray:
    # +1 for the first N/2 components, -1 for the rest
    return np.where(np.arange(N) < N // 2, 1.0, -1.0)


def _skewed_coefficients(kind: str, L, mu, nu, N, M):
    kind = kind.upper()
    if kind not in ("F1", "F2", "F3"):
        raise InvalidArgument(f"unknown skewed quadratic kind {kind!r}")
    if kind != "F1" and N % 2:
        raise InvalidArgument(f"{kind} needs an even number of components, got N={N}")
    shape = (M, N)
    if kind == "F1":
        return np.full(shape, mu), np.full(shape, mu), np.zeros(shape)
    lin = np.broadcast_to(nu * _signs(N), shape).copy()
    neg = np.full(shape, L)
    pos = np.full(shape, mu if kind == "F2" else L)
    return neg, pos, lin


def make_skewed_quadratic_1d(kind: str, L: float, mu: float, nu: float, N: int, M: int) -> SeparableQuadratic:
    """One-dimensional lower-bound constructions shared by every machine.

    * F1: ``mu x^2/2`` for every component.
    * F2: ``(L 1{x<=0} + mu 1{x>0}) x^2/2 ± nu x``.
    * F3: ``L x^2/2 ± nu x``.

    The first N/2 components carry ``+nu``, the rest ``-nu``.
    """
    neg, pos, lin = _skewed_coefficients(kind, L, mu, nu, N, M)
    consts = Constants(L=L, mu=mu, nu=nu, tau=0.0, rho=1.0, lam=0.0)
    return SeparableQuadratic(neg[..., None], pos[..., None], lin[..., None], consts,
                              f_star=0.0, x_star=np.zeros(1), name=kind.lower())


def make_composite_3d(L: float, mu: float, nu: float, N: int, M: int) -> SeparableQuadratic:
    """``F1(x) + F2(y) + F3(z)``: slow in every step-size regime.

    The intra-machine deviation is recorded as ``sqrt(3) nu``.
    """
    parts = [_skewed_coefficients(k, L, mu, nu, N, M) for k in ("F1", "F2", "F3")]
    neg, pos, lin = (np.stack([p[j] for p in parts], axis=-1) for j in range(3))
    consts = Constants(L=L, mu=mu, nu=math.sqrt(3) * nu, tau=0.0, rho=1.0, lam=0.0)
    return SeparableQuadratic(neg, pos, lin, consts, f_star=0.0, x_star=np.zeros(3),
                              name="composite3d")


def make_hetero_linear_quadratic(L: float, mu: float, tau: float, N: int, M: int) -> SeparableQuadratic:
    """Machines 1..M/2 hold ``-tau x``; the rest hold ``mu x^2 + tau x``.

    All N components on a machine coincide, so nu = 0, and
    ``F(x) = mu x^2 / 2``. ``f_2`` has curvature ``2 mu``, hence L >= 2 mu.
    """
    if M % 2:
        raise InvalidArgument(f"the heterogeneous construction needs an even M, got M={M}")
    if L < 2 * mu:
        raise InvalidArgument(f"the heterogeneous construction needs L >= 2 mu, got L={L}, mu={mu}")
    first = (np.arange(M) < M // 2)[:, None, None]
    curv = np.where(first, 0.0, 2.0 * mu) * np.ones((M, N, 1))
    lin = np.where(first, -tau, tau) * np.ones((M, N, 1))
    consts = Constants(L=L, mu=mu, nu=0.0, tau=tau, rho=1.0, lam=math.inf if tau > 0 else 0.0)
    return SeparableQuadratic(curv, curv.copy(), lin, consts, f_star=0.0, x_star=np.zeros(1),
                              name="hetero")


PROBLEM_KINDS = ("f1", "f2", "f3", "composite3d", "hetero")


def make_problem(kind: str, *, M: int, N: int, L: float = 1.0, mu: float = 1.0,
                 nu: float = 1.0, tau: float = 1.0) -> SeparableQuadratic:
    """Build a named construction; the name set is ``PROBLEM_KINDS``."""
    kind = kind.lower()
    if kind in ("f1", "f2", "f3"):
        return make_skewed_quadratic_1d(kind, L, mu, nu, N, M)
    if kind == "composite3d":
        return make_composite_3d(L, mu, nu, N, M)
    if kind == "hetero":
        return make_hetero_linear_quadratic(L, mu, tau, N, M)
    raise InvalidArgument(f"unknown problem kind {kind!r}; expected one of {PROBLEM_KINDS}")


def global_gradient(problem: Problem, x) -> np.ndarray:
    """``(1/(MN)) sum_m sum_i grad f_i^m(x)``."""
    return problem.gradient(x)


@dataclass
class ConstantsEstimate:
    nu: float
    lam: float
    tau: float
    rho: float
    n_samples: int
    violations: list[str] = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return not self.violations


def default_box_radius(constants: Constants) -> float:
    r = 10.0 * max(constants.nu, constants.tau) / constants.mu
    return r if r > 0 else 1.0


def estimate_constants(problem: Problem, sample_box: float | tuple | None = None,
                       n_samples: int = 1000, rng: np.random.Generator | int | None = 0,
                       rtol: float = 1e-9) -> ConstantsEstimate:
    """Empirical deviation constants over uniform samples from a box.

    ``sample_box`` is a radius R (the box is ``[-R, R]^dim``) or a
    ``(low, high)`` pair of arrays. The (tau, rho) pair is one admissible
    envelope: rho from a least-squares slope of the mean local gradient
    norm on the global gradient norm (clipped at 1), tau the smallest
    offset covering every sample.
    """
    if n_samples < 1:
        raise InvalidArgument("n_samples must be positive")
    if sample_box is None:
        sample_box = default_box_radius(problem.constants)
    if np.isscalar(sample_box):
        low = -float(sample_box) * np.ones(problem.dim)
        high = -low
    else:
        low, high = (np.broadcast_to(np.asarray(b, dtype=float), (problem.dim,)) for b in sample_box)
    if not np.all(high > low):
        raise InvalidArgument("sample box is empty")
    rng = np.random.default_rng(rng)
    X = rng.uniform(low, high, size=(n_samples, problem.dim))

    G = problem._all_grads(X)  # (S, M, N, d)
    local = G.mean(axis=2)  # (S, M, d)
    glob = local.mean(axis=1)  # (S, d)
    comp_avg = G.mean(axis=1)  # (S, N, d)
    nu_hat = float(np.linalg.norm(G - local[:, :, None, :], axis=-1).max())
    lam_hat = float(np.linalg.norm(G - comp_avg[:, None, :, :], axis=-1).max())

    a = np.linalg.norm(local, axis=-1).mean(axis=1)
    g = np.linalg.norm(glob, axis=-1)
    if np.ptp(g) > 0:
        rho_hat = float(np.polyfit(g, a, 1)[0])
    else:
        rho_hat = 1.0
    rho_hat = max(rho_hat, 1.0)
    tau_hat = max(float((a - rho_hat * g).max()), 0.0)

    c = problem.constants
    violations = []

    def _exceeds(est, declared):
        return est > declared * (1 + rtol) + rtol

    if _exceeds(nu_hat, c.nu):
        violations.append(f"nu: estimated {nu_hat:.6g} > declared {c.nu:.6g}")
    if _exceeds(lam_hat, c.lam):
        violations.append(f"lambda: estimated {lam_hat:.6g} > declared {c.lam:.6g}")
    if np.any(a > c.tau + c.rho * g + rtol * (1 + a)):
        violations.append(f"(tau, rho) = ({c.tau:.6g}, {c.rho:.6g}) does not cover the samples")
    return ConstantsEstimate(nu=nu_hat, lam=lam_hat, tau=tau_hat, rho=rho_hat,
                             n_samples=n_samples, violations=violations)
