"""Closed-form step sizes, bound expressions, costs and exact small-problem forms.

Theorems are keyed ``T1`` (minibatch RR), ``T2`` (local RR), ``T5``
(minibatch RR + SyncShuf), ``T6`` (local RR + SyncShuf) for upper bounds
and ``T3``, ``T4``, ``P1`` for lower bounds. Logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "RateParams",
    "BoundValue",
    "STEP_RULES",
    "UPPER_THEOREMS",
    "LOWER_THEOREMS",
    "theorem_for_rule",
    "step_size",
    "epoch_threshold",
    "upper_bound",
    "lower_bound",
    "total_cost",
    "phi_closed_form",
    "hetero_trajectory",
    "hetero_final_closed_form",
]

# rule name -> (theorem, log argument uses M^2, multiplies by B, epoch coefficient uses rho)
_RULES = {
    "T1": (False, True, 6.0, False),
    "T2": (False, False, 7.0, True),
    "T5": (True, True, 6.0, False),
    "T6": (True, False, 7.0, False),
}
STEP_RULES = {
    "minibatch-rr": "T1",
    "local-rr": "T2",
    "minibatch-rr-sync": "T5",
    "local-rr-sync": "T6",
}
_ALIASES = {
    "thmminibatchrr": "T1",
    "thmlocalrr": "T2",
    "thmminibatchrrsync": "T5",
    "thmlocalrrsync": "T6",
}
UPPER_THEOREMS = ("T1", "T2", "T5", "T6")
LOWER_THEOREMS = ("T3", "T4", "P1")


def theorem_for_rule(rule: str) -> str:
    """Normalise a step-size rule name to its theorem key."""
    key = rule.strip()
    if key.upper() in _RULES:
        return key.upper()
    if key.lower() in STEP_RULES:
        return STEP_RULES[key.lower()]
    alias = key.lower().replace("-", "").replace("_", "")
    if alias in _ALIASES:
        return _ALIASES[alias]
    raise InvalidArgument(f"unknown step-size rule {rule!r}")


@dataclass(frozen=True)
class RateParams:
    """Problem constants, run sizes and cost parameters for the evaluators."""

    L: float = 1.0
    mu: float = 1.0
    nu: float = 0.0
    tau: float = 0.0
    rho: float = 1.0
    lam: float = 0.0
    M: int = 1
    N: int = 2
    K: int = 1
    B: int = 1
    F0_gap: float = 0.0
    c_c: float = 1.0
    c_e: float = 1.0
    epsilon: float = 1e-3

    def __post_init__(self):
        if not (self.mu > 0 and self.L >= self.mu):
            raise InvalidArgument(f"need L >= mu > 0, got L={self.L}, mu={self.mu}")
        if min(self.M, self.N, self.B) < 1 or self.K < 0:
            raise InvalidArgument("M, N, B must be positive and K nonnegative")
        if self.rho < 1:
            raise InvalidArgument("rho must be >= 1")
        if min(self.nu, self.tau, self.lam, self.F0_gap) < 0:
            raise InvalidArgument("nu, tau, lambda and F0_gap must be nonnegative")

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    def with_(self, **changes) -> "RateParams":
        return replace(self, **changes)


def _log_base(theorem: str, p: RateParams) -> float:
    # the log argument without its K^2 factor
    squared_m = _RULES[theorem][0]
    return (p.M ** 2 if squared_m else p.M) * p.N


def step_size(rule: str, params: RateParams) -> float:
    """Theorem step size: ``[B] log(M^a N K^2) / (mu N K)``."""
    thm = theorem_for_rule(rule)
    arg = _log_base(thm, params) * params.K ** 2
    if arg <= 1:
        raise InvalidArgument(f"log argument must exceed 1, got {arg}")
    eta = math.log(arg) / (params.mu * params.N * params.K)
    return eta * params.B if _RULES[thm][1] else eta


def _epoch_coefficient(thm: str, p: RateParams) -> float:
    c = _RULES[thm][2] * p.kappa
    return c * p.rho if _RULES[thm][3] else c


def epoch_requirement(rule: str, params: RateParams, K: int) -> float:
    """Right-hand side ``c kappa log(M^a N K^2)`` of the epoch condition at ``K``."""
    thm = theorem_for_rule(rule)
    return _epoch_coefficient(thm, params) * math.log(_log_base(thm, params) * K * K)


def epoch_threshold(rule: str, params: RateParams) -> int:
    """Smallest integer K with ``K >= c kappa log(a K^2)``.

    ``K - c log(a K^2)`` falls until K = 2c and rises afterwards; it is
    negative at K = 1 whenever ``a >= 2`` and ``c >= 6``, so the answer is
    the unique upward crossing past 2c, located by doubling then bisection.
    """
    thm = theorem_for_rule(rule)
    a = _log_base(thm, params)
    if a < 2:
        raise InvalidArgument(f"log argument base must be at least 2, got {a}")
    c = _epoch_coefficient(thm, params)

    def ok(K: int) -> bool:
        return K >= c * math.log(a * K * K)

    lo = max(1, math.floor(2 * c))
    if ok(lo):
        # only reachable if the crossing sits before the minimum; scan down
        while lo > 1 and ok(lo - 1):
            lo -= 1
        return lo
    hi = 2 * lo
    while not ok(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class BoundValue:
    """An upper-bound evaluation.

    ``order`` uses unit constants on the displayed expression; ``explicit``
    carries the constants and log factors derived in the proofs (needs a
    failure probability). ``in_regime`` reports ``K >= epoch_threshold``.
    """

    theorem: str
    order: float
    explicit: float | None
    in_regime: bool
    threshold: int


def _order_upper(thm: str, p: RateParams) -> float:
    M, N, K, B = p.M, p.N, p.K, p.B
    scale = p.L ** 2 / p.mu ** 3
    if thm == "T1":
        return p.F0_gap / (M * N * K ** 2) + scale * p.nu ** 2 / (M * N * K ** 2)
    if thm == "T2":
        return p.F0_gap / (M * N * K ** 2) + scale * (
            p.nu ** 2 / (M * N * K ** 2)
            + p.nu ** 2 * B / (N ** 2 * K ** 2)
            + p.tau ** 2 * B ** 2 / (N ** 2 * K ** 2)
        )
    if thm == "T5":
        return p.F0_gap / (M ** 2 * N * K ** 2) + scale * (
            p.nu ** 2 / (M ** 2 * N * K ** 2) + p.lam ** 2 / (M * K ** 2)
        )
    # T6
    return p.F0_gap / (M ** 2 * N * K ** 2) + scale * (
        p.nu ** 2 / (M ** 2 * N * K ** 2)
        + p.nu ** 2 * B / (N ** 2 * K ** 2)
        + p.lam ** 2 * B ** 2 / (N ** 2 * K ** 2)
        + p.lam ** 2 / (M * K ** 2)
    )


def _explicit_upper(thm: str, p: RateParams, delta: float) -> float:
    M, N, K, B = p.M, p.N, p.K, p.B
    L2, mu3, nu2, lam2 = p.L ** 2, p.mu ** 3, p.nu ** 2, p.lam ** 2
    log = math.log
    gap_m = p.F0_gap / (M * N * K ** 2)
    gap_m2 = p.F0_gap / (M ** 2 * N * K ** 2)
    d15 = N ** 1.5 - B ** 1.5
    if thm == "T1":
        return gap_m + 15 * L2 * nu2 * d15 ** 2 * log(2 * N * K / (B * delta)) * log(M * N * K ** 2) ** 2 / (
            mu3 * M * N ** 4 * K ** 2)
    if thm == "T2":
        lg2 = log(M * N * K ** 2) ** 2
        return (gap_m
                + 2 * L2 * p.tau ** 2 * (B - 1) ** 2 / (mu3 * N ** 2 * K ** 2) * lg2
                + 9 * L2 * nu2 / (2 * mu3 * N ** 4 * K ** 2) * log(4 * M * N * K / delta) * lg2
                * (288 * N ** 2 * (B ** 1.5 - 1) ** 2 / (25 * B ** 2) + 128 * d15 ** 2 / (9 * M)))
    lg2 = log(M ** 2 * N * K ** 2) ** 2
    if thm == "T5":
        return (gap_m2
                + 56 * L2 * nu2 * (N - B) ** 2 * log(4 * N * K / (B * delta)) * lg2 / (mu3 * M ** 2 * N ** 3 * K ** 2)
                + 56 * L2 * lam2 * d15 ** 2 * log(4 * N ** 2 * K / (B * delta)) * lg2 / (mu3 * M * N ** 3 * K ** 2))
    # T6
    return (gap_m2
            + 9 * L2 * nu2 * log(6 * M * N * K / delta) * lg2 / (2 * mu3 * N ** 4 * K ** 2)
            * (288 * N ** 2 * (B ** 1.5 - 1) ** 2 / (25 * B ** 2) + 32 * N * (N - B) ** 2 / M ** 2)
            + 9 * L2 * lam2 * log(6 * N ** 2 * K / (B * delta)) * lg2 / (2 * mu3 * N ** 4 * K ** 2)
            * (8 * N ** 2 * (B - 1) ** 2 / 9 + 225 * N * d15 ** 2 / (2 * M)))


def upper_bound(theorem: str, params: RateParams, delta: float | None = None) -> BoundValue:
    """Evaluate an upper bound; out-of-regime K is flagged, not rejected."""
    thm = theorem_for_rule(theorem)
    if params.K < 1:
        raise InvalidArgument("upper bounds need K >= 1")
    if delta is not None and not 0 < delta < 1:
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta}")
    threshold = epoch_threshold(thm, params)
    explicit = None if delta is None else _explicit_upper(thm, params, delta)
    return BoundValue(thm, _order_upper(thm, params), explicit, params.K >= threshold, threshold)


def lower_bound(theorem: str, params: RateParams, c2: float = 1.0, c4: float = 1.0) -> float:
    """Lower-bound order terms with unit leading constants.

    ``c2`` and ``c4`` place the small/large epoch split for T3 and T4.
    """
    thm = theorem.strip().upper()
    M, N, K, B, mu = params.M, params.N, params.K, params.B, params.mu
    if K < 1:
        raise InvalidArgument("lower bounds need K >= 1")
    nu2 = params.nu ** 2
    if thm == "T3":
        if K < c2 * params.kappa:
            return nu2 / (mu * M * N * K)
        return nu2 / (mu * M * N * K ** 2)
    if thm == "T4":
        if K < c4 * params.kappa:
            return nu2 / (mu * M * N * K)
        return nu2 / (mu * M * N * K ** 2) + nu2 * B / (mu * N ** 2 * K ** 2)
    if thm == "P1":
        return params.tau ** 2 * B ** 2 / (mu * N ** 2 * K ** 2)
    raise InvalidArgument(f"unknown lower-bound theorem {theorem!r}; expected one of {LOWER_THEOREMS}")


def total_cost(kind: str, params: RateParams) -> float:
    """Order of the total cost to reach accuracy epsilon (L, mu omitted)."""
    p = params
    if p.epsilon <= 0:
        raise InvalidArgument("epsilon must be positive")
    M, N, B, eps = p.M, p.N, p.B, p.epsilon
    root = math.sqrt(eps)
    if kind == "minibatch":
        return (p.c_c * p.nu * math.sqrt(N) / (B * math.sqrt(M) * root)
                + p.c_e * p.nu / (math.sqrt(M * N) * root))
    if kind == "local":
        comm = (p.nu * math.sqrt(N) / (B * math.sqrt(M) * root)
                + p.nu / math.sqrt(B * eps)
                + p.tau / root)
        comp = (p.nu / (math.sqrt(M * N) * root)
                + p.nu * math.sqrt(B) / (N * root)
                + p.tau * B / (N * root))
        return p.c_c * comm + p.c_e * comp
    raise InvalidArgument(f"kind must be 'minibatch' or 'local', got {kind!r}")


def phi_closed_form(N: int, B: int, alpha: float) -> float:
    """Exact E[(sum_i alpha^(N/B-i) sum_{j in block i} s_j)^2].

    ``s`` is a uniformly shuffled sequence of N/2 (+1)'s and N/2 (-1)'s,
    cut into N/B consecutive blocks of size B.
    """
    if N < 2 or B < 1 or N % B:
        raise InvalidArgument(f"need B | N and N >= 2, got N={N}, B={B}")
    n = N // B
    if n < 2:
        raise InvalidArgument(f"need at least two blocks, got N/B={n}")
    powers = alpha ** np.arange(n)
    s1 = float(powers.sum())
    s2 = float((powers * powers).sum())
    return B ** 2 * (n - 1) / (N - 1) * ((1 + 1 / (n - 1)) * s2 - s1 * s1 / (n - 1))


def _hetero_check(B: int, N: int, K: int):
    if B < 2 or B % 2:
        raise InvalidArgument(f"B must be a positive even integer, got {B}")
    if N % B:
        raise InvalidArgument(f"B must divide N, got B={B}, N={N}")
    if K < 0:
        raise InvalidArgument("K must be nonnegative")


def hetero_trajectory(mu: float, tau: float, eta: float, B: int, N: int, K: int,
                      y0: float = 0.0) -> np.ndarray:
    """Synchronized local RR iterates on the heterogeneous construction.

    Returns ``y_0, y_1, ..., y_{NK/B}`` from the per-round recursion
    ``y <- (1 + (1-2 eta mu)^B)/2 * y + eta tau/2 * (B - sum_j (1-2 eta mu)^j)``.
    """
    _hetero_check(B, N, K)
    q = 1.0 - 2.0 * eta * mu
    contraction = 0.5 * (1.0 + q ** B)
    drift = 0.5 * eta * tau * (B - sum(q ** j for j in range(B)))
    out = np.empty(N * K // B + 1)
    out[0] = y0
    for r in range(1, out.size):
        out[r] = contraction * out[r - 1] + drift
    return out


def hetero_final_closed_form(mu: float, tau: float, eta: float, B: int, N: int, K: int,
                             y0: float = 0.0) -> float:
    """Unrolled final iterate: ``c^R y0 + drift * sum_{l<R} c^l`` with R = NK/B."""
    _hetero_check(B, N, K)
    q = 1.0 - 2.0 * eta * mu
    c = 0.5 * (1.0 + q ** B)
    R = N * K // B
    drift = 0.5 * eta * tau * (B - sum(q ** j for j in range(B)))
    geometric = R if c == 1.0 else (1.0 - c ** R) / (1.0 - c)
    return c ** R * y0 + drift * geometric
