"""Without-replacement concentration: the vector Hoeffding-Serfling bound,
a Monte-Carlo validator for it, and exact partial-sum statistics of
random +/-1 sign permutations.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "hs_bound",
    "WithoutReplacementSpec",
    "sign_population",
    "sphere_population",
    "MonteCarloReport",
    "mc_violation_rate",
    "PartialSumDistribution",
    "exact_partial_sum_distribution",
    "partial_sum_bounds",
    "ENUMERATION_LIMITS",
]

ENUMERATION_LIMITS = {"N": 8, "M": 3}


def hs_bound(nu: float, M: int, N: int, n: int, delta: float) -> float:
    """nu * sqrt(8 (1 - (n-1)/N) log(2/delta) / (M n))."""
    if not 1 <= n <= N - 1:
        raise InvalidArgument(f"need 1 <= n <= N-1, got n={n}, N={N}")
    if not 0 < delta < 1:
        raise InvalidArgument(f"delta must lie in (0, 1), got {delta}")
    if M < 1:
        raise InvalidArgument(f"M must be positive, got {M}")
    if nu < 0:
        raise InvalidArgument(f"nu must be nonnegative, got {nu}")
    return nu * math.sqrt(8.0 * (1.0 - (n - 1) / N) * math.log(2.0 / delta) / (M * n))


@dataclass(frozen=True)
class WithoutReplacementSpec:
    """M populations of N vectors each; a prefix of length n is averaged.

    ``vectors`` has shape (M, N, d). ``nu`` must bound every deviation from
    the owning machine's mean.
    """

    vectors: np.ndarray
    n: int
    nu: float
    delta: float

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3 or v.shape[0] < 1 or v.shape[1] < 2:
            raise InvalidArgument(f"vectors must have shape (M, N, d) with N >= 2, got {v.shape}")
        object.__setattr__(self, "vectors", v)
        hs_bound(self.nu, self.M, self.N, self.n, self.delta)  # validates n, delta
        dev = np.linalg.norm(v - v.mean(axis=1, keepdims=True), axis=-1).max()
        if dev > self.nu * (1 + 1e-12) + 1e-300:
            raise InvalidArgument(f"max deviation {dev} exceeds nu={self.nu}")

    @property
    def M(self) -> int:
        return self.vectors.shape[0]

    @property
    def N(self) -> int:
        return self.vectors.shape[1]

    @property
    def bound(self) -> float:
        return hs_bound(self.nu, self.M, self.N, self.n, self.delta)


def sign_population(nu: float, M: int, N: int, n: int, delta: float,
                    offsets=None) -> WithoutReplacementSpec:
    """Scalars: N/2 copies of +nu and N/2 of -nu per machine, plus an optional
    per-machine offset (which cancels in the deviation)."""
    if N % 2:
        raise InvalidArgument(f"N must be even, got {N}")
    base = np.where(np.arange(N) < N // 2, nu, -nu).astype(float)
    off = np.zeros(M) if offsets is None else np.asarray(offsets, dtype=float)
    return WithoutReplacementSpec(base[None, :, None] + off[:, None, None], n, nu, delta)


def sphere_population(nu: float, M: int, N: int, n: int, delta: float, d: int = 3,
                      rng=0) -> WithoutReplacementSpec:
    """Antipodal pairs of random points on the radius-nu sphere in R^d,
    shifted by a random per-machine offset."""
    if N % 2:
        raise InvalidArgument(f"N must be even, got {N}")
    rng = np.random.default_rng(rng)
    u = rng.standard_normal((M, N // 2, d))
    u *= nu / np.linalg.norm(u, axis=-1, keepdims=True)
    v = np.concatenate([u, -u], axis=1) + rng.standard_normal((M, 1, d))
    return WithoutReplacementSpec(v, n, nu, delta)


@dataclass(frozen=True)
class MonteCarloReport:
    bound: float
    rate: float
    stderr: float
    violations: int
    trials: int
    delta: float

    @property
    def passed(self) -> bool:
        return self.rate <= self.delta + 3.0 * self.stderr


def mc_violation_rate(spec: WithoutReplacementSpec, n_trials: int, rng=0,
                      chunk: int = 20000) -> MonteCarloReport:
    """Fraction of trials whose prefix-mean deviation exceeds the bound."""
    if n_trials < 1:
        raise InvalidArgument(f"n_trials must be positive, got {n_trials}")
    rng = np.random.default_rng(rng)
    v = spec.vectors
    M, N, n = spec.M, spec.N, spec.n
    target = v.mean(axis=(0, 1))
    bound = spec.bound
    base = np.broadcast_to(np.arange(N), (min(chunk, n_trials), M, N))
    hits = 0
    done = 0
    while done < n_trials:
        t = min(chunk, n_trials - done)
        idx = rng.permuted(base[:t], axis=-1)[..., :n]  # (t, M, n)
        picked = v[np.arange(M)[None, :, None], idx]  # (t, M, n, d)
        dev = np.linalg.norm(picked.mean(axis=(1, 2)) - target, axis=-1)
        hits += int(np.count_nonzero(dev > bound))
        done += t
    p = hits / n_trials
    return MonteCarloReport(bound, p, math.sqrt(p * (1 - p) / n_trials), hits, n_trials, spec.delta)


# exact +/-1 partial sums -----------------------------------------------------

@dataclass(frozen=True)
class PartialSumDistribution:
    """Exact law of S = (1/M) sum_m sum_{j<=i} s^m_j + sum_{i<j<=i+k} s^M_j."""

    N: int
    M: int
    i: int
    k: int
    pmf: tuple[tuple[Fraction, Fraction], ...]  # sorted (value, probability)

    def mean_abs(self) -> Fraction:
        return sum((abs(s) * p for s, p in self.pmf), Fraction(0))

    def prob_positive(self) -> Fraction:
        return sum((p for s, p in self.pmf if s > 0), Fraction(0))

    def prob_negative(self) -> Fraction:
        return sum((p for s, p in self.pmf if s < 0), Fraction(0))

    def prob(self, value) -> Fraction:
        value = Fraction(value)
        return next((p for s, p in self.pmf if s == value), Fraction(0))


def _sign_patterns(N: int):
    for plus in combinations(range(N), N // 2):
        s = [-1] * N
        for j in plus:
            s[j] = 1
        yield s


def exact_partial_sum_distribution(N: int, M: int, i: int, k: int) -> PartialSumDistribution:
    """Enumerate all C(N, N/2)^M sign-pattern tuples.

    Machines are independent, so the prefix sums of machines 1..M-1 are
    convolved and combined with machine M's joint (prefix, window) law.
    """
    if N % 2 or N < 2:
        raise InvalidArgument(f"N must be a positive even integer, got {N}")
    if N > ENUMERATION_LIMITS["N"] or not 1 <= M <= ENUMERATION_LIMITS["M"]:
        raise InvalidArgument(f"enumeration limited to N <= {ENUMERATION_LIMITS['N']}, "
                              f"1 <= M <= {ENUMERATION_LIMITS['M']}; got N={N}, M={M}")
    if i < 0 or k < 0 or i + k > N:
        raise InvalidArgument(f"need i, k >= 0 and i + k <= N, got i={i}, k={k}")
    if i + k < 1:
        raise InvalidArgument("need i + k >= 1")

    joint: Counter = Counter()
    prefix: Counter = Counter()
    total = 0
    for s in _sign_patterns(N):
        a = sum(s[:i])
        joint[a, sum(s[i:i + k])] += 1
        prefix[a] += 1
        total += 1

    # law of sum_{m<M} prefix_m, as integer sums
    others = Counter({0: Fraction(1)})
    for _ in range(M - 1):
        nxt: Counter = Counter()
        for x, px in others.items():
            for a, c in prefix.items():
                nxt[x + a] += px * Fraction(c, total)
        others = nxt

    law: Counter = Counter()
    for x, px in others.items():
        for (a, b), c in joint.items():
            law[Fraction(x + a, M) + b] += px * Fraction(c, total)
    pmf = tuple(sorted((s, p) for s, p in law.items() if p))
    return PartialSumDistribution(N, M, i, k, pmf)


def partial_sum_bounds(M: int, i: int, k: int) -> tuple[float, float]:
    """(lower, upper) = ((sqrt(i/M) + sqrt(k))/64, sqrt(i/M) + sqrt(k))."""
    upper = math.sqrt(i / M) + math.sqrt(k)
    return upper / 64.0, upper
