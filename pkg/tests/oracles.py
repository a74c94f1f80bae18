"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package under test. Everything is plain Python
loops, exhaustive enumeration, or exact rational arithmetic.
"""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import combinations, permutations, product


def mod1(a: int, b: int) -> int:
    r = a % b
    return b if r == 0 else r


def sign_sequences(N: int):
    """All distinct arrangements of N/2 (+1)'s and N/2 (-1)'s."""
    for plus in combinations(range(N), N // 2):
        yield tuple(1 if j in plus else -1 for j in range(N))


def phi_by_enumeration(N: int, B: int, alpha) -> float:
    n = N // B
    total = 0
    count = 0
    for s in sign_sequences(N):
        acc = 0
        for i in range(1, n + 1):
            block = sum(s[(i - 1) * B:i * B])
            acc += alpha ** (n - i) * block
        total += acc * acc
        count += 1
    return total / count


# scalar reference optimizers; grad(m, i, x) with 1-based m, i ------------

def minibatch_rr_ref(x, grad, M, N, B, eta, perms):
    """perms[m][j] is the 1-based component at position j+1 on machine m+1."""
    for r in range(N // B):
        g = 0.0
        for m in range(M):
            for j in range(r * B, (r + 1) * B):
                g += grad(m + 1, perms[m][j], x)
        x = x - eta / (M * B) * g
    return x


def local_rr_ref(x, grad, M, N, B, eta, perms):
    xs = [x] * M
    for i in range(N):
        xs = [xs[m] - eta * grad(m + 1, perms[m][i], xs[m]) for m in range(M)]
        if (i + 1) % B == 0:
            avg = sum(xs) / M
            xs = [avg] * M
    return xs[0]


def f2_grad(L, mu, nu, N):
    def g(m, i, x):
        s = 1 if i <= N // 2 else -1
        return (L if x <= 0 else mu) * x + nu * s
    return g


def f3_grad(L, nu, N):
    def g(m, i, x):
        s = 1 if i <= N // 2 else -1
        return L * x + nu * s
    return g


def hetero_grad(mu, tau, M):
    def g(m, i, x):
        return -tau if m <= M // 2 else 2 * mu * x + tau
    return g


def hetero_rounds_ref(mu, tau, eta, B, N, K, M=2, y0=0.0):
    """Synchronized iterates of local RR on the heterogeneous construction,
    simulated step by step."""
    g = hetero_grad(mu, tau, M)
    ys = [y0]
    y = y0
    for _ in range(N * K // B):
        xs = []
        for m in range(1, M + 1):
            x = y
            for _ in range(B):
                x = x - eta * g(m, 1, x)
            xs.append(x)
        y = sum(xs) / M
        ys.append(y)
    return ys


def f3_epoch_second_moment(N, B, M, eta, L, nu, x0):
    """Exact E[x^2] after one minibatch RR epoch on F3, enumerating every
    tuple of per-machine sign arrangements with Fractions."""
    eta, L, nu, x0 = (Fraction(v) for v in (eta, L, nu, x0))
    seqs = list(sign_sequences(N))
    total = Fraction(0)
    count = 0
    for tup in product(seqs, repeat=M):
        x = x0
        for r in range(N // B):
            g = Fraction(0)
            for s in tup:
                for j in range(r * B, (r + 1) * B):
                    g += L * x + nu * s[j]
            x = x - eta / (M * B) * g
        total += x * x
        count += 1
    return total / count


def lemma4_law(N, M, i, k):
    """Law of (1/M) sum_m sum_{j<=i} s^m_j + sum_{i<j<=i+k} s^M_j by literal
    enumeration of every M-tuple of sign arrangements."""
    seqs = list(sign_sequences(N))
    law = {}
    w = Fraction(1, len(seqs) ** M)
    for tup in product(seqs, repeat=M):
        s = Fraction(sum(sum(t[:i]) for t in tup), M) + sum(tup[-1][i:i + k])
        law[s] = law.get(s, 0) + w
    return law


def hs_formula(nu, M, N, n, delta):
    return nu * math.sqrt(8 * (1 - (n - 1) / N) * math.log(2 / delta) / (M * n))


def threshold_scan(c, a):
    """Smallest K >= 1 with K >= c log(a K^2), by linear scan."""
    K = 1
    while K < c * math.log(a * K * K):
        K += 1
    return K


def all_permutations(n):
    return [tuple(p) for p in permutations(range(1, n + 1))]
