"""Permutation sampling, 1-based modulo, and synchronized shuffling.

Public functions speak 1-based indices. The batched helpers used by the
simulator (``epoch_permutations``, ``uniform_indices``) return 0-based
arrays because they feed straight into numpy fancy indexing.

Randomness for simulations is counter based: every (seed, stream, epoch,
machine) tuple hashes to its own 64-bit key, so a trial's permutations do
not depend on which other trials run alongside it or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "Permutation",
    "PermutationSet",
    "mod_index",
    "sample_uniform_permutation",
    "sync_shuf_permutations",
    "stream_keys",
    "fisher_yates",
    "epoch_permutations",
    "epoch_permutation_set",
    "uniform_indices",
]

# stream tags
LOCAL = 1
SYNC_MACHINE = 2
WITH_REPLACEMENT = 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == object:
        return np.vectorize(lambda v: int(v) & _MASK64, otypes=[np.uint64])(arr)
    if arr.dtype.kind == "i":
        return arr.astype(np.int64).view(np.uint64)
    return arr.astype(np.uint64)


def stream_keys(seeds, *counters) -> np.ndarray:
    """Hash seeds and integer counters into independent 64-bit stream keys.

    ``seeds`` and every counter broadcast together; the result has the
    broadcast shape. Negative seeds are reduced modulo 2**64.
    """
    with np.errstate(over="ignore"):
        key = _splitmix(_u64(seeds))
        for c in counters:
            key = _splitmix(key ^ _u64(c))
    return key


def _unit_floats(keys: np.ndarray) -> np.ndarray:
    return (keys >> np.uint64(11)).astype(np.float64) * 2.0**-53


def fisher_yates(keys: np.ndarray, n: int) -> np.ndarray:
    """Uniform permutations of ``range(n)``, one per key (0-based).

    Returns an int64 array of shape ``keys.shape + (n,)``. Swap j draws its
    index from ``hash(key, j)``, so rows are independent of each other.
    """
    if n < 1:
        raise InvalidArgument(f"permutation length must be >= 1, got {n}")
    keys = np.asarray(keys, dtype=np.uint64)
    flat = keys.reshape(-1)
    rows = np.arange(flat.size)
    with np.errstate(over="ignore"):
        u = _unit_floats(_splitmix(flat[:, None] ^ np.arange(n, dtype=np.uint64)[None, :]))
    perm = np.broadcast_to(np.arange(n, dtype=np.int64), (flat.size, n)).copy()
    for j in range(n - 1, 0, -1):
        r = np.minimum((u[:, j] * (j + 1)).astype(np.int64), j)
        pj = perm[:, j].copy()
        perm[:, j] = perm[rows, r]
        perm[rows, r] = pj
    perm = perm.reshape(keys.shape + (n,))
    return perm


@dataclass(frozen=True)
class Permutation:
    """A bijection on {1, ..., n}, stored as its image sequence."""

    mapping: tuple[int, ...]

    def __post_init__(self):
        n = len(self.mapping)
        if sorted(self.mapping) != list(range(1, n + 1)):
            raise InvalidArgument(f"not a permutation of [1..{n}]: {self.mapping}")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(1, n + 1)))

    def __len__(self) -> int:
        return len(self.mapping)

    def __call__(self, i: int) -> int:
        return self.mapping[i - 1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.int64)


@dataclass(frozen=True)
class PermutationSet:
    """Per-machine component orderings for one epoch (1-based values)."""

    per_machine: tuple[Permutation, ...]
    epoch_index: int = 1

    def __post_init__(self):
        if not self.per_machine:
            raise InvalidArgument("a PermutationSet needs at least one machine")
        n = len(self.per_machine[0])
        if any(len(p) != n for p in self.per_machine):
            raise InvalidArgument("all machines must permute the same number of components")
        if self.epoch_index < 1:
            raise InvalidArgument(f"epoch_index must be positive, got {self.epoch_index}")

    @property
    def M(self) -> int:
        return len(self.per_machine)

    @property
    def N(self) -> int:
        return len(self.per_machine[0])

    def as_array(self) -> np.ndarray:
        """(M, N) array of 1-based component indices."""
        return np.stack([p.as_array() for p in self.per_machine])

    @classmethod
    def from_array(cls, arr, epoch_index: int = 1) -> "PermutationSet":
        arr = np.asarray(arr)
        return cls(tuple(Permutation(tuple(int(v) for v in row)) for row in arr), epoch_index)


def mod_index(a: int, b: int) -> int:
    """``a - floor((a-1)/b) * b``: the residue of ``a`` in {1, ..., b}."""
    if b <= 0:
        raise InvalidArgument(f"modulus must be positive, got {b}")
    return a - ((a - 1) // b) * b


def sample_uniform_permutation(n: int, rng: np.random.Generator | int) -> Permutation:
    """Fisher-Yates shuffle of [1..n] driven by ``rng`` (a Generator or a seed)."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    items = list(range(1, n + 1))
    for j in range(n - 1, 0, -1):
        r = int(rng.integers(0, j + 1))
        items[j], items[r] = items[r], items[j]
    return Permutation(tuple(items))


def _shift_table(pi: np.ndarray, N: int, M: int) -> np.ndarray:
    # (…, M, N) of 1-based positions into sigma: mod_index(i + (N/M) pi(m), N)
    i = np.arange(1, N + 1)
    a = i + (N // M) * pi[..., :, None]
    return a - ((a - 1) // N) * N


def sync_shuf_permutations(
    sigma: Permutation, pi: Permutation, N: int, M: int, epoch_index: int = 1
) -> PermutationSet:
    """Machine m uses sigma shifted by (N/M)·pi(m) positions."""
    if M < 1 or N < 1:
        raise InvalidArgument("N and M must be positive")
    if N % M:
        raise InvalidArgument(f"SyncShuf needs M | N, got M={M}, N={N}")
    if len(sigma) != N or len(pi) != M:
        raise InvalidArgument("sigma must permute [N] and pi must permute [M]")
    pos = _shift_table(pi.as_array(), N, M)
    table = sigma.as_array()[pos - 1]
    return PermutationSet.from_array(table, epoch_index)


def epoch_permutations(seeds, epoch: int, M: int, N: int, sync_shuf: bool = False) -> np.ndarray:
    """0-based orderings, shape (len(seeds), M, N), for one epoch of each trial.

    Without SyncShuf machine m draws from stream (seed, epoch, m). With
    SyncShuf the shared sigma is machine 0's stream, so M=1 reproduces
    the unsynchronized ordering exactly.
    """
    seeds = np.atleast_1d(np.asarray(seeds))
    if not sync_shuf:
        keys = stream_keys(seeds[:, None], LOCAL, epoch, np.arange(M)[None, :])
        return fisher_yates(keys, N)
    if N % M:
        raise InvalidArgument(f"SyncShuf needs M | N, got M={M}, N={N}")
    sigma = fisher_yates(stream_keys(seeds, LOCAL, epoch, 0), N)  # (T, N)
    pi = fisher_yates(stream_keys(seeds, SYNC_MACHINE, epoch, 0), M) + 1  # (T, M)
    pos = _shift_table(pi, N, M) - 1  # (T, M, N)
    return np.take_along_axis(sigma[:, None, :], pos, axis=-1)


def epoch_permutation_set(seed: int, epoch: int, M: int, N: int, sync_shuf: bool = False) -> PermutationSet:
    """The PermutationSet a run with ``seed`` uses in ``epoch``."""
    arr = epoch_permutations([seed], epoch, M, N, sync_shuf)[0] + 1
    return PermutationSet.from_array(arr, epoch)


def uniform_indices(seeds, epoch: int, M: int, N: int) -> np.ndarray:
    """I.i.d. uniform component draws in 0..N-1, shape (len(seeds), M, N)."""
    seeds = np.atleast_1d(np.asarray(seeds))
    keys = stream_keys(seeds[:, None, None], WITH_REPLACEMENT, epoch,
                       np.arange(M)[None, :, None], np.arange(N)[None, None, :])
    u = _unit_floats(keys)
    return np.minimum((u * N).astype(np.int64), N - 1)
