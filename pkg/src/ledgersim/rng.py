"""Counter-based random streams.

Every draw in a simulation is a pure function of
``(seed, purpose, node, step, sub_step, a, b)`` where ``a``/``b`` are
counters chosen by the caller (message id, neighbor slot, ...). Draws therefore
do not depend on the order in which agents are evaluated, which is what makes
results independent of the worker count and of the kernel backend.

The hash is a chain of splitmix64 finalizers. Three implementations are kept in
lockstep: plain Python ints (reference), numpy arrays, and a numba scalar.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ._accel import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / 9007199254740992.0


class Purpose(IntEnum):
    MINE = 1
    FORWARD_EACH = 2  # fixed probability, one coin per neighbor slot
    FORWARD_ALL = 3  # probabilistic broadcast, one coin per message
    STEM = 4  # dandelion stem relay choice
    DERIVE = 5  # seed derivation


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def hash_words(seed: int, *words: int) -> int:
    h = seed & MASK64
    for w in words:
        h = mix64(h + GOLDEN + (w & MASK64))
    return h


def uniform(seed: int, purpose: int, node: int, step: int, sub: int, a: int = 0, b: int = 0) -> float:
    h = hash_words(seed, purpose, node, step, sub, a, b)
    return (h >> 11) * _INV_2_53


def derive_seed(seed: int, *words: int) -> int:
    """Deterministic child seed in ``[0, 2**63)``."""
    return hash_words(seed, Purpose.DERIVE, *words) >> 1


# numpy ---------------------------------------------------------------------

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def _as_u64(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype == np.uint64:
        return arr
    return arr.astype(np.int64).astype(np.uint64)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


def uniform_array(seed: int, purpose: int, node, step, sub, a=0, b=0) -> np.ndarray:
    """Vectorized :func:`uniform`; arguments broadcast against each other."""
    node, step, sub, a, b = np.broadcast_arrays(
        _as_u64(node), _as_u64(step), _as_u64(sub), _as_u64(a), _as_u64(b)
    )
    h = np.full(node.shape, np.uint64(seed & MASK64), dtype=np.uint64)
    h = _mix64_np(h + _U_GOLDEN + np.uint64(purpose))
    for w in (node, step, sub, a, b):
        h = _mix64_np(h + _U_GOLDEN + w)
    return (h >> _S11).astype(np.float64) * _INV_2_53


# numba ---------------------------------------------------------------------


@njit(inline="always")
def _mix64_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@njit
def uniform_nb(seed, purpose, node, step, sub, a, b):
    g = np.uint64(GOLDEN)
    h = _mix64_nb(np.uint64(seed) + g + np.uint64(purpose))
    h = _mix64_nb(h + g + np.uint64(node))
    h = _mix64_nb(h + g + np.uint64(step))
    h = _mix64_nb(h + g + np.uint64(sub))
    h = _mix64_nb(h + g + np.uint64(a))
    h = _mix64_nb(h + g + np.uint64(b))
    return np.float64(h >> np.uint64(11)) * _INV_2_53


@dataclass(frozen=True)
class RandomStream:
    """Random draws owned by one agent during one (mining step, sub-step)."""

    seed: int
    node: int
    step: int = 0
    sub: int = 0

    def uniform(self, purpose: int, a: int = 0, b: int = 0) -> float:
        return uniform(self.seed, purpose, self.node, self.step, self.sub, a, b)
