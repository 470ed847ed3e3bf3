"""Counter-based random streams usable from numba kernels.

Every tree and every subsample draw gets its own stream keyed by
``(master seed, pair index, slot, purpose)``, so results do not depend on the
order in which pairs are processed.
"""

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

SAMPLING = 1
SPLITTING = 2
_MASK64 = (1 << 64) - 1


@nb.njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, nogil=True)
def derive_key(master, b, slot, purpose):
    h = mix64(master ^ _GOLDEN)
    h = mix64(h ^ np.uint64(b))
    h = mix64(h + _GOLDEN * np.uint64(slot + 1))
    return mix64(h ^ (np.uint64(purpose) * _M1))


@nb.njit(cache=True, nogil=True)
def next_u64(state):
    state[0] = state[0] + _GOLDEN
    return mix64(state[0])


@nb.njit(cache=True, nogil=True)
def uniform(state):
    return np.float64(next_u64(state) >> _S11) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, nogil=True)
def randbelow(state, m):
    j = np.int64(uniform(state) * m)
    return j if j < m else m - 1


def to_u64(seed) -> np.uint64:
    return np.uint64(int(seed) & _MASK64)
