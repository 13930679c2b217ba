"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def mean_aggregate(indptr, indices, x):
    n = len(indptr) - 1
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    counts = np.diff(indptr)
    nonempty = counts > 0
    if indices.size:
        sums = np.add.reduceat(x[indices], indptr[:-1][nonempty], axis=0)
        out[nonempty] = sums / counts[nonempty, None]
    return out


def mean_aggregate_backward(indptr, indices, grad_out, n_src):
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(len(counts)), counts)
    scaled = grad_out[rows] / counts[rows, None]
    gx = np.zeros((n_src, grad_out.shape[1]), dtype=np.float64)
    np.add.at(gx, indices, scaled)
    return gx


def _fnv_update(h, data):
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def fnv1a64(data):
    return _fnv_update(FNV_OFFSET, data)


def hash_counts(tokens, seed, dim):
    out = np.zeros(dim, dtype=np.float64)
    base = _fnv_update(FNV_OFFSET, seed)
    for tok in tokens:
        out[_fnv_update(base, tok) % dim] += 1.0
    return out
