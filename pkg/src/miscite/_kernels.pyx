# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: neighbour-mean aggregation and FNV-1a token hashing."""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t FNV_OFFSET = 0xcbf29ce484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001b3ULL


def mean_aggregate(const long long[::1] indptr, const long long[::1] indices,
                   const double[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t u, p, c, v
    cdef double inv
    with nogil:
        for u in range(n):
            if indptr[u + 1] == indptr[u]:
                continue
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                for c in range(d):
                    out[u, c] += x[v, c]
            inv = 1.0 / (indptr[u + 1] - indptr[u])
            for c in range(d):
                out[u, c] *= inv
    return out_arr


def mean_aggregate_backward(const long long[::1] indptr, const long long[::1] indices,
                            const double[:, ::1] grad_out, Py_ssize_t n_src):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = grad_out.shape[1]
    gx_arr = np.zeros((n_src, d), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t u, p, c, v
    cdef double inv
    with nogil:
        for u in range(n):
            if indptr[u + 1] == indptr[u]:
                continue
            inv = 1.0 / (indptr[u + 1] - indptr[u])
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                for c in range(d):
                    gx[v, c] += grad_out[u, c] * inv
    return gx_arr


cdef inline uint64_t _fnv_update(uint64_t h, const unsigned char[:] data) nogil:
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h ^= data[i]
        h *= FNV_PRIME
    return h


def fnv1a64(bytes data):
    cdef const unsigned char[:] view = data
    return int(_fnv_update(FNV_OFFSET, view))


def hash_counts(list tokens, bytes seed, Py_ssize_t dim):
    out_arr = np.zeros(dim, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef const unsigned char[:] seed_view = seed
    cdef const unsigned char[:] tok_view
    cdef uint64_t base = _fnv_update(FNV_OFFSET, seed_view)
    cdef uint64_t h
    cdef bytes tok
    for tok in tokens:
        tok_view = tok
        h = _fnv_update(base, tok_view)
        out[<Py_ssize_t>(h % <uint64_t>dim)] += 1.0
    return out_arr
