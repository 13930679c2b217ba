import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miscite import _kernels_py, kernels
from miscite.encoder import HASH_SEED

compiled = kernels.compiled_kernels
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


def random_csr(rng, n):
    indptr, indices = [0], []
    for u in range(n):
        row = [u] + sorted(rng.choice(n, size=rng.integers(0, n), replace=False).tolist())
        indices += row
        indptr.append(len(indices))
    return np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)


def dense_oracle(indptr, indices, n):
    A = np.zeros((n, n))
    for u in range(n):
        row = indices[indptr[u]:indptr[u + 1]]
        for v in row:
            A[u, v] += 1.0 / len(row)
    return A


@pytest.mark.parametrize("impl", [_kernels_py, pytest.param(compiled, marks=needs_compiled)])
def test_mean_aggregate_matches_dense(impl):
    rng = np.random.default_rng(0)
    for n in (1, 2, 7, 20):
        indptr, indices = random_csr(rng, n)
        x = rng.standard_normal((n, 5))
        A = dense_oracle(indptr, indices, n)
        assert np.allclose(impl.mean_aggregate(indptr, indices, x), A @ x, atol=1e-12)
        g = rng.standard_normal((n, 5))
        assert np.allclose(impl.mean_aggregate_backward(indptr, indices, g, n), A.T @ g, atol=1e-12)


@needs_compiled
@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(min_size=0, max_size=8), max_size=20), st.integers(2, 64))
def test_hash_counts_agree(tokens, dim):
    raw = [t.encode("utf-8") for t in tokens]
    assert np.array_equal(compiled.hash_counts(raw, HASH_SEED, dim), _kernels_py.hash_counts(raw, HASH_SEED, dim))
    for t in raw:
        assert compiled.fnv1a64(t) == _kernels_py.fnv1a64(t)
