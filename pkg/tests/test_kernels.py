import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from memonet import _kernels_py as py
from memonet import kernels

BACKENDS = kernels.backends()
compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)
mat = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 10)), elements=finite)


def _dist(rng, shape):
    p = rng.random(shape) + 1e-3
    return p / p.sum(-1, keepdims=True)


def _random_csr(rng, n, p=0.3):
    adj = [sorted({v for v in range(n) if v != u and rng.random() < p}) for u in range(n)]
    for u in range(n):
        for v in adj[u]:
            if u not in adj[v]:
                adj[v] = sorted(adj[v] + [u])
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(a) for a in adj])
    return indptr, np.asarray([v for a in adj for v in a], dtype=np.int64)


def test_backend_selected():
    assert kernels.BACKEND in BACKENDS


def test_pure_python_env_forces_fallback():
    env = dict(os.environ, MEMONET_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from memonet import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@compiled
@settings(max_examples=40, deadline=None)
@given(mat, st.integers(0, 2**31))
def test_softmax_parity(x, seed):
    cy = BACKENDS["cython"]
    g = np.random.default_rng(seed).normal(size=x.shape)
    y1, y2 = py.softmax_rows_forward(x), cy.softmax_rows_forward(x)
    assert np.allclose(y1, y2, atol=1e-14)
    assert np.allclose(py.softmax_rows_backward(y1, g), cy.softmax_rows_backward(y2, g), atol=1e-12)


@compiled
@settings(max_examples=40, deadline=None)
@given(mat, st.integers(0, 2**31))
def test_layernorm_parity(x, seed):
    cy = BACKENDS["cython"]
    rng = np.random.default_rng(seed)
    n = x.shape[1]
    gain, bias, g = rng.normal(size=n), rng.normal(size=n), rng.normal(size=x.shape)
    a = py.layernorm_rows_forward(x, gain, bias, 1e-5)
    b = cy.layernorm_rows_forward(x, gain, bias, 1e-5)
    for u, v in zip(a, b):
        assert np.allclose(u, v, atol=1e-10)
    for u, v in zip(py.layernorm_rows_backward(g, a[1], a[2], gain),
                    cy.layernorm_rows_backward(g, b[1], b[2], gain)):
        assert np.allclose(u, v, atol=1e-9)


@compiled
@pytest.mark.parametrize("seed", range(5))
def test_bhattacharyya_parity(seed):
    rng = np.random.default_rng(seed)
    p, q = _dist(rng, (7, 9)), _dist(rng, (7, 9))
    a = py.bhattacharyya_rows(p, q, 1e-12)
    b = BACKENDS["cython"].bhattacharyya_rows(p, q, 1e-12)
    assert np.allclose(a, b, atol=1e-14)


@compiled
@pytest.mark.parametrize("seed", range(10))
def test_graph_kernel_parity(seed):
    cy = BACKENDS["cython"]
    rng = np.random.default_rng(seed)
    n = 12
    indptr, indices = _random_csr(rng, n)
    for s in range(n):
        assert np.array_equal(py.bfs_distances(indptr, indices, s),
                              cy.bfs_distances(indptr, indices, s))
        t = int(rng.integers(n))
        assert np.array_equal(py.lex_shortest_path(indptr, indices, s, t),
                              cy.lex_shortest_path(indptr, indices, s, t))


@compiled
@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 1)))
def test_act_weights_parity(h):
    p1, t1 = py.act_weights(h, 0.01)
    p2, t2 = BACKENDS["cython"].act_weights(h, 0.01)
    assert t1 == t2
    assert np.array_equal(p1, p2)


@compiled
@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-2, 2)),
       st.floats(0, 1), st.integers(0, 5))
def test_nstep_returns_parity(r, gamma, horizon):
    v = np.linspace(-1, 1, r.size)
    a = py.nstep_returns(r, v, gamma, horizon)
    b = BACKENDS["cython"].nstep_returns(r, v, gamma, horizon)
    assert np.allclose(a, b, atol=1e-12)


def test_bfs_unreachable_is_minus_one():
    indptr = np.array([0, 1, 2, 2], dtype=np.int64)
    indices = np.array([1, 0], dtype=np.int64)
    d = kernels.bfs_distances(indptr, indices, 0)
    assert d.tolist() == [0, 1, -1]
    assert kernels.lex_shortest_path(indptr, indices, 0, 2).size == 0


def test_lex_path_prefers_smaller_ids():
    # square 0-1-3, 0-2-3: both length 2, lexicographic pick goes through 1
    indptr, indices = np.array([0, 2, 4, 6, 8]), np.array([1, 2, 0, 3, 0, 3, 1, 2])
    path = kernels.lex_shortest_path(indptr.astype(np.int64), indices.astype(np.int64), 0, 3)
    assert path.tolist() == [0, 1, 3]
