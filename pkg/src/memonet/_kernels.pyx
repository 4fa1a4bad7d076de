# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Mirrors ``_kernels_py`` function for function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


def softmax_rows_forward(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double mx, s
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            out[i, j] = exp(x[i, j] - mx)
            s += out[i, j]
        for j in range(m):
            out[i, j] /= s
    return out_arr


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += g[i, j] * y[i, j]
        for j in range(m):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out_arr


def layernorm_rows_forward(const double[:, ::1] x, const double[::1] gain,
                           const double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    y_arr = np.empty((n, m), dtype=np.float64)
    xhat_arr = np.empty((n, m), dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef double mu, var, d, r
    for i in range(n):
        mu = 0.0
        for j in range(m):
            mu += x[i, j]
        mu /= m
        var = 0.0
        for j in range(m):
            d = x[i, j] - mu
            var += d * d
        var /= m
        r = 1.0 / sqrt(var + eps)
        inv[i] = r
        for j in range(m):
            xhat[i, j] = (x[i, j] - mu) * r
            y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return y_arr, xhat_arr, inv_arr


def layernorm_rows_backward(const double[:, ::1] g, const double[:, ::1] xhat,
                            const double[::1] inv_std, const double[::1] gain):
    cdef Py_ssize_t n = g.shape[0], m = g.shape[1], i, j
    gx_arr = np.empty((n, m), dtype=np.float64)
    gg_arr = np.zeros(m, dtype=np.float64)
    gb_arr = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gg = gg_arr
    cdef double[::1] gb = gb_arr
    cdef double m1, m2, gh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(m):
            gh = g[i, j] * gain[j]
            m1 += gh
            m2 += gh * xhat[i, j]
            gg[j] += g[i, j] * xhat[i, j]
            gb[j] += g[i, j]
        m1 /= m
        m2 /= m
        for j in range(m):
            gx[i, j] = inv_std[i] * (g[i, j] * gain[j] - m1 - xhat[i, j] * m2)
    return gx_arr, gg_arr, gb_arr


def bhattacharyya_rows(const double[:, ::1] p, const double[:, ::1] q, double floor):
    cdef Py_ssize_t n = p.shape[0], m = p.shape[1], i, j
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double c
    for i in range(n):
        c = 0.0
        for j in range(m):
            c += sqrt(p[i, j] * q[i, j])
        if c < floor:
            c = floor
        out[i] = -log(c)
    return out_arr


cdef void _bfs(const long long[::1] indptr, const long long[::1] indices,
               long long source, long long[::1] dist, long long[::1] queue) nogil:
    cdef Py_ssize_t n = indptr.shape[0] - 1, head = 0, tail = 0, k, i
    cdef long long u, v
    for i in range(n):
        dist[i] = -1
    dist[source] = 0
    queue[tail] = source
    tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue[tail] = v
                tail += 1


def bfs_distances(const long long[::1] indptr, const long long[::1] indices, long long source):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    dist_arr = np.empty(n, dtype=np.int64)
    queue_arr = np.empty(n, dtype=np.int64)
    _bfs(indptr, indices, source, dist_arr, queue_arr)
    return dist_arr


def lex_shortest_path(const long long[::1] indptr, const long long[::1] indices,
                      long long start, long long goal):
    cdef Py_ssize_t n = indptr.shape[0] - 1, k, steps
    dist_arr = np.empty(n, dtype=np.int64)
    queue_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] dist = dist_arr
    _bfs(indptr, indices, goal, dist, queue_arr)
    if dist[start] < 0:
        return np.empty(0, dtype=np.int64)
    path_arr = np.empty(dist[start] + 1, dtype=np.int64)
    cdef long long[::1] path = path_arr
    cdef long long u = start, want
    path[0] = start
    steps = 1
    while u != goal:
        want = dist[u] - 1
        for k in range(indptr[u], indptr[u + 1]):
            if dist[indices[k]] == want:
                u = indices[k]
                break
        path[steps] = u
        steps += 1
    return path_arr


def act_weights(const double[::1] h, double eps):
    cdef Py_ssize_t n = h.shape[0], t
    p_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] p = p_arr
    cdef double running = 0.0
    for t in range(n):
        if running + h[t] >= 1.0 - eps or t == n - 1:
            p[t] = 1.0 - running
            return p_arr, t + 1
        p[t] = h[t]
        running += h[t]
    return p_arr, n


def nstep_returns(const double[::1] rewards, const double[::1] values, double gamma,
                  long horizon):
    cdef Py_ssize_t T = rewards.shape[0], t, i, n
    out_arr = np.zeros(T, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc, disc
    for t in range(T):
        n = T - t if horizon <= 0 else min(horizon, T - t)
        acc = 0.0
        disc = 1.0
        for i in range(n):
            acc += disc * rewards[t + i]
            disc *= gamma
        if t + n < T:
            acc += disc * values[t + n]
        out[t] = acc
    return out_arr
