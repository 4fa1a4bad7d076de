"""Pure-Python/numpy versions of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and results (up to float rounding).  ``memonet.kernels`` picks one at import.
"""
from collections import deque

import numpy as np


def softmax_rows_forward(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def layernorm_rows_forward(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gain + bias, xhat, inv_std[:, 0]


def layernorm_rows_backward(g, xhat, inv_std, gain):
    gx_hat = g * gain
    n = xhat.shape[1]
    m1 = gx_hat.sum(axis=1, keepdims=True) / n
    m2 = (gx_hat * xhat).sum(axis=1, keepdims=True) / n
    gx = inv_std[:, None] * (gx_hat - m1 - xhat * m2)
    return gx, (g * xhat).sum(axis=0), g.sum(axis=0)


def bhattacharyya_rows(p, q, floor):
    coef = np.sqrt(p * q).sum(axis=1)
    return -np.log(np.maximum(coef, floor))


def bfs_distances(indptr, indices, source):
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = deque([source])
    while frontier:
        u = frontier.popleft()
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                frontier.append(v)
    return dist


def lex_shortest_path(indptr, indices, start, goal):
    """Lexicographically smallest shortest path; neighbours must be sorted."""
    to_goal = bfs_distances(indptr, indices, goal)
    if to_goal[start] < 0:
        return np.empty(0, dtype=np.int64)
    path = [start]
    u = start
    while u != goal:
        want = to_goal[u] - 1
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if to_goal[v] == want:
                u = v
                break
        path.append(u)
    return np.asarray(path, dtype=np.int64)


def act_weights(h, eps):
    n = len(h)
    p = np.zeros(n)
    running = 0.0
    for t in range(n):
        if running + h[t] >= 1.0 - eps or t == n - 1:
            p[t] = 1.0 - running
            return p, t + 1
        p[t] = h[t]
        running += h[t]
    return p, n


def nstep_returns(rewards, values, gamma, horizon):
    """Bootstrapped n-step returns; ``horizon <= 0`` means full Monte Carlo."""
    T = len(rewards)
    out = np.zeros(T)
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
    return out
