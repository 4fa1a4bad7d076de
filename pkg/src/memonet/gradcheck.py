"""Finite-difference checks of every differentiable op and of a MEMO episode.

Each op case builds a scalar ``sum(op(inputs) * R)`` with a fixed random
projection ``R`` so every output element contributes to the gradient.
Inputs for kinked ops (relu) are pushed away from the kink.
"""
from __future__ import annotations

import numpy as np

from memonet import autodiff as ad
from memonet.autodiff import Value
from memonet.halting import FixedHops, PolicyParams, policy_step
from memonet.model import MemoConfig, MemoParams, embed_memory, run_episode


def _leaf(rng, shape, name, low=None):
    x = rng.normal(size=shape)
    if low is not None:
        x = np.sign(x) * (np.abs(x) + low)
    return Value(x, requires_grad=True, name=name)


def _project(out: Value, rng) -> Value:
    R = rng.normal(size=out.shape)
    return ad.reduce_sum(ad.mul(out, R))


def op_cases(seed: int):
    """``(name, fn, leaves)`` triples; ``fn`` rebuilds the scalar loss."""
    rng = np.random.default_rng(seed)
    a = _leaf(rng, (3, 4), "a")
    b = _leaf(rng, (3, 4), "b")
    row = _leaf(rng, (4,), "row")
    m = _leaf(rng, (4, 5), "m")
    bt = _leaf(rng, (2, 3, 4), "bt")
    bm = _leaf(rng, (2, 4, 2), "bm")
    pos = Value(np.abs(rng.normal(size=(3, 4))) + 0.5, requires_grad=True, name="pos")
    kink = _leaf(rng, (3, 4), "kink", low=0.1)
    gain = _leaf(rng, (4,), "gain")
    bias = _leaf(rng, (4,), "bias")
    table = _leaf(rng, (6, 3), "table")
    ids = rng.integers(0, 6, size=(2, 3))
    tgt = rng.integers(0, 4, size=3)
    seeds = {k: rng.integers(1 << 30) for k in ("proj", "drop")}

    def case(name, build, leaves):
        proj_seed = int(seeds["proj"]) + len(name)

        def fn():
            return _project(build(), np.random.default_rng(proj_seed))

        return name, fn, leaves

    return [
        case("add", lambda: ad.add(a, row), [a, row]),
        case("sub", lambda: ad.sub(a, b), [a, b]),
        case("mul", lambda: ad.mul(a, row), [a, row]),
        case("scale", lambda: ad.scale(a, -1.7), [a]),
        case("matmul", lambda: ad.matmul(a, m), [a, m]),
        case("matmul_vec", lambda: ad.matmul(row, m), [row, m]),
        case("matmul_batched", lambda: ad.matmul(bt, bm), [bt, bm]),
        case("reduce_sum", lambda: ad.reduce_sum(bt, axis=1), [bt]),
        case("reduce_sum_keepdims", lambda: ad.reduce_sum(bt, axis=2, keepdims=True), [bt]),
        case("mean", lambda: ad.mean(a, axis=0), [a]),
        case("exp", lambda: ad.exp(a), [a]),
        case("log", lambda: ad.log(pos), [pos]),
        case("square", lambda: ad.square(a), [a]),
        case("relu", lambda: ad.relu(kink), [kink]),
        case("sigmoid", lambda: ad.sigmoid(a), [a]),
        case("log_sigmoid", lambda: ad.log_sigmoid(a), [a]),
        case("tanh", lambda: ad.tanh(a), [a]),
        case("softmax", lambda: ad.softmax(bt, axis=-1), [bt]),
        case("softmax_axis1", lambda: ad.softmax(bt, axis=1), [bt]),
        case("layer_norm", lambda: ad.layer_norm(a, gain, bias), [a, gain, bias]),
        case("dropout", lambda: ad.dropout(a, 0.3, True, np.random.default_rng(int(seeds["drop"]))),
             [a]),
        case("cross_entropy", lambda: ad.cross_entropy(ad.softmax(a), tgt), [a]),
        case("reshape", lambda: ad.reshape(bt, (6, 4)), [bt]),
        case("flatten", lambda: ad.flatten(bt), [bt]),
        case("unflatten", lambda: ad.unflatten(a, (2, 2)), [a]),
        case("transpose", lambda: ad.transpose(bt), [bt]),
        case("concat", lambda: ad.concat([a, b], axis=0), [a, b]),
        case("take", lambda: ad.take(bt, (slice(None), 1)), [bt]),
        case("take_rows", lambda: ad.take_rows(table, ids), [table]),
    ]


def episode_case(seed: int, n_hops: int = 2):
    """A small two-head MEMO episode with fixed hops and dropout in training mode."""
    rng = np.random.default_rng(seed)
    cfg = MemoConfig(I=4, S=3, O=5, d_c=3, d=4, d_a=4, H=2, dropout_a=0.1, dropout_o=0.1,
                     d_emb=3, S_q=3)
    params = MemoParams.init(cfg, rng)
    items = rng.normal(size=(2, 4, 3, 3))
    query = rng.normal(size=(2, 3, 3))
    tgt = rng.integers(0, 5, size=2)
    drop_seed = int(rng.integers(1 << 30))

    def fn():
        drng = np.random.default_rng(drop_seed)
        store = embed_memory(items, params)
        ans, _ = run_episode(store, query, params, FixedHops(n_hops), n_hops, True, drng)
        return ad.cross_entropy(ans, tgt)

    return fn, params.values()


def policy_case(seed: int):
    """Two GRU/MLP policy steps (the halting network's differentiable path)."""
    rng = np.random.default_rng(seed)
    pol = PolicyParams.init(3, rng, hidden=5, mlp_hidden=4, bias_init=2.0)
    pol["mlp/W_2"].data[...] = rng.normal(size=(2, 4))
    obs = rng.normal(size=(2, 2, 3))

    def fn():
        z = Value(np.zeros((2, 5)))
        total = None
        for t in range(2):
            z, v, logit, h = policy_step(obs[t], z, pol)
            term = ad.add(ad.reduce_sum(ad.mul(v, 0.3)), ad.reduce_sum(ad.log_sigmoid(logit)))
            total = term if total is None else ad.add(total, term)
        return total

    return fn, pol.values()


def run_gradchecks(seeds=range(10), verbose: bool = False) -> dict:
    """Worst relative error over ``seeds`` for ops and for composite episodes."""
    worst = {"ops": 0.0, "episode": 0.0}
    for seed in seeds:
        for name, fn, leaves in op_cases(seed):
            err = max(ad.gradcheck(fn, leaves).values())
            worst["ops"] = max(worst["ops"], err)
            if verbose and seed == 0:
                print(f"  {name:<22} {err:.2e}")
        for fn, leaves in (episode_case(seed), policy_case(seed)):
            err = max(ad.gradcheck(fn, leaves).values())
            worst["episode"] = max(worst["episode"], err)
        if verbose:
            print(f"seed {seed}: worst op {worst['ops']:.2e}, episode {worst['episode']:.2e}")
    return worst
