"""Acceptance suite: one test (or group) per criterion, each at its tolerance.

The terminal summary prints one PASS/FAIL line per criterion (see conftest).
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from memonet import autodiff as ad
from memonet.config import DATA_ROOT_ENV, RunConfig, preset_config
from memonet.emn import EmnConfig, EmnParams, emn_episode
from memonet.gradcheck import run_gradchecks
from memonet.halting import (ACT_EPSILON, FixedHops, PolicyParams, ReinforceHalting, act_halting,
                             policy_step, reinforce_loss, sample_action)
from memonet.model import (MemoConfig, MemoParams, attention_hop, embed_memory, embed_query,
                           forward_macs, run_episode)
from memonet.optim import RMSProp
from memonet.tasks import babi, graph, pai
from memonet.train import Trainer, forward


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# ---------------------------------------------------------------- 1


@criterion(1, "gradient correctness")
def test_gradient_correctness(record_property):
    t0 = time.process_time()
    worst = run_gradchecks(range(10))
    cpu = time.process_time() - t0
    record_property("detail", f"ops {worst['ops']:.1e}, episode {worst['episode']:.1e}, "
                              f"{cpu:.0f}s CPU")
    assert worst["ops"] < 1e-5
    assert worst["episode"] < 1e-4
    assert cpu < 120


# ---------------------------------------------------------------- 2


@criterion(2, "normalization invariants")
def test_normalization_invariants(record_property):
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(1000):
        H = int(rng.integers(1, 4))
        cfg = MemoConfig(I=int(rng.integers(2, 12)), S=3, O=int(rng.integers(2, 20)), d_c=4,
                         d=int(rng.integers(1, 6)) * 2, d_a=5, H=H, d_emb=3, S_q=3,
                         dropout_a=0.3, layernorm=bool(i % 2))
        p = MemoParams.init(cfg, rng)
        scale = 10.0 ** rng.uniform(-2, 2)
        items = scale * rng.normal(size=(2, cfg.I, 3, 3))
        query = scale * rng.normal(size=(2, 3, 3))
        with ad.no_grad():
            ans, tr = run_episode(embed_memory(items, p), query, p, FixedHops(2), 2,
                                  training=bool(i % 3), rng=rng)
        for w in tr.weights:
            worst = max(worst, np.abs(w.sum(-1) - 1).max())
        worst = max(worst, np.abs(ans.data.sum(-1) - 1).max())
        if i % 10 == 0:
            ec = EmnConfig(I=cfg.I, S=3, O=cfg.O, d=4, d_emb=3, S_q=3, n_hops=2)
            a, ws = emn_episode(items, query, EmnParams.init(ec, rng))
            worst = max(worst, np.abs(a.data.sum(-1) - 1).max(),
                        max(np.abs(w.sum(-1) - 1).max() for w in ws))
    record_property("detail", f"max |sum-1| = {worst:.1e}")
    assert worst < 1e-9


# ---------------------------------------------------------------- 3


@criterion(3, "PAI generator oracle")
@pytest.mark.parametrize("L,rows", [(3, 32), (4, 48), (5, 64)])
def test_pai_generator_oracle(L, rows, record_property):
    cfg = pai.PaiConfig(seq_len=L)
    rng = np.random.default_rng(L)
    n = 0
    bad = 0
    while n < 10_000:
        batch = pai.sample_batch(cfg, rng, 100)
        assert (batch.kinds == 0).sum() == 50
        for store, q in zip(batch.stores, batch.queries):
            assert store.row_classes.shape == (rows, cfg.slot_width)
            slots, match, lure = pai.build_item(store, q)
            reach = pai.reachable(store.row_classes, slots[0][0])
            lure_pos = np.argwhere(store.sequences == lure)
            ok = (match in reach and lure not in reach and lure_pos.shape == (1, 2)
                  and lure_pos[0, 1] == q.match_pos
                  and store.sequences[q.seq, q.match_pos] == match)
            bad += not ok
        n += len(batch)
    record_property("detail", f"L={L}: {n - bad}/{n} items valid, I={rows}")
    assert bad == 0


# ---------------------------------------------------------------- 4


def _floyd(n, edges):
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0)
    D[edges[:, 0], edges[:, 1]] = 1
    D[edges[:, 1], edges[:, 0]] = 1
    for k in range(n):
        D = np.minimum(D, D[:, k:k + 1] + D[k:k + 1, :])
    return D


@criterion(4, "graph oracle")
@pytest.mark.parametrize("name", ["10-2-2", "20-3-3", "20-5-3"])
def test_graph_oracle(name, record_property):
    cfg = graph.PRESETS[name]
    rng = np.random.default_rng(4)
    bad = 0
    n = 10_000
    for _ in range(n):
        inst = graph.generate_instance(cfg, rng)
        g = inst.graph
        D = _floyd(cfg.n_nodes, g.edges)
        adj = set(map(tuple, g.edges.tolist())) | {(v, u) for u, v in g.edges.tolist()}
        p = inst.path
        ok = (np.all(g.out_degrees() == cfg.out_degree)
              and len(p) == cfg.path_length + 1 and p[0] == inst.start and p[-1] == inst.goal
              and all((a, b) in adj for a, b in zip(p, p[1:]))
              and D[inst.start, inst.goal] == cfg.path_length)
        bad += not ok
    record_property("detail", f"{name}: {n - bad}/{n} shortest paths of length {cfg.path_length}")
    assert bad == 0


# ---------------------------------------------------------------- 5


@criterion(5, "halting contracts")
def test_hops_never_exceed_cap():
    rng = np.random.default_rng(5)
    cfg = MemoConfig(I=6, S=3, O=7, d_c=4, d=6, d_a=5, H=2, d_emb=3, S_q=3)
    params = MemoParams.init(cfg, rng)
    for trial in range(200):
        N = int(rng.integers(1, 8))
        pol = PolicyParams.init(cfg.H + N, rng, hidden=8, mlp_hidden=4,
                                bias_init=float(rng.uniform(-5, 10)))
        pol["mlp/W_2"].data[...] = rng.normal(size=pol["mlp/W_2"].shape)
        items = rng.normal(size=(8, 6, 3, 3))
        _, tr = run_episode(embed_memory(items, params), rng.normal(size=(8, 3, 3)), params,
                            ReinforceHalting(pol), N, training=bool(trial % 2), rng=rng)
        assert tr.hops.max() <= N and tr.hops.min() >= 1


@criterion(5, "halting contracts")
def test_fresh_policy_first_hop_probability(record_property):
    pol = PolicyParams.init(1 + 5, np.random.default_rng(0), bias_init=5.0)
    obs = np.random.default_rng(1).normal(size=(16, 6))
    _, _, _, h = policy_step(obs, np.zeros((16, 256)), pol)
    err = np.abs(h.data - 1 / (1 + math.exp(-5.0))).max()
    record_property("detail", f"|h - sigmoid(5)| = {err:.1e}")
    assert err <= 1e-9


@criterion(5, "halting contracts")
def test_bernoulli_variance_levels():
    rng = np.random.default_rng(2)
    for p in np.linspace(0.1, 0.9, 9):
        a = sample_action(np.full(100_000, p), True, rng).astype(float)
        assert a.var() <= 0.25
        assert abs(a.var() - p * (1 - p)) < 5e-3


# ---------------------------------------------------------------- 6


def _toy_pool(seed, N=5, B=32, P=8):
    """Attention traces and per-hop correctness of a fixed (untrained) MEMO."""
    rng = np.random.default_rng([seed, 6])
    pc = pai.PaiConfig()
    cfg = MemoConfig(I=pc.rows, S=3, O=pc.n_classes, d_c=16, d=16, d_a=16, H=1, d_emb=pc.d_emb,
                     S_q=3, dropout_a=0.0)
    params = MemoParams.init(cfg, rng)
    pool = []
    for _ in range(P):
        mem, qry, tgt = pai.model_inputs(pc, pai.sample_batch(pc, rng, B))
        with ad.no_grad():
            store = embed_memory(mem, params)
            qs = embed_query(qry, params)
            ws, ok = [], []
            for t in range(N):
                out = attention_hop(store, qs, params)
                ws.append(out.weights)
                ok.append(out.answer.data.argmax(-1) == tgt)
                qs = type(qs)(out.Q_next, t + 1)
        pool.append((ws, np.asarray(ok, dtype=float)))
    return pool


def _expected_hops(pol, pool, N):
    """Exact E[hops] = sum_t prod_{s<t} h_s under the stochastic policy."""
    total, count = 0.0, 0
    for ws, _ in pool:
        B = ws[0].shape[0]
        ctl = ReinforceHalting(pol).begin(B, N, False, None)
        hs = []
        for t in range(N):
            ctl.step(ws[t], t, np.ones(B, dtype=bool))
            hs.append(ctl.rows[-1][4])
        surv = np.ones(B)
        e = np.zeros(B)
        for t in range(N):
            e += surv
            surv = surv * hs[t]
        total += e.sum()
        count += B
    return total / count


def _train_policy(pool, beta, seed, N=5, updates=2000):
    rng = np.random.default_rng([seed, 60])
    pol = PolicyParams.init(1 + N, rng, bias_init=5.0)
    opt = RMSProp(pol.values(), lr=1e-4)
    for u in range(updates):
        ws, ok = pool[u % len(pool)]
        B = ws[0].shape[0]
        ctl = ReinforceHalting(pol).begin(B, N, True, rng)
        active = np.ones(B, dtype=bool)
        hops = np.zeros(B, dtype=int)
        for t in range(N):
            hops[active] = t + 1
            active = active & ctl.step(ws[t], t, active)
            if not active.any():
                break
        reward = ok[hops - 1, np.arange(B)]
        with ad.Tape() as tape:
            loss = reinforce_loss(ctl.record(), reward, pol, alpha=1e-2, beta=beta, gamma=0.9)
            opt.zero_grad()
            tape.backward(loss.total)
        opt.step()
    return _expected_hops(pol, pool, N)


@criterion(6, "hop-penalty direction")
@pytest.mark.slow
def test_hop_penalty_direction(record_property):
    betas = [0.0, 1e-2, 0.1]
    votes = 0
    table = []
    for seed in range(5):
        pool = _toy_pool(seed)
        hops = [_train_policy(pool, b, seed) for b in betas]
        table.append(hops)
        votes += all(a >= b for a, b in zip(hops, hops[1:]))
    record_property("detail", f"{votes}/5 seeds monotone; mean hops per beta "
                              + ", ".join(f"{b:g}:{np.mean([h[i] for h in table]):.2f}"
                                          for i, b in enumerate(betas)))
    assert votes >= 3


# ---------------------------------------------------------------- 7


@criterion(7, "ACT arithmetic")
def test_act_sums_exactly_to_one(record_property):
    rng = np.random.default_rng(7)
    assert ACT_EPSILON == 0.01
    for _ in range(1000):
        n = int(rng.integers(1, 25))
        h = rng.random(n) ** rng.uniform(0.1, 5)
        _, p, T = act_halting(np.zeros((n, 2)), h)
        s = 0.0
        for x in p:
            s += float(x)
        assert s == 1.0 and T <= n and np.all(np.asarray(p) >= 0)
    record_property("detail", "1000/1000 sequences sum to exactly 1, eps = 0.01")


# ---------------------------------------------------------------- 8

CPU_BUDGET = 30 * 60


def _desk_run(model, seed, out):
    """Train one desk-preset PAI-3 model; returns (test report, CPU seconds)."""
    cfg = preset_config("desk")
    cfg.model, cfg.seed = model, seed
    tr = Trainer(cfg, out)
    t0 = time.process_time()
    tr.run()
    report = tr.evaluate(n_items=3000)
    return report["types"], time.process_time() - t0


@criterion(8, "toy-scale learnability")
@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_memo_beats_emn_on_pai3(seed, tmp_path, record_property):
    memo, t_memo = _desk_run("memo", seed, tmp_path / "memo")
    emn, t_emn = _desk_run("emn", seed, tmp_path / "emn")
    direct = np.mean([memo[k]["match_vs_lure"] for k in ("A-B", "B-C")])
    gap = memo["A-C"]["match_vs_lure"] - emn["A-C"]["match_vs_lure"]
    record_property("detail", f"seed {seed}: MEMO direct {100 * direct:.1f}, A-C "
                              f"{100 * memo['A-C']['match_vs_lure']:.1f} vs EMN "
                              f"{100 * emn['A-C']['match_vs_lure']:.1f}; "
                              f"CPU {t_memo / 60:.1f}/{t_emn / 60:.1f} min")
    assert t_memo < CPU_BUDGET and t_emn < CPU_BUDGET
    assert direct >= 0.95
    assert gap >= 0.15


# ---------------------------------------------------------------- 9


def _hop_macs(I):
    """MACs of one hop including the key/value projection of the I slots.

    The answer MLP of a hop does not depend on I, so the hop is measured
    together with the slot projections it reads, as a single-hop forward.
    """
    cfg = MemoConfig(I=I, S=3, O=200, d_c=32, d=64, d_a=64, H=1, d_emb=64, S_q=3)
    p = MemoParams.init(cfg, np.random.default_rng(0))
    return forward_macs(p, np.zeros((1, I, 3, 64)), np.zeros((1, 3, 64)), n_hops=1)


@criterion(9, "complexity linearity")
def test_hop_macs_linear_in_slots(record_property):
    ratios = [_hop_macs(2 * I) / _hop_macs(I) for I in (32, 64)]
    record_property("detail", "doubling I: " + ", ".join(f"{r:.3f}x" for r in ratios))
    assert all(1.9 <= r <= 2.1 for r in ratios)


# ---------------------------------------------------------------- 10


def _babi_root():
    root = Path(os.environ.get(DATA_ROOT_ENV, "data")) / "babi" / "en-10k"
    return root if root.is_dir() else None


@criterion(10, "bAbI pipeline")
@pytest.mark.skipif(_babi_root() is None, reason=f"bAbI en-10k not under ${DATA_ROOT_ENV}/babi")
def test_babi_pipeline(record_property):
    corpus = babi.parse_babi(_babi_root())
    s, q, a, t = babi.batch_babi(corpus, np.random.default_rng(0), batch=128)
    record_property("detail", f"vocabulary {corpus.vocab_size}")
    assert corpus.vocab_size == 177
    assert q.shape == (128, 11) and s.shape == (128, 320, 11)


# ---------------------------------------------------------------- 11


@criterion(11, "gradient isolation")
def test_gradient_isolation_bitwise(tmp_path, record_property):
    cfg = RunConfig(d_c=8, d=8, d_a=8, n_hops=3, gru_hidden=16, mlp_hidden=8, batch_size=8,
                    epochs=1, updates_per_epoch=100)
    tr = Trainer(cfg, tmp_path)
    model, policy = tr.params.values(), tr.policy.values()
    changed = {"model": 0, "policy": 0}
    for _ in range(100):
        b = tr.task.sample(tr.data_rng, cfg.batch_size)
        pol_before = [v.data.copy() for v in policy]
        with ad.Tape() as tape:
            (a, trace), = forward(cfg, tr.params, tr.strategy, b.memory, b.query, None, True,
                                  tr.roll_rng)
            tr.opt.zero_grad()
            tr.popt.zero_grad()
            tape.backward(ad.cross_entropy(a, b.targets[:, 0]))
        assert all(not np.any(v.grad) for v in policy)
        tr.opt.step()
        assert all(np.array_equal(x, v.data) for x, v in zip(pol_before, policy))
        changed["model"] += 1
        model_before = [v.data.copy() for v in model]
        tr.policy_step([trace.halting], (a.data.argmax(-1) == b.targets[:, 0])[None])
        assert all(np.array_equal(x, v.data) for x, v in zip(model_before, model))
        changed["policy"] += any(not np.array_equal(x, v.data)
                                 for x, v in zip(pol_before, policy))
    record_property("detail", f"100 steps; policy moved in {changed['policy']} of them, "
                              "model untouched by every policy update and vice versa")
    assert changed["policy"] > 0
