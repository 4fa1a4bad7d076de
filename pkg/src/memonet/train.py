"""Training and evaluation loop.

Each update draws one batch, takes an Adam step on the model's cross-entropy
and then (for the REINFORCE halting strategy) an RMSProp step on the halting
policy using the rewards of that same batch.  The two parameter sets never
share gradients: the policy runs under ``no_grad`` during the model's
forward pass and is re-run on the recorded observations for its own loss.

Every epoch appends one JSON line to ``metrics.jsonl`` and overwrites
``last.ckpt``; evaluations additionally write ``best.ckpt`` when the
validation loss improves.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from memonet import autodiff as ad
from memonet.checkpoint import load_checkpoint, save_checkpoint
from memonet.config import RunConfig, data_root
from memonet.emn import EmnConfig, EmnParams, emn_embed, emn_episode
from memonet.errors import CheckpointError, ConfigError
from memonet.halting import (ActHalting, FixedHops, NeverHalt, PolicyParams, ReinforceHalting,
                             reinforce_loss)
from memonet.model import MemoConfig, MemoParams, embed_memory, run_episode
from memonet.optim import Adam, RMSProp
from memonet.tasks import babi, graph, pai

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


# ------------------------------------------------------------------ tasks


@dataclass
class Batch:
    memory: np.ndarray
    query: np.ndarray
    targets: np.ndarray  # (B, A)
    meta: object = None


class PaiTask:
    def __init__(self, cfg: RunConfig):
        self.cfg = pai.PaiConfig(seq_len=cfg.seq_len, n_classes=cfg.n_classes, d_emb=cfg.d_emb,
                                 embed_scale=cfg.embed_scale)
        self.n_answers = 1

    def shapes(self) -> dict:
        c = self.cfg
        return {"I": c.rows, "S": c.slot_width, "O": c.n_classes, "d_emb": c.d_emb,
                "S_q": 3, "n_answers": 1}

    def sample(self, rng, batch_size, split="train") -> Batch:
        b = pai.sample_batch(self.cfg, rng, batch_size)
        mem, qry, tgt = pai.model_inputs(self.cfg, b, split)
        return Batch(mem, qry, tgt[:, None], b)

    def evaluate(self, predict, rng, n_items) -> dict:
        def probs(mem, qry):
            return predict(mem, qry, None)[0]
        rep = pai.evaluate(probs, self.cfg, rng, n_items, split="test")
        return {"types": rep}

    encode_next = None


class GraphTask:
    def __init__(self, cfg: RunConfig):
        if cfg.graph not in graph.PRESETS:
            raise ConfigError(f"unknown graph config {cfg.graph!r}; choose from {sorted(graph.PRESETS)}")
        self.cfg = graph.PRESETS[cfg.graph]
        self.n_answers = self.cfg.n_answers

    def shapes(self) -> dict:
        c = self.cfg
        return {"I": c.n_edges, "S": 2, "O": c.vocab, "d_emb": None, "S_q": 2,
                "n_answers": c.n_answers}

    def sample(self, rng, batch_size, split="train") -> Batch:
        b = graph.sample_batch(self.cfg, rng, batch_size)
        return Batch(b.description, b.query, b.targets, b)

    def evaluate(self, predict, rng, n_items) -> dict:
        def nodes(desc, qry, feed):
            return np.stack([a.argmax(-1) for a in predict(desc, qry, feed)], axis=1)
        return graph.evaluate_path_accuracy(nodes, self.cfg, rng, n_items)

    encode_next = staticmethod(graph.next_query)


class BabiTask:
    def __init__(self, cfg: RunConfig):
        path = Path(cfg.babi_path) if cfg.babi_path else data_root() / "babi" / "en-10k"
        self.corpus = babi.parse_babi(path, seed=cfg.seed)
        self.n_answers = 1

    def shapes(self) -> dict:
        return {"I": babi.MAX_STORIES, "S": babi.MAX_WORDS, "O": len(self.corpus.vocab),
                "d_emb": None, "S_q": babi.MAX_WORDS, "n_answers": 1}

    def sample(self, rng, batch_size, split="train") -> Batch:
        stories, queries, answers, tasks = babi.batch_babi(self.corpus, rng, batch_size, split)
        return Batch(stories, queries, answers[:, None], tasks)

    def evaluate(self, predict, rng, n_items) -> dict:
        pool = self.corpus.test
        idx = rng.permutation(len(pool))[:n_items]
        preds, answers, tasks = [], [], []
        for start in range(0, len(idx), 128):
            ex = [pool[i] for i in idx[start:start + 128]]
            s, q, a, t = babi.encode_examples(self.corpus, ex)
            preds.append(predict(s, q, None)[0].argmax(-1))
            answers.append(a)
            tasks.append(t)
        rep = babi.per_task_accuracy(np.concatenate(preds), np.concatenate(answers),
                                     np.concatenate(tasks))
        return {"tasks": {str(k): v for k, v in rep.items()}, "solved": babi.solved_count(rep)}

    encode_next = None


def make_task(cfg: RunConfig):
    return {"pai": PaiTask, "graph": GraphTask, "babi": BabiTask}[cfg.task](cfg)


# ------------------------------------------------------------------ model


def build_model(cfg: RunConfig, shapes: dict, rng: np.random.Generator):
    if cfg.model == "emn":
        ec = EmnConfig(I=shapes["I"], S=shapes["S"], O=shapes["O"], d=cfg.d,
                       d_emb=shapes["d_emb"], S_q=shapes["S_q"], n_hops=cfg.fixed_hops,
                       n_answers=shapes["n_answers"])
        return EmnParams.init(ec, rng), None
    mc = MemoConfig(I=shapes["I"], S=shapes["S"], O=shapes["O"], d_c=cfg.d_c, d=cfg.d,
                    d_a=cfg.d_a, H=cfg.heads, dropout_a=cfg.dropout_a, dropout_o=cfg.dropout_o,
                    d_emb=shapes["d_emb"], S_q=shapes["S_q"], n_answers=shapes["n_answers"],
                    time_encoding=cfg.task == "babi", logit_init=cfg.logit_init,
                    **cfg.ablation.model_kwargs())
    params = MemoParams.init(mc, rng)
    policy = None
    if cfg.halting in ("reinforce", "act"):
        policy = PolicyParams.init(cfg.heads + cfg.n_hops, rng, hidden=cfg.gru_hidden,
                                   mlp_hidden=cfg.mlp_hidden, bias_init=cfg.bias_init)
    return params, policy


def make_strategy(cfg: RunConfig, policy):
    if cfg.halting == "reinforce":
        return ReinforceHalting(policy)
    if cfg.halting == "act":
        return ActHalting(policy)
    if cfg.halting == "fixed-k":
        return FixedHops(cfg.fixed_hops)
    return NeverHalt()


def forward(cfg: RunConfig, params, strategy, batch_memory, batch_query, feed, training,
            rng, encode_next=None):
    """Per-answer ``(probs Value, trace or None)`` for MEMO or EMN."""
    A = params.config.n_answers
    results = []
    if cfg.model == "emn":
        memory = emn_embed(batch_memory, params)
        q = batch_query
        for k in range(A):
            a, _ = emn_episode(batch_memory, q, params, answer=k, memory=memory)
            results.append((a, None))
            if k + 1 < A:
                q = _advance(q, feed, k, a, encode_next)
        return results
    store = embed_memory(batch_memory, params)
    q = batch_query
    for k in range(A):
        a, trace = run_episode(store, q, params, strategy, cfg.n_hops, training, rng, answer=k)
        results.append((a, trace))
        if k + 1 < A:
            q = _advance(q, feed, k, a, encode_next)
    return results


def _advance(q, feed, k, a, encode_next):
    chosen = np.asarray(feed)[:, k] if feed is not None else a.data.argmax(-1)
    if encode_next is None:
        q = np.array(q, copy=True)
        q[:, 0] = chosen
        return q
    return encode_next(q, chosen)


# ------------------------------------------------------------------ trainer


class Trainer:
    def __init__(self, cfg: RunConfig, out_dir, task=None):
        cfg.validate()
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.task = task or make_task(cfg)
        shapes = self.task.shapes()
        init_rng = np.random.default_rng([cfg.seed, 0])
        self.params, self.policy = build_model(cfg, shapes, init_rng)
        self.strategy = make_strategy(cfg, self.policy)
        self.data_rng = np.random.default_rng([cfg.seed, 1])
        self.roll_rng = np.random.default_rng([cfg.seed, 2])
        self.opt = Adam(self.params.values(), lr=cfg.lr_memo, beta1=cfg.adam_beta1,
                        beta2=cfg.adam_beta2, eps=cfg.adam_eps, total_steps=cfg.total_steps,
                        power=cfg.lr_power)
        self.popt = None
        if self.policy is not None:
            self.popt = RMSProp(self.policy.values(), lr=cfg.lr_halt, decay=cfg.rms_decay,
                                eps=cfg.rms_eps)
        self.epoch = 0
        self.elapsed = 0.0  # wall-clock seconds spent in run(), carried across resumes
        self.best_val = float("inf")
        self.metrics_path = self.out / "metrics.jsonl"

    # --------------------------------------------------------------- steps

    def train_step(self) -> dict:
        cfg = self.cfg
        b = self.task.sample(self.data_rng, cfg.batch_size, "train")
        feed = b.targets if b.targets.shape[1] > 1 else None
        act = cfg.halting == "act" and cfg.model == "memo"
        with ad.Tape() as tape:
            res = forward(cfg, self.params, self.strategy, b.memory, b.query, feed, True,
                          self.roll_rng, self.task.encode_next)
            loss = None
            for k, (a, _) in enumerate(res):
                ce = ad.cross_entropy(a, b.targets[:, k])
                loss = ce if loss is None else ad.add(loss, ce)
            loss = ad.scale(loss, 1.0 / len(res))
            total = loss
            if act:
                ponder = None
                for _, tr in res:
                    r = ad.mean(tr.halting.remainder)
                    ponder = r if ponder is None else ad.add(ponder, r)
                total = ad.add(total, ad.scale(ponder, cfg.act_ponder))
            self.opt.zero_grad()
            if self.popt is not None:
                self.popt.zero_grad()
            tape.backward(total)
        self.opt.step()
        if act:
            self.popt.step()
        out = {"loss": float(loss.data)}
        correct = np.stack([a.data.argmax(-1) == b.targets[:, k] for k, (a, _) in enumerate(res)])
        out["accuracy"] = float(correct.mean())
        hops = [tr.hops for _, tr in res if tr is not None]
        out["hops"] = float(np.mean(hops)) if hops else float(cfg.fixed_hops)
        if cfg.halting == "reinforce" and cfg.model == "memo":
            out.update(self.policy_step([tr.halting for _, tr in res], correct))
        return out

    def policy_step(self, records, correct) -> dict:
        cfg = self.cfg
        with ad.Tape() as tape:
            total = None
            parts = np.zeros(3)
            for rec, ok in zip(records, correct):
                hl = reinforce_loss(rec, ok.astype(np.float64), self.policy, cfg.alpha, cfg.beta,
                                    cfg.gamma, cfg.horizon, cfg.hop_sign)
                total = hl.total if total is None else ad.add(total, hl.total)
                parts += (hl.policy, hl.value, hl.hop)
            self.popt.zero_grad()
            tape.backward(total)
        self.popt.step()
        n = len(records)
        return {"L_pi": parts[0] / n, "L_V": parts[1] / n, "L_Hop": parts[2] / n}

    # ---------------------------------------------------------- evaluation

    def predict(self, memory, query, feed):
        with ad.no_grad():
            res = forward(self.cfg, self.params, self.strategy, memory, query, feed, False,
                          None, self.task.encode_next)
        self._last_hops = [tr.hops for _, tr in res if tr is not None]
        return [a.data for a, _ in res]

    def validation_loss(self, n_batches: int = 4) -> float:
        rng = np.random.default_rng([self.cfg.seed, 3])
        losses = []
        for _ in range(n_batches):
            b = self.task.sample(rng, self.cfg.batch_size, "valid")
            feed = b.targets if b.targets.shape[1] > 1 else None
            probs = self.predict(b.memory, b.query, feed)
            for k, p in enumerate(probs):
                rows = np.arange(len(p))
                losses.append(-np.log(np.maximum(p[rows, b.targets[:, k]], 1e-12)).mean())
        return float(np.mean(losses))

    def evaluate(self, n_items: int | None = None, seed_offset: int = 4) -> dict:
        rng = np.random.default_rng([self.cfg.seed, seed_offset])
        hops = []

        def predict(memory, query, feed):
            out = self.predict(memory, query, feed)
            hops.extend(np.concatenate(self._last_hops).tolist() if self._last_hops else [])
            return out

        report = self.task.evaluate(predict, rng, n_items or self.cfg.eval_items)
        report["mean_hops"] = float(np.mean(hops)) if hops else float(self.cfg.fixed_hops)
        return report

    # --------------------------------------------------------------- loop

    def log_metrics(self, record: dict):
        with open(self.metrics_path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def run(self, epochs: int | None = None) -> dict:
        cfg = self.cfg
        stop = cfg.epochs if epochs is None else min(cfg.epochs, self.epoch + epochs)
        last_eval = {}
        while self.epoch < stop:
            t0 = time.time()
            rows = [self.train_step() for _ in range(cfg.updates_per_epoch)]
            self.epoch += 1
            rec = {"kind": "train", "epoch": self.epoch, "step": self.opt.step_count,
                   "lr": self.opt.lr, "elapsed": self.elapsed + time.time() - t0}
            for key in rows[0]:
                rec[key] = float(np.mean([r[key] for r in rows]))
            self.log_metrics(rec)
            log.info("epoch %d loss %.4f acc %.3f hops %.2f (%.1fs)", self.epoch, rec["loss"],
                     rec["accuracy"], rec["hops"], time.time() - t0)
            if self.epoch % cfg.eval_every == 0 or self.epoch == stop:
                val = self.validation_loss()
                last_eval = {"kind": "eval", "epoch": self.epoch, "step": self.opt.step_count,
                             "valid_loss": val, **self.evaluate()}
                if val < self.best_val:
                    self.best_val = val
                    self.save(self.out / "best.ckpt")
            self.elapsed += time.time() - t0
            if last_eval.get("epoch") == self.epoch:
                last_eval["elapsed"] = self.elapsed
                self.log_metrics(last_eval)
            self.save(self.out / "last.ckpt")
        return last_eval

    # --------------------------------------------------------- checkpoints

    def save(self, path):
        blocks = {f"model/{k}": v.data for k, v in self.params.tensors.items()}
        header = {"format": FORMAT_VERSION, "config": self.cfg.to_dict(),
                  "model_config": self.params.config.to_dict(), "epoch": self.epoch,
                  "elapsed": self.elapsed,
                  "best_val": self.best_val,
                  "rng": {"data": self.data_rng.bit_generator.state,
                          "rollout": self.roll_rng.bit_generator.state}}
        header["adam"] = _opt_header(self.opt.state_dict(), blocks, "adam")
        if self.policy is not None:
            blocks.update({f"policy/{k}": v.data for k, v in self.policy.tensors.items()})
            header["policy"] = self.policy.meta()
            header["rmsprop"] = _opt_header(self.popt.state_dict(), blocks, "rmsprop")
        save_checkpoint(path, header, blocks)

    @classmethod
    def from_checkpoint(cls, path, out_dir=None, task=None) -> "Trainer":
        header, blocks = load_checkpoint(path)
        if header.get("format") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint format {header.get('format')}")
        cfg = RunConfig.from_dict(header["config"])
        tr = cls(cfg, out_dir or Path(path).parent, task=task)
        tr.load_state(header, blocks)
        return tr

    def load_state(self, header, blocks):
        for k, v in self.params.tensors.items():
            v.data[...] = _block(blocks, f"model/{k}", v.data.shape)
        if self.policy is not None:
            for k, v in self.policy.tensors.items():
                v.data[...] = _block(blocks, f"policy/{k}", v.data.shape)
            self.popt.load_state_dict(_opt_state(header["rmsprop"], blocks))
        self.opt.load_state_dict(_opt_state(header["adam"], blocks))
        self.data_rng.bit_generator.state = header["rng"]["data"]
        self.roll_rng.bit_generator.state = header["rng"]["rollout"]
        self.epoch = int(header["epoch"])
        self.elapsed = float(header.get("elapsed", 0.0))
        self.best_val = float(header["best_val"])


def _opt_header(state: dict, blocks: dict, prefix: str) -> dict:
    """Move an optimizer's moment arrays into ``blocks``; keep scalars in the header."""
    head = {}
    for k, v in state.items():
        if isinstance(v, list):
            for i, a in enumerate(v):
                blocks[f"{prefix}/{k}/{i}"] = a
            head[k] = {"arrays": len(v)}
        else:
            head[k] = v
    return head


def _opt_state(head: dict, blocks: dict) -> dict:
    prefix = head["kind"]
    return {k: [blocks[f"{prefix}/{k}/{i}"] for i in range(v["arrays"])]
            if isinstance(v, dict) else v for k, v in head.items()}


def _block(blocks, name, shape):
    if name not in blocks:
        raise CheckpointError(f"checkpoint lacks parameter block {name}")
    a = blocks[name]
    if a.shape != tuple(shape):
        raise CheckpointError(f"block {name} has shape {a.shape}, model expects {tuple(shape)}")
    return a
