"""End-to-end memory network baseline (tied weights across hops).

Each memory slot is collapsed to a single vector: keys are the
position-weighted sum of item embeddings, values the plain sum.  The
position weights are the fixed encoding

    l[j, k] = (1 - j/J) - (k/d) * (1 - 2j/J),   j = 1..J, k = 1..d

for item position ``j`` out of ``J`` and embedding coordinate ``k``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from memonet import autodiff as ad
from memonet.autodiff import Value
from memonet.errors import ConfigError, DimensionError, VocabularyError
from memonet.model import uniform_init


@dataclass
class EmnConfig:
    I: int = 32
    S: int = 3
    O: int = 200
    d: int = 64
    d_emb: int | None = 64
    S_q: int = 3
    n_hops: int = 4
    n_answers: int = 1

    def __post_init__(self):
        for name in ("I", "S", "O", "d", "S_q", "n_hops", "n_answers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def input_width(self) -> int:
        return self.O if self.d_emb is None else self.d_emb

    def to_dict(self) -> dict:
        return asdict(self)


def position_encoding(J: int, d: int) -> np.ndarray:
    """``(J, d)`` matrix of position weights (row j is l_j)."""
    j = np.arange(1, J + 1)[:, None]
    k = np.arange(1, d + 1)[None, :]
    return (1.0 - j / J) - (k / d) * (1.0 - 2.0 * j / J)


class EmnParams:
    def __init__(self, config: EmnConfig, tensors: dict[str, Value]):
        self.config = config
        self.tensors = tensors
        self.l_mem = position_encoding(config.S, config.d)
        self.l_query = position_encoding(config.S_q, config.d)

    @classmethod
    def init(cls, config: EmnConfig, rng: np.random.Generator) -> "EmnParams":
        c = config
        t = {}

        def mat(name, shape, fan_in):
            t[name] = Value(uniform_init(rng, shape, fan_in), requires_grad=True, name=name)

        mat("W_k", (c.d, c.input_width), c.input_width)
        mat("W_v", (c.d, c.input_width), c.input_width)
        q_in = c.input_width if c.d_emb is None else c.S_q * c.d_emb
        for k in range(c.n_answers):
            mat(f"a{k}/W_q", (c.d, q_in), q_in)
            mat(f"a{k}/W_qv", (c.d, c.d), c.d)
            mat(f"a{k}/W_a", (c.O, c.d), c.d)
        return cls(config, t)

    def __getitem__(self, name):
        return self.tensors[name]

    def values(self):
        return list(self.tensors.values())

    def zero_grad(self):
        for v in self.tensors.values():
            v.zero_grad()


def _project_items(items, W: Value, config: EmnConfig) -> Value:
    """``W x`` for every item: ``(B, n, J, d)``; padding ids give zeros."""
    if config.d_emb is None:
        ids = np.asarray(items)
        if (ids >= config.O).any() or (ids < 0).any():
            raise VocabularyError(f"token id outside vocabulary [0, {config.O})")
        emb = ad.take_rows(ad.transpose(W), ids)
        return ad.mul(emb, (ids > 0)[..., None].astype(np.float64))
    x = np.asarray(items, dtype=np.float64)
    if x.shape[-1] != config.d_emb:
        raise DimensionError(f"dense items have width {x.shape[-1]}, expected {config.d_emb}")
    return ad.matmul(x, ad.transpose(W))


def emn_embed(items, params: EmnParams):
    """Keys and values ``(B, I, d)`` with each slot summed over its items."""
    c = params.config
    shape = np.shape(items)
    if shape[1:3] != (c.I, c.S):
        raise DimensionError(f"memory shape {shape}, expected (B, {c.I}, {c.S}, ...)")
    k_items = _project_items(items, params["W_k"], c)
    v_items = _project_items(items, params["W_v"], c)
    K = ad.reduce_sum(ad.mul(k_items, params.l_mem), axis=2)
    V = ad.reduce_sum(v_items, axis=2)
    return K, V


def emn_query(query, params: EmnParams, answer: int = 0) -> Value:
    c = params.config
    W_q = params[f"a{answer}/W_q"]
    if c.d_emb is None:
        items = _project_items(np.asarray(query), W_q, c)  # (B, S_q, d)
        return ad.reduce_sum(ad.mul(items, params.l_query), axis=1)
    q = np.asarray(query, dtype=np.float64)
    return ad.matmul(q.reshape(q.shape[0], -1), ad.transpose(W_q))


def emn_hop(K: Value, V: Value, q: Value, params: EmnParams, answer: int = 0):
    """One tied-weight hop: returns ``(q_next, answer, weights)``."""
    B, I, d = K.shape
    if q.shape != (B, d):
        raise DimensionError(f"query {q.shape} does not match keys {K.shape}")
    w = ad.softmax(ad.reshape(ad.matmul(K, ad.reshape(q, (B, d, 1))), (B, I)))
    read = ad.reshape(ad.matmul(ad.reshape(w, (B, 1, I)), V), (B, d))
    q_next = ad.add(read, ad.matmul(q, ad.transpose(params[f"a{answer}/W_qv"])))
    a = ad.softmax(ad.matmul(q_next, ad.transpose(params[f"a{answer}/W_a"])))
    return q_next, a, w.data.copy()


def emn_episode(items, query, params: EmnParams, n_hops: int | None = None, answer: int = 0,
                memory=None):
    """Fixed number of hops; the last hop's answer is the prediction."""
    n = params.config.n_hops if n_hops is None else n_hops
    K, V = emn_embed(items, params) if memory is None else memory
    q = emn_query(query, params, answer)
    weights = []
    a = None
    for _ in range(n):
        q, a, w = emn_hop(K, V, q, params, answer)
        weights.append(w)
    return a, weights


def emn_multi_answer(items, query, params: EmnParams, feed=None, encode_next=None):
    """Sequential answers; the next query is built from ``feed`` (ground truth)
    when given, otherwise from the previous argmax."""
    memory = emn_embed(items, params)
    out = []
    q = query
    for k in range(params.config.n_answers):
        a, w = emn_episode(items, q, params, answer=k, memory=memory)
        out.append(a)
        if k + 1 < params.config.n_answers:
            chosen = np.asarray(feed)[:, k] if feed is not None else a.data.argmax(-1)
            if encode_next is not None:
                q = encode_next(q, chosen)
            else:
                q = np.array(q, copy=True)
                q[:, 0] = chosen
    return out
