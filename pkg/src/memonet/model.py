"""MEMO: multi-head recurrent attention over memories whose items stay separate.

Shapes use a leading batch axis ``B`` throughout:

* memory tokens ``(B, I, S)`` ints (0 = padding) or dense items ``(B, I, S, d_emb)``
* keys/values ``(B, H, I, d)``
* query state ``(B, H, d)``
* attention weights ``(B, H, I)``; answers ``(B, O)``
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from memonet import autodiff as ad
from memonet.autodiff import Value
from memonet.errors import ConfigError, DimensionError, VocabularyError


@dataclass
class MemoConfig:
    I: int = 32
    S: int = 3
    O: int = 200
    d_c: int = 32
    d: int = 64
    d_a: int = 64
    H: int = 1
    dropout_a: float = 0.1
    dropout_o: float = 0.0
    d_emb: int | None = 64  # None selects the token (one-hot) path
    S_q: int = 3
    n_answers: int = 1
    time_encoding: bool = False
    # ablation switches
    separated: bool = True
    positional_encoding: bool = False
    recurrent_attention: bool = True
    layernorm: bool = True
    # "identity" starts W_h as the plain scaled dot product; "uniform" uses
    # the fan-in scheme of every other matrix
    logit_init: str = "identity"

    def __post_init__(self):
        for name in ("I", "S", "O", "d_c", "d", "d_a", "H", "S_q", "n_answers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_emb is not None and self.d_emb < 1:
            raise ConfigError(f"d_emb must be >= 1, got {self.d_emb}")
        for name in ("dropout_a", "dropout_o"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.logit_init not in ("identity", "uniform"):
            raise ConfigError(f"logit_init must be 'identity' or 'uniform', got {self.logit_init!r}")
        if self.layernorm and self.H * self.d < 2:
            raise ConfigError("layer norm needs H*d >= 2")

    @property
    def input_width(self) -> int:
        return self.O if self.d_emb is None else self.d_emb

    @property
    def slot_rows(self) -> int:
        """Rows of the common embedding that feed one key/value."""
        rows = self.S if self.separated else 1
        return rows + (1 if self.time_encoding else 0)

    def to_dict(self) -> dict:
        return asdict(self)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sinusoid(positions, width: int) -> np.ndarray:
    """Sinusoidal position code, one row per position."""
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(width)
    rates = 1.0 / np.power(10000.0, (2 * (i // 2)) / width)
    ang = pos * rates
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))


class MemoParams:
    """Every trainable matrix of the model, keyed by name.

    Shared across answers: ``W_c``, ``W_k``, ``W_v``.  Per answer ``k``:
    ``a{k}/W_q``, ``a{k}/W_h``, ``a{k}/W_qrec``, ``a{k}/ln_gain``,
    ``a{k}/ln_bias``, ``a{k}/W_qa``, ``a{k}/W_a``.
    """

    def __init__(self, config: MemoConfig, tensors: dict[str, Value]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: MemoConfig, rng: np.random.Generator) -> "MemoParams":
        c = config
        kv_in = c.slot_rows * c.d_c
        t = {}

        def mat(name, shape, fan_in):
            t[name] = Value(uniform_init(rng, shape, fan_in), requires_grad=True, name=name)

        mat("W_c", (c.input_width, c.d_c), c.input_width)
        mat("W_k", (c.H, c.d, kv_in), kv_in)
        mat("W_v", (c.H, c.d, kv_in), kv_in)
        hd = c.H * c.d
        for k in range(c.n_answers):
            p = f"a{k}/"
            mat(p + "W_q", (c.H, c.d, c.S_q * c.d_c), c.S_q * c.d_c)
            if c.logit_init == "identity":
                t[p + "W_h"] = Value(np.eye(c.I), requires_grad=True, name=p + "W_h")
            else:
                mat(p + "W_h", (c.I, c.I), c.I)
            mat(p + "W_qrec", (hd, hd), hd)
            t[p + "ln_gain"] = Value(np.ones(hd), requires_grad=True, name=p + "ln_gain")
            t[p + "ln_bias"] = Value(np.zeros(hd), requires_grad=True, name=p + "ln_bias")
            mat(p + "W_qa", (c.d_a, hd), hd)
            mat(p + "W_a", (c.O, c.d_a), c.d_a)
        return cls(config, t)

    def __getitem__(self, name: str) -> Value:
        return self.tensors[name]

    def answer(self, k: int, name: str) -> Value:
        return self.tensors[f"a{k}/{name}"]

    def values(self) -> list[Value]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for v in self.tensors.values():
            v.zero_grad()

    def copy(self) -> "MemoParams":
        return MemoParams(self.config, {
            k: Value(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()})


@dataclass
class MemoryStore:
    tokens: np.ndarray | None
    c: Value  # (B, I, rows, d_c)
    K: Value  # (B, H, I, d)
    V: Value

    @property
    def batch(self) -> int:
        return self.K.shape[0]


@dataclass
class QueryState:
    Q: Value  # (B, H, d)
    t: int = 0


@dataclass
class HopOutput:
    weights: np.ndarray  # (B, H, I) softmax before dropout
    answer: Value  # (B, O)
    Q_next: Value  # (B, H, d)


@dataclass
class HopTrace:
    weights: list = field(default_factory=list)  # per hop (B, H, I)
    hops: np.ndarray | None = None  # (B,)
    halting: object = None  # strategy-specific record


def _embed_items(items, params: MemoParams) -> Value:
    """Common embedding of token ids ``(..., S)`` or dense items ``(..., S, d_emb)``."""
    c = params.config
    W_c = params["W_c"]
    if c.d_emb is None:
        ids = np.asarray(items)
        if ids.dtype.kind not in "iu":
            raise VocabularyError("token path expects integer ids")
        if (ids >= c.O).any() or (ids < 0).any():
            raise VocabularyError(f"token id outside vocabulary [0, {c.O})")
        emb = ad.take_rows(W_c, ids)
        return ad.mul(emb, (ids > 0)[..., None].astype(np.float64))
    x = np.asarray(items, dtype=np.float64) if not isinstance(items, Value) else items
    width = x.shape[-1]
    if width != c.d_emb:
        raise DimensionError(f"dense items have width {width}, expected d_emb={c.d_emb}")
    return ad.matmul(x, W_c)


def embed_memory(items, params: MemoParams) -> MemoryStore:
    """Common embedding plus per-head key/value projections of every slot."""
    cfg = params.config
    tokens = None
    if cfg.d_emb is None:
        tokens = np.asarray(items)
        if tokens.ndim != 3 or tokens.shape[1:] != (cfg.I, cfg.S):
            raise DimensionError(f"memory tokens {tokens.shape}, expected (B, {cfg.I}, {cfg.S})")
    else:
        shape = np.shape(items)
        if len(shape) != 4 or shape[1:3] != (cfg.I, cfg.S):
            raise DimensionError(f"memory items {shape}, expected (B, {cfg.I}, {cfg.S}, d_emb)")
    c = _embed_items(items, params)  # (B, I, S, d_c)
    B = c.shape[0]
    if not cfg.separated:
        if cfg.positional_encoding:
            c = ad.add(c, sinusoid(np.arange(cfg.S), cfg.d_c))
        c = ad.reduce_sum(c, axis=2, keepdims=True)
    if cfg.time_encoding:
        te = np.broadcast_to(sinusoid(np.arange(cfg.I), cfg.d_c)[None, :, None, :],
                             (B, cfg.I, 1, cfg.d_c))
        c = ad.concat([c, Value(te)], axis=2)
    vec = ad.reshape(c, (B, 1, cfg.I, cfg.slot_rows * cfg.d_c))
    K = ad.matmul(vec, ad.transpose(params["W_k"]))
    V = ad.matmul(vec, ad.transpose(params["W_v"]))
    return MemoryStore(tokens, c, K, V)


def embed_query(query, params: MemoParams, answer: int = 0) -> QueryState:
    """Project the (commonly embedded) query items into one query per head."""
    cfg = params.config
    q_shape = np.shape(query)
    expect = 2 if cfg.d_emb is None else 3
    if len(q_shape) != expect or q_shape[1] != cfg.S_q:
        raise DimensionError(f"query shape {q_shape} does not match S_q={cfg.S_q}")
    cq = _embed_items(query, params)  # (B, S_q, d_c)
    B = cq.shape[0]
    vec = ad.reshape(cq, (B, 1, 1, cfg.S_q * cfg.d_c))
    W_q = params.answer(answer, "W_q")  # (H, d, S_q d_c)
    Q0 = ad.matmul(vec, ad.transpose(W_q))  # (B, H, 1, d)
    return QueryState(ad.reshape(Q0, (B, cfg.H, cfg.d)), 0)


def attention_hop(store: MemoryStore, qs: QueryState, params: MemoParams,
                  training: bool = False, rng: np.random.Generator | None = None,
                  answer: int = 0) -> HopOutput:
    cfg = params.config
    B, H, d, I = store.batch, cfg.H, cfg.d, cfg.I
    if qs.Q.shape != (B, H, d) or store.K.shape != (B, H, I, d):
        raise DimensionError(f"query {qs.Q.shape} and keys {store.K.shape} disagree with config")
    q_col = ad.reshape(qs.Q, (B, H, d, 1))
    scores = ad.reshape(ad.matmul(store.K, q_col), (B, H, I))
    logits = ad.scale(ad.matmul(scores, ad.transpose(params.answer(answer, "W_h"))),
                      1.0 / np.sqrt(d))
    w = ad.softmax(logits, axis=-1)
    w_used = ad.dropout(w, cfg.dropout_a, training, rng)
    read = ad.reshape(ad.matmul(ad.reshape(w_used, (B, H, 1, I)), store.V), (B, H * d))
    prev = ad.reshape(qs.Q, (B, H * d))
    if cfg.recurrent_attention:
        mixed = ad.matmul(read, ad.transpose(params.answer(answer, "W_qrec")))
    else:
        mixed = read
    nxt = ad.add(mixed, prev)
    if cfg.layernorm:
        nxt = ad.layer_norm(nxt, params.answer(answer, "ln_gain"), params.answer(answer, "ln_bias"))
    hidden = ad.relu(ad.matmul(nxt, ad.transpose(params.answer(answer, "W_qa"))))
    hidden = ad.dropout(hidden, cfg.dropout_o, training, rng)
    logits_a = ad.matmul(hidden, ad.transpose(params.answer(answer, "W_a")))
    ans = ad.softmax(logits_a, axis=-1)
    return HopOutput(w.data.copy(), ans, ad.reshape(nxt, (B, H, d)))


def run_episode(store: MemoryStore, query, params: MemoParams, halting, n_hops: int,
                training: bool = False, rng: np.random.Generator | None = None,
                answer: int = 0) -> tuple[Value, HopTrace]:
    """Hop until every batch entry halts or ``n_hops`` is reached.

    ``halting`` is a controller factory from :mod:`memonet.halting`; it sees
    the pre-dropout attention after each hop and says who continues.
    """
    if n_hops < 1:
        raise ConfigError(f"max hops must be >= 1, got {n_hops}")
    qs = query if isinstance(query, QueryState) else embed_query(query, params, answer)
    B = store.batch
    ctl = halting.begin(B, n_hops, training, rng)
    trace = HopTrace()
    answers = []
    active = np.ones(B, dtype=bool)
    hops = np.zeros(B, dtype=np.int64)
    for t in range(n_hops):
        out = attention_hop(store, qs, params, training, rng, answer)
        trace.weights.append(out.weights)
        answers.append(out.answer)
        hops[active] = t + 1
        cont = ctl.step(out.weights, t, active)
        if t == n_hops - 1:
            cont = np.zeros(B, dtype=bool)
        active = active & cont
        qs = QueryState(out.Q_next, t + 1)
        if not active.any():
            break
    trace.hops = hops
    trace.halting = ctl.record()
    return ctl.combine(answers, hops), trace


def run_multi_answer_episode(store: MemoryStore, query, params: MemoParams, halting,
                             n_hops: int, n_answers: int | None = None,
                             training: bool = False, rng: np.random.Generator | None = None,
                             feed=None, encode_next=None):
    """Answer ``n_answers`` targets in sequence over one fixed store.

    Answer ``k+1`` is queried with ``encode_next(query, chosen)`` where
    ``chosen`` is the argmax of answer ``k`` or, when ``feed`` is given
    (shape ``(B, A)``), its ground-truth column ``k``.
    """
    A = params.config.n_answers if n_answers is None else n_answers
    if A < 1:
        raise ConfigError("need at least one answer")
    if A > params.config.n_answers:
        raise ConfigError(f"model has {params.config.n_answers} answer heads, asked for {A}")
    results = []
    q = query
    for k in range(A):
        ans, trace = run_episode(store, q, params, halting, n_hops, training, rng, answer=k)
        results.append((ans, trace))
        if k + 1 < A:
            chosen = np.asarray(feed)[:, k] if feed is not None else ans.data.argmax(axis=-1)
            q = encode_next(q, chosen) if encode_next is not None else _next_query(q, chosen)
    return results


def _next_query(query, chosen):
    """Default re-query for token tasks: replace the source item, keep the goal."""
    q = np.array(query, copy=True)
    q[:, 0] = chosen
    return q


def forward_macs(params: MemoParams, items, query, n_hops: int = 1) -> int:
    """Multiply-accumulates of embedding the store plus ``n_hops`` hops (eval mode)."""
    with ad.no_grad(), ad.count_macs() as counter:
        store = embed_memory(items, params)
        qs = embed_query(query, params)
        for _ in range(n_hops):
            out = attention_hop(store, qs, params)
            qs = QueryState(out.Q_next, qs.t + 1)
    return counter["macs"]
