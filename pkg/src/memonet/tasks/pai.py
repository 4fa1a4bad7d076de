"""Paired associative inference: stores of pairwise associations and
direct/indirect cue-match-lure queries.

A store holds ``n_sequences`` random item chains ``A-B-C...`` of length
``seq_len`` and one memory row per adjacent pair, in shuffled slot order.
Items are classes (distinct within a store) rendered as exemplar vectors:
a fixed unit-norm prototype per class plus split-specific exemplar noise, so
train/valid/test never share an exemplar vector.  Vectors handed to a model
are multiplied by ``embed_scale`` (default ``d_emb``; at small norms the initial
attention is too flat for a model to pick out the cue's slot).
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from memonet.errors import ConfigError

SPLITS = {"train": 0, "valid": 1, "test": 2}
PAD = -1


@dataclass(frozen=True)
class PaiConfig:
    seq_len: int = 3
    n_sequences: int = 16
    n_classes: int = 200
    d_emb: int = 64
    slot_width: int = 3  # pairs padded with an empty item
    n_exemplars: int = 8
    exemplar_noise: float = 0.3
    embed_seed: int = 1234
    embed_scale: float | None = None  # None: d_emb

    def __post_init__(self):
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2")
        if self.n_classes < self.n_sequences * self.seq_len:
            raise ConfigError(
                f"n_classes={self.n_classes} < n_sequences*seq_len="
                f"{self.n_sequences * self.seq_len}: items cannot be distinct")
        if self.slot_width < 2:
            raise ConfigError("slot_width must hold a pair")

    @property
    def scale(self) -> float:
        return float(self.d_emb) if self.embed_scale is None else self.embed_scale

    @property
    def rows(self) -> int:
        return self.n_sequences * (self.seq_len - 1)

    def query_types(self) -> list[tuple[int, int]]:
        L = self.seq_len
        direct = [(i, i + 1) for i in range(L - 1)]
        indirect = [(i, j) for gap in range(2, L) for i in range(L - gap) for j in [i + gap]]
        return direct + indirect


def type_label(i: int, j: int) -> str:
    return f"{string.ascii_uppercase[i]}-{string.ascii_uppercase[j]}"


@dataclass
class PaiStore:
    sequences: np.ndarray  # (N, L) class ids
    exemplars: np.ndarray  # (N, L) exemplar ids
    slot_of: np.ndarray  # (N, L-1) slot holding pair (j, j+1) of sequence n
    row_classes: np.ndarray  # (I, S), PAD where empty
    row_exemplars: np.ndarray  # (I, S)


@dataclass(frozen=True)
class PaiQuery:
    seq: int
    cue_pos: int
    match_pos: int
    lure_seq: int
    match_slot: int = 1  # index in the (cue, x, y) concatenation: 1 or 2

    @property
    def kind(self) -> str:
        return "direct" if self.match_pos - self.cue_pos == 1 else "indirect"

    @property
    def distance(self) -> int:
        """Intermediate items between cue and match (0 for direct)."""
        return self.match_pos - self.cue_pos - 1

    @property
    def label(self) -> str:
        return type_label(self.cue_pos, self.match_pos)

    @property
    def lure_slot(self) -> int:
        return 3 - self.match_slot


def generate_store(cfg: PaiConfig, rng: np.random.Generator) -> PaiStore:
    N, L = cfg.n_sequences, cfg.seq_len
    classes = rng.choice(cfg.n_classes, size=N * L, replace=False).reshape(N, L)
    exemplars = rng.integers(0, cfg.n_exemplars, size=(N, L))
    order = rng.permutation(cfg.rows)
    slot_of = order.reshape(N, L - 1)
    row_c = np.full((cfg.rows, cfg.slot_width), PAD, dtype=np.int64)
    row_e = np.zeros((cfg.rows, cfg.slot_width), dtype=np.int64)
    for j in range(L - 1):
        row_c[slot_of[:, j], 0] = classes[:, j]
        row_c[slot_of[:, j], 1] = classes[:, j + 1]
        row_e[slot_of[:, j], 0] = exemplars[:, j]
        row_e[slot_of[:, j], 1] = exemplars[:, j + 1]
    return PaiStore(classes, exemplars, slot_of, row_c, row_e)


def enumerate_queries(store: PaiStore) -> list[PaiQuery]:
    """Every (sequence, cue position < match position, lure sequence) triple."""
    N, L = store.sequences.shape
    out = []
    for n in range(N):
        for i in range(L - 1):
            for j in range(i + 1, L):
                out.extend(PaiQuery(n, i, j, m) for m in range(N) if m != n)
    return out


def sample_query(cfg: PaiConfig, kind: str, rng: np.random.Generator) -> PaiQuery:
    """Uniform draw from the store's enumeration restricted to ``kind``.

    Every (sequence, type, lure sequence) combination is one enumerated
    query, so drawing the three independently is the same distribution.
    """
    N, L = cfg.n_sequences, cfg.seq_len
    if kind == "direct":
        pairs = [(i, i + 1) for i in range(L - 1)]
    elif kind == "indirect":
        pairs = [(i, j) for i in range(L) for j in range(i + 2, L)]
        if not pairs:
            raise ConfigError("seq_len 2 has no indirect queries")
    else:
        raise ConfigError(f"unknown query kind {kind!r}")
    n = int(rng.integers(N))
    i, j = pairs[int(rng.integers(len(pairs)))]
    m = int(rng.integers(N - 1))
    m += m >= n
    return PaiQuery(n, i, j, m, match_slot=1 + int(rng.integers(2)))


@dataclass
class PaiBatch:
    mem_classes: np.ndarray  # (B, I, S)
    mem_exemplars: np.ndarray
    query_classes: np.ndarray  # (B, 3) cue, slot1, slot2
    query_exemplars: np.ndarray
    target: np.ndarray  # (B,) match class
    lure: np.ndarray  # (B,) lure class
    kinds: np.ndarray  # (B,) 0 direct / 1 indirect
    labels: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    stores: list = field(default_factory=list)

    def __len__(self):
        return len(self.target)


def build_item(store: PaiStore, q: PaiQuery):
    cue = (store.sequences[q.seq, q.cue_pos], store.exemplars[q.seq, q.cue_pos])
    match = (store.sequences[q.seq, q.match_pos], store.exemplars[q.seq, q.match_pos])
    lure = (store.sequences[q.lure_seq, q.match_pos], store.exemplars[q.lure_seq, q.match_pos])
    slots = [cue, None, None]
    slots[q.match_slot] = match
    slots[q.lure_slot] = lure
    return slots, match[0], lure[0]


def _assemble(stores, queries) -> PaiBatch:
    qc, qe, tgt, lure = [], [], [], []
    for st, q in zip(stores, queries):
        slots, m, lu = build_item(st, q)
        qc.append([s[0] for s in slots])
        qe.append([s[1] for s in slots])
        tgt.append(m)
        lure.append(lu)
    return PaiBatch(
        mem_classes=np.stack([s.row_classes for s in stores]),
        mem_exemplars=np.stack([s.row_exemplars for s in stores]),
        query_classes=np.asarray(qc, dtype=np.int64),
        query_exemplars=np.asarray(qe, dtype=np.int64),
        target=np.asarray(tgt, dtype=np.int64),
        lure=np.asarray(lure, dtype=np.int64),
        kinds=np.asarray([0 if q.kind == "direct" else 1 for q in queries], dtype=np.int64),
        labels=[q.label for q in queries],
        queries=list(queries),
        stores=list(stores),
    )


def sample_batch(cfg: PaiConfig, rng: np.random.Generator, batch_size: int) -> PaiBatch:
    """Fresh store per entry; exactly half direct and half indirect queries."""
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"batch size must be even and >= 2, got {batch_size}")
    kinds = rng.permutation(np.repeat(["direct", "indirect"], batch_size // 2))
    stores, queries = [], []
    for kind in kinds:
        st = generate_store(cfg, rng)
        stores.append(st)
        queries.append(sample_query(cfg, str(kind), rng))
    return _assemble(stores, queries)


def sample_typed(cfg: PaiConfig, rng: np.random.Generator, pairs) -> PaiBatch:
    """One entry per requested (cue position, match position) pair."""
    stores, queries = [], []
    N = cfg.n_sequences
    for i, j in pairs:
        st = generate_store(cfg, rng)
        n = int(rng.integers(N))
        m = int(rng.integers(N - 1))
        m += m >= n
        stores.append(st)
        queries.append(PaiQuery(n, i, j, m, match_slot=1 + int(rng.integers(2))))
    return _assemble(stores, queries)


# -------------------------------------------------------------- embeddings


@lru_cache(maxsize=16)
def _tables(n_classes, d_emb, n_exemplars, noise, seed):
    protos = np.empty((n_classes, d_emb))
    for c in range(n_classes):
        v = np.random.default_rng([seed, c]).normal(size=d_emb)
        protos[c] = v / np.linalg.norm(v)
    table = np.empty((len(SPLITS), n_classes, n_exemplars, d_emb))
    for s in range(len(SPLITS)):
        for c in range(n_classes):
            g = np.random.default_rng([seed, c, s + 1]).normal(size=(n_exemplars, d_emb))
            v = protos[c] + noise * g / np.sqrt(d_emb)
            table[s, c] = v / np.linalg.norm(v, axis=1, keepdims=True)
    table.setflags(write=False)
    protos.setflags(write=False)
    return protos, table


def prototypes(cfg: PaiConfig) -> np.ndarray:
    return _tables(cfg.n_classes, cfg.d_emb, cfg.n_exemplars, cfg.exemplar_noise,
                   cfg.embed_seed)[0]


def embed_items(cfg: PaiConfig, classes: np.ndarray, exemplars: np.ndarray,
                split: str = "train") -> np.ndarray:
    """Scaled exemplar vectors for class/exemplar id grids; PAD classes give zeros."""
    table = _tables(cfg.n_classes, cfg.d_emb, cfg.n_exemplars, cfg.exemplar_noise,
                    cfg.embed_seed)[1][SPLITS[split]]
    classes = np.asarray(classes)
    safe = np.where(classes == PAD, 0, classes)
    out = table[safe, np.asarray(exemplars)]
    return np.where((classes == PAD)[..., None], 0.0, cfg.scale * out)


def model_inputs(cfg: PaiConfig, batch: PaiBatch, split: str = "train"):
    """``(memory (B,I,S,d_emb), query (B,3,d_emb), target (B,))``."""
    mem = embed_items(cfg, batch.mem_classes, batch.mem_exemplars, split)
    qry = embed_items(cfg, batch.query_classes, batch.query_exemplars, split)
    return mem, qry, batch.target


# ---------------------------------------------------------------- oracles


def reachable(rows: np.ndarray, src: int) -> set:
    """Items reachable from ``src`` through rows sharing an item (BFS)."""
    adj: dict[int, set] = {}
    for row in rows:
        items = [int(x) for x in row if x != PAD]
        for a in items:
            adj.setdefault(a, set()).update(b for b in items if b != a)
    seen = {src}
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return seen


# ---------------------------------------------------------------- evaluation


def evaluate(predict, cfg: PaiConfig, rng: np.random.Generator, n_items: int = 600,
             split: str = "test") -> dict:
    """Per-trial-type accuracy of ``predict(memory, query) -> probs (B, O)``.

    Items are stratified evenly over trial types.  ``accuracy`` is argmax ==
    match class; ``match_vs_lure`` scores p[match] > p[lure].
    """
    types = cfg.query_types()
    per = max(1, n_items // len(types))
    report = {}
    for i, j in types:
        batch = sample_typed(cfg, rng, [(i, j)] * per)
        mem, qry, tgt = model_inputs(cfg, batch, split)
        probs = np.asarray(predict(mem, qry))
        rows = np.arange(len(tgt))
        report[type_label(i, j)] = {
            "kind": "direct" if j == i + 1 else "indirect",
            "n": int(len(tgt)),
            "accuracy": float((probs.argmax(-1) == tgt).mean()),
            "match_vs_lure": float((probs[rows, tgt] > probs[rows, batch.lure]).mean()),
        }
    return report


def format_report(report: dict, title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'Trial':<6} {'kind':<9} {'acc':>7} {'match>lure':>11}")
    for label, r in report.items():
        lines.append(f"{label:<6} {r['kind']:<9} {100 * r['accuracy']:7.2f} "
                     f"{100 * r['match_vs_lure']:11.2f}")
    return "\n".join(lines)
