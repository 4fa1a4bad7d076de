"""bAbI (en-10k, joint) ingestion: parsing, vocabulary and fixed-shape batches.

Text is lowercased, ``.`` and ``?`` are dropped and tokens are split on
whitespace.  A question's story is every statement of its story seen so far
(earlier questions excluded), keeping the most recent ``max_stories``.
Comma answers such as ``n,s`` stay single labels.  Token id 0 is padding.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from memonet.errors import IngestionError

N_TASKS = 20
MAX_WORDS = 11
MAX_STORIES = 320
SOLVED = 0.95
PAD_TOKEN = "<pad>"

_FILE_RE = re.compile(r"qa(\d+)_.*_(train|test)\.txt$")


def tokenize(text: str) -> list[str]:
    return text.lower().replace(".", " ").replace("?", " ").split()


@dataclass
class BabiExample:
    task: int
    story: list  # list of token lists
    query: list
    answer: str


@dataclass
class BabiCorpus:
    vocab: dict  # token -> id, "<pad>" -> 0
    train: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)
    truncated_sentences: int = 0

    @property
    def vocab_size(self) -> int:
        """Distinct words and answer labels, not counting padding."""
        return len(self.vocab) - 1

    def ids(self, tokens) -> list[int]:
        return [self.vocab[t] for t in tokens]

    def words(self, ids) -> list[str]:
        inv = {i: w for w, i in self.vocab.items()}
        return [inv[int(i)] for i in ids if int(i) != 0]


def parse_file(path: Path, task: int) -> list[BabiExample]:
    out = []
    story: list = []
    for raw in path.read_text().splitlines():
        raw = raw.strip()
        if not raw:
            continue
        num, _, text = raw.partition(" ")
        if int(num) == 1:
            story = []
        if "\t" in text:
            q, answer, *_ = text.split("\t")
            out.append(BabiExample(task, list(story), tokenize(q), answer.strip().lower()))
        else:
            story.append(tokenize(text))
    return out


def find_task_files(root: Path) -> dict:
    files = {}
    for p in sorted(Path(root).rglob("qa*_*.txt")):
        m = _FILE_RE.search(p.name)
        if m:
            files[(int(m.group(1)), m.group(2))] = p
    return files


def parse_babi(path, valid_fraction: float = 0.1, seed: int = 0) -> BabiCorpus:
    """Parse all 20 tasks under ``path``; hold out ``valid_fraction`` of each
    task's training examples."""
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"bAbI directory not found: {root}")
    files = find_task_files(root)
    missing = [f"qa{t}_{s}" for t in range(1, N_TASKS + 1) for s in ("train", "test")
               if (t, s) not in files]
    if missing:
        raise IngestionError(f"missing bAbI task files under {root}: {', '.join(missing)}")
    rng = np.random.default_rng(seed)
    corpus = BabiCorpus(vocab={PAD_TOKEN: 0})
    words = set()
    for t in range(1, N_TASKS + 1):
        train = parse_file(files[(t, "train")], t)
        test = parse_file(files[(t, "test")], t)
        n_valid = int(round(valid_fraction * len(train)))
        order = rng.permutation(len(train))
        held = set(order[:n_valid].tolist())
        corpus.valid += [e for i, e in enumerate(train) if i in held]
        corpus.train += [e for i, e in enumerate(train) if i not in held]
        corpus.test += test
        for e in train + test:
            words.update(e.query)
            words.add(e.answer)
            for s in e.story:
                words.update(s)
    for i, w in enumerate(sorted(words), start=1):
        corpus.vocab[w] = i
    return corpus


def encode_sentence(corpus: BabiCorpus, tokens, width: int = MAX_WORDS) -> np.ndarray:
    row = np.zeros(width, dtype=np.int64)
    ids = corpus.ids(tokens[:width])
    row[:len(ids)] = ids
    return row


def encode_examples(corpus: BabiCorpus, examples, max_stories: int = MAX_STORIES,
                    width: int = MAX_WORDS):
    """``(stories (B, max_stories, width), queries (B, width), answers (B,), tasks (B,))``."""
    B = len(examples)
    stories = np.zeros((B, max_stories, width), dtype=np.int64)
    queries = np.zeros((B, width), dtype=np.int64)
    answers = np.zeros(B, dtype=np.int64)
    tasks = np.zeros(B, dtype=np.int64)
    for b, e in enumerate(examples):
        kept = e.story[-max_stories:]
        for i, s in enumerate(kept):
            if len(s) > width:
                corpus.truncated_sentences += 1
            stories[b, i] = encode_sentence(corpus, s, width)
        queries[b] = encode_sentence(corpus, e.query, width)
        answers[b] = corpus.vocab[e.answer]
        tasks[b] = e.task
    return stories, queries, answers, tasks


def batch_babi(corpus: BabiCorpus, rng: np.random.Generator, batch: int = 128,
               split: str = "train"):
    """Uniform joint sample over all tasks of ``split``."""
    pool = getattr(corpus, split)
    idx = rng.integers(len(pool), size=batch)
    return encode_examples(corpus, [pool[i] for i in idx])


def per_task_accuracy(pred, answers, tasks) -> dict:
    pred, answers, tasks = (np.asarray(a) for a in (pred, answers, tasks))
    report = {}
    for t in range(1, N_TASKS + 1):
        m = tasks == t
        if m.any():
            report[t] = float((pred[m] == answers[m]).mean())
    return report


def solved_count(report: dict, threshold: float = SOLVED) -> int:
    return sum(acc > threshold for acc in report.values())


def save_vocab(corpus: BabiCorpus, path) -> None:
    Path(path).write_text(json.dumps(corpus.vocab, indent=0, sort_keys=True))


def load_vocab(path) -> dict:
    return json.loads(Path(path).read_text())
