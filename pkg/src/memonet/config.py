"""Run configuration, presets and ablation rows.

A config file is JSON holding any subset of :class:`RunConfig`
fields, optionally with ``"preset": name`` to start from a preset.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from memonet.errors import ConfigError

DATA_ROOT_ENV = "MEMONET_DATA_ROOT"

TASKS = ("pai", "graph", "babi")
MODELS = ("memo", "emn")
HALTING = ("reinforce", "act", "fixed-k", "never")

# Sweep ranges per task family: (N, gamma, alpha, beta, bias_init, H)
SWEEPS = {
    "pai": {"n_hops": [3, 5, 20], "gamma": [0.85, 0.9], "alpha": [1e-4, 1e-2, 0.1],
            "beta": [1e-3, 1e-2, 0.1], "bias_init": [2.0, 5.0], "heads": [1]},
    "graph": {"n_hops": [5, 20], "gamma": [0.9], "alpha": [1e-2, 0.1],
              "beta": [1e-2, 0.1], "bias_init": [2.0, 10.0], "heads": [4, 8]},
    "babi": {"n_hops": [5, 20], "gamma": [0.85, 0.9], "alpha": [1e-4, 1e-2, 0.1],
             "beta": [1e-3, 1e-2, 0.1], "bias_init": [2.0, 5.0], "heads": [4, 8]},
}
LR_MEMO = [7e-4, 5e-4, 1e-4]
LR_HALT = [1e-4, 5e-5]


@dataclass
class AblationFlags:
    positional_encoding_instead_of_separation: bool = False
    recurrent_attention: bool = True
    layernorm: bool = True

    def model_kwargs(self) -> dict:
        sep = not self.positional_encoding_instead_of_separation
        return {"separated": sep, "positional_encoding": not sep,
                "recurrent_attention": self.recurrent_attention, "layernorm": self.layernorm}


# (positional encoding, recurrent attention, layernorm) rows
PAI_ABLATIONS = {
    "pe": AblationFlags(True, False, False),
    "pe+recurrent": AblationFlags(True, True, True),
    "separated": AblationFlags(False, False, False),
    "separated+recurrent": AblationFlags(False, True, True),
}
BABI_ABLATIONS = {
    "pe": AblationFlags(True, False, False),
    "separated": AblationFlags(False, False, False),
    "pe+recurrent+ln": AblationFlags(True, True, True),
    "separated+recurrent": AblationFlags(False, True, False),
    "separated+recurrent+ln": AblationFlags(False, True, True),
}


@dataclass
class RunConfig:
    task: str = "pai"
    model: str = "memo"
    halting: str = "reinforce"
    fixed_hops: int = 3
    # task
    seq_len: int = 3
    n_classes: int = 200
    d_emb: int = 64
    embed_scale: float | None = None  # PAI item vector norm; None gives d_emb
    graph: str = "10-2-2"
    babi_path: str = ""
    # model
    d_c: int = 32
    d: int = 64
    d_a: int = 64
    heads: int = 1
    dropout_a: float = 0.1
    dropout_o: float = 0.0
    ablation: AblationFlags = field(default_factory=AblationFlags)
    logit_init: str = "identity"
    # halting
    n_hops: int = 5
    gamma: float = 0.9
    alpha: float = 1e-2
    beta: float = 1e-2
    bias_init: float = 5.0
    hop_sign: float = 1.0
    horizon: int = 0
    gru_hidden: int = 256
    mlp_hidden: int = 64
    act_ponder: float = 1e-3
    # optimisation
    lr_memo: float = 7e-4
    lr_halt: float = 1e-4
    lr_power: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    epochs: int = 200
    updates_per_epoch: int = 50
    batch_size: int = 32
    eval_every: int = 10
    eval_items: int = 600
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.ablation, dict):
            self.ablation = AblationFlags(**self.ablation)
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.halting not in HALTING:
            raise ConfigError(f"halting must be one of {HALTING}, got {self.halting!r}")
        if self.logit_init not in ("identity", "uniform"):
            raise ConfigError(f"logit_init must be 'identity' or 'uniform', got {self.logit_init!r}")
        if self.batch_size < 2 or (self.task == "pai" and self.batch_size % 2):
            raise ConfigError("PAI batches must be even")
        if self.n_hops < 1 or self.fixed_hops < 1:
            raise ConfigError("hop counts must be >= 1")
        if self.halting == "fixed-k" and self.fixed_hops > self.n_hops:
            raise ConfigError("fixed_hops exceeds n_hops")
        if self.epochs < 1 or self.updates_per_epoch < 1:
            raise ConfigError("schedule must have at least one update")
        if self.task == "babi" and self.model == "memo" and self.heads < 1:
            raise ConfigError("heads must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.updates_per_epoch

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = preset_config(preset) if preset else cls()
        if isinstance(d.get("ablation"), dict):
            d["ablation"] = AblationFlags(**d["ablation"])
        return replace(base, **d)


PRESETS = {
    # CPU-tractable PAI length 3
    "desk": {},
    "full-pai3": {"task": "pai", "seq_len": 3, "n_classes": 1000, "d_c": 128, "d": 256,
                   "d_a": 128, "epochs": 20000, "updates_per_epoch": 100},
    "full-pai4": {"task": "pai", "seq_len": 4, "n_classes": 1000, "d_c": 128, "d": 256,
                   "d_a": 128, "epochs": 20000, "updates_per_epoch": 100},
    "full-pai5": {"task": "pai", "seq_len": 5, "n_classes": 1000, "d_c": 128, "d": 256,
                   "d_a": 128, "epochs": 20000, "updates_per_epoch": 100},
    "full-graph-10-2-2": {"task": "graph", "graph": "10-2-2", "d_c": 128, "d": 512,
                           "d_a": 128, "heads": 4, "bias_init": 2.0,
                           "epochs": 20000, "updates_per_epoch": 100},
    "full-graph-20-3-3": {"task": "graph", "graph": "20-3-3", "d_c": 128, "d": 512,
                           "d_a": 256, "heads": 4, "bias_init": 2.0,
                           "epochs": 20000, "updates_per_epoch": 100},
    "full-graph-20-5-3": {"task": "graph", "graph": "20-5-3", "d_c": 128, "d": 512,
                           "d_a": 256, "heads": 4, "bias_init": 2.0,
                           "epochs": 20000, "updates_per_epoch": 100},
    "full-babi": {"task": "babi", "d_c": 128, "d": 512, "d_a": 256, "heads": 4,
                   "dropout_o": 0.5, "batch_size": 128, "epochs": 20000,
                   "updates_per_epoch": 100},
    "desk-graph": {"task": "graph", "graph": "10-2-2", "heads": 4, "d": 32, "d_c": 32,
                   "bias_init": 2.0},
    "desk-babi": {"task": "babi", "heads": 4, "d": 64, "d_c": 32, "batch_size": 128},
    # schedule only: 2e4 epochs of 100 updates
    "full": {"epochs": 20000, "updates_per_epoch": 100},
}


def preset_config(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig(**PRESETS[name])


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON config ({e})") from None
    return RunConfig.from_dict(data)


def data_root(override: str | None = None) -> Path:
    """Data directory: explicit path, else ``$MEMONET_DATA_ROOT``, else ``./data``."""
    if override:
        return Path(override)
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))
