"""Command line: ``memonet {train,eval,gen-pai,gen-graph,ingest-babi,gradcheck}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from memonet import __version__
from memonet.config import RunConfig, data_root, load_config, preset_config, PRESETS
from memonet.errors import CheckpointError, ConfigError, GenerationError, IngestionError

log = logging.getLogger("memonet")

OVERRIDABLE = {
    "task": str, "model": str, "halting": str, "fixed_hops": int, "seq_len": int,
    "graph": str, "babi_path": str, "n_hops": int, "heads": int, "gamma": float,
    "alpha": float, "beta": float, "bias_init": float, "lr_memo": float, "lr_halt": float,
    "epochs": int, "updates_per_epoch": int, "batch_size": int, "eval_every": int,
    "eval_items": int, "seed": int, "logit_init": str, "embed_scale": float,
}


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else preset_config(args.preset)
    changes = {k: getattr(args, k) for k in OVERRIDABLE if getattr(args, k, None) is not None}
    return replace(cfg, **changes) if changes else cfg


def cmd_train(args) -> int:
    from memonet.train import Trainer

    out = Path(args.out)
    if args.resume:
        tr = Trainer.from_checkpoint(out / "last.ckpt", out)
    else:
        cfg = _resolve_config(args)
        cfg.validate()
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
        tr = Trainer(cfg, out)
    report = tr.run()
    print(json.dumps(report, indent=2))
    return 0


def cmd_eval(args) -> int:
    from memonet.train import Trainer
    from memonet.tasks import pai

    tr = Trainer.from_checkpoint(args.checkpoint, Path(args.checkpoint).parent)
    report = tr.evaluate(args.items)
    if tr.cfg.task == "pai":
        print(pai.format_report(report["types"], f"{tr.cfg.model} PAI-{tr.cfg.seq_len}"))
    else:
        print(json.dumps({k: v for k, v in report.items() if k != "mean_hops"}, indent=2))
    print(f"mean hops: {report['mean_hops']:.2f}")
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2))
    return 0


def cmd_gen_pai(args) -> int:
    from memonet.tasks import container, pai

    cfg = pai.PaiConfig(seq_len=args.seq_len, n_classes=args.n_classes)
    rng = np.random.default_rng(args.seed)
    b = pai.sample_batch(cfg, rng, args.count)
    n = container.write_container(args.out, {
        "memory_classes": b.mem_classes, "memory_exemplars": b.mem_exemplars,
        "query_classes": b.query_classes, "query_exemplars": b.query_exemplars,
        "target": b.target, "lure": b.lure, "kind": b.kinds,
    }, meta={"task": "pai", "config": vars(cfg), "seed": args.seed, "split": args.split})
    print(f"wrote {n} PAI items to {args.out}")
    return 0


def cmd_gen_graph(args) -> int:
    from memonet.tasks import container, graph

    cfg = graph.GraphConfig(args.n_nodes, args.out_degree, args.path_length)
    rng = np.random.default_rng(args.seed)
    b = graph.sample_batch(cfg, rng, args.count)
    n = container.write_container(args.out, {
        "description": b.description, "query": b.query, "targets": b.targets,
    }, meta={"task": "graph", "config": vars(cfg), "seed": args.seed})
    print(f"wrote {n} graph instances to {args.out}")
    return 0


def cmd_ingest_babi(args) -> int:
    from memonet.tasks import babi, container

    src = Path(args.path) if args.path else data_root() / "babi" / "en-10k"
    corpus = babi.parse_babi(src, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        s, q, a, t = babi.encode_examples(corpus, getattr(corpus, split))
        container.write_container(out / f"{split}.bin",
                                  {"stories": s, "query": q, "answer": a, "task": t},
                                  meta={"task": "babi", "split": split})
    babi.save_vocab(corpus, out / "vocab.json")
    print(f"vocabulary {corpus.vocab_size} words; train {len(corpus.train)}, "
          f"valid {len(corpus.valid)}, test {len(corpus.test)}; "
          f"{corpus.truncated_sentences} sentences truncated")
    return 0


def cmd_gradcheck(args) -> int:
    from memonet.gradcheck import run_gradchecks

    worst = run_gradchecks(seeds=range(args.seeds), verbose=True)
    ok = worst["ops"] < 1e-5 and worst["episode"] < 1e-4
    print(f"worst relative error: ops {worst['ops']:.2e}, episode {worst['episode']:.2e} "
          f"-> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _add_run_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    for name, typ in OVERRIDABLE.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memonet", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="run directory (metrics, checkpoints)")
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--items", type=int, default=None)
    p.add_argument("--json", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-pai", help="write a PAI dataset container")
    p.add_argument("--seq-len", type=int, default=3, choices=(3, 4, 5))
    p.add_argument("--n-classes", type=int, default=200)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--split", default="train", choices=("train", "valid", "test"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_pai)

    p = sub.add_parser("gen-graph", help="write a shortest-path dataset container")
    p.add_argument("--n-nodes", type=int, default=10)
    p.add_argument("--out-degree", type=int, default=2)
    p.add_argument("--path-length", type=int, default=2)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("ingest-babi", help="parse bAbI en-10k into containers")
    p.add_argument("--path", help="directory with qa*_train.txt / qa*_test.txt "
                                  "(default: $MEMONET_DATA_ROOT/babi/en-10k)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest_babi)

    p = sub.add_parser("gradcheck", help="finite-difference check of ops and a MEMO episode")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, GenerationError, IngestionError) as e:
        print(f"memonet: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
