"""Command-line entry point for the baseline training recipes.

The default flag values are desk-scale; the full-scale runs (ICL
signature on 50K sequences, the task-diversity ablation) take hours and
are meant to be launched explicitly, e.g.:

    metamaze-baselines train-metalm --data ds.bin --steps 60000 \
        --out metalm_curve.csv
    metamaze-baselines ablation --pools 1,100 --sequences 2000 \
        --steps 20000 --out ablation/
"""

import argparse
import json
from pathlib import Path

import numpy as np

from metamaze import evalkit
from . import train as T
from .models import WINDOW_FULL


def _window(text: str):
    return WINDOW_FULL if text == "full" else int(text)


def _int_list(text: str):
    return [int(x) for x in text.split(",") if x]


def cmd_train_metalm(args) -> int:
    cfg = T.TrainConfig(preset=args.preset, window=_window(args.window),
                        steps=args.steps, batch_size=args.batch_size,
                        seq_len=args.seq_len, seed=args.seed)
    model, rows = T.train_metalm(args.data, cfg, holdout=args.holdout)
    curve = T.metalm_curve(rows, log_buckets=args.buckets)
    curve.to_csv(args.out)
    print(json.dumps({"params": model.param_count(),
                      "final_bucket_nats": float(curve.means[-1]),
                      "first_bucket_nats": float(curve.means[0])}))
    return 0


def cmd_train_maze(args) -> int:
    cfg = T.TrainConfig(preset="tiny", window=_window(args.window),
                        steps=args.steps, batch_size=args.batch_size,
                        seed=args.seed, latent_dim=args.latent_dim)
    vae, model, history = T.train_maze(args.corpus, cfg,
                                       causal_preset=args.preset,
                                       causal_steps=args.causal_steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    import torch
    torch.save(vae.state_dict(), out / "vae.pt")
    torch.save(model.state_dict(), out / "causal.pt")
    (out / "history.json").write_text(json.dumps(history))
    print(json.dumps({"causal_params": model.param_count(),
                      "final_loss": history[-1]}))
    return 0


def cmd_ablation(args) -> int:
    cfg = T.TrainConfig(preset=args.preset, steps=args.steps,
                        batch_size=args.batch_size, seq_len=args.seq_len,
                        seed=args.seed)
    results = T.ablation_suite(args.pools, args.sequences, cfg,
                               seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for k, tables in results.items():
        for split, rows in tables.items():
            curve = T.metalm_curve(rows, log_buckets=args.buckets)
            curve.to_csv(out / f"k{k}_{split}.csv")
            summary[f"k{k}_{split}"] = {
                "zero_shot": float(curve.means[0]),
                "asymptotic": float(curve.means[-1])}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamaze-baselines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-metalm", help="fit the token LM")
    p.add_argument("--data", required=True, help="language dataset file")
    p.add_argument("--out", required=True, help="per-position curve CSV")
    p.add_argument("--preset", default="tiny", choices=["tiny", "small"])
    p.add_argument("--window", default="full")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seq-len", type=int, default=512)
    p.add_argument("--holdout", type=int, default=8)
    p.add_argument("--buckets", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_metalm)

    p = sub.add_parser("train-maze", help="two-phase VAE + causal training")
    p.add_argument("--corpus", required=True, help="episode pack directory")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="desk", choices=["desk", "small"])
    p.add_argument("--window", default="full")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--causal-steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_maze)

    p = sub.add_parser("ablation", help="task-diversity ablation sweep")
    p.add_argument("--pools", type=_int_list, default=[1, 100])
    p.add_argument("--sequences", type=int, default=500)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="tiny")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seq-len", type=int, default=512)
    p.add_argument("--buckets", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablation)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    import sys
    sys.exit(main())
