"""Command-line entry point.

Every subcommand resolves its configuration (defaults < --config JSON <
explicit flags < --set overrides), executes, and writes a run manifest
with the resolved config, seeds, tool version, and output hashes next to
its outputs.  Exit codes: 1 usage, 2 config, 3 io, 4 protocol.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, rng
from . import metalang, rollout, evalkit, wire
from .maze import core, render

EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PROTOCOL = 4


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _hash_file(path: Path) -> str:
    h = hashlib.blake2b(digest_size=16)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out: Path, config: dict, outputs: list[Path]) -> Path:
    manifest = {
        "tool": "metamaze",
        "version": __version__,
        "config": config,
        "outputs": {str(p): _hash_file(p) for p in sorted(outputs) if p.is_file()},
    }
    target = out / "run_manifest.json" if out.is_dir() \
        else out.with_name(out.name + ".manifest.json")
    tmp = target.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, sort_keys=True, indent=2))
    tmp.replace(target)
    return target


def _apply_config_layers(args: argparse.Namespace, parser_defaults: dict,
                         explicit: set) -> dict:
    """Merge --config JSON and --set overrides into args (in place)."""
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid config JSON: {e}")
        for key, value in cfg.items():
            dest = key.replace(".", "_").replace("-", "_")
            if dest not in parser_defaults:
                raise ConfigError(f"unknown config key {key!r}")
            if dest not in explicit:
                setattr(args, dest, value)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        dest = key.replace(".", "_").replace("-", "_")
        if dest not in parser_defaults:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(args, dest, json.loads(value))
        except json.JSONDecodeError:
            setattr(args, dest, value)
    return {k: getattr(args, k) for k in sorted(parser_defaults)}


class ConfigError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _add_common(p: ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field by dotted path")
    p.add_argument("--seed", type=int, default=0)


# --- metalang ---------------------------------------------------------------

def cmd_metalang_gen(args) -> list[Path]:
    cfg = metalang.LangConfig(vocab_size=args.vocab, order=args.order,
                              theta_sigma=args.theta_sigma,
                              seq_len=args.seq_len)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pool = None
    if args.pool > 0:
        pool = metalang.make_task_pool(args.pool, cfg, args.seed)
    metalang.write_dataset(out, args.sequences, cfg, args.seed, pool=pool,
                           orders=args.orders)
    return [out, out.with_suffix(out.suffix + ".index.json")]


def cmd_metalang_calibrate(args) -> list[Path]:
    cfg = metalang.LangConfig(order=args.order, vocab_size=args.vocab)
    sigma = metalang.calibrate_theta_sigma(cfg, num_tasks=args.tasks,
                                           tokens_per_task=args.tokens,
                                           seed=args.seed)
    mean, sem = metalang.intrinsic_difficulty(
        metalang.LangConfig(order=args.order, vocab_size=args.vocab,
                            theta_sigma=sigma),
        args.tasks, args.tokens, seed=args.seed)
    print(json.dumps({"theta_sigma": sigma, "mean_nats": mean, "sem": sem}))
    return []


def cmd_metalang_map(args) -> list[Path]:
    text = Path(args.text).read_text(errors="ignore")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg = metalang.LangConfig(seq_len=args.seq_len)
    seqs = list(metalang.map_corpus(text, args.seed, window=args.seq_len))
    with open(out, "wb") as f:
        f.write(metalang._HEADER.pack(metalang.DATASET_MAGIC, cfg.vocab_size,
                                      args.seq_len, len(seqs)))
        for s in seqs:
            f.write(s.tokens.tobytes())
    print(f"wrote {len(seqs)} sequences")
    return [out]


# --- maze -------------------------------------------------------------------

def _maze_config(args) -> core.MazeConfig:
    return core.MazeConfig(size=args.size, obstacle_density=args.density,
                           num_pnts=args.pnts, episode_len=args.episode_len,
                           step_cost=args.step_cost,
                           task_type=args.task_type)


def cmd_maze_gen_task(args) -> list[Path]:
    task = core.generate_task(_maze_config(args), args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(task.to_json())
    return [out]


def cmd_maze_show(args) -> list[Path]:
    manifest = json.loads(Path(args.manifest).read_text())
    task = core.task_from_manifest(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = core.initial_state(task)
    outputs = []
    render.topdown_to_png(task, state, out / "map.png")
    outputs.append(out / "map.png")
    for i in range(args.frames):
        render.frame_to_png(render.render_fp(task, state),
                            out / f"frame_{i:03d}.png")
        outputs.append(out / f"frame_{i:03d}.png")
        if i + 1 < args.frames:
            state, _, _ = core.step(task, state, int(core.Action.FORWARD)
                                    if i % 3 else int(core.Action.TURN_RIGHT))
    return outputs


def cmd_maze_collect(args) -> list[Path]:
    out = Path(args.out)
    cfg = rollout.RolloutConfig(episode_len=args.episode_len)
    maze_cfg = _maze_config(args)
    pool = None
    if args.pool != "procedural":
        pool = rollout.make_maze_pool(int(args.pool), maze_cfg, args.seed)
    rollout.build_corpus(pool, args.episodes, cfg, maze_cfg, out, args.seed)
    return sorted(out.rglob("*")) + [out / "corpus.json"]


def _make_policy(spec: str):
    if spec == "random":
        return evalkit.RandomPolicyHandle()
    if spec.startswith("privileged:"):
        return evalkit.PrivilegedPolicyHandle(float(spec.split(":", 1)[1]))
    if spec.startswith("wire:"):
        host, port = spec.split(":")[1:]
        return wire.WirePolicy(address=(host, int(port)))
    if spec.startswith("exec:"):
        import shlex
        return wire.WirePolicy(argv=shlex.split(spec.split(":", 1)[1]))
    raise ConfigError(f"unknown policy spec {spec!r}")


def cmd_maze_eval(args) -> list[Path]:
    policy = _make_policy(args.policy)
    cfg = evalkit.InteractiveEvalConfig(num_tasks=args.tasks,
                                        sizes=tuple(args.sizes),
                                        horizon=args.horizon,
                                        step_cost=args.step_cost)
    curves = evalkit.run_interactive(policy, cfg, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evalkit.interactive_to_csv(curves, out)
    return [out]


def cmd_maze_wm_eval(args) -> list[Path]:
    if args.predictor == "oracle":
        predictor = evalkit.OraclePredictor()
    elif args.predictor == "constant":
        predictor = evalkit.ConstantPredictor()
    elif args.predictor.startswith("wire:"):
        host, port = args.predictor.split(":")[1:]
        predictor = wire.WirePredictor(address=(host, int(port)))
    elif args.predictor.startswith("exec:"):
        import shlex
        predictor = wire.WirePredictor(
            argv=shlex.split(args.predictor.split(":", 1)[1]))
    else:
        raise ConfigError(f"unknown predictor spec {args.predictor!r}")
    cfg = evalkit.WMEvalConfig(checkpoints=tuple(args.checkpoints),
                               depths=tuple(args.depths),
                               num_tasks=args.tasks,
                               sizes=tuple(args.sizes))
    table = evalkit.run_wm_eval(predictor, cfg, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evalkit.wm_to_csv(table, out)
    return [out]


def cmd_maze_bench_fps(args) -> list[Path]:
    task = core.generate_task(_maze_config(args), args.seed)
    state = core.initial_state(task)
    frames = 0
    t0 = time.perf_counter()
    while frames < args.frames:
        render.render_fp(task, state)
        state, _, _ = core.step(task, state,
                                int(core.Action.FORWARD) if frames % 4
                                else int(core.Action.TURN_LEFT))
        frames += 1
    dt = time.perf_counter() - t0
    fps = frames / dt
    print(json.dumps({"frames": frames, "seconds": dt, "fps": fps}))
    return []


def cmd_eval_curves(args) -> list[Path]:
    rows = []
    src = Path(getattr(args, "in"))
    files = sorted(src.glob("*.csv")) if src.is_dir() else [src]
    if not files:
        raise ConfigError(f"no input files under {src}")
    for f in files:
        for line in f.read_text().splitlines():
            if line.strip():
                rows.append(np.array([float(x) for x in line.split(",")]))
    curve = evalkit.aggregate_positions(rows, metric=args.metric,
                                        log_buckets=args.buckets)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out)
    return [out]


# --- parser -----------------------------------------------------------------

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="metamaze")
    sub = parser.add_subparsers(dest="command", required=True)

    ml = sub.add_parser("metalang").add_subparsers(dest="subcommand",
                                                   required=True)
    p = ml.add_parser("gen", help="generate a pseudo-language dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--sequences", type=int, default=1000)
    p.add_argument("--pool", type=int, default=0,
                   help="pre-sampled task pool size (0 = procedural)")
    p.add_argument("--vocab", type=int, default=32)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--orders", type=_int_list, default=[3, 4, 5, 6],
                   help="orders sampled in procedural mode")
    p.add_argument("--seq-len", type=int, default=4096)
    p.add_argument("--theta-sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_metalang_gen)

    p = ml.add_parser("calibrate", help="calibrate theta_sigma difficulty")
    _add_common(p)
    p.add_argument("--order", "--n", type=int, default=4)
    p.add_argument("--vocab", type=int, default=32)
    p.add_argument("--tasks", type=int, default=50)
    p.add_argument("--tokens", type=int, default=256)
    p.set_defaults(func=cmd_metalang_calibrate)

    p = ml.add_parser("map", help="remap a text corpus onto the vocabulary")
    _add_common(p)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seq-len", type=int, default=4096)
    p.set_defaults(func=cmd_metalang_map)

    mz = sub.add_parser("maze").add_subparsers(dest="subcommand",
                                               required=True)

    def maze_flags(p):
        _add_common(p)
        p.add_argument("--size", type=int, default=15)
        p.add_argument("--density", type=float, default=0.36)
        p.add_argument("--pnts", type=int, default=10)
        p.add_argument("--episode-len", type=int, default=2048)
        p.add_argument("--step-cost", type=float, default=0.0)
        p.add_argument("--task-type", default=core.TASK_NAVIGATION,
                       choices=[core.TASK_NAVIGATION, core.TASK_SURVIVAL])

    p = mz.add_parser("gen-task", help="generate one task manifest")
    maze_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_maze_gen_task)

    p = mz.add_parser("show", help="dump PNG frames and the top-down map")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=8)
    p.set_defaults(func=cmd_maze_show)

    p = mz.add_parser("collect", help="collect episode packs")
    maze_flags(p)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--pool", default="procedural",
                   help="task pool size, or 'procedural'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_maze_collect)

    p = mz.add_parser("eval", help="interactive accumulated-reward evaluation")
    _add_common(p)
    p.add_argument("--policy", required=True,
                   help="random | privileged:P | wire:HOST:PORT | exec:CMD")
    p.add_argument("--sizes", type=_int_list, default=[15, 25, 35])
    p.add_argument("--tasks", type=int, default=64)
    p.add_argument("--horizon", type=int, default=2000)
    p.add_argument("--step-cost", type=float, default=0.0)
    p.add_argument("--out", default="interactive.csv")
    p.set_defaults(func=cmd_maze_eval)

    p = mz.add_parser("wm-eval", help="world-model rollout MSE evaluation")
    _add_common(p)
    p.add_argument("--predictor", required=True,
                   help="oracle | constant | wire:HOST:PORT | exec:CMD")
    p.add_argument("--sizes", type=_int_list, default=[15])
    p.add_argument("--tasks", type=int, default=64)
    p.add_argument("--checkpoints", type=_int_list, default=[1, 100, 1000, 2000])
    p.add_argument("--depths", type=_int_list, default=[1, 4])
    p.add_argument("--out", default="wm.csv")
    p.set_defaults(func=cmd_maze_wm_eval)

    p = mz.add_parser("bench-fps", help="renderer throughput report")
    maze_flags(p)
    p.add_argument("--frames", type=int, default=500)
    p.set_defaults(func=cmd_maze_bench_fps)

    ev = sub.add_parser("eval").add_subparsers(dest="subcommand",
                                               required=True)
    p = ev.add_parser("curves", help="aggregate per-position loss tables")
    _add_common(p)
    p.add_argument("--in", required=True, dest="in",
                   help="CSV file or directory of CSV files (one row per sequence)")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", default="nats")
    p.add_argument("--buckets", type=int, default=0)
    p.set_defaults(func=cmd_eval_curves)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        defaults = {k: v for k, v in vars(args).items()
                    if k not in ("func", "command", "subcommand")}
        explicit = {k for k in defaults
                    if f"--{k.replace('_', '-')}" in (argv or sys.argv[1:])}
        resolved = _apply_config_layers(args, defaults, explicit)
        outputs = args.func(args)
        if outputs:
            out_arg = Path(getattr(args, "out"))
            write_run_manifest(out_arg if out_arg.is_dir() else out_arg,
                               resolved, [Path(p) for p in outputs])
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, core.ConfigurationError, metalang.VocabMismatchError,
            ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (wire.WireError, core.ProtocolError,
            evalkit.PredictorProtocolError) as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
