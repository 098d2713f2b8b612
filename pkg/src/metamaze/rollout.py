"""Episode collection with a noisy behavior policy and privileged labels.

Each episode runs two privileged memories in lockstep over one state
stream: the behavior memory (p drawn from behavior_p_range) produces the
executed actions, mixed with uniform-random actions at rate epsilon; the
reference memory (p = 1) labels every step without being executed.
Episodes are written as bit-exact directory packs.
"""

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng
from .maze.core import (MazeConfig, MazeTask, initial_state, step,
                        current_command, generate_task, task_from_manifest)
from .maze.render import render_fp, visible_cells
from .agents import PrivilegedAgent, random_policy

PACK_VERSION = 1
FRAME_BYTES = 128 * 128 * 3


class PackError(RuntimeError):
    pass


class PackVersionError(PackError):
    pass


class PackTruncatedError(PackError):
    pass


class PackChecksumError(PackError):
    def __init__(self, chunk: str):
        super().__init__(f"checksum mismatch in chunk {chunk!r}")
        self.chunk = chunk


@dataclass(frozen=True)
class RolloutConfig:
    behavior_p_range: tuple[float, float] = (0.0, 0.5)
    epsilon_range: tuple[float, float] = (0.0, 0.8)
    episode_len: int = 2048
    reference_p: float = 1.0

    def __post_init__(self):
        for lo, hi in (self.behavior_p_range, self.epsilon_range):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError("ranges must be sub-intervals of [0, 1]")


@dataclass
class EpisodeRecord:
    manifest: dict
    frames: np.ndarray             # (T, 128, 128, 3) uint8
    behavior_actions: np.ndarray   # (T,) uint8
    reference_actions: np.ndarray  # (T,) uint8
    rewards: np.ndarray            # (T,) float32
    commands: np.ndarray           # (T,) uint8
    meta: dict                     # behavior_p, epsilon, seeds, version


def collect_episode(task: MazeTask, cfg: RolloutConfig, seed: int,
                    render: bool = True) -> EpisodeRecord:
    g = rng.stream(seed, rng.STREAM_EPISODE)
    behavior_p = float(g.uniform(*cfg.behavior_p_range))
    epsilon = float(g.uniform(*cfg.epsilon_range))

    behavior = PrivilegedAgent(behavior_p, rng.derive_seed(seed, 1))
    reference = PrivilegedAgent(cfg.reference_p, rng.derive_seed(seed, 2))
    g_noise = rng.stream(seed, rng.STREAM_EPISODE, 3)

    t_len = cfg.episode_len
    frames = np.zeros((t_len, 128, 128, 3), dtype=np.uint8) if render \
        else np.zeros((0,), dtype=np.uint8)
    b_actions = np.zeros(t_len, dtype=np.uint8)
    r_actions = np.zeros(t_len, dtype=np.uint8)
    rewards = np.zeros(t_len, dtype=np.float32)
    commands = np.zeros(t_len, dtype=np.uint8)

    state = initial_state(task)
    for t in range(t_len):
        vis = visible_cells(task, state)
        behavior.observe(vis)
        reference.observe(vis)
        commanded = current_command(task, state)
        if render:
            frames[t] = render_fp(task, state)
        commands[t] = commanded
        r_actions[t] = int(reference.act(state.agent_cell, state.heading,
                                         commanded))
        if g_noise.random() < epsilon:
            b_act = random_policy(g_noise)
        else:
            b_act = behavior.act(state.agent_cell, state.heading, commanded)
        b_actions[t] = int(b_act)
        state, reward, _ = step(task, state, b_act)
        rewards[t] = reward

    meta = {"behavior_p": behavior_p, "epsilon": epsilon, "seed": seed,
            "reference_p": cfg.reference_p, "version": PACK_VERSION,
            "episode_len": t_len,
            "accumulated_reward": float(state.accumulated_reward)}
    return EpisodeRecord(manifest=task.manifest(), frames=frames,
                         behavior_actions=b_actions,
                         reference_actions=r_actions, rewards=rewards,
                         commands=commands, meta=meta)


def replay_frames(manifest: dict, behavior_actions: np.ndarray) -> np.ndarray:
    """Re-simulate an episode from its manifest and executed actions."""
    task = task_from_manifest(manifest)
    frames = np.zeros((len(behavior_actions), 128, 128, 3), dtype=np.uint8)
    state = initial_state(task)
    for t, action in enumerate(behavior_actions):
        frames[t] = render_fp(task, state)
        state, _, _ = step(task, state, int(action))
    return frames


def _checksum(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


_CHUNKS = ("frames.bin", "actions.bin", "labels.bin", "rewards.bin",
           "commands.bin")


def write_pack(record: EpisodeRecord, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payloads = {
        "frames.bin": record.frames.tobytes(),
        "actions.bin": record.behavior_actions.astype(np.uint8).tobytes(),
        "labels.bin": record.reference_actions.astype(np.uint8).tobytes(),
        "rewards.bin": record.rewards.astype("<f4").tobytes(),
        "commands.bin": record.commands.astype(np.uint8).tobytes(),
    }
    checksums = {}
    for name, blob in payloads.items():
        (path / name).write_bytes(blob)
        checksums[name] = _checksum(blob)
    meta = {"task": record.manifest, **record.meta}
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    (path / "meta.json").write_bytes(meta_blob)
    checksums["meta.json"] = _checksum(meta_blob)
    (path / "checksums.json").write_text(json.dumps(checksums, sort_keys=True))
    return path


def read_pack(path: str | Path) -> EpisodeRecord:
    path = Path(path)
    try:
        checksums = json.loads((path / "checksums.json").read_text())
        meta_blob = (path / "meta.json").read_bytes()
    except FileNotFoundError as e:
        raise PackTruncatedError(f"missing {e.filename}") from None
    if _checksum(meta_blob) != checksums.get("meta.json"):
        raise PackChecksumError("meta.json")
    meta = json.loads(meta_blob)
    if meta.get("version") != PACK_VERSION:
        raise PackVersionError(f"unsupported pack version {meta.get('version')}")
    t_len = meta["episode_len"]
    blobs = {}
    for name in _CHUNKS:
        try:
            blob = (path / name).read_bytes()
        except FileNotFoundError:
            raise PackTruncatedError(f"missing {name}") from None
        if _checksum(blob) != checksums.get(name):
            raise PackChecksumError(name)
        blobs[name] = blob
    expected = {"frames.bin": t_len * FRAME_BYTES, "rewards.bin": t_len * 4}
    for name, blob in blobs.items():
        if len(blob) != expected.get(name, t_len):
            raise PackTruncatedError(f"{name} has {len(blob)} bytes")
    manifest = meta.pop("task")
    return EpisodeRecord(
        manifest=manifest,
        frames=np.frombuffer(blobs["frames.bin"], dtype=np.uint8)
               .reshape(t_len, 128, 128, 3),
        behavior_actions=np.frombuffer(blobs["actions.bin"], dtype=np.uint8),
        reference_actions=np.frombuffer(blobs["labels.bin"], dtype=np.uint8),
        rewards=np.frombuffer(blobs["rewards.bin"], dtype="<f4"),
        commands=np.frombuffer(blobs["commands.bin"], dtype=np.uint8),
        meta=meta)


def make_maze_pool(k: int, config: MazeConfig, seed: int) -> list[dict]:
    """K distinct task manifests sampled from the generator."""
    if k < 1:
        raise ValueError("pool size must be >= 1")
    return [generate_task(config, rng.derive_seed(seed, rng.STREAM_POOL, i)).manifest()
            for i in range(k)]


def build_corpus(pool: Optional[list[dict]], episodes: int, cfg: RolloutConfig,
                 config: MazeConfig, out_dir: str | Path, seed: int,
                 render: bool = True) -> dict:
    """Collect `episodes` packs; tasks from `pool` or fresh per episode."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pick = rng.stream(seed, rng.STREAM_POOL, 0xC0DE)
    entries = []
    for i in range(episodes):
        if pool is not None:
            manifest = pool[int(pick.integers(len(pool)))]
            task = task_from_manifest(manifest)
        else:
            task = generate_task(config, rng.derive_seed(seed, 301, i))
        record = collect_episode(task, cfg, rng.derive_seed(seed, 302, i),
                                 render=render)
        name = f"ep_{i:06d}"
        write_pack(record, out_dir / name)
        entries.append({"pack": name, "task_seed": task.seed,
                        "task": task.manifest()})
    manifest = {"seed": seed, "episodes": episodes,
                "pool_size": len(pool) if pool is not None else None,
                "rollout": asdict(cfg), "entries": entries}
    (out_dir / "corpus.json").write_text(json.dumps(manifest, sort_keys=True))
    return manifest
