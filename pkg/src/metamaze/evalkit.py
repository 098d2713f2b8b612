"""Evaluation protocols: per-position curves, interactive reward runs
with confidence intervals, and world-model rollout MSE."""

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from . import rng
from .maze.core import (MazeConfig, MazeTask, SimState, generate_task,
                        initial_state, step, current_command)
from .maze.render import render_fp, visible_cells
from .agents import PrivilegedAgent, RandomAgent


def ci_95(samples: np.ndarray) -> tuple[float, float]:
    """Normal-approximation 95% interval for the mean of `samples`."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two samples")
    mean = x.mean()
    half = 1.96 * x.std(ddof=1) / np.sqrt(x.size)
    return float(mean - half), float(mean + half)


@dataclass
class PositionCurve:
    positions: np.ndarray
    means: np.ndarray
    counts: np.ndarray
    ci_lo: Optional[np.ndarray]
    ci_hi: Optional[np.ndarray]
    metric: str

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["metric", "position", "mean", "ci_lo", "ci_hi", "n"])
            for i, pos in enumerate(self.positions):
                lo = "" if self.ci_lo is None else repr(float(self.ci_lo[i]))
                hi = "" if self.ci_hi is None else repr(float(self.ci_hi[i]))
                w.writerow([self.metric, int(pos), repr(float(self.means[i])),
                            lo, hi, int(self.counts[i])])


def curve_from_csv(path: str | Path) -> PositionCurve:
    rows = list(csv.DictReader(open(path)))
    return PositionCurve(
        positions=np.array([int(r["position"]) for r in rows]),
        means=np.array([float(r["mean"]) for r in rows]),
        counts=np.array([int(r["n"]) for r in rows]),
        ci_lo=np.array([float(r["ci_lo"]) for r in rows]) if rows and rows[0]["ci_lo"] else None,
        ci_hi=np.array([float(r["ci_hi"]) for r in rows]) if rows and rows[0]["ci_hi"] else None,
        metric=rows[0]["metric"] if rows else "")


def aggregate_positions(rows: Sequence[np.ndarray], metric: str = "nats",
                        log_buckets: int = 0) -> PositionCurve:
    """Mean per position across equal-length loss rows, with 95% CIs.

    With log_buckets > 0, positions are pooled into that many log-spaced
    buckets (bucket position = geometric right edge) for plotting.
    """
    if len(rows) == 0:
        raise ValueError("no input rows")
    data = np.asarray(rows, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("rows must share a uniform length")
    n_rows, t_len = data.shape
    if log_buckets > 0:
        edges = np.unique(np.concatenate(
            [[0], np.geomspace(1, t_len, log_buckets).round().astype(int)]))
        positions, means, counts, lo, hi = [], [], [], [], []
        for a, b in zip(edges[:-1], edges[1:]):
            chunk = data[:, a:b]
            positions.append(b - 1)
            means.append(chunk.mean())
            counts.append(chunk.size)
            row_means = chunk.mean(axis=1)
            if n_rows >= 2:
                l, h = ci_95(row_means)
            else:
                l = h = row_means.mean()
            lo.append(l)
            hi.append(h)
        return PositionCurve(np.array(positions), np.array(means),
                             np.array(counts), np.array(lo), np.array(hi),
                             metric)
    means = data.mean(axis=0)
    if n_rows >= 2:
        half = 1.96 * data.std(axis=0, ddof=1) / np.sqrt(n_rows)
        lo, hi = means - half, means + half
    else:
        lo = hi = means.copy()
    return PositionCurve(np.arange(t_len), means,
                         np.full(t_len, n_rows), lo, hi, metric)


@dataclass(frozen=True)
class InteractiveEvalConfig:
    num_tasks: int = 64
    sizes: tuple[int, ...] = (15, 25, 35)
    horizon: int = 2000
    step_cost: float = 0.0
    ci_level: float = 0.95


@dataclass(frozen=True)
class WMEvalConfig:
    checkpoints: tuple[int, ...] = (1, 100, 1000, 2000)
    depths: tuple[int, ...] = (1, 4)
    num_tasks: int = 64
    sizes: tuple[int, ...] = (15,)
    step_cost: float = 0.0


class PolicyHandle(Protocol):
    """In-process policy protocol for interactive evaluation.

    `needs_frames` controls whether rendered observations are produced;
    privileged policies plan from visible sets instead.
    """
    needs_frames: bool

    def begin_episode(self, task: MazeTask, seed: int) -> None: ...

    def act(self, task: MazeTask, state: SimState,
            frame: Optional[np.ndarray]) -> int: ...


class RandomPolicyHandle:
    needs_frames = False

    def begin_episode(self, task, seed):
        self._agent = RandomAgent(seed)

    def act(self, task, state, frame):
        return int(self._agent.act(state.agent_cell, state.heading, 0))


class PrivilegedPolicyHandle:
    needs_frames = False

    def __init__(self, p_transfer: float):
        self.p_transfer = p_transfer

    def begin_episode(self, task, seed):
        self._agent = PrivilegedAgent(self.p_transfer, seed)

    def act(self, task, state, frame):
        self._agent.observe(visible_cells(task, state))
        return int(self._agent.act(state.agent_cell, state.heading,
                                   current_command(task, state)))


def eval_tasks(cfg_size: int, num_tasks: int, seed: int,
               step_cost: float = 0.0, episode_len: int = 2048) -> list[MazeTask]:
    """Fixed evaluation task set; identical for every policy under one seed."""
    cfg = MazeConfig(size=cfg_size, step_cost=step_cost,
                     episode_len=max(episode_len, 2048))
    return [generate_task(cfg, rng.derive_seed(seed, 401, cfg_size, i))
            for i in range(num_tasks)]


def task_set_hash(tasks: Sequence[MazeTask]) -> str:
    h = hashlib.blake2b(digest_size=16)
    for t in tasks:
        h.update(t.to_json().encode())
    return h.hexdigest()


def run_interactive(policy: PolicyHandle, cfg: InteractiveEvalConfig,
                    seed: int) -> dict[int, PositionCurve]:
    """Accumulated-reward-vs-step curves, one per maze size."""
    curves = {}
    for size in cfg.sizes:
        tasks = eval_tasks(size, cfg.num_tasks, seed, cfg.step_cost,
                           cfg.horizon)
        acc = np.zeros((cfg.num_tasks, cfg.horizon))
        for i, task in enumerate(tasks):
            state = initial_state(task)
            total = 0.0
            policy.begin_episode(task, rng.derive_seed(seed, 402, size, i))
            for t in range(cfg.horizon):
                frame = render_fp(task, state) if policy.needs_frames else None
                action = policy.act(task, state, frame)
                state, reward, _ = step(task, state, action)
                total += reward
                acc[i, t] = total
            if hasattr(policy, "finish_episode"):
                policy.finish_episode(state)
        means = acc.mean(axis=0)
        half = 1.96 * acc.std(axis=0, ddof=1) / np.sqrt(cfg.num_tasks)
        curves[size] = PositionCurve(np.arange(1, cfg.horizon + 1), means,
                                     np.full(cfg.horizon, cfg.num_tasks),
                                     means - half, means + half, "reward")
    return curves


def interactive_to_csv(curves: dict[int, PositionCurve], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["size", "step", "mean_reward", "ci_lo", "ci_hi"])
        for size in sorted(curves):
            c = curves[size]
            for i, pos in enumerate(c.positions):
                w.writerow([size, int(pos), repr(float(c.means[i])),
                            repr(float(c.ci_lo[i])), repr(float(c.ci_hi[i]))])


class PredictorHandle(Protocol):
    """World-model protocol for rollout-MSE evaluation."""

    def begin_episode(self, manifest: dict, seed: int) -> None: ...

    def predict(self, frames: np.ndarray, actions: np.ndarray,
                future_actions: np.ndarray) -> np.ndarray: ...


class OraclePredictor:
    """Upper-bound harness predictor: re-simulates the true environment."""

    def begin_episode(self, manifest, seed):
        from .maze.core import task_from_manifest
        self._task = task_from_manifest(manifest)

    def predict(self, frames, actions, future_actions):
        state = initial_state(self._task)
        for a in actions:
            state, _, _ = step(self._task, state, int(a))
        out = np.zeros((len(future_actions), 128, 128, 3), dtype=np.uint8)
        for i, a in enumerate(future_actions):
            state, _, _ = step(self._task, state, int(a))
            out[i] = render_fp(self._task, state)
        return out


class ConstantPredictor:
    """Flat-gray baseline predictor."""

    def __init__(self, value: float = 0.5):
        self.value = value

    def begin_episode(self, manifest, seed):
        pass

    def predict(self, frames, actions, future_actions):
        return np.full((len(future_actions), 128, 128, 3),
                       int(round(self.value * 255)), dtype=np.uint8)


class PredictorProtocolError(RuntimeError):
    pass


def run_wm_eval(predictor: PredictorHandle, cfg: WMEvalConfig, seed: int,
                driver_factory: Optional[Callable[[], PolicyHandle]] = None
                ) -> dict[tuple[int, int, int], tuple[float, float, float]]:
    """Rollout-MSE table keyed by (size, checkpoint t, depth k).

    The driver policy (privileged p=1 by default) generates each task's
    trajectory; at each checkpoint the predictor rolls `k` frames ahead
    conditioned on the actually executed actions.  MSE is computed on
    pixels normalized to [0, 1], averaged over rollout steps and tasks.
    Values are (mean, ci_lo, ci_hi).
    """
    if driver_factory is None:
        driver_factory = lambda: PrivilegedPolicyHandle(1.0)
    max_k = max(cfg.depths)
    horizon = max(cfg.checkpoints) + max_k
    table = {}
    for size in cfg.sizes:
        tasks = eval_tasks(size, cfg.num_tasks, seed, cfg.step_cost, horizon)
        errs = {(t, k): [] for t in cfg.checkpoints for k in cfg.depths}
        for i, task in enumerate(tasks):
            driver = driver_factory()
            driver.begin_episode(task, rng.derive_seed(seed, 403, size, i))
            predictor.begin_episode(task.manifest(),
                                    rng.derive_seed(seed, 404, size, i))
            frames = np.zeros((horizon + 1, 128, 128, 3), dtype=np.uint8)
            actions = np.zeros(horizon, dtype=np.uint8)
            state = initial_state(task)
            frames[0] = render_fp(task, state)
            for t in range(horizon):
                actions[t] = driver.act(task, state, frames[t])
                state, _, _ = step(task, state, int(actions[t]))
                frames[t + 1] = render_fp(task, state)
            for t in cfg.checkpoints:
                for k in cfg.depths:
                    pred = np.asarray(predictor.predict(
                        frames[:t + 1], actions[:t], actions[t:t + k]))
                    if pred.shape != (k, 128, 128, 3):
                        raise PredictorProtocolError(
                            f"predictor returned shape {pred.shape}, "
                            f"expected {(k, 128, 128, 3)}")
                    truth = frames[t + 1:t + 1 + k].astype(np.float64) / 255.0
                    guess = pred.astype(np.float64) / 255.0
                    errs[(t, k)].append(float(((guess - truth) ** 2).mean()))
        for (t, k), vals in errs.items():
            arr = np.array(vals)
            if arr.size >= 2:
                lo, hi = ci_95(arr)
            else:
                lo = hi = float(arr.mean())
            table[(size, t, k)] = (float(arr.mean()), lo, hi)
    return table


def wm_to_csv(table: dict, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["size", "t", "k", "mse", "ci_lo", "ci_hi"])
        for (size, t, k) in sorted(table):
            mse, lo, hi = table[(size, t, k)]
            w.writerow([size, t, k, repr(mse), repr(lo), repr(hi)])
