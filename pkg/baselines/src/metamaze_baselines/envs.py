"""Gym-style bindings over the maze engine plus dataset iterators.

The environment layer is a thin shim: every transition is computed by
the engine's own step function, so any divergence from the simulator or
the wire protocol is a bug by definition (the cross-check tests enforce
bit equality of observation and reward streams).
"""

from typing import Optional

import numpy as np

from metamaze import metalang
from metamaze.maze import core, render

OBS_FP = "rgb_array"
OBS_TOPDOWN = "topdown"


class MazeEnv:
    """Single maze episode with reset/step/render semantics.

    Observations are 128x128x3 uint8 first-person frames (default) or
    egocentric top-down class crops.  The action space is discrete 5.
    Episodes never terminate early; `truncated` is set once the task's
    episode length is exhausted, and stepping past it raises the
    engine's own state error.
    """

    metadata = {"render_modes": [OBS_FP, OBS_TOPDOWN]}
    num_actions = len(core.Action)
    observation_shape = (render.FRAME_H, render.FRAME_W, 3)
    reward_range = (-float("inf"), float("inf"))

    def __init__(self, config: Optional[core.MazeConfig] = None,
                 obs_mode: str = OBS_FP, topdown_k: int = 2):
        if obs_mode not in self.metadata["render_modes"]:
            raise ValueError(f"unknown obs_mode {obs_mode!r}")
        self.config = config if config is not None else core.MazeConfig()
        self.obs_mode = obs_mode
        self.topdown_k = topdown_k
        self.task: Optional[core.MazeTask] = None
        self.state: Optional[core.SimState] = None

    def reset(self, seed: Optional[int] = None,
              options: Optional[dict] = None) -> tuple[np.ndarray, dict]:
        options = options or {}
        if "manifest" in options:
            self.task = core.task_from_manifest(options["manifest"])
        elif seed is not None:
            self.task = core.generate_task(self.config, seed)
        elif self.task is None:
            raise ValueError("first reset needs a seed or a task manifest")
        self.state = core.initial_state(self.task)
        return self._obs(), self._info([])

    def step(self, action) -> tuple[np.ndarray, float, bool, bool, dict]:
        if self.state is None:
            raise RuntimeError("call reset before step")
        self.state, reward, events = core.step(self.task, self.state,
                                               int(action))
        return (self._obs(), reward, False, self.state.done,
                self._info(events))

    def render(self) -> np.ndarray:
        return render.render_fp(self.task, self.state)

    def _obs(self) -> np.ndarray:
        if self.obs_mode == OBS_TOPDOWN:
            return render.render_topdown(self.task, self.state,
                                         self.topdown_k)
        return render.render_fp(self.task, self.state)

    def _info(self, events) -> dict:
        return {
            "command": core.current_command(self.task, self.state),
            "step": self.state.step_index,
            "events": list(events),
            "accumulated_reward": self.state.accumulated_reward,
        }


class VectorMazeEnv:
    """Batch of independent MazeEnv instances stepped in lockstep."""

    def __init__(self, num_envs: int, config: Optional[core.MazeConfig] = None,
                 obs_mode: str = OBS_FP):
        if num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        self.envs = [MazeEnv(config, obs_mode) for _ in range(num_envs)]

    @property
    def num_envs(self) -> int:
        return len(self.envs)

    def reset(self, seeds) -> tuple[np.ndarray, list[dict]]:
        if len(seeds) != self.num_envs:
            raise ValueError("one seed per environment required")
        pairs = [env.reset(seed=s) for env, s in zip(self.envs, seeds)]
        return np.stack([o for o, _ in pairs]), [i for _, i in pairs]

    def step(self, actions):
        if len(actions) != self.num_envs:
            raise ValueError("one action per environment required")
        out = [env.step(a) for env, a in zip(self.envs, actions)]
        obs, rewards, terms, truncs, infos = zip(*out)
        return (np.stack(obs), np.array(rewards, dtype=np.float64),
                np.array(terms), np.array(truncs), list(infos))


def token_sequences(path):
    """Iterate (tokens uint8 array) over a language dataset file."""
    _, _, _, seqs = metalang.read_dataset(path)
    yield from seqs


def load_token_matrix(path) -> np.ndarray:
    """Whole dataset file as an (N, T) uint8 matrix."""
    vocab, seq_len, count, seqs = metalang.read_dataset(path)
    out = np.stack(list(seqs))
    assert out.shape == (count, seq_len)
    return out
