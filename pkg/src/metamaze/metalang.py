"""Randomized n-gram pseudo-language generator.

A "language" is one random parameter draw of a small MLP that maps the
last n tokens to a next-token distribution.  The logits are renormalized
to mean 0 / std ``logit_scale`` before the softmax so the sampled
distributions are neither near-deterministic nor near-uniform.
"""

import json
import struct
import warnings
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import rng

DATASET_MAGIC = b"MLG1"
_HEADER = struct.Struct("<4sIIQ")

# The 6 vocabulary slots left over after the 26 letters.
PUNCTUATION = [" ", ".", ",", "'", "?", "\n"]

DEFAULT_ORDERS = (3, 4, 5, 6)


class VocabMismatchError(ValueError):
    """Sequence scored against a task with a different vocabulary."""


@dataclass(frozen=True)
class LangConfig:
    vocab_size: int = 32
    order: int = 4
    logit_scale: float = 5.0
    theta_sigma: float = 1.0
    embed_dim: int = 32
    hidden_dim: int = 64
    seq_len: int = 4096

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.logit_scale <= 0 or self.theta_sigma <= 0:
            raise ValueError("logit_scale and theta_sigma must be positive")

    @property
    def param_count(self) -> int:
        n, e, h, v = self.order, self.embed_dim, self.hidden_dim, self.vocab_size
        return v * e + (n * e) * h + h + h * v + v


@dataclass(frozen=True)
class LangTask:
    config: LangConfig
    seed: int
    embed: np.ndarray       # (N, embed_dim)
    w_hidden: np.ndarray    # (order * embed_dim, hidden_dim)
    b_hidden: np.ndarray    # (hidden_dim,)
    w_out: np.ndarray       # (hidden_dim, N)
    b_out: np.ndarray       # (N,)

    @property
    def param_count(self) -> int:
        return sum(t.size for t in (self.embed, self.w_hidden, self.b_hidden,
                                    self.w_out, self.b_out))


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray      # (T,) uint8
    task_seed: int
    order: int


def sample_task(config: LangConfig, seed: int) -> LangTask:
    """Draw one language: all parameters i.i.d. N(0, theta_sigma^2)."""
    g = rng.stream(seed, rng.STREAM_TASK_PARAMS)
    s = config.theta_sigma
    n, e, h, v = config.order, config.embed_dim, config.hidden_dim, config.vocab_size
    return LangTask(
        config=config,
        seed=seed,
        embed=g.normal(0.0, s, (v, e)),
        w_hidden=g.normal(0.0, s, (n * e, h)),
        b_hidden=g.normal(0.0, s, h),
        w_out=g.normal(0.0, s, (h, v)),
        b_out=g.normal(0.0, s, v),
    )


def _raw_logits(task: LangTask, contexts: np.ndarray) -> np.ndarray:
    """MLP forward for a batch of contexts, shape (B, order) -> (B, N)."""
    x = task.embed[contexts].reshape(contexts.shape[0], -1)
    h = np.tanh(x @ task.w_hidden + task.b_hidden)
    return h @ task.w_out + task.b_out


def _normalize_and_softmax(z: np.ndarray, scale: float) -> np.ndarray:
    """Per-row mean-0 / std-`scale` renormalization, then softmax.

    Rows with degenerate variance (< 1e-12) fall back to uniform.
    """
    mean = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    n = z.shape[1]
    degenerate = var[:, 0] < 1e-12
    safe_var = np.where(var > 0, var, 1.0)
    zn = scale * (z - mean) / np.sqrt(safe_var)
    zn -= zn.max(axis=1, keepdims=True)
    p = np.exp(zn)
    p /= p.sum(axis=1, keepdims=True)
    if degenerate.any():
        p[degenerate] = 1.0 / n
    return p


def next_token_dist(task: LangTask, context: Sequence[int]) -> np.ndarray:
    """Next-token distribution given the last `order` tokens."""
    ctx = np.asarray(context, dtype=np.int64)
    if ctx.shape != (task.config.order,):
        raise ValueError(f"context must have length {task.config.order}")
    z = _raw_logits(task, ctx[None, :])
    return _normalize_and_softmax(z, task.config.logit_scale)[0]


def _batch_dists(task: LangTask, contexts: np.ndarray) -> np.ndarray:
    z = _raw_logits(task, contexts)
    return _normalize_and_softmax(z, task.config.logit_scale)


def generate_sequence(task: LangTask, seed: int,
                      length: Optional[int] = None) -> TokenSequence:
    """Sample tokens autoregressively; pads the initial context with 0."""
    cfg = task.config
    t_len = cfg.seq_len if length is None else length
    g = rng.stream(seed, rng.STREAM_SEQUENCE)
    n = cfg.order
    buf = np.zeros(n + t_len, dtype=np.int64)
    uniform = g.random(t_len)
    for t in range(t_len):
        p = _batch_dists(task, buf[t:t + n][None, :])[0]
        cdf = np.cumsum(p)
        buf[n + t] = min(int(np.searchsorted(cdf, uniform[t], side="right")),
                         cfg.vocab_size - 1)
    return TokenSequence(tokens=buf[n:].astype(np.uint8),
                         task_seed=task.seed, order=n)


def gt_cross_entropy(task: LangTask, seq: TokenSequence) -> np.ndarray:
    """Per-position -log p(x_t) in nats under the generating task."""
    tokens = np.asarray(seq.tokens, dtype=np.int64)
    if tokens.size and tokens.max() >= task.config.vocab_size:
        raise VocabMismatchError(
            f"token {tokens.max()} outside vocab of size {task.config.vocab_size}")
    n = task.config.order
    padded = np.concatenate([np.zeros(n, dtype=np.int64), tokens])
    contexts = np.lib.stride_tricks.sliding_window_view(padded[:-1], n)
    probs = _batch_dists(task, contexts)
    picked = probs[np.arange(tokens.size), tokens]
    return -np.log(picked)


def intrinsic_difficulty(config: LangConfig, num_tasks: int, tokens_per_task: int,
                         seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo (mean, sem) of the ground-truth cross entropy in nats."""
    means = np.empty(num_tasks)
    for i in range(num_tasks):
        task = sample_task(config, rng.derive_seed(seed, 101, i))
        seq = generate_sequence(task, rng.derive_seed(seed, 102, i),
                                length=tokens_per_task)
        means[i] = gt_cross_entropy(task, seq).mean()
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(num_tasks))


def calibrate_theta_sigma(config: LangConfig, band: tuple[float, float] = (0.5, 1.0),
                          num_tasks: int = 50, tokens_per_task: int = 256,
                          seed: int = 0) -> float:
    """Find a theta_sigma whose mean ground-truth cross entropy lands
    inside `band` (nats).  The current value is tried first; otherwise a
    log-spaced grid is scanned.  With logit renormalization in place the
    difficulty is only weakly sigma-dependent, so the grid is enough."""
    lo, hi = band

    def measure(sigma: float) -> float:
        cfg = replace(config, theta_sigma=sigma)
        return intrinsic_difficulty(cfg, num_tasks, tokens_per_task, seed)[0]

    if lo <= measure(config.theta_sigma) <= hi:
        return config.theta_sigma
    for sigma in np.logspace(-4, 4, 17, base=2.0):
        if lo <= measure(float(sigma)) <= hi:
            return float(sigma)
    raise RuntimeError("calibration failed to land in the difficulty band")


def corpus_mapping(seed: int) -> dict[str, int]:
    """Random injective letter->token table plus the fixed punctuation slots."""
    g = rng.stream(seed, rng.STREAM_CORPUS_MAP)
    perm = g.permutation(32)
    table = {chr(ord("a") + i): int(perm[i]) for i in range(26)}
    for i, ch in enumerate(PUNCTUATION):
        table[ch] = int(perm[26 + i])
    return table


def map_corpus(text: str, seed: int, window: int = 4096) -> Iterator[TokenSequence]:
    """Case-fold `text`, map characters through the seeded table, and emit
    consecutive non-overlapping windows of `window` tokens.  Characters
    outside the table are dropped; a trailing partial window is discarded."""
    table = corpus_mapping(seed)
    toks = [table[ch] for ch in text.casefold() if ch in table]
    if not toks:
        warnings.warn("no mappable characters in corpus text")
        return
    arr = np.asarray(toks, dtype=np.uint8)
    for start in range(0, len(arr) - window + 1, window):
        yield TokenSequence(tokens=arr[start:start + window],
                            task_seed=seed, order=0)


def make_task_pool(k: int, config: LangConfig, seed: int) -> list[LangTask]:
    if k < 1:
        raise ValueError("pool size must be >= 1")
    return [sample_task(config, rng.derive_seed(seed, rng.STREAM_POOL, i))
            for i in range(k)]


def write_dataset(path: str | Path, num_sequences: int, config: LangConfig,
                  seed: int, pool: Optional[list[LangTask]] = None,
                  orders: Sequence[int] = DEFAULT_ORDERS) -> dict:
    """Write a token dataset plus its JSON sidecar index.

    With `pool`, tasks are drawn uniformly from it; otherwise each
    sequence gets a freshly sampled task with order drawn from `orders`.
    Returns the index dict.
    """
    path = Path(path)
    index = []
    pick = rng.stream(seed, rng.STREAM_POOL, 0xF00D)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, config.vocab_size, config.seq_len,
                             num_sequences))
        for i in range(num_sequences):
            if pool is not None:
                task = pool[int(pick.integers(len(pool)))]
            else:
                order = int(orders[int(pick.integers(len(orders)))])
                cfg = replace(config, order=order)
                task = sample_task(cfg, rng.derive_seed(seed, 201, i))
            seq = generate_sequence(task, rng.derive_seed(seed, 202, i))
            f.write(seq.tokens.tobytes())
            index.append({"task_seed": task.seed, "n": task.config.order,
                          "theta_sigma": task.config.theta_sigma})
    sidecar = {"config": asdict(config), "seed": seed, "sequences": index}
    with open(path.with_suffix(path.suffix + ".index.json"), "w") as f:
        json.dump(sidecar, f)
    return sidecar


def read_dataset(path: str | Path):
    """Yield (vocab_size, seq_len, iterator of uint8 token arrays)."""
    path = Path(path)
    f = open(path, "rb")
    magic, vocab, seq_len, count = _HEADER.unpack(f.read(_HEADER.size))
    if magic != DATASET_MAGIC:
        f.close()
        raise ValueError(f"bad dataset magic {magic!r}")

    def sequences():
        with f:
            for _ in range(count):
                buf = f.read(seq_len)
                if len(buf) != seq_len:
                    raise ValueError("truncated dataset file")
                yield np.frombuffer(buf, dtype=np.uint8)

    return vocab, seq_len, count, sequences()
