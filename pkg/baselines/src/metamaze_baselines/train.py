"""Training loops for the reference baselines.

`train_metalm` fits the autoregressive token LM on a language dataset
file and reports per-position losses on held-out sequences.
`train_maze` runs the two-phase recipe on episode packs: the VAE is
trained alone first, then frozen while the causal model learns the
policy, world-model, and latent regularizer terms with input
corruption.  `ablation_suite` trains one LM per task-pool size and
evaluates on seen and unseen tasks.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from metamaze import evalkit, metalang, rollout
from . import losses as L
from .envs import load_token_matrix
from .models import (WINDOW_FULL, MetaLangLM, VAE, WorldPolicyModel)


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "tiny"
    window: object = WINDOW_FULL
    steps: int = 2000
    batch_size: int = 8
    seq_len: int = 512
    peak_lr: float = 1e-3
    warmup: int = 1000
    seed: int = 0
    kl_weight: float = 1e-3
    mask_rate: float = 0.1
    noise_rate: float = 0.1
    latent_dim: int = 64
    vae_channels: tuple = (8, 16, 32, 32)
    device: str = "cpu"

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")


def _generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def train_metalm(data, cfg: TrainConfig,
                 holdout: int = 8) -> tuple[MetaLangLM, np.ndarray]:
    """Fit the LM; returns (model, per-position holdout loss rows).

    `data` is a dataset file path or an (N, T) uint8 token matrix.  The
    last `holdout` rows are never trained on.
    """
    tokens = data if isinstance(data, np.ndarray) else load_token_matrix(data)
    if tokens.shape[0] <= holdout:
        raise ValueError("dataset smaller than the holdout")
    train = torch.from_numpy(tokens[:-holdout].astype(np.int64))
    torch.manual_seed(cfg.seed)
    model = MetaLangLM(preset=cfg.preset, window=cfg.window).to(cfg.device)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr)
    g = _generator(cfg.seed)
    t_max = min(cfg.seq_len, train.shape[1])
    for step in range(1, cfg.steps + 1):
        rows = torch.randint(0, train.shape[0], (cfg.batch_size,),
                             generator=g)
        start = int(torch.randint(0, train.shape[1] - t_max + 1, (1,),
                                  generator=g))
        batch = train[rows, start:start + t_max].to(cfg.device)
        loss = model.position_losses(batch).mean()
        for group in opt.param_groups:
            group["lr"] = L.noam_lr(step, cfg.warmup, cfg.peak_lr)
        opt.zero_grad()
        loss.backward()
        opt.step()
    rows = eval_metalm(model, tokens[-holdout:], cfg)
    return model, rows


@torch.no_grad()
def eval_metalm(model: MetaLangLM, tokens: np.ndarray,
                cfg: Optional[TrainConfig] = None) -> np.ndarray:
    """Per-position -log p rows, one per evaluation sequence."""
    device = next(model.parameters()).device
    batch = torch.from_numpy(np.asarray(tokens).astype(np.int64)).to(device)
    out = []
    for i in range(0, batch.shape[0], 8):
        out.append(model.position_losses(batch[i:i + 8]).cpu().numpy())
    return np.concatenate(out, axis=0)


def metalm_curve(rows: np.ndarray, log_buckets: int = 12):
    return evalkit.aggregate_positions(list(rows), metric="nats",
                                       log_buckets=log_buckets)


def _pack_frames(pack) -> torch.Tensor:
    frames = torch.from_numpy(pack.frames.astype(np.float32) / 255.0)
    return frames.permute(0, 3, 1, 2)       # (T, 3, H, W)


def train_vae(packs: Sequence, cfg: TrainConfig) -> tuple[VAE, list[float]]:
    """Phase 1: reconstruction-only training on pack frames."""
    torch.manual_seed(cfg.seed)
    frames = torch.cat([_pack_frames(p) for p in packs])
    size = frames.shape[-1]
    vae = VAE(latent_dim=cfg.latent_dim, image_size=size,
              channels=cfg.vae_channels).to(cfg.device)
    opt = torch.optim.Adam(vae.parameters(), lr=cfg.peak_lr)
    g = _generator(cfg.seed + 1)
    history = []
    for step in range(1, cfg.steps + 1):
        rows = torch.randint(0, frames.shape[0], (cfg.batch_size,),
                             generator=g)
        batch = frames[rows].to(cfg.device)
        recon, mu, logvar = vae(batch)
        loss, rec, kl = L.vae_loss(recon, batch, mu, logvar, cfg.kl_weight)
        for group in opt.param_groups:
            group["lr"] = L.noam_lr(step, cfg.warmup, cfg.peak_lr)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(rec.detach()))
    return vae, history


@torch.no_grad()
def encode_packs(vae: VAE, packs: Sequence, device="cpu"):
    """Frozen-encoder latents plus action/label tensors per pack."""
    out = []
    for pack in packs:
        frames = _pack_frames(pack).to(device)
        mu, _ = vae.encode(frames)
        out.append((mu,
                    torch.from_numpy(pack.behavior_actions.astype(np.int64)),
                    torch.from_numpy(pack.reference_actions.astype(np.int64)),
                    frames))
    return out


def maze_loss_report(vae: VAE, model: WorldPolicyModel, z, actions, labels,
                     frames, weights: L.LossWeights,
                     cfg: TrainConfig, generator=None,
                     corrupt: bool = True) -> L.LossReport:
    """One combined-loss evaluation on a (latents, actions) episode slice."""
    z_in = z[:, :-1]
    if corrupt:
        z_in, mask_positions = L.corrupt_latents(
            z_in, cfg.mask_rate, cfg.noise_rate, generator)
    else:
        mask_positions = None
    pm_logits, z_pred = model(z_in, actions[:, :-1],
                              mask_positions=mask_positions)
    recon, mu, logvar = vae(frames[:, :-1].flatten(0, 1))
    l_vae, _, _ = L.vae_loss(recon, frames[:, :-1].flatten(0, 1),
                             mu, logvar, cfg.kl_weight)
    l_pm = L.policy_loss(pm_logits, labels[:, :-1])
    decoded = vae.decode(z_pred.flatten(0, 1))
    l_wm = torch.nn.functional.mse_loss(
        decoded, frames[:, 1:].flatten(0, 1))
    l_z = L.latent_wm_loss(z_pred, z[:, 1:])
    return L.LossReport(l_vae=l_vae, l_pm=l_pm, l_wm=l_wm, l_z=l_z,
                        weights=weights)


def train_maze(corpus_dir, cfg: TrainConfig, causal_preset: str = "desk",
               causal_steps: Optional[int] = None):
    """Two-phase recipe on a pack corpus.

    Returns (vae, causal model, history of LossReport totals).
    """
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "corpus.json").read_text())
    packs = [rollout.read_pack(corpus_dir / e["pack"])
             for e in manifest["entries"]]
    vae, _ = train_vae(packs, cfg)
    for p in vae.parameters():
        p.requires_grad_(False)
    episodes = encode_packs(vae, packs, cfg.device)

    torch.manual_seed(cfg.seed + 2)
    model = WorldPolicyModel(latent_dim=cfg.latent_dim,
                             preset=causal_preset,
                             window=cfg.window).to(cfg.device)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr)
    g = _generator(cfg.seed + 3)
    steps = causal_steps if causal_steps is not None else cfg.steps
    history = []
    for step in range(1, steps + 1):
        i = int(torch.randint(0, len(episodes), (1,), generator=g))
        z, actions, labels, frames = episodes[i]
        weights = L.annealed_weights(step, steps, z=0.05)
        report = maze_loss_report(vae, model, z[None], actions[None],
                                  labels[None], frames[None], weights, cfg,
                                  generator=g)
        for group in opt.param_groups:
            group["lr"] = L.noam_lr(step, cfg.warmup, cfg.peak_lr)
        opt.zero_grad()
        report.total.backward()
        opt.step()
        history.append(float(report.total.detach()))
    return vae, model, history


class ContaminationError(RuntimeError):
    pass


def ablation_suite(pool_sizes: Sequence[int], sequences: int,
                   cfg: TrainConfig, lang: Optional[metalang.LangConfig] = None,
                   seed: int = 0, unseen_tasks: int = 8,
                   eval_rows: int = 8) -> dict:
    """Train one LM per pool size on same-sized datasets; evaluate on
    seen-pool tasks and a held-out unseen task set."""
    lang = lang or metalang.LangConfig(order=3, seq_len=cfg.seq_len)
    unseen_pool = metalang.make_task_pool(unseen_tasks, lang,
                                          seed=seed + 10_000)
    unseen_seeds = {t.seed for t in unseen_pool}
    results = {}
    for k in pool_sizes:
        pool = metalang.make_task_pool(k, lang, seed=seed + k)
        if {t.seed for t in pool} & unseen_seeds:
            raise ContaminationError(
                f"pool K={k} overlaps the unseen evaluation set")
        train_tokens = _pool_tokens(pool, sequences, lang, seed + k)
        model, _ = train_metalm(train_tokens, cfg, holdout=1)
        seen_rows = eval_metalm(
            model, _pool_tokens(pool, eval_rows, lang, seed + k + 1))
        unseen_rows = eval_metalm(
            model, _pool_tokens(unseen_pool, eval_rows, lang, seed + 2))
        results[k] = {"seen": seen_rows, "unseen": unseen_rows}
    return results


def _pool_tokens(pool, count: int, lang: metalang.LangConfig,
                 seed: int) -> np.ndarray:
    from metamaze import rng
    g = rng.stream(seed, 77)
    rows = []
    for i in range(count):
        task = pool[int(g.integers(len(pool)))]
        seq = metalang.generate_sequence(task, rng.derive_seed(seed, 78, i),
                                         length=lang.seq_len)
        rows.append(seq.tokens)
    return np.stack(rows)
