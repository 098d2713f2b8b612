"""Reference model zoo: causal transformer with rotary embeddings and
restricted attention windows, an autoregressive token LM, and a
convolutional VAE for frame encoding.

The attention window is measured in time increments.  In the maze model
one time increment is a (frame, action) token pair, so a window of 2
lets each layer see one increment back and an L-layer stack covers an
effective context of L + 1 increments; a window of 1 confines every
output to its own increment.
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

WINDOW_FULL = "full"
Window = Union[str, int]


@dataclass(frozen=True)
class CoreConfig:
    layers: int
    d_model: int
    heads: int
    window: Window = WINDOW_FULL
    pair_size: int = 1          # tokens per time increment
    mlp_ratio: int = 4
    max_len: int = 8192

    def __post_init__(self):
        if self.window != WINDOW_FULL and int(self.window) < 1:
            raise ValueError("window must be 'full' or a positive int")
        if self.d_model % self.heads:
            raise ValueError("d_model must divide evenly into heads")


# Table-style presets: name -> (layers, d_model, heads).
LM_PRESETS = {
    "tiny": (6, 64, 4),
    "small": (12, 256, 8),
}
CAUSAL_PRESETS = {
    "desk": (4, 128, 4),
    "small": (8, 512, 8),
}


def attention_mask(t: int, window: Window, pair_size: int,
                   device=None) -> torch.Tensor:
    """Boolean (t, t) mask; True where query i may attend to key j."""
    idx = torch.arange(t, device=device)
    allowed = idx[None, :] <= idx[:, None]
    if window != WINDOW_FULL:
        inc = idx // pair_size
        allowed &= (inc[:, None] - inc[None, :]) < int(window)
    return allowed


def _rotary_tables(t: int, head_dim: int, device, dtype):
    half = head_dim // 2
    freqs = 10000.0 ** (-torch.arange(half, device=device,
                                      dtype=dtype) / half)
    angles = torch.arange(t, device=device, dtype=dtype)[:, None] * freqs
    return angles.cos(), angles.sin()


def apply_rotary(x: torch.Tensor, cos: torch.Tensor,
                 sin: torch.Tensor) -> torch.Tensor:
    """Rotate head vectors by position-dependent angles. x: (B,H,T,D)."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


class SelfAttention(nn.Module):
    def __init__(self, cfg: CoreConfig):
        super().__init__()
        self.cfg = cfg
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.cfg.heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, h, d // h).transpose(1, 2)
        k = k.view(b, t, h, d // h).transpose(1, 2)
        v = v.view(b, t, h, d // h).transpose(1, 2)
        cos, sin = _rotary_tables(t, d // h, x.device, x.dtype)
        q = apply_rotary(q, cos, sin)
        k = apply_rotary(k, cos, sin)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(out.transpose(1, 2).reshape(b, t, d))


class Block(nn.Module):
    def __init__(self, cfg: CoreConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = SelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.mlp_ratio * cfg.d_model),
            nn.GELU(),
            nn.Linear(cfg.mlp_ratio * cfg.d_model, cfg.d_model))

    def forward(self, x, mask):
        x = x + self.attn(self.norm1(x), mask)
        return x + self.mlp(self.norm2(x))


class TransformerCore(nn.Module):
    """Pre-norm causal transformer over already-embedded tokens."""

    def __init__(self, cfg: CoreConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mask = attention_mask(x.shape[1], self.cfg.window,
                              self.cfg.pair_size, device=x.device)
        for block in self.blocks:
            x = block(x, mask)
        return self.norm(x)


class MetaLangLM(nn.Module):
    """Autoregressive token LM over the 32-symbol vocabulary."""

    def __init__(self, vocab_size: int = 32, preset: str = "tiny",
                 window: Window = WINDOW_FULL):
        super().__init__()
        layers, d_model, heads = LM_PRESETS[preset]
        self.cfg = CoreConfig(layers=layers, d_model=d_model, heads=heads,
                              window=window, pair_size=1)
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, d_model)
        self.core = TransformerCore(self.cfg)
        self.head = nn.Linear(d_model, vocab_size)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, T) int tokens -> (B, T, vocab) next-token logits."""
        return self.head(self.core(self.embed(tokens)))

    def position_losses(self, tokens: torch.Tensor) -> torch.Tensor:
        """Per-position -log p of each token given its prefix: (B, T-1)."""
        logits = self(tokens[:, :-1])
        logp = F.log_softmax(logits, dim=-1)
        return -logp.gather(-1, tokens[:, 1:, None].long()).squeeze(-1)

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = F.relu(self.conv1(F.relu(x)))
        return x + self.conv2(h)


class VAE(nn.Module):
    """Conv/deconv frame autoencoder with residual blocks.

    Four stride-2 stages each way; `image_size` must be divisible by 16.
    """

    def __init__(self, latent_dim: int = 128, image_size: int = 128,
                 channels: tuple[int, ...] = (16, 32, 64, 64)):
        super().__init__()
        if image_size % 16:
            raise ValueError("image_size must be divisible by 16")
        if len(channels) != 4:
            raise ValueError("exactly four encoder stages expected")
        self.latent_dim = latent_dim
        self.image_size = image_size
        self.spatial = image_size // 16
        self.channels = channels

        enc = []
        c_in = 3
        for c in channels:
            enc += [nn.Conv2d(c_in, c, 4, stride=2, padding=1), nn.ReLU(),
                    ResBlock(c)]
            c_in = c
        self.encoder = nn.Sequential(*enc)
        flat = channels[-1] * self.spatial * self.spatial
        self.fc_mu = nn.Linear(flat, latent_dim)
        self.fc_logvar = nn.Linear(flat, latent_dim)
        self.fc_dec = nn.Linear(latent_dim, flat)
        dec = []
        rev = list(reversed(channels))
        for c_in, c_out in zip(rev, rev[1:] + [rev[-1]]):
            dec += [ResBlock(c_in),
                    nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1),
                    nn.ReLU()]
        dec.append(nn.Conv2d(rev[-1], 3, 3, padding=1))
        self.decoder = nn.Sequential(*dec)

    def encode(self, frames: torch.Tensor):
        """(B, 3, S, S) in [0, 1] -> (mu, logvar), each (B, latent)."""
        h = self.encoder(frames).flatten(1)
        return self.fc_mu(h), self.fc_logvar(h)

    def reparameterize(self, mu, logvar, generator=None):
        std = torch.exp(0.5 * logvar)
        eps = torch.randn(std.shape, generator=generator, device=std.device,
                          dtype=std.dtype)
        return mu + eps * std

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc_dec(z).view(-1, self.channels[-1], self.spatial,
                                self.spatial)
        return torch.sigmoid(self.decoder(h))

    def forward(self, frames, generator=None):
        mu, logvar = self.encode(frames)
        z = self.reparameterize(mu, logvar, generator)
        return self.decode(z), mu, logvar


class WorldPolicyModel(nn.Module):
    """Causal model over interleaved (frame latent, action) token pairs.

    Outputs at frame positions are action distributions (policy model);
    outputs at action positions are next-frame latents (world model).
    """

    def __init__(self, latent_dim: int = 128, num_actions: int = 5,
                 preset: str = "desk", window: Window = WINDOW_FULL,
                 presets: Optional[dict] = None):
        super().__init__()
        layers, d_model, heads = (presets or CAUSAL_PRESETS)[preset]
        self.cfg = CoreConfig(layers=layers, d_model=d_model, heads=heads,
                              window=window, pair_size=2)
        self.latent_dim = latent_dim
        self.num_actions = num_actions
        self.z_proj = nn.Linear(latent_dim, d_model)
        self.a_embed = nn.Embedding(num_actions, d_model)
        self.mask_embed = nn.Parameter(torch.zeros(d_model))
        self.core = TransformerCore(self.cfg)
        self.pm_head = nn.Linear(d_model, num_actions)
        self.wm_head = nn.Linear(d_model, latent_dim)

    def interleave(self, z_tokens: torch.Tensor,
                   a_tokens: torch.Tensor) -> torch.Tensor:
        b, t, d = z_tokens.shape
        seq = torch.stack([z_tokens, a_tokens], dim=2)
        return seq.view(b, 2 * t, d)

    def forward(self, z: torch.Tensor, actions: torch.Tensor,
                mask_positions: Optional[torch.Tensor] = None):
        """z: (B, T, latent), actions: (B, T) ints.

        Returns (pm_logits (B, T, A), z_pred (B, T, latent)) where
        z_pred[:, t] estimates z[:, t + 1].  `mask_positions` is a
        (B, T) bool tensor of frame inputs replaced by the trainable
        mask embedding (input corruption).
        """
        z_tokens = self.z_proj(z)
        if mask_positions is not None:
            z_tokens = torch.where(mask_positions[..., None],
                                   self.mask_embed.to(z_tokens.dtype),
                                   z_tokens)
        out = self.core(self.interleave(z_tokens, self.a_embed(actions)))
        return self.pm_head(out[:, 0::2]), self.wm_head(out[:, 1::2])

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
