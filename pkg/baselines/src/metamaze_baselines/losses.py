"""Training losses, input corruption, and the learning-rate schedule.

The combined objective is a weighted sum of four terms: frame
reconstruction (vae), action cross entropy (pm), decoded next-frame
error (wm), and the latent-space next-frame regularizer (z).
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    vae: float = 1.0
    pm: float = 0.25
    wm: float = 0.70
    z: float = 0.05

    def __post_init__(self):
        if min(self.vae, self.pm, self.wm, self.z) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    """Individual loss terms plus the weights used to combine them."""
    l_vae: torch.Tensor
    l_pm: torch.Tensor
    l_wm: torch.Tensor
    l_z: torch.Tensor
    weights: LossWeights

    @property
    def total(self) -> torch.Tensor:
        w = self.weights
        return (w.vae * self.l_vae + w.pm * self.l_pm
                + w.wm * self.l_wm + w.z * self.l_z)


def kl_gaussian(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)), mean over the batch."""
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1).mean()


def vae_loss(recon: torch.Tensor, target: torch.Tensor, mu: torch.Tensor,
             logvar: torch.Tensor, kl_weight: float = 1e-3):
    """(total, reconstruction mse, kl) for one frame batch."""
    rec = F.mse_loss(recon, target)
    kl = kl_gaussian(mu, logvar)
    return rec + kl_weight * kl, rec, kl


def policy_loss(pm_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross entropy between predicted action distributions and labels."""
    return F.cross_entropy(pm_logits.flatten(0, 1), labels.flatten().long())


def latent_wm_loss(z_pred: torch.Tensor, z_next: torch.Tensor) -> torch.Tensor:
    """Next-frame prediction error in latent space (the z regularizer)."""
    return F.mse_loss(z_pred, z_next)


def corrupt_latents(z: torch.Tensor, mask_rate: float = 0.1,
                    noise_rate: float = 0.1, generator=None):
    """Input corruption for frame latents.

    Returns (z_corrupted, mask_positions): a `mask_rate` fraction of
    frame inputs is flagged for replacement by the trainable mask
    embedding (applied inside the model), and a disjoint `noise_rate`
    fraction is perturbed with unit Gaussian noise.
    """
    if mask_rate + noise_rate > 1.0:
        raise ValueError("corruption rates must sum to at most 1")
    b, t = z.shape[:2]
    u = torch.rand((b, t), generator=generator, device=z.device)
    mask_positions = u < mask_rate
    noise_positions = (u >= mask_rate) & (u < mask_rate + noise_rate)
    noise = torch.randn(z.shape, generator=generator, device=z.device,
                        dtype=z.dtype)
    z = torch.where(noise_positions[..., None], z + noise, z)
    return z, mask_positions


def noam_lr(step: int, warmup: int = 1000, peak: float = 1e-3) -> float:
    """Linear warmup to `peak` at `warmup` steps, then 1/sqrt decay."""
    s = max(step, 1)
    return peak * min(s / warmup, (warmup / s) ** 0.5)


def annealed_weights(step: int, total_steps: int,
                     start=(0.95, 0.05), final=(0.70, 0.25),
                     fraction: float = 0.3,
                     vae: float = 0.0, z: float = 0.05) -> LossWeights:
    """(wm, pm) weight schedule: linear ramp over the first `fraction`
    of training, flat at the final values afterwards."""
    ramp = max(1, int(total_steps * fraction))
    a = min(step / ramp, 1.0)
    wm = start[0] + (final[0] - start[0]) * a
    pm = start[1] + (final[1] - start[1]) * a
    return LossWeights(vae=vae, pm=pm, wm=wm, z=z)
