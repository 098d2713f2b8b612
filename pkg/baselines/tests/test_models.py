import math

import numpy as np
import pytest
import torch

from metamaze_baselines import models


class TestAttentionMask:
    def test_causal_only_when_full(self):
        m = models.attention_mask(5, models.WINDOW_FULL, 1)
        assert torch.equal(m, torch.tril(torch.ones(5, 5, dtype=torch.bool)))

    def test_window_limits_increment_distance(self):
        m = models.attention_mask(6, 2, 1)
        for i in range(6):
            for j in range(6):
                assert m[i, j] == (j <= i and i - j < 2)

    def test_pairs_share_an_increment(self):
        m = models.attention_mask(8, 2, 2)
        # token 5 (increment 2) may see increments 1 and 2 -> tokens 2..5
        assert m[5].tolist() == [False, False, True, True, True, True,
                                 False, False]

    def test_window_one_is_current_increment(self):
        m = models.attention_mask(6, 1, 2)
        assert m[3].tolist() == [False, False, True, True, False, False]

    def test_bad_window_rejected(self):
        with pytest.raises(ValueError):
            models.CoreConfig(layers=1, d_model=8, heads=2, window=0)


class TestRotary:
    def test_relative_phase(self):
        # Rotating both q and k preserves dot products under a shared
        # positional shift (the relative-position property).
        torch.manual_seed(0)
        d = 8
        q = torch.randn(1, 1, 1, d)
        k = torch.randn(1, 1, 1, d)
        cos4, sin4 = models._rotary_tables(4, d, None, torch.float32)

        def dot(i, j):
            qi = models.apply_rotary(q, cos4[i], sin4[i])
            kj = models.apply_rotary(k, cos4[j], sin4[j])
            return float((qi * kj).sum())

        assert dot(0, 1) == pytest.approx(dot(2, 3), abs=1e-5)
        assert dot(0, 2) == pytest.approx(dot(1, 3), abs=1e-5)


class TestMetaLangLM:
    def test_default_param_count_near_target(self):
        n = models.MetaLangLM().param_count()
        assert abs(n - 303_000) / 303_000 < 0.02

    def test_forward_shapes(self):
        model = models.MetaLangLM()
        tokens = torch.randint(0, 32, (2, 17))
        assert model(tokens).shape == (2, 17, 32)
        assert model.position_losses(tokens).shape == (2, 16)

    def test_untrained_loss_near_uniform(self):
        torch.manual_seed(0)
        model = models.MetaLangLM()
        tokens = torch.randint(0, 32, (4, 64))
        with torch.no_grad():
            loss = float(model.position_losses(tokens).mean())
        assert abs(loss - math.log(32)) < 0.5

    def test_causal_dependence_only(self):
        torch.manual_seed(0)
        model = models.MetaLangLM()
        a = torch.randint(0, 32, (1, 12))
        b = a.clone()
        b[0, 8] = (b[0, 8] + 1) % 32
        with torch.no_grad():
            la, lb = model(a), model(b)
        assert torch.allclose(la[0, :8], lb[0, :8], atol=1e-5)
        assert not torch.allclose(la[0, 8], lb[0, 8], atol=1e-5)


class TestVAE:
    def test_round_trip_shapes(self):
        vae = models.VAE(latent_dim=16, image_size=32, channels=(4, 8, 8, 8))
        x = torch.rand(2, 3, 32, 32)
        recon, mu, logvar = vae(x)
        assert recon.shape == x.shape
        assert mu.shape == logvar.shape == (2, 16)
        assert recon.min() >= 0 and recon.max() <= 1

    def test_reparameterize_deterministic_given_generator(self):
        vae = models.VAE(latent_dim=8, image_size=16, channels=(2, 2, 2, 2))
        mu, logvar = torch.zeros(3, 8), torch.zeros(3, 8)
        g1 = torch.Generator().manual_seed(0)
        g2 = torch.Generator().manual_seed(0)
        assert torch.equal(vae.reparameterize(mu, logvar, g1),
                           vae.reparameterize(mu, logvar, g2))

    def test_image_size_validated(self):
        with pytest.raises(ValueError):
            models.VAE(image_size=100)


def pair_grad_per_offset(window, layers: int, t: int = 16) -> list[float]:
    """Gradient magnitude of the last policy output wrt each earlier
    (frame, action) pair's latent input, newest pair first."""
    torch.manual_seed(0)
    model = models.WorldPolicyModel(
        latent_dim=4, preset="probe", window=window,
        presets={"probe": (layers, 32, 4)})
    z = torch.randn(1, t, 4, requires_grad=True)
    actions = torch.randint(0, 5, (1, t))
    pm_logits, _ = model(z, actions)
    pm_logits[0, -1].sum().backward()
    grads = z.grad[0].abs().sum(-1)
    return [float(grads[t - 1 - k]) for k in range(t)]


class TestWorldPolicyModel:
    def test_output_shapes(self):
        model = models.WorldPolicyModel(latent_dim=8, preset="p",
                                        presets={"p": (2, 16, 2)})
        pm, zp = model(torch.randn(2, 5, 8), torch.randint(0, 5, (2, 5)))
        assert pm.shape == (2, 5, 5)
        assert zp.shape == (2, 5, 8)

    def test_mask_positions_replace_frame_input(self):
        model = models.WorldPolicyModel(latent_dim=8, preset="p", window=1,
                                        presets={"p": (2, 16, 2)})
        z = torch.randn(1, 4, 8)
        actions = torch.randint(0, 5, (1, 4))
        mask = torch.zeros(1, 4, dtype=torch.bool)
        mask[0, 2] = True
        with torch.no_grad():
            pm_ref, _ = model(z, actions)
            z2 = z.clone()
            z2[0, 2] += 1.0          # masked input must be ignored
            pm_alt, _ = model(z2, actions, mask_positions=mask)
            pm_msk, _ = model(z, actions, mask_positions=mask)
        assert torch.allclose(pm_alt, pm_msk, atol=1e-6)
        assert not torch.allclose(pm_ref[0, 2], pm_msk[0, 2], atol=1e-6)

    def test_window2_receptive_field_is_layers_plus_one(self):
        grads = pair_grad_per_offset(window=2, layers=8)
        assert all(g > 0 for g in grads[:9])
        assert all(g == 0.0 for g in grads[9:])

    def test_window1_sees_only_current_pair(self):
        grads = pair_grad_per_offset(window=1, layers=8)
        assert grads[0] > 0
        assert all(g == 0.0 for g in grads[1:])

    def test_full_window_reaches_every_pair(self):
        grads = pair_grad_per_offset(window=models.WINDOW_FULL, layers=2)
        assert all(g > 0 for g in grads)

    def test_preset_param_counts_ordered(self):
        desk = models.WorldPolicyModel(preset="desk").param_count()
        small = models.WorldPolicyModel(preset="small").param_count()
        assert desk < small
