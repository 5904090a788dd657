import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pmnowcast.errors import ConfigError, NumericError, ShapeError
from pmnowcast.losses import (
    LossConfig,
    SsimConfig,
    gaussian_window,
    huber,
    huber_ssim_loss,
    loss_fn,
    loss_gradient_check,
    rmse_ssim_loss,
    ssim,
)


def naive_ssim(a, b, size=11, sigma=1.5, data_range=2.0, k1=0.01, k2=0.03):
    """Pixel-by-pixel SSIM: Gaussian-weighted local moments over a reflect-padded image."""
    half = size // 2
    g = [math.exp(-((i - half) ** 2) / (2 * sigma**2)) for i in range(size)]
    s = sum(g)
    w = np.array([[gi * gj / (s * s) for gj in g] for gi in g])
    pa = np.pad(np.asarray(a, float), half, mode="reflect")
    pb = np.pad(np.asarray(b, float), half, mode="reflect")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    h, wd = np.shape(a)
    total = 0.0
    for i in range(h):
        for j in range(wd):
            wa = pa[i : i + size, j : j + size]
            wb = pb[i : i + size, j : j + size]
            ma, mb = (w * wa).sum(), (w * wb).sum()
            va = (w * (wa - ma) ** 2).sum()
            vb = (w * (wb - mb) ** 2).sum()
            cov = (w * (wa - ma) * (wb - mb)).sum()
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    return total / (h * wd)


def field(seed, shape=(24, 24)):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g, dtype=torch.float64)


class TestSsim:
    def test_window_normalised(self):
        w = gaussian_window(11, 1.5)
        assert w.sum().item() == pytest.approx(1.0, abs=1e-15)
        assert torch.equal(w, w.T)

    def test_identity(self):
        x = field(0)
        assert ssim(x, x).item() == pytest.approx(1.0, abs=1e-12)

    def test_negated_zero_mean_field_is_anticorrelated(self):
        yy, xx = torch.meshgrid(torch.arange(24), torch.arange(24), indexing="ij")
        x = torch.where((yy + xx) % 2 == 0, 1.0, -1.0).double() * (1 + 0.1 * field(1))
        assert ssim(x, -x).item() < 0

    @pytest.mark.parametrize("seed", range(3))
    def test_symmetry(self, seed):
        a, b = field(seed), field(seed + 10)
        assert abs(ssim(a, b).item() - ssim(b, a).item()) < 1e-12

    @pytest.mark.parametrize("seed,data_range", [(0, 2.0), (1, 2.0), (2, 37.5)])
    def test_matches_naive_oracle(self, seed, data_range):
        a = field(seed) * data_range / 2
        b = (field(seed) + 0.3 * field(seed + 100)) * data_range / 2
        got = ssim(a, b, SsimConfig(data_range=data_range)).item()
        assert got == pytest.approx(naive_ssim(a.numpy(), b.numpy(), data_range=data_range), rel=1e-6)

    def test_per_sample_reduction(self):
        a = torch.stack([field(0), field(1)])[:, None]
        b = torch.stack([field(2), field(1)])[:, None]
        per = ssim(a, b, reduction="none")
        assert per.shape == (2,)
        assert per[1].item() == pytest.approx(1.0)
        assert ssim(a, b).item() == pytest.approx(per.mean().item())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ssim(field(0), field(0, (24, 23)))

    def test_invalid_window(self):
        with pytest.raises(ConfigError):
            SsimConfig(window_size=10)


class TestHuber:
    def test_branches(self):
        d = 1.0
        err = torch.tensor([0.0, 0.5, -0.5, 1.0, 10.0, -10.0])
        np.testing.assert_allclose(huber(err, d).tolist(), [0, 0.125, 0.125, 0.5, 9.5, 9.5])

    def test_continuous_at_delta(self):
        d = 0.7
        e = torch.tensor([d - 1e-9, d + 1e-9], dtype=torch.float64)
        h = huber(e, d)
        assert abs(h[0] - h[1]).item() < 1e-8


CONSTANT_FIXTURE = 0.424983630118743


class TestCompositeLosses:
    @pytest.mark.parametrize("variant", ["rmse_ssim", "huber_ssim"])
    def test_zero_at_target(self, variant):
        t = field(3, (32, 32))[None, None]
        assert loss_fn(LossConfig(variant))(t.clone(), t).item() == pytest.approx(0.0, abs=1e-12)

    def test_constant_fields_hand_value(self):
        pred = torch.full((1, 1, 32, 32), 0.5, dtype=torch.float64)
        target = torch.full((1, 1, 32, 32), 1.0, dtype=torch.float64)
        c1 = (0.01 * 2.0) ** 2
        rmse_term = 0.75 * 0.5 / (1.0 + 1e-6)
        ssim_term = 0.25 * (1 - (2 * 0.5 * 1.0 + c1) / (0.25 + 1.0 + c1))
        assert rmse_term == pytest.approx(0.375, abs=1e-6)
        assert rmse_term + ssim_term == pytest.approx(CONSTANT_FIXTURE, abs=1e-12)
        assert rmse_ssim_loss(pred, target).item() == pytest.approx(CONSTANT_FIXTURE, abs=1e-9)

    def test_huber_single_outlier(self):
        target = field(4, (32, 32)) + 0.5
        pred = target.clone()
        pred[7, 9] += 10.0
        cfg = LossConfig("huber_ssim")
        n = target.numel()
        expected = 0.7 * (9.5 / n) / (target.abs().mean().item() + 1e-6) + 0.3 * (
            1 - naive_ssim(pred.numpy(), target.numpy())
        )
        assert huber_ssim_loss(pred, target, cfg).item() == pytest.approx(expected, rel=1e-6)

    def test_rmse_term_is_permutation_invariant(self):
        t = field(5, (16, 16))
        p = t + 0.1 * field(6, (16, 16))
        perm = torch.randperm(256, generator=torch.Generator().manual_seed(0))
        cfg = LossConfig(weights=(1.0, 0.0))
        a = rmse_ssim_loss(p, t, cfg)
        b = rmse_ssim_loss(p.flatten()[perm].view(16, 16), t.flatten()[perm].view(16, 16), cfg)
        assert a.item() == pytest.approx(b.item(), rel=1e-12)

    def test_batch_loss_is_mean_of_sample_losses(self):
        t = torch.stack([field(i, (16, 16)) for i in range(4)])[:, None]
        p = t + 0.2 * torch.stack([field(10 + i, (16, 16)) for i in range(4)])[:, None]
        for variant in ("rmse_ssim", "huber_ssim"):
            fn = loss_fn(LossConfig(variant))
            per = [fn(p[i : i + 1], t[i : i + 1]).item() for i in range(4)]
            assert fn(p, t).item() == pytest.approx(sum(per) / 4, rel=1e-12)

    @pytest.mark.parametrize("variant", ["rmse_ssim", "huber_ssim"])
    def test_gradient_check(self, variant):
        t = field(7, (32, 32)) * 2 - 1
        p = t + 0.3 * (field(8, (32, 32)) - 0.5)
        assert loss_gradient_check(loss_fn(LossConfig(variant)), p, t) < 1e-4

    def test_gradient_finite_at_target(self):
        t = field(9, (16, 16))
        p = t.clone().requires_grad_(True)
        (1 - ssim(p, t)).backward()
        assert torch.isfinite(p.grad).all()
        for variant in ("rmse_ssim", "huber_ssim"):
            p = t.clone().requires_grad_(True)
            loss_fn(LossConfig(variant))(p, t).backward()
            assert torch.isfinite(p.grad).all()

    @pytest.mark.parametrize("variant", ["rmse_ssim", "huber_ssim"])
    def test_degrades_monotonically_with_noise(self, variant):
        fn = loss_fn(LossConfig(variant))
        for seed in range(20):
            t = field(seed, (32, 32))
            noise = field(seed + 1000, (32, 32)) - 0.5
            losses = [fn(t + a * noise, t).item() for a in (0.0, 0.05, 0.1, 0.2, 0.4, 0.8)]
            assert all(x < y for x, y in zip(losses, losses[1:])), (seed, losses)

    def test_non_finite_inputs(self):
        t = field(0, (8, 8))
        p = t.clone()
        p[0, 0] = float("nan")
        with pytest.raises(NumericError):
            rmse_ssim_loss(p, t)
        with pytest.raises(NumericError):
            huber_ssim_loss(t, t * float("inf"))

    @pytest.mark.parametrize("kw", [dict(variant="mse"), dict(weights=(0.5, 0.6)), dict(huber_delta=0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            LossConfig(**kw)

    def test_config_round_trip(self):
        cfg = LossConfig("huber_ssim", huber_delta=0.5, ssim=SsimConfig(window_size=7))
        assert LossConfig.from_dict(cfg.to_dict()) == cfg


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 3.0))
def test_losses_are_non_negative(seed, scale):
    t = field(seed, (16, 16))
    p = t + scale * (field(seed + 1, (16, 16)) - 0.5)
    for variant in ("rmse_ssim", "huber_ssim"):
        assert loss_fn(LossConfig(variant))(p, t).item() >= 0.0
