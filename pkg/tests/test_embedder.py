import math

import numpy as np
import pytest
import torch

from acoustic_ssm.embedder import (
    AcousticSSM,
    ConvStage,
    EmbedderConfig,
    SSMKernel,
    SSMLayer,
    causal_conv,
    conv_forward,
    discretize_zoh,
    embed,
    ssm_kernel,
    ssm_layer_forward,
    ssm_recurrent_step,
    stability_ok,
)
from acoustic_ssm.errors import ShapeError

SMALL = EmbedderConfig(width=16, state_size=8)


def small_model(**kw):
    torch.manual_seed(0)
    cfg = EmbedderConfig(**{"width": 16, "state_size": 8, **kw})
    return AcousticSSM(cfg).double().eval()


class TestDiscretize:
    def test_hand_values(self):
        a, b = discretize_zoh(-1.0, math.log(2), 1.0)
        assert abs(a.item() - 0.5) < 1e-15
        assert abs(b.item() - 0.5) < 1e-15

    def test_small_dt_limit(self):
        a, b = discretize_zoh(-0.7 + 2j, 1e-12, 1.0)
        assert abs(a.item() - 1) < 1e-10
        assert abs(b.item()) < 1e-10

    def test_zero_lambda_guarded(self):
        a, b = discretize_zoh(0.0, 0.1, 1.0)
        assert a.item() == 1
        assert abs(b.item() - 0.1) < 1e-15

    def test_matches_matrix_exponential(self):
        # scipy's expm on the augmented 2x2 system is an independent route to ZOH
        from scipy.linalg import expm
        lam, dt = -0.3 + 1.7j, 0.05
        m = expm(np.array([[lam, 1.0], [0.0, 0.0]]) * dt)
        a, b = discretize_zoh(lam, dt, 1.0)
        assert abs(a.item() - m[0, 0]) < 1e-14
        assert abs(b.item() - m[0, 1]) < 1e-14


class TestKernel:
    def test_geometric_series(self):
        a, b = discretize_zoh(-1.0, math.log(2), 1.0)
        k = ssm_kernel(a, b, torch.tensor(1.0 + 0j, dtype=torch.complex128), 4, pair_factor=1.0)
        np.testing.assert_allclose(k.numpy(), [0.5, 0.25, 0.125, 0.0625], atol=1e-12)

    def test_zero_c(self):
        a, b = discretize_zoh(torch.tensor([-0.5 + 1j, -0.5 + 3j]), 0.1, torch.ones(2))
        assert torch.all(ssm_kernel(a, b, torch.zeros(2, dtype=torch.complex128), 10) == 0)

    def test_envelope_bound(self):
        g = torch.Generator().manual_seed(1)
        lam = torch.complex(-torch.rand(6, generator=g, dtype=torch.float64),
                            torch.randn(6, generator=g, dtype=torch.float64) * 3)
        a, b = discretize_zoh(lam, 0.3, torch.ones(6))
        c = torch.complex(torch.randn(6, generator=g, dtype=torch.float64),
                          torch.randn(6, generator=g, dtype=torch.float64))
        k = ssm_kernel(a, b, c, 50)
        bound = 2 * ((c.abs() * b.abs()).unsqueeze(-1) * a.abs().unsqueeze(-1) ** torch.arange(50)).sum(0)
        assert torch.all(k.abs() <= bound + 1e-12)

    def test_module_kernel_matches_free_function(self):
        m = SSMKernel(4, 8).double()
        a, b = m.discrete()
        free = ssm_kernel(a, b, torch.view_as_complex(m.C), 30)
        torch.testing.assert_close(m.kernel(30), free, atol=1e-12, rtol=0)


class TestRecurrence:
    def test_zero_state_zero_input(self):
        a, b = discretize_zoh(torch.tensor([-0.5 + 1j]), 0.1, torch.ones(1))
        s, y = ssm_recurrent_step(torch.zeros(1, dtype=torch.complex128), 0.0, a, b,
                                  torch.ones(1, dtype=torch.complex128), 0.0)
        assert s.abs().max() == 0 and y == 0

    def test_impulse_response_is_kernel(self):
        g = torch.Generator().manual_seed(3)
        lam = torch.complex(-torch.rand(4, generator=g, dtype=torch.float64) - 0.1,
                            torch.randn(4, generator=g, dtype=torch.float64))
        a, b = discretize_zoh(lam, 0.2, torch.ones(4))
        c = torch.complex(torch.randn(4, generator=g, dtype=torch.float64),
                          torch.randn(4, generator=g, dtype=torch.float64))
        k = ssm_kernel(a, b, c, 20)
        state = torch.zeros(4, dtype=torch.complex128)
        for i in range(20):
            state, y = ssm_recurrent_step(state, 1.0 if i == 0 else 0.0, a, b, c, 0.0)
            assert abs(y.item() - k[i].item()) < 1e-12

    def test_state_bounded(self):
        g = torch.Generator().manual_seed(4)
        lam = torch.complex(-torch.rand(8, generator=g, dtype=torch.float64) - 0.05,
                            torch.randn(8, generator=g, dtype=torch.float64) * 5)
        a, b = discretize_zoh(lam, 0.5, torch.ones(8))
        bound = (b.abs().sum() / (1 - a.abs().max())).item()
        state = torch.zeros(8, dtype=torch.complex128)
        u = torch.rand(500, generator=g, dtype=torch.float64) * 2 - 1
        for x in u:
            state, _ = ssm_recurrent_step(state, x, a, b, torch.ones(8, dtype=torch.complex128), 0.0)
            assert state.abs().sum().item() <= bound + 1e-9


class TestDuality:
    @pytest.mark.parametrize("t", [1, 2, 3, 7, 16, 33, 64])
    def test_conv_matches_scan(self, t):
        torch.manual_seed(t)
        m = SSMKernel(6, 8).double()
        u = torch.randn(2, 6, t, dtype=torch.float64)
        ref = m(u, "recurrent")
        torch.testing.assert_close(m(u, "direct"), ref, atol=1e-10, rtol=0)
        torch.testing.assert_close(m(u, "fft"), ref, atol=1e-10, rtol=0)

    def test_causal_conv_against_numpy(self, rng):
        u = rng.standard_normal((3, 40))
        k = rng.standard_normal((3, 40))
        want = np.stack([np.convolve(u[h], k[h])[:40] for h in range(3)])
        for mode in ("direct", "fft"):
            got = causal_conv(torch.from_numpy(u), torch.from_numpy(k), mode).numpy()
            np.testing.assert_allclose(got, want, atol=1e-10)


class TestLayer:
    @pytest.mark.parametrize("t", [1, 7, 237])
    def test_shape_preserved(self, t):
        layer = SSMLayer(16, 8)
        x = torch.randn(16, t)
        assert ssm_layer_forward(x, layer).shape == (16, t)

    def test_zero_mixing_is_identity(self):
        layer = SSMLayer(16, 8)
        with torch.no_grad():
            layer.mix.weight.zero_()
            layer.mix.bias.zero_()
        x = torch.randn(3, 16, 20)
        torch.testing.assert_close(layer(x), x, atol=0, rtol=0)

    def test_modes_agree_in_float32(self):
        torch.manual_seed(9)
        layer = SSMLayer(16, 8)
        x = torch.randn(2, 16, 64)
        ref = layer(x, "recurrent")
        for mode in ("direct", "fft"):
            assert (layer(x, mode) - ref).abs().max() < 1e-4


class TestConvStage:
    def test_default_shape(self):
        stage = ConvStage().eval()
        with torch.no_grad():
            assert conv_forward(torch.randn(3, 256, 5), stage).shape == (512, 5)

    def test_single_frame(self):
        stage = ConvStage((8, 8, 16, 32, 64)).eval()
        assert conv_forward(torch.randn(3, 32, 1), stage).shape == (64, 1)

    def test_zero_input_zero_output(self):
        stage = ConvStage((8, 8, 16, 32, 64)).eval()
        assert torch.all(conv_forward(torch.zeros(3, 32, 9), stage) == 0)

    def test_time_equivariance(self):
        stage = ConvStage((8, 8, 16, 32, 64)).double().eval()
        x = torch.randn(2, 3, 32, 20, dtype=torch.float64)
        y = stage(x)
        k = 5
        y_shift = stage(torch.roll(x, k, dims=-1))
        torch.testing.assert_close(y_shift, torch.roll(y, k, dims=-1), atol=1e-12, rtol=0)

    def test_too_small_frequency_names_stage(self):
        stage = ConvStage((8, 8, 16, 32, 64))
        with pytest.raises(ShapeError, match="stage"):
            stage(torch.randn(1, 3, 8, 4))
        with pytest.raises(ShapeError, match="stem"):
            stage(torch.randn(1, 3, 2, 4))

    def test_channel_ladder(self):
        assert EmbedderConfig().channels == (64, 64, 128, 256, 512)
        assert EmbedderConfig(width=128).channels == (16, 16, 32, 64, 128)


class TestEmbedder:
    def test_finite_vector(self):
        y = embed(np.random.default_rng(0).standard_normal((3, 32, 11)), small_model())
        assert y.shape == (16,) and torch.all(torch.isfinite(y))

    def test_batch_independence(self):
        model = small_model()
        x = torch.randn(4, 3, 32, 12, dtype=torch.float64)
        batch = model(x)
        for i in range(4):
            torch.testing.assert_close(batch[i], model(x[i]), atol=1e-12, rtol=0)

    def test_time_structure_matters(self):
        x = torch.randn(1, 3, 32, 24, dtype=torch.float64)
        shifted = torch.roll(x, 7, dims=-1)
        ssm = small_model()
        assert (ssm(x) - ssm(shifted)).abs().max() > 1e-6
        # without the SSM stack the time mean makes the model shift-invariant
        cnn = small_model(ssm_enabled=False)
        torch.testing.assert_close(cnn(x), cnn(shifted), atol=1e-12, rtol=0)

    def test_ablation_has_no_ssm_parameters(self):
        model = small_model(ssm_enabled=False)
        assert len(model.layers) == 0
        assert not any("ssm" in n for n, _ in model.named_parameters())

    def test_modes_agree(self):
        model = small_model()
        x = torch.randn(2, 3, 32, 30, dtype=torch.float64)
        ref = model(x, mode="recurrent")
        for mode in ("direct", "fft"):
            torch.testing.assert_close(model(x, mode=mode), ref, atol=1e-10, rtol=0)

    def test_stability_after_large_step(self):
        model = small_model()
        with torch.no_grad():
            for p in model.parameters():
                p.add_(torch.randn_like(p) * 10)
        assert stability_ok(model)
        for layer in model.layers:
            assert torch.all(layer.ssm.lam().real < 0)
            assert torch.all(torch.exp(layer.ssm.log_dt) > 0)

    def test_s4d_lin_initialization(self):
        m = SSMKernel(4, 8)
        lam = m.lam()
        torch.testing.assert_close(lam.real, torch.full((4, 4), -0.5))
        torch.testing.assert_close(lam.imag, math.pi * torch.arange(4.0).repeat(4, 1))
        dt = torch.exp(m.log_dt)
        assert torch.all((dt >= 1e-3) & (dt <= 1e-1))
