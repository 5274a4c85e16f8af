"""AcousticSSM feature extractor.

A ResNet-style CNN whose filters span frequency only (time extent 1) turns the
(3, f, t) stack into a (C, t) sequence; a stack of diagonal state-space layers
then mixes information along time, and a time mean gives the latent vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from acoustic_ssm.errors import ShapeError

SSM_MODES = ("direct", "fft", "recurrent")


@dataclass(frozen=True)
class EmbedderConfig:
    width: int = 512
    state_size: int = 64
    n_ssm_layers: int = 6
    ssm_enabled: bool = True
    time_pool: str = "mean"
    ssm_mode: str = "direct"
    dt_min: float = 1e-3
    dt_max: float = 1e-1

    def __post_init__(self):
        if self.width % 8:
            raise ValueError(f"width must be a multiple of 8, got {self.width}")
        if self.state_size < 2 or self.state_size % 2:
            raise ValueError(f"state_size must be even and >= 2, got {self.state_size}")
        if self.n_ssm_layers < 0:
            raise ValueError("n_ssm_layers must be >= 0")
        if self.ssm_mode not in SSM_MODES:
            raise ValueError(f"ssm_mode must be one of {SSM_MODES}")
        if self.time_pool != "mean":
            raise ValueError("only time_pool='mean' is supported")

    @property
    def channels(self) -> tuple[int, int, int, int, int]:
        """Stem and stage 2..5 widths; (64, 64, 128, 256, 512) at width 512."""
        w = self.width
        return (w // 8, w // 8, w // 4, w // 2, w)


# --- convolutional stage ---------------------------------------------------


def _freq_conv(c_in, c_out, k, stride=1):
    return nn.Conv2d(c_in, c_out, kernel_size=(k, 1), stride=(stride, 1),
                     padding=(k // 2, 0), bias=False)


class ResidualBlock(nn.Module):
    """Two 3x1 conv/BN layers with an identity or 1x1 projection shortcut."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = _freq_conv(c_in, c_out, 3, stride)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = _freq_conv(c_out, c_out, 3)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, kernel_size=1, stride=(stride, 1), bias=False),
                nn.BatchNorm2d(c_out),
            )
        self.stride = stride

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


class ConvStage(nn.Module):
    """Frequency-only residual CNN followed by average pooling over frequency."""

    def __init__(self, channels=(64, 64, 128, 256, 512), in_channels: int = 3):
        super().__init__()
        c1 = channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, c1, kernel_size=(7, 1), stride=(2, 1), padding=(3, 0), bias=False),
            nn.BatchNorm2d(c1),
            nn.ReLU(),
        )
        self.pool = nn.MaxPool2d(kernel_size=(3, 1), stride=(2, 1), padding=(1, 0))
        stages = []
        prev = c1
        for i, c in enumerate(channels[1:], start=2):
            stride = 1 if i == 2 else 2
            stages.append(nn.Sequential(ResidualBlock(prev, c, stride), ResidualBlock(c, c)))
            prev = c
        self.stages = nn.ModuleList(stages)
        self.out_channels = prev
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")

    def forward(self, x):
        if x.dim() != 4:
            raise ShapeError(f"expected (batch, ch, f, t), got {tuple(x.shape)}")
        if x.shape[2] < 4:
            raise ShapeError(f"stem: frequency size {x.shape[2]} too small (< 4)")
        x = self.pool(self.stem(x))
        for i, stage in enumerate(self.stages, start=2):
            if stage[0].stride > 1 and x.shape[2] < 2:
                raise ShapeError(
                    f"stage {i}: frequency size {x.shape[2]} cannot be downsampled further")
            x = stage(x)
        return x.mean(dim=2)


def conv_forward(s: torch.Tensor, stage: ConvStage) -> torch.Tensor:
    """(3, f, t) or (B, 3, f, t) -> (C, t) or (B, C, t)."""
    if s.dim() == 3:
        return stage(s.unsqueeze(0)).squeeze(0)
    return stage(s)


# --- diagonal state-space primitives ---------------------------------------


def discretize_zoh(lam, dt, B):
    """Zero-order hold: ``A_bar = exp(dt*lam)``, ``B_bar = (A_bar - 1)/lam * B``.

    ``lam == 0`` falls back to the limit ``B_bar = dt * B``.
    """
    if isinstance(lam, (int, float, complex)):
        lam = torch.tensor(complex(lam), dtype=torch.complex128)
    elif not lam.is_complex():
        lam = lam.to(torch.complex128 if lam.dtype == torch.float64 else torch.complex64)
    dt = torch.as_tensor(dt, dtype=lam.real.dtype)
    B = torch.as_tensor(B).to(lam.dtype)
    dtA = lam * dt
    A_bar = torch.exp(dtA)
    zero = lam == 0
    safe = torch.where(zero, torch.ones_like(lam), lam)
    B_bar = torch.where(zero, dt * B, (A_bar - 1) / safe * B)
    return A_bar, B_bar


def _vandermonde_kernel(log_re, log_im, CB, L: int, pair_factor: float) -> torch.Tensor:
    # real arithmetic on the (..., N, L) power table; complex only on (..., N)
    powers = torch.arange(L, dtype=log_re.dtype)
    mag = torch.exp(log_re.unsqueeze(-1) * powers)
    ang = log_im.unsqueeze(-1) * powers
    return pair_factor * (torch.einsum("...n,...nl->...l", CB.real, mag * torch.cos(ang))
                          - torch.einsum("...n,...nl->...l", CB.imag, mag * torch.sin(ang)))


def ssm_kernel(A_bar, B_bar, C, L: int, pair_factor: float = 2.0) -> torch.Tensor:
    """``K[..., l] = pair_factor * Re(sum_n C_n A_bar_n**l B_bar_n)`` for l < L."""
    A_bar = torch.atleast_1d(torch.as_tensor(A_bar))
    CB = torch.as_tensor(C).to(A_bar.dtype) * torch.as_tensor(B_bar).to(A_bar.dtype)
    A_bar, CB = torch.broadcast_tensors(A_bar, CB)
    log_a = torch.log(A_bar)
    return _vandermonde_kernel(log_a.real, log_a.imag, CB, L, pair_factor)


def ssm_recurrent_step(state, u, A_bar, B_bar, C, D, pair_factor: float = 2.0):
    """One step of the discrete recurrence. Returns ``(state', y)``.

    Shapes broadcast: state (..., N) complex, u and D (...,) real.
    """
    u = torch.as_tensor(u)
    state = A_bar * state + B_bar * u.unsqueeze(-1)
    y = pair_factor * (C * state).sum(-1).real + D * u
    return state, y


def causal_conv(u: torch.Tensor, K: torch.Tensor, mode: str = "direct") -> torch.Tensor:
    """Per-channel causal convolution ``y[..., h, i] = sum_{l<=i} K[h, l] u[..., h, i-l]``."""
    T = u.shape[-1]
    K = K[..., :T]
    if mode == "fft":
        n = 2 * T
        y = torch.fft.irfft(torch.fft.rfft(u, n=n) * torch.fft.rfft(K, n=n), n=n)
        return y[..., :T]
    # direct evaluation as a batched lower-triangular Toeplitz matmul:
    # row i of the matrix is K[i], K[i-1], ..., K[0], 0, ..., 0
    padded = torch.cat([K.flip(-1), K.new_zeros(K.shape[:-1] + (T - 1,))], dim=-1)
    toeplitz = padded.unfold(-1, T, 1).flip(-2)
    return torch.einsum("hij,...hj->...hi", toeplitz, u)


class SSMKernel(nn.Module):
    """Diagonal SSM parameters for H independent channels with N/2 conjugate pairs.

    Re(lambda) is stored as log(-Re) and dt as log(dt), so stability and positive
    step sizes hold after any update.
    """

    def __init__(self, channels: int, state_size: int, dt_min=1e-3, dt_max=1e-1):
        super().__init__()
        H, N2 = channels, state_size // 2
        self.log_dt = nn.Parameter(
            torch.rand(H) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min))
        self.log_neg_re = nn.Parameter(torch.full((H, N2), math.log(0.5)))
        self.im = nn.Parameter(math.pi * torch.arange(N2, dtype=torch.float32).repeat(H, 1))
        self.B = nn.Parameter(torch.view_as_real(torch.ones(H, N2, dtype=torch.complex64)).clone())
        self.C = nn.Parameter(torch.view_as_real(torch.randn(H, N2, dtype=torch.complex64)).clone())
        self.D = nn.Parameter(torch.randn(H))

    def lam(self):
        return torch.complex(-torch.exp(self.log_neg_re), self.im)

    def discrete(self):
        B = torch.view_as_complex(self.B)
        return discretize_zoh(self.lam(), torch.exp(self.log_dt).unsqueeze(-1), B)

    def kernel(self, L: int) -> torch.Tensor:
        dt = torch.exp(self.log_dt).unsqueeze(-1)
        _, B_bar = self.discrete()
        CB = torch.view_as_complex(self.C) * B_bar
        # log(A_bar) = dt * lambda exactly, no complex log needed
        return _vandermonde_kernel(-torch.exp(self.log_neg_re) * dt, self.im * dt, CB, L, 2.0)

    def scan(self, u: torch.Tensor) -> torch.Tensor:
        """Recurrent evaluation of ``causal_conv(u, K) + D u`` over (..., H, T)."""
        A_bar, B_bar = self.discrete()
        C = torch.view_as_complex(self.C)
        state = torch.zeros(*u.shape[:-1], A_bar.shape[-1], dtype=A_bar.dtype)
        ys = []
        for t in range(u.shape[-1]):
            state, y = ssm_recurrent_step(state, u[..., t], A_bar, B_bar, C, self.D)
            ys.append(y)
        return torch.stack(ys, dim=-1)

    def forward(self, u: torch.Tensor, mode: str = "direct") -> torch.Tensor:
        if mode == "recurrent":
            return self.scan(u)
        K = self.kernel(u.shape[-1])
        return causal_conv(u, K, mode) + self.D.unsqueeze(-1) * u


class SSMLayer(nn.Module):
    """Pre-norm residual block: LayerNorm -> SSM -> GELU -> pointwise mixing -> +x."""

    def __init__(self, channels: int, state_size: int, dt_min=1e-3, dt_max=1e-1):
        super().__init__()
        self.norm = nn.LayerNorm(channels)
        self.ssm = SSMKernel(channels, state_size, dt_min, dt_max)
        self.mix = nn.Conv1d(channels, channels, kernel_size=1)

    def forward(self, x: torch.Tensor, mode: str = "direct") -> torch.Tensor:
        z = self.norm(x.transpose(-1, -2)).transpose(-1, -2)
        z = F.gelu(self.ssm(z, mode))
        return x + self.mix(z)


def ssm_layer_forward(x: torch.Tensor, layer: SSMLayer, mode: str = "direct") -> torch.Tensor:
    """(C, t) or (B, C, t) in, same shape out."""
    if x.dim() == 2:
        return layer(x.unsqueeze(0), mode).squeeze(0)
    return layer(x, mode)


# --- full embedder ---------------------------------------------------------


class AcousticSSM(nn.Module):
    """y = f(x): conv stage -> SSM stack -> mean over time."""

    def __init__(self, cfg: EmbedderConfig = EmbedderConfig()):
        super().__init__()
        self.cfg = cfg
        self.conv = ConvStage(cfg.channels)
        n_layers = cfg.n_ssm_layers if cfg.ssm_enabled else 0
        self.layers = nn.ModuleList(
            SSMLayer(cfg.width, cfg.state_size, cfg.dt_min, cfg.dt_max) for _ in range(n_layers))

    @property
    def out_dim(self) -> int:
        return self.cfg.width

    def sequence(self, x: torch.Tensor, mode: str | None = None) -> torch.Tensor:
        """(B, 3, f, t) -> (B, C, t) before time pooling."""
        mode = mode or self.cfg.ssm_mode
        h = self.conv(x)
        for layer in self.layers:
            h = layer(h, mode)
        return h

    def forward(self, x: torch.Tensor, mode: str | None = None) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        y = self.sequence(x, mode).mean(dim=-1)
        return y.squeeze(0) if squeeze else y


def embed(s, model: AcousticSSM) -> torch.Tensor:
    """Latent vector(s) for one (3, f, t) stack or a batch of them."""
    s = torch.as_tensor(s, dtype=next(model.parameters()).dtype)
    return model(s)


def stability_ok(model: nn.Module) -> bool:
    """Re(lambda) < 0 and dt > 0 for every SSM kernel (holds by parameterization
    unless a parameter became non-finite)."""
    for m in model.modules():
        if isinstance(m, SSMKernel):
            if not (torch.all(-torch.exp(m.log_neg_re) < 0) and torch.all(torch.exp(m.log_dt) > 0)):
                return False
    return True
