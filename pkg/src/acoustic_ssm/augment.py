"""Waveform augmentations (contrastive views) and random segment extraction."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from acoustic_ssm.audio import Waveform, crop_or_pad

Range = tuple[float, float]

_PV_NFFT = 512
_PV_HOP = _PV_NFFT // 4


@dataclass(frozen=True)
class AugmentSpec:
    """Uniform sampling ranges for :func:`random_view`."""

    pitch_semitones: Range = (-2.0, 2.0)
    fade_frac: Range = (0.0, 0.1)
    mask_frac: Range = (0.0, 0.1)
    shift_frac: Range = (-0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        for name, lo, hi, bound_lo, bound_hi in (
            ("pitch_semitones", *self.pitch_semitones, -12.0, 12.0),
            ("fade_frac", *self.fade_frac, 0.0, 0.5),
            ("mask_frac", *self.mask_frac, 0.0, 0.5),
            ("shift_frac", *self.shift_frac, -1.0, 1.0),
        ):
            if not bound_lo <= lo <= hi <= bound_hi:
                raise ValueError(f"{name} range ({lo}, {hi}) outside [{bound_lo}, {bound_hi}]")

    @classmethod
    def collapsed(cls, seed: int = 0) -> "AugmentSpec":
        zero = (0.0, 0.0)
        return cls(zero, zero, zero, zero, seed)


def _time_stretch(x: np.ndarray, rate: float, n_out: int) -> np.ndarray:
    """Phase-vocoder time stretch; ``rate < 1`` lengthens. Output cropped/padded to n_out."""
    nfft = min(_PV_NFFT, max(16, 1 << int(np.log2(max(x.shape[0], 16)))))
    hop = nfft // 4
    _, _, spec = signal.stft(x, nperseg=nfft, noverlap=nfft - hop)
    n_bins, n_frames = spec.shape
    steps = np.arange(0, n_frames, rate)
    expected_adv = 2 * np.pi * hop * np.arange(n_bins) / nfft
    padded = np.concatenate([spec, np.zeros((n_bins, 2), dtype=spec.dtype)], axis=1)
    phase = np.angle(spec[:, 0])
    out = np.empty((n_bins, steps.shape[0]), dtype=spec.dtype)
    for t, step in enumerate(steps):
        i = int(step)
        frac = step - i
        c0, c1 = padded[:, i], padded[:, i + 1]
        out[:, t] = ((1 - frac) * np.abs(c0) + frac * np.abs(c1)) * np.exp(1j * phase)
        dphase = np.angle(c1) - np.angle(c0) - expected_adv
        dphase -= 2 * np.pi * np.round(dphase / (2 * np.pi))
        phase = phase + expected_adv + dphase
    _, y = signal.istft(out, nperseg=nfft, noverlap=nfft - hop)
    if y.shape[0] >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - y.shape[0]))


def pitch_shift(w: Waveform, semitones: float) -> Waveform:
    """Shift pitch by resampling, then stretch back to the original duration."""
    if abs(semitones) > 12:
        raise ValueError(f"|semitones| must be <= 12, got {semitones}")
    if semitones == 0 or not np.any(w.samples):
        return w.with_samples(w.samples.copy())
    factor = 2.0 ** (semitones / 12.0)
    n = len(w)
    squeezed = signal.resample(w.samples, max(2, int(round(n / factor))))
    return w.with_samples(_time_stretch(squeezed, squeezed.shape[0] / n, n))


def fade(w: Waveform, in_frac: float, out_frac: float) -> Waveform:
    """Linear fade-in from gain 0 and a mirrored fade-out to gain 0."""
    if in_frac < 0 or out_frac < 0 or in_frac + out_frac > 1:
        raise ValueError(f"invalid fade fractions ({in_frac}, {out_frac})")
    n = len(w)
    gain = np.ones(n)
    n_in = int(round(in_frac * n))
    n_out = int(round(out_frac * n))
    if n_in:
        gain[:n_in] = np.arange(n_in) / n_in
    if n_out:
        gain[n - n_out:] = np.minimum(gain[n - n_out:], np.arange(n_out)[::-1] / n_out)
    return w.with_samples(w.samples * gain)


def mask_span(n: int, mask_frac: float, seed: int) -> tuple[int, int]:
    """(start, length) of the zeroed span used by :func:`time_mask`."""
    length = int(round(mask_frac * n))
    start = int(np.random.default_rng(seed).integers(0, n - length + 1))
    return start, length


def time_mask(w: Waveform, mask_frac: float, seed: int) -> Waveform:
    if not 0 <= mask_frac <= 0.5:
        raise ValueError(f"mask_frac must lie in [0, 0.5], got {mask_frac}")
    start, length = mask_span(len(w), mask_frac, seed)
    x = w.samples.copy()
    x[start:start + length] = 0.0
    return w.with_samples(x)


def time_shift(w: Waveform, shift_frac: float) -> Waveform:
    """Circular shift: ``out[i] = in[(i - k) mod n]`` with ``k = round(shift_frac * n)``."""
    if abs(shift_frac) > 1:
        raise ValueError(f"|shift_frac| must be <= 1, got {shift_frac}")
    k = int(round(shift_frac * len(w)))
    return w.with_samples(np.roll(w.samples, k))


def sample_view_params(spec: AugmentSpec, n: int) -> dict:
    """Draw the augmentation parameters ``random_view`` will apply to an n-sample clip."""
    rng = np.random.default_rng(spec.seed)
    params = {
        "semitones": float(rng.uniform(*spec.pitch_semitones)),
        "shift_frac": float(rng.uniform(*spec.shift_frac)),
        "mask_frac": float(rng.uniform(*spec.mask_frac)),
        "mask_seed": int(rng.integers(0, 2**31 - 1)),
        "fade_in": float(rng.uniform(*spec.fade_frac)),
        "fade_out": float(rng.uniform(*spec.fade_frac)),
    }
    params["mask_start"], params["mask_len"] = mask_span(n, params["mask_frac"], params["mask_seed"])
    return params


def random_view(w: Waveform, spec: AugmentSpec) -> Waveform:
    """pitch -> shift -> mask -> fade with parameters drawn under ``spec.seed``."""
    p = sample_view_params(spec, len(w))
    out = pitch_shift(w, p["semitones"])
    out = time_shift(out, p["shift_frac"])
    out = time_mask(out, p["mask_frac"], p["mask_seed"])
    return fade(out, p["fade_in"], p["fade_out"])


def random_segment(w: Waveform, seg_len: int, seed: int) -> Waveform:
    """Contiguous seg_len crop at a seeded offset; short clips are zero-padded."""
    if len(w) <= seg_len:
        return crop_or_pad(w, seg_len)
    start = int(np.random.default_rng(seed).integers(0, len(w) - seg_len + 1))
    return w.with_samples(w.samples[start:start + seg_len].copy())


def with_seed(spec: AugmentSpec, seed: int) -> AugmentSpec:
    return replace(spec, seed=seed)
