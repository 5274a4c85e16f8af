"""Stacked spectrogram front end: log-Mel, STFT magnitude and STFT phase on one grid."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from acoustic_ssm.audio import Waveform

VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 510
    hop: int = 128
    n_mels: int = 256
    sample_rate: int = 20000
    eps: float = 1e-6
    window: str = "hann"

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft % 2:
            raise ValueError(f"n_fft must be positive and even, got {self.n_fft}")
        if self.hop <= 0:
            raise ValueError(f"hop must be positive, got {self.hop}")
        if self.n_mels != self.n_bins:
            raise ValueError(
                f"n_mels ({self.n_mels}) must equal n_fft/2+1 ({self.n_bins}) "
                "so all channels share one grid")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, length: int) -> int:
        return 1 + length // self.hop

    def output_shape(self, length: int) -> tuple[int, int, int]:
        return (3, self.n_bins, self.n_frames(length))


def _window(cfg: FeatureConfig) -> np.ndarray:
    # periodic window (fftbins=True), the usual STFT convention
    return signal.get_window(cfg.window, cfg.n_fft, fftbins=True)


def stft(w: Waveform | np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Complex STFT of shape (n_fft/2+1, 1 + len // hop), reflect center padding."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("empty waveform")
    pad = cfg.n_fft // 2
    mode = "reflect" if x.shape[0] > 1 else "constant"
    xp = np.pad(x, pad, mode=mode)
    n_frames = cfg.n_frames(x.shape[0])
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.n_fft)[::cfg.hop][:n_frames]
    return np.fft.rfft(frames * _window(cfg), axis=1).T


@lru_cache(maxsize=16)
def _mel_filterbank_cached(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    df = freqs[1]
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    lo, center, hi = edges[:-2], edges[1:-1], edges[2:]
    # narrow low-frequency triangles are widened to one bin so that
    # every filter touches at least one FFT bin
    left = np.maximum(center - lo, df)[:, None]
    right = np.maximum(hi - center, df)[:, None]
    d = freqs[None, :] - center[:, None]
    fb = np.where(d < 0, 1.0 + d / left, 1.0 - d / right)
    fb = np.clip(fb, 0.0, None)
    fb.setflags(write=False)
    return fb


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """HTK-scale triangular filters of unit peak height, shape (n_mels, n_bins)."""
    return _mel_filterbank_cached(cfg.n_mels, cfg.n_fft, cfg.sample_rate)


def mel_spectrogram(w: Waveform | np.ndarray, cfg: FeatureConfig,
                    spec: np.ndarray | None = None) -> np.ndarray:
    """``log(mel_fb @ |STFT|**2 + eps)``."""
    if spec is None:
        spec = stft(w, cfg)
    power = np.abs(spec) ** 2
    return np.log(mel_filterbank(cfg) @ power + cfg.eps)


def _standardize(a: np.ndarray) -> np.ndarray:
    return (a - a.mean()) / np.sqrt(max(a.var(), VAR_FLOOR))


def stack_channels(w: Waveform | np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Return the (3, f, t) float32 stack: standardized log-Mel, standardized
    magnitude, raw phase angle."""
    spec = stft(w, cfg)
    mel = mel_spectrogram(w, cfg, spec=spec)
    out = np.stack([_standardize(mel), _standardize(np.abs(spec)), np.angle(spec)])
    return out.astype(np.float32)


# --- binary feature container ---------------------------------------------


def write_features(path, data: np.ndarray, cfg: FeatureConfig) -> None:
    """JSON header line followed by little-endian float32 values (C order)."""
    data = np.ascontiguousarray(data, dtype="<f4")
    header = {"shape": list(data.shape), "dtype": "float32", "config": asdict(cfg)}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(data.tobytes())


def read_features(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    data = np.frombuffer(payload, dtype="<f4").reshape(header["shape"])
    return data, header
