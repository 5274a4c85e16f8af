"""Synthetic call-type corpus for desk-scale runs.

Each class is a pulsed harmonic call. Fundamentals step up by 3 semitones
from class to class and pulse rates alternate slow/fast, so spectrally
neighbouring classes always differ in rhythm. Individual clips jitter pitch,
pulse timing and level, sit on a random noise floor and carry short chirp or
noise distractors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from acoustic_ssm.audio import ManifestEntry, Waveform, save_wav, write_manifest

SEMITONE_SPACING = 3.0
PULSE_RATES = (4.0, 12.0)


@dataclass(frozen=True)
class CallType:
    f0: float
    n_harmonics: int
    rolloff: float
    pulse_rate: float
    duty: float


def call_type(k: int, base_f0: float = 220.0) -> CallType:
    return CallType(
        f0=base_f0 * 2.0 ** (SEMITONE_SPACING * k / 12.0),
        n_harmonics=3,
        rolloff=0.6,
        pulse_rate=PULSE_RATES[k % 2],
        duty=0.4,
    )


def _distractors(rate: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Short chirps and noise bursts at random times; they change from segment
    to segment of one clip, unlike the call itself."""
    out = np.zeros(n)
    for _ in range(rng.integers(2, 6)):
        length = int(rng.uniform(0.05, 0.2) * rate)
        start = int(rng.integers(0, max(1, n - length)))
        t = np.arange(length) / rate
        win = np.hanning(length)
        if rng.random() < 0.5:
            f_a, f_b = rng.uniform(100, rate / 2 * 0.9, size=2)
            sweep = 2 * np.pi * (f_a * t + 0.5 * (f_b - f_a) / t[-1] * t ** 2)
            burst = np.sin(sweep)
        else:
            burst = rng.standard_normal(length)
        out[start:start + length] += rng.uniform(0.3, 1.0) * win * burst[:n - start]
    return out


def synth_clip(ct: CallType, rate: int, n: int, rng: np.random.Generator,
               noise: tuple[float, float] = (0.05, 0.2), jitter: float = 0.3,
               distractors: float = 0.3) -> Waveform:
    t = np.arange(n) / rate
    f0 = ct.f0 * 2.0 ** (rng.uniform(-jitter, jitter) / 12.0)
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(2, 6) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / rate
    tone = sum(ct.rolloff ** h * np.sin((h + 1) * phase + rng.uniform(0, 2 * np.pi))
               for h in range(ct.n_harmonics) if (h + 1) * f0 * 1.02 < rate / 2)
    pulse_rate = ct.pulse_rate * rng.uniform(0.9, 1.1)
    cycle = (t * pulse_rate + rng.uniform(0, 1)) % 1.0
    envelope = np.where(cycle < ct.duty, np.sin(np.pi * cycle / ct.duty) ** 2, 0.0)
    call = tone * envelope
    call /= np.max(np.abs(call)) + 1e-12
    x = rng.uniform(0.3, 0.8) * call + rng.uniform(*noise) * rng.standard_normal(n)
    x += distractors * _distractors(rate, n, rng)
    x /= max(1.0, np.max(np.abs(x)) / 0.99)
    return Waveform(x, rate)


def make_synth(out_dir, n_classes: int = 5, clips_per_class: int = 40, seed: int = 0,
               rate: int = 4000, seconds: float = 1.0) -> Path:
    """Write ``class_k/clip_j.wav`` files plus ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(round(seconds * rate))
    entries = []
    for k in range(n_classes):
        ct = call_type(k)
        (out / f"class_{k}").mkdir(exist_ok=True)
        for j in range(clips_per_class):
            rng = np.random.default_rng([seed, k, j])
            rel = f"class_{k}/clip_{j:03d}.wav"
            save_wav(out / rel, synth_clip(ct, rate, n, rng))
            entries.append(ManifestEntry(rel, f"class_{k}", "", "auto"))
    manifest = out / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest
