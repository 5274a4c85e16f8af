"""
From waveform to a three-channel log-mel tensor
===============================================

The embedder consumes ``(3, n_mels, frames)`` arrays: standardized log-mel
energies, standardized STFT magnitude, and the raw phase angle. This walks a
synthetic call through the feature pipeline.
"""

import numpy as np

from acoustic_ssm.features import FeatureConfig, mel_filterbank, stack_channels, stft
from acoustic_ssm.synth import call_type, synth_clip

cfg = FeatureConfig(n_fft=62, hop=48, n_mels=32, sample_rate=4000)
rng = np.random.default_rng(0)
clip = synth_clip(call_type(2), cfg.sample_rate, 2000, rng)
print(f"clip: {clip.samples.size} samples at {clip.rate} Hz, f0 = {call_type(2).f0:.1f} Hz")

# %%
# The power spectrum should peak near the fundamental.
spec = np.abs(stft(clip, cfg)) ** 2
freqs = np.arange(spec.shape[0]) * cfg.sample_rate / cfg.n_fft
print(f"strongest bin: {freqs[spec.mean(1).argmax()]:.1f} Hz")

# %%
# Triangular mel filters, one row per band.
fb = mel_filterbank(cfg)
print("filterbank", fb.shape, "every band non-empty:", bool((fb.sum(1) > 0).all()))

# %%
# Stacked channels. The first two are standardized; phase stays in [-pi, pi].
x = stack_channels(clip, cfg)
print("features", x.shape)
for name, c in zip(("log-mel", "magnitude", "phase"), x):
    print(f"  {name:>9s}: mean {c.mean():+.2e}, std {c.std():.3f}, "
          f"range [{c.min():.2f}, {c.max():.2f}]")
