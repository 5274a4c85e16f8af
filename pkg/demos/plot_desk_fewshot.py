"""
Few-shot classification on a synthetic corpus
=============================================

Pre-train the embedder contrastively on unlabeled clips, then fine-tune a
small head on 5 labeled clips per class and score the rest. A randomly
initialized embedder, fine-tuned the same way, is the baseline.

Runs at desk scale (``configs/desk.toml``). One seed takes a few minutes
on a single core.
"""

import tempfile
import time
from pathlib import Path

from acoustic_ssm import pipeline
from acoustic_ssm.audio import read_manifest
from acoustic_ssm.config import load_config
from acoustic_ssm.synth import make_synth

SEED = 0
cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk.toml")

with tempfile.TemporaryDirectory() as tmp:
    manifest = read_manifest(make_synth(tmp, n_classes=5, clips_per_class=40))
    (split,), loader = pipeline.prepare(manifest, cfg, SEED)
    print(f"{len(split.pretrain)} clips for pre-training, "
          f"{len(split.classes)} classes in the few-shot episode")

    # %%
    # Baseline: no pre-training.
    t0 = time.perf_counter()
    rnd = pipeline.run_group(split, loader, cfg, "random", SEED)
    print(f"random init: accuracy {rnd['accuracy']:.3f} ({time.perf_counter() - t0:.0f} s)")

    # %%
    # Contrastive pre-training, then the same fine-tuning.
    t0 = time.perf_counter()
    pre = pipeline.run_group(split, loader, cfg, "pretrained", SEED)
    print(f"pre-trained: accuracy {pre['accuracy']:.3f} ({time.perf_counter() - t0:.0f} s)")
