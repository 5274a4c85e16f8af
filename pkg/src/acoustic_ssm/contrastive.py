"""Positive-pair construction, projection head, bilinear similarity and the
in-batch contrastive loss."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from acoustic_ssm.audio import Waveform
from acoustic_ssm.augment import AugmentSpec, random_segment, random_view, with_seed

METHODS = ("segments", "augmentations")


def sub_seeds(seed: int, index: int, n: int = 3) -> list[int]:
    """Independent integer seeds for item ``index`` of a run seeded with ``seed``."""
    ss = np.random.SeedSequence([seed, index])
    return [int(s) for s in ss.generate_state(n)]


def make_pairs_method1(clips: Sequence[Waveform], seg_len: int, seed: int):
    """Two independent random crops of each clip form an (anchor, positive) pair."""
    pairs = []
    for k, clip in enumerate(clips):
        s_a, s_p, _ = sub_seeds(seed, k)
        pairs.append((random_segment(clip, seg_len, s_a), random_segment(clip, seg_len, s_p)))
    return pairs


def make_pairs_method2(clips: Sequence[Waveform], seg_len: int, spec: AugmentSpec, seed: int):
    """One crop per clip, augmented twice with independent parameter draws."""
    pairs = []
    for k, clip in enumerate(clips):
        s_seg, s_a, s_p = sub_seeds(seed, k)
        seg = random_segment(clip, seg_len, s_seg)
        pairs.append((random_view(seg, with_seed(spec, s_a)), random_view(seg, with_seed(spec, s_p))))
    return pairs


def make_pairs(method: str, clips, seg_len: int, seed: int, spec: AugmentSpec | None = None):
    if method == "segments":
        return make_pairs_method1(clips, seg_len, seed)
    if method == "augmentations":
        return make_pairs_method2(clips, seg_len, spec or AugmentSpec(), seed)
    raise ValueError(f"unknown contrastive method {method!r}; expected one of {METHODS}")


def bilinear_similarity(z, z_prime, W) -> torch.Tensor:
    """``z^T W z'``; broadcasts over leading batch dimensions."""
    return torch.einsum("...i,ij,...j->...", z, W, z_prime)


def bilinear_nce(za: torch.Tensor, zp: torch.Tensor, W: torch.Tensor) -> torch.Tensor:
    """Mean over anchors of ``-log softmax_j(za_i^T W zp_j)[i]``.

    The candidates for anchor i are all positives in the batch: its own
    positive and, as negatives, the positives of every other anchor.
    """
    if za.shape[0] < 2:
        raise ValueError("contrastive loss needs at least 2 pairs (no negatives otherwise)")
    if za.shape != zp.shape:
        raise ValueError(f"anchor/positive shapes differ: {tuple(za.shape)} vs {tuple(zp.shape)}")
    logits = za @ W @ zp.T
    # cross_entropy uses a max-shifted logsumexp
    return F.cross_entropy(logits, torch.arange(za.shape[0]))


class ProjectionHead(nn.Module):
    """g: two-layer MLP, plus the bilinear similarity matrix W."""

    def __init__(self, in_dim: int = 512, hidden: int = 512, out_dim: int = 128):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)
        self.W = nn.Parameter(torch.eye(out_dim) / out_dim ** 0.5)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(y)))

    def similarity(self, ya, yb) -> torch.Tensor:
        return bilinear_similarity(self(ya), self(yb), self.W)


def project(y: torch.Tensor, head: ProjectionHead) -> torch.Tensor:
    return head(y)


def contrastive_loss(anchors: torch.Tensor, positives: torch.Tensor,
                     head: ProjectionHead) -> torch.Tensor:
    """Loss for a batch of latent anchors/positives (row i of each forms a pair)."""
    return bilinear_nce(head(anchors), head(positives), head.W)
