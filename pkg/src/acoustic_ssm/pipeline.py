"""End-to-end wiring: manifest -> groups -> pre-train -> fine-tune -> evaluate."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from acoustic_ssm.audio import (
    GroupSplit,
    Manifest,
    ManifestEntry,
    Waveform,
    build_groups,
    crop_or_pad,
    load_wav,
    resample,
)
from acoustic_ssm.config import RunConfig
from acoustic_ssm.embedder import AcousticSSM
from acoustic_ssm.errors import DataError
from acoustic_ssm.fewshot import (
    ClassifierHead,
    Episode,
    FinetuneSettings,
    ProtocolReport,
    build_episode,
    evaluate,
    finetune,
)
from acoustic_ssm.trainer import (
    Checkpoint,
    PretrainResult,
    PretrainSettings,
    build_embedder,
    build_projection,
    featurize,
    load_module_arrays,
    pretrain_loop,
)

log = logging.getLogger(__name__)


class ClipLoader:
    """Decode + resample manifest entries once, keyed by resolved path."""

    def __init__(self, manifest: Manifest, rate: int):
        self.manifest = manifest
        self.rate = rate
        self._cache: dict[Path, Waveform] = {}

    def __call__(self, entry: ManifestEntry) -> Waveform:
        path = self.manifest.resolve(entry)
        if path not in self._cache:
            if not path.exists():
                raise DataError(f"audio file not found: {path}")
            self._cache[path] = resample(load_wav(path), self.rate)
        return self._cache[path]

    def fixed(self, clip_len: int):
        return lambda entry: crop_or_pad(self(entry), clip_len)


def pretrain_settings(cfg: RunConfig, seed: int | None = None) -> PretrainSettings:
    c = cfg.contrastive
    return PretrainSettings(method=c.method, batch=c.batch, epochs=c.epochs, lr=c.lr,
                            ckpt_every=c.ckpt_every, seg_len=cfg.data.clip_len,
                            seed=cfg.seed if seed is None else seed)


def finetune_settings(cfg: RunConfig, seed: int | None = None) -> FinetuneSettings:
    f = cfg.fewshot
    return FinetuneSettings(lr=f.ft_lr, epochs=f.ft_epochs, batch=f.ft_batch,
                            freeze_embedder=f.freeze_embedder,
                            seed=cfg.seed if seed is None else seed)


def new_models(cfg: RunConfig, seed: int):
    embedder = build_embedder(cfg.embedder_config(), seed)
    projection = build_projection(embedder.out_dim, cfg.contrastive.proj_hidden,
                                  cfg.contrastive.proj_dim, seed)
    return embedder, projection


def pretrain(clips, cfg: RunConfig, seed: int | None = None, **kwargs) -> PretrainResult:
    seed = cfg.seed if seed is None else seed
    embedder, projection = new_models(cfg, seed)
    return pretrain_loop(clips, pretrain_settings(cfg, seed), cfg.feature_config(), embedder,
                         projection, config=cfg.to_dict(),
                         aug_spec=cfg.augment_spec(seed), **kwargs)


def embedder_from_checkpoint(ckpt: Checkpoint, cfg: RunConfig) -> AcousticSSM:
    embedder = build_embedder(cfg.embedder_config(), cfg.seed)
    load_module_arrays("embedder", embedder, ckpt.arrays)
    return embedder


def new_head(cfg: RunConfig, in_dim: int, n_way: int, seed: int) -> ClassifierHead:
    with torch.random.fork_rng():
        torch.manual_seed(seed + 2)
        return ClassifierHead(in_dim, n_way, cfg.fewshot.head_hidden)


@dataclass
class EpisodeTensors:
    support_x: torch.Tensor
    support_y: torch.Tensor
    query_x: torch.Tensor
    query_y: torch.Tensor


def episode_tensors(ep: Episode, cfg: RunConfig) -> EpisodeTensors:
    fcfg = cfg.feature_config()
    sx = featurize([w for w, _ in ep.support], fcfg)
    qx = featurize([w for w, _ in ep.query], fcfg) if ep.query else torch.empty(0)
    return EpisodeTensors(sx, torch.tensor([c for _, c in ep.support]),
                          qx, torch.tensor([c for _, c in ep.query], dtype=torch.long))


def finetune_eval(embedder: AcousticSSM, ep: Episode, cfg: RunConfig, seed: int | None = None,
                  tensors: EpisodeTensors | None = None) -> dict:
    """Fine-tune a fresh head (and by default the embedder) on the support set,
    then score the query set."""
    seed = cfg.seed if seed is None else seed
    tensors = tensors or episode_tensors(ep, cfg)
    head = new_head(cfg, embedder.out_dim, ep.n_way, seed)
    trace = finetune(embedder, head, tensors.support_x, tensors.support_y,
                     finetune_settings(cfg, seed))
    metrics = evaluate(embedder, head, tensors.query_x, tensors.query_y, ep.n_way)
    metrics["finetune_losses"] = trace.losses
    metrics["head"] = head
    return metrics


def prepare(manifest: Manifest, cfg: RunConfig, seed: int | None = None):
    """Group splits plus a loader bound to the configured sample rate."""
    seed = cfg.seed if seed is None else seed
    splits = build_groups(manifest, cfg.fewshot.classes_per_group, cfg.fewshot.shots, seed)
    return splits, ClipLoader(manifest, cfg.data.sample_rate)


def run_group(split: GroupSplit, loader: ClipLoader, cfg: RunConfig, init: str = "pretrained",
              seed: int | None = None, checkpoint: Checkpoint | None = None) -> dict:
    seed = cfg.seed if seed is None else seed
    ep = build_episode(split, loader.fixed(cfg.data.clip_len), cfg.fewshot.n_way, cfg.fewshot.shots)
    if init == "random":
        embedder = build_embedder(cfg.embedder_config(), seed)
    elif checkpoint is not None:
        embedder = embedder_from_checkpoint(checkpoint, cfg)
    else:
        clips = [loader(e) for e in split.pretrain]
        embedder = pretrain(clips, cfg, seed).embedder
    metrics = finetune_eval(embedder, ep, cfg, seed)
    metrics["group"] = split.group
    return metrics


def run_protocol(manifest: Manifest, cfg: RunConfig, init: str = "pretrained",
                 seed: int | None = None) -> ProtocolReport:
    """pretrain -> finetune -> evaluate for every group; per-group and average accuracy."""
    splits, loader = prepare(manifest, cfg, seed)
    accuracy = {}
    for split in splits:
        m = run_group(split, loader, cfg, init, seed)
        log.info("group %s accuracy %.4f", split.group, m["accuracy"])
        accuracy[split.group] = m["accuracy"]
    return ProtocolReport(accuracy)
