"""Optimizers, checkpoint files, gradient checking and the pre-training loop."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from acoustic_ssm.audio import Waveform
from acoustic_ssm.contrastive import ProjectionHead, contrastive_loss, make_pairs
from acoustic_ssm.embedder import AcousticSSM, EmbedderConfig, stability_ok
from acoustic_ssm.errors import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    DataError,
    NumericError,
)
from acoustic_ssm.features import FeatureConfig, stack_channels

log = logging.getLogger(__name__)

# --- optimizers --------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _check_shapes(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor]):
    for name, g in grads.items():
        if g is None:
            continue
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if tuple(g.shape) != tuple(params[name].shape):
            raise ValueError(
                f"shape mismatch for {name!r}: param {tuple(params[name].shape)} "
                f"vs grad {tuple(g.shape)}")


def adam_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor],
              state: AdamState, lr: float):
    """Bias-corrected Adam. Pure: returns new parameter and state objects.

    Parameters without a gradient (``None`` or absent) keep their value and moments.
    """
    _check_shapes(params, grads)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        m_prev = m.get(name, torch.zeros_like(p))
        v_prev = v.get(name, torch.zeros_like(p))
        m[name] = b1 * m_prev + (1 - b1) * g
        v[name] = b2 * v_prev + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        new_params[name] = p - lr * m_hat / (torch.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, t, b1, b2, state.eps)


def sgd_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor], lr: float):
    """Plain gradient descent ``p - lr * g``."""
    _check_shapes(params, grads)
    out = dict(params)
    for name, g in grads.items():
        if g is not None:
            out[name] = params[name] - lr * g
    return out


def named_grads(params: Mapping[str, torch.nn.Parameter]) -> dict[str, torch.Tensor | None]:
    return {k: (None if p.grad is None else p.grad.detach()) for k, p in params.items()}


def assign_(params: Mapping[str, torch.nn.Parameter], values: Mapping[str, torch.Tensor]):
    with torch.no_grad():
        for k, p in params.items():
            p.copy_(values[k])


# --- gradient check --------------------------------------------------------


def relative_error(a, n, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|n|, floor): error of ``a`` relative to the numeric value ``n``.

    A gradient that is doubled scores 1.0. The floor keeps coordinates whose
    true derivative is ~0 from dividing finite-difference noise by ~0.
    """
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.abs(n), floor)


def _central_difference(loss_fn, flat: torch.Tensor, i: int, h: float, richardson: bool) -> float:
    orig = flat[i].item()

    def diff(step):
        flat[i] = orig + step
        up = loss_fn().item()
        flat[i] = orig - step
        down = loss_fn().item()
        flat[i] = orig
        return (up - down) / (2 * step)

    d = diff(h)
    if not richardson:
        return d
    # cancels the h^2 truncation term, which dominates on high-curvature weights
    return (4.0 * diff(h / 2) - d) / 3.0


def grad_check_report(loss_fn: Callable[[], torch.Tensor], params: Mapping[str, torch.Tensor],
                      probe_count: int = 5, h: float = 1e-5, seed: int = 0,
                      grads: Mapping[str, torch.Tensor] | None = None,
                      richardson: bool = True, floor: float = 1e-8) -> dict[str, float]:
    """Per-array max relative error between autograd and central differences.

    ``params`` must be leaf tensors that ``loss_fn`` reads. ``grads`` may supply
    an alternative analytic gradient to audit (used for negative controls).
    """
    names = list(params)
    tensors = [params[k] for k in names]
    if grads is None:
        loss = loss_fn()
        analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
        analytic = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, analytic)]
    else:
        analytic = [grads[k] for k in names]
    rng = np.random.default_rng(seed)
    report = {}
    with torch.no_grad():
        for name, p, g in zip(names, tensors, analytic):
            flat = p.view(-1)
            idx = rng.choice(flat.numel(), size=min(probe_count, flat.numel()), replace=False)
            errs = []
            for i in idx:
                numeric = _central_difference(loss_fn, flat, i, h, richardson)
                errs.append(relative_error(g.reshape(-1)[i].item(), numeric, floor))
            report[name] = float(np.max(errs))
    return report


def grad_check(loss_fn, params, probe_count: int = 5, h: float = 1e-5, seed: int = 0,
               grads=None, **kw) -> float:
    """Max relative error over ``probe_count`` random coordinates of every array."""
    return max(grad_check_report(loss_fn, params, probe_count, h, seed, grads, **kw).values())


# --- checkpoints -----------------------------------------------------------

MAGIC = b"ASSMCKPT"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4"}


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    epoch: int = 0
    rng: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.asarray(ckpt.arrays[name])
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise TypeError(f"unsupported dtype {dtype} for {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": ckpt.config, "epoch": ckpt.epoch, "rng": ckpt.rng,
                         "meta": ckpt.meta, "arrays": entries}, sort_keys=True).encode()
    body = MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<Q", len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 1 + 8 + 32 or not data.startswith(MAGIC):
        raise CheckpointIntegrityError(f"{path}: not a checkpoint file")
    version = data[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError(f"{path}: checksum mismatch (truncated or corrupt)")
    pos = len(MAGIC) + 1
    (hlen,) = struct.unpack("<Q", body[pos:pos + 8])
    pos += 8
    header = json.loads(body[pos:pos + hlen])
    payload = body[pos + hlen:]
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(e["dtype"])
    return Checkpoint(arrays, header["config"], header["epoch"], header["rng"], header["meta"])


def module_arrays(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_arrays(prefix: str, module: torch.nn.Module, arrays: Mapping[str, np.ndarray]):
    state = {k[len(prefix) + 1:]: torch.from_numpy(np.array(v)) for k, v in arrays.items()
             if k.startswith(prefix + ".")}
    module.load_state_dict(state)


# --- model construction ----------------------------------------------------


def build_embedder(cfg: EmbedderConfig, seed: int) -> AcousticSSM:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return AcousticSSM(cfg)


def build_projection(in_dim: int, hidden: int, out_dim: int, seed: int) -> ProjectionHead:
    with torch.random.fork_rng():
        torch.manual_seed(seed + 1)
        return ProjectionHead(in_dim, hidden, out_dim)


# --- pre-training ----------------------------------------------------------


def featurize(waves: Sequence[Waveform], fcfg: FeatureConfig) -> torch.Tensor:
    return torch.from_numpy(np.stack([stack_channels(w, fcfg) for w in waves]))


def epoch_batches(n: int, batch: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded shuffle keyed on (seed, epoch) so any epoch can be replayed alone.

    A trailing batch of a single clip is dropped (it would have no negatives).
    """
    order = np.random.default_rng([seed, epoch]).permutation(n)
    batches = [order[i:i + batch] for i in range(0, n, batch)]
    return [b for b in batches if len(b) >= 2]


@dataclass
class PretrainSettings:
    method: str = "segments"
    batch: int = 32
    epochs: int = 500
    lr: float = 1e-4
    ckpt_every: int = 50
    seg_len: int = 30225
    seed: int = 0


@dataclass
class PretrainResult:
    embedder: AcousticSSM
    projection: ProjectionHead
    adam: AdamState
    losses: list[float]
    checkpoint: Checkpoint


def _training_checkpoint(embedder, projection, adam: AdamState, epoch: int, losses,
                         config: dict, seed: int) -> Checkpoint:
    arrays = module_arrays("embedder", embedder)
    arrays.update(module_arrays("projection", projection))
    for k, t in adam.m.items():
        arrays[f"adam.m.{k}"] = t.detach().numpy().copy()
    for k, t in adam.v.items():
        arrays[f"adam.v.{k}"] = t.detach().numpy().copy()
    meta = {"adam_step": adam.step, "losses": [float(x) for x in losses]}
    return Checkpoint(arrays, config, epoch, {"seed": seed, "next_epoch": epoch}, meta)


def restore_training(ckpt: Checkpoint, embedder, projection) -> tuple[AdamState, list[float]]:
    load_module_arrays("embedder", embedder, ckpt.arrays)
    load_module_arrays("projection", projection, ckpt.arrays)
    m = {k[len("adam.m."):]: torch.from_numpy(np.array(v)) for k, v in ckpt.arrays.items()
         if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: torch.from_numpy(np.array(a)) for k, a in ckpt.arrays.items()
         if k.startswith("adam.v.")}
    return AdamState(m, v, int(ckpt.meta.get("adam_step", 0))), list(ckpt.meta.get("losses", []))


def pretrain_loop(clips: Sequence[Waveform], settings: PretrainSettings, fcfg: FeatureConfig,
                  embedder: AcousticSSM, projection: ProjectionHead, *,
                  resume: Checkpoint | None = None, config: dict | None = None,
                  ckpt_path=None, metrics_path=None, aug_spec=None,
                  stop_epoch: int | None = None) -> PretrainResult:
    """Contrastive pre-training with Adam over embedder, projection head and W.

    ``stop_epoch`` ends the run early (exclusive) while keeping the schedule of
    the full run, which is how interrupted runs are simulated.
    """
    if len(clips) < 2:
        raise DataError(f"pre-training needs at least 2 clips, got {len(clips)}")
    config = config or {}
    params = {f"embedder.{k}": p for k, p in embedder.named_parameters()}
    params.update({f"projection.{k}": p for k, p in projection.named_parameters()})
    adam, losses, start = AdamState(), [], 0
    if resume is not None:
        adam, losses = restore_training(resume, embedder, projection)
        start = resume.epoch
    end = settings.epochs if stop_epoch is None else min(stop_epoch, settings.epochs)
    embedder.train()
    projection.train()
    for epoch in range(start, end):
        t0 = time.perf_counter()
        batch_losses = []
        for b, idx in enumerate(epoch_batches(len(clips), settings.batch, settings.seed, epoch)):
            pair_seed = int(np.random.SeedSequence([settings.seed, epoch, b]).generate_state(1)[0])
            pairs = make_pairs(settings.method, [clips[i] for i in idx], settings.seg_len,
                               pair_seed, aug_spec)
            x = featurize([a for a, _ in pairs] + [p for _, p in pairs], fcfg)
            for p in params.values():
                p.grad = None
            y = embedder(x)
            loss = contrastive_loss(y[:len(idx)], y[len(idx):], projection)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite contrastive loss at epoch {epoch}")
            loss.backward()
            values, adam = adam_step({k: p.detach() for k, p in params.items()},
                                     named_grads(params), adam, settings.lr)
            assign_(params, values)
            batch_losses.append(loss.item())
        if not stability_ok(embedder):
            raise NumericError(f"SSM stability violated after epoch {epoch}")
        losses.append(float(np.mean(batch_losses)))
        wall_ms = (time.perf_counter() - t0) * 1e3
        log.info("epoch %d loss %.5f (%.0f ms)", epoch, losses[-1], wall_ms)
        if metrics_path is not None:
            _append_metrics(metrics_path, epoch, losses[-1], settings.lr, wall_ms)
        done = epoch + 1
        if ckpt_path is not None and settings.ckpt_every > 0 and (
                done % settings.ckpt_every == 0 or done == end):
            save_checkpoint(ckpt_path, _training_checkpoint(
                embedder, projection, adam, done, losses, config, settings.seed))
    ckpt = _training_checkpoint(embedder, projection, adam, max(end, start), losses, config,
                                settings.seed)
    return PretrainResult(embedder, projection, adam, losses, ckpt)


def _append_metrics(path, epoch, loss, lr, wall_ms):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["epoch", "loss", "lr", "wall_ms"])
        w.writerow([epoch, f"{loss:.8g}", f"{lr:.8g}", f"{wall_ms:.1f}"])


# Loss evaluations on the tiny model carry ~5e-11 of rounding noise once
# divided by 2h; derivatives smaller than this floor are compared absolutely.
TINY_FLOOR = 1e-5


def tiny_model_gradcheck(probe_count: int = 5, seed: int = 0, h: float = 1e-5,
                         richardson: bool = True, floor: float = TINY_FLOOR) -> dict[str, float]:
    """Audit autograd through the whole stack (conv stage, SSM layers, projection,
    bilinear loss) on a float64 model with f=32, t=16, 8 channels, N=4, 4 pairs."""
    cfg = EmbedderConfig(width=8, state_size=4, n_ssm_layers=6)
    embedder = build_embedder(cfg, seed).double().train()
    projection = build_projection(8, 8, 8, seed).double().train()
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(8, 3, 32, 16, generator=gen, dtype=torch.float64)
    params = {f"embedder.{k}": p for k, p in embedder.named_parameters()}
    params.update({f"projection.{k}": p for k, p in projection.named_parameters()})

    def loss_fn():
        y = embedder(x)
        return contrastive_loss(y[:4], y[4:], projection)

    return grad_check_report(loss_fn, params, probe_count=probe_count, h=h, seed=seed,
                             richardson=richardson, floor=floor)
