"""Few-shot episodes, the dense classification head, fine-tuning and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from acoustic_ssm.audio import GroupSplit, Waveform
from acoustic_ssm.embedder import AcousticSSM
from acoustic_ssm.errors import DataError, InsufficientDataError
from acoustic_ssm.trainer import assign_, named_grads, sgd_step


@dataclass
class Episode:
    group: str
    classes: list[str]
    support: list[tuple[Waveform, int]]
    query: list[tuple[Waveform, int]]

    @property
    def n_way(self) -> int:
        return len(self.classes)


class ClassifierHead(nn.Module):
    """Two dense layers: latent -> hidden (ReLU) -> n_way logits."""

    def __init__(self, in_dim: int = 512, n_way: int = 5, hidden: int = 256):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, n_way)

    def forward(self, y):
        return self.fc2(F.relu(self.fc1(y)))


def build_episode(split: GroupSplit, load, n_way: int = 5, shots: int = 5) -> Episode:
    """Materialize the support/query sets of a group split.

    ``load`` maps a manifest entry to a fixed-length :class:`Waveform`.
    """
    if len(split.classes) < n_way:
        raise InsufficientDataError(
            f"group {split.group} has {len(split.classes)} classes; n_way={n_way}")
    classes = sorted(split.classes)[:n_way]
    index = {c: i for i, c in enumerate(classes)}
    support, query = [], []
    for cls in classes:
        sup = [e for e in split.support if e.label == cls]
        if len(sup) < shots:
            raise InsufficientDataError(
                f"class {cls!r} in group {split.group} has {len(sup)} support clips; shots={shots}")
        support += [(load(e), index[cls]) for e in sup[:shots]]
        query += [(load(e), index[cls]) for e in split.query if e.label == cls]
    return Episode(split.group, classes, support, query)


@dataclass
class FinetuneSettings:
    lr: float = 0.006
    epochs: int = 50
    batch: int = 5
    freeze_embedder: bool = False
    seed: int = 0


@dataclass
class FinetuneResult:
    losses: list[float] = field(default_factory=list)


def finetune(embedder: AcousticSSM, head: ClassifierHead, x: torch.Tensor, labels: torch.Tensor,
             settings: FinetuneSettings = FinetuneSettings()) -> FinetuneResult:
    """SGD with cross-entropy on the support set. Parameters are updated in place.

    ``x`` holds precomputed (N, 3, f, t) stacks. With ``freeze_embedder`` only
    the head trains and the embedder runs in inference mode, so its
    parameters and batch-norm statistics stay bit-identical.
    """
    params = {f"head.{k}": p for k, p in head.named_parameters()}
    if not settings.freeze_embedder:
        params.update({f"embedder.{k}": p for k, p in embedder.named_parameters()})
    embedder.train(not settings.freeze_embedder)
    head.train()
    n = x.shape[0]
    result = FinetuneResult()
    for epoch in range(settings.epochs):
        order = np.random.default_rng([settings.seed, epoch]).permutation(n)
        total = 0.0
        for i in range(0, n, settings.batch):
            idx = torch.from_numpy(order[i:i + settings.batch])
            for p in params.values():
                p.grad = None
            if settings.freeze_embedder:
                with torch.no_grad():
                    y = embedder(x[idx])
            else:
                y = embedder(x[idx])
            loss = F.cross_entropy(head(y), labels[idx])
            loss.backward()
            new = sgd_step({k: p.detach() for k, p in params.items()}, named_grads(params),
                           settings.lr)
            assign_(params, new)
            total += loss.item() * len(idx)
        result.losses.append(total / n)
    embedder.eval()
    head.eval()
    return result


@torch.no_grad()
def predict(embedder: AcousticSSM, head: ClassifierHead, x: torch.Tensor,
            chunk: int = 64) -> torch.Tensor:
    embedder.eval()
    head.eval()
    out = [head(embedder(x[i:i + chunk])) for i in range(0, x.shape[0], chunk)]
    return torch.cat(out).argmax(dim=-1)


def confusion_metrics(pred: Sequence[int], labels: Sequence[int], n_way: int) -> dict:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if labels.size == 0:
        raise DataError("empty query set")
    confusion = np.zeros((n_way, n_way), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return {"accuracy": float(np.trace(confusion) / labels.size), "confusion": confusion}


def evaluate(embedder: AcousticSSM, head: ClassifierHead, x: torch.Tensor,
             labels: torch.Tensor, n_way: int) -> dict:
    """Accuracy and confusion matrix (rows = true class, columns = prediction)."""
    if x.shape[0] == 0:
        raise DataError("empty query set")
    return confusion_metrics(predict(embedder, head, x).numpy(), labels.numpy(), n_way)


# --- reports ---------------------------------------------------------------


@dataclass
class ProtocolReport:
    accuracy: dict[str, float]

    @property
    def average(self) -> float:
        return float(np.mean(list(self.accuracy.values())))

    def table(self) -> str:
        groups = list(self.accuracy)
        head = " | ".join(f"{g:>6}" for g in groups + ["AA"])
        vals = " | ".join(f"{self.accuracy[g]:6.3f}" for g in groups) + f" | {self.average:6.3f}"
        return f"{head}\n{vals}"


def write_report(path, report: ProtocolReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "accuracy"])
        for g, acc in report.accuracy.items():
            w.writerow([g, repr(float(acc))])
        w.writerow(["AA", repr(report.average)])


def read_report(path) -> ProtocolReport:
    with open(Path(path), newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["group"] != "AA"]
    return ProtocolReport({r["group"]: float(r["accuracy"]) for r in rows})
