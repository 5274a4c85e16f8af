"""Audio ingestion: WAV decoding, resampling, cropping, manifests and group splits."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.io.wavfile
from scipy import signal

from acoustic_ssm.errors import DecodeError, InsufficientDataError, UnsupportedFormatError

MANIFEST_FIELDS = ("path", "label", "group", "role")
ROLES = ("pretrain", "support", "query", "auto")

# taps per polyphase branch of the anti-aliasing filter
TAPS_PER_PHASE = 64
KAISER_BETA = 8.6


@dataclass(frozen=True)
class Waveform:
    """Mono audio with its sample rate."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return replace(self, samples=samples)


def _scale_to_unit(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise UnsupportedFormatError(f"unsupported sample type {data.dtype}")


def load_wav(path) -> Waveform:
    """Decode a RIFF/WAVE file (PCM integer or IEEE float) to a mono waveform.

    Multi-channel audio is averaged. A file whose header promises more data
    than it contains raises :class:`DecodeError`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = path.read_bytes()
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.io.wavfile.WavFileWarning)
        try:
            rate, data = scipy.io.wavfile.read(io.BytesIO(raw))
        except scipy.io.wavfile.WavFileWarning as exc:
            raise DecodeError(f"{path}: {exc}") from exc
        except ValueError as exc:
            msg = str(exc)
            if "Unknown wave file format" in msg or "not supported" in msg.lower():
                raise UnsupportedFormatError(f"{path}: {msg}") from exc
            raise DecodeError(f"{path}: {msg}") from exc
        except (EOFError, OSError) as exc:
            raise DecodeError(f"{path}: {exc}") from exc
    samples = _scale_to_unit(np.asarray(data))
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, int(rate))


def save_wav(path, w: Waveform, *, float32: bool = False) -> None:
    """Write a waveform as 16-bit PCM (default) or 32-bit float WAV."""
    x = np.clip(w.samples, -1.0, 1.0)
    if float32:
        data = x.astype(np.float32)
    else:
        data = np.round(x * 32767.0).astype(np.int16)
    scipy.io.wavfile.write(str(path), w.rate, data)


def _kaiser_lowpass(up: int, down: int) -> np.ndarray:
    half_len = TAPS_PER_PHASE // 2 * up
    return signal.firwin(2 * half_len + 1, 1.0 / max(up, down),
                         window=("kaiser", KAISER_BETA))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited rational resampling with a Kaiser-windowed sinc filter.

    Output length is ``round(len(w) * target_rate / w.rate)``.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.rate:
        return w.with_samples(w.samples.copy())
    ratio = Fraction(target_rate, w.rate)
    up, down = ratio.numerator, ratio.denominator
    y = signal.resample_poly(w.samples, up, down, window=_kaiser_lowpass(up, down))
    n_out = int(round(len(w) * target_rate / w.rate))
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return Waveform(y, int(target_rate))


def crop_or_pad(w: Waveform, target_len: int, seed: int | None = None) -> Waveform:
    """Fix the length: center crop (or seeded random crop), symmetric zero pad."""
    if target_len <= 0:
        raise ValueError(f"target_len must be positive, got {target_len}")
    n = len(w)
    if n == target_len:
        return w
    if n > target_len:
        if seed is None:
            start = (n - target_len) // 2
        else:
            start = int(np.random.default_rng(seed).integers(0, n - target_len + 1))
        return w.with_samples(w.samples[start:start + target_len].copy())
    missing = target_len - n
    left = missing // 2
    return w.with_samples(np.pad(w.samples, (left, missing - left)))


# --- manifests -------------------------------------------------------------


@dataclass
class ManifestEntry:
    path: str
    label: str
    group: str = ""
    role: str = "auto"


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ValueError(f"duplicate manifest path {e.path!r}")
            seen.add(e.path)
            if e.role not in ROLES:
                raise ValueError(f"unknown role {e.role!r} for {e.path}")

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def classes(self) -> list[str]:
        return sorted({e.label for e in self.entries})


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DecodeError(f"{path}: manifest missing columns {sorted(missing)}")
        entries = [
            ManifestEntry(row["path"], row["label"], row["group"] or "", row["role"] or "auto")
            for row in reader
        ]
    return Manifest(entries, root=path.parent)


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            writer.writerow([e.path, e.label, e.group, e.role])


@dataclass
class GroupSplit:
    """Resolved roles for one group.

    ``pretrain`` and ``query`` hold the same clips: pre-training ignores labels,
    so every non-support clip is reused as an evaluation query.
    """

    group: str
    classes: list[str]
    support: list[ManifestEntry]
    query: list[ManifestEntry]

    @property
    def pretrain(self) -> list[ManifestEntry]:
        return [replace(e, label="", role="pretrain") for e in self.query]

    def entries(self) -> list[ManifestEntry]:
        """Rows for the emitted split CSV; non-support clips appear once per role."""
        rows = [replace(e, group=self.group, role="support") for e in self.support]
        rows += [replace(e, group=self.group, role="pretrain") for e in self.query]
        rows += [replace(e, group=self.group, role="query") for e in self.query]
        return rows


def _assign_groups(classes: Sequence[str], explicit: dict[str, str],
                   classes_per_group: int, rng: np.random.Generator) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for cls in classes:
        if cls in explicit:
            groups.setdefault(explicit[cls], []).append(cls)
    free = [c for c in classes if c not in explicit]
    free = [free[i] for i in rng.permutation(len(free))]
    for k in range(0, len(free), classes_per_group):
        name = f"G{len(groups) + 1}"
        while name in groups:
            name += "_"
        groups[name] = sorted(free[k:k + classes_per_group])
    return groups


def build_groups(m: Manifest, classes_per_group: int = 5, shots: int = 5,
                 seed: int = 0) -> list[GroupSplit]:
    """Partition classes into groups and mark support clips per class.

    Explicit ``group`` values in the manifest win over random grouping, and
    explicit ``support`` roles are honoured before random draws fill up the
    remaining shots.
    """
    by_class: dict[str, list[ManifestEntry]] = {}
    explicit: dict[str, str] = {}
    for e in m.entries:
        by_class.setdefault(e.label, []).append(e)
        if e.group:
            explicit[e.label] = e.group
    for cls, items in sorted(by_class.items()):
        if len(items) <= shots:
            raise InsufficientDataError(
                f"class {cls!r} has {len(items)} clips; need more than shots={shots}")

    rng = np.random.default_rng(seed)
    groups = _assign_groups(sorted(by_class), explicit, classes_per_group, rng)
    splits = []
    for name, classes in groups.items():
        support, query = [], []
        for cls in classes:
            items = sorted(by_class[cls], key=lambda e: e.path)
            pinned = [e for e in items if e.role == "support"][:shots]
            rest = [e for e in items if e not in pinned]
            order = rng.permutation(len(rest))
            chosen = pinned + [rest[i] for i in order[:shots - len(pinned)]]
            chosen_paths = {e.path for e in chosen}
            support += [replace(e, group=name, role="support") for e in chosen]
            query += [replace(e, group=name, role="query") for e in items
                      if e.path not in chosen_paths]
        splits.append(GroupSplit(name, list(classes), support, query))
    return splits
