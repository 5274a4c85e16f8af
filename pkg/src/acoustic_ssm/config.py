"""Run configuration: TOML file + dotted ``section.key=value`` overrides."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import tomli

from acoustic_ssm.augment import AugmentSpec
from acoustic_ssm.embedder import EmbedderConfig
from acoustic_ssm.errors import ConfigError
from acoustic_ssm.features import FeatureConfig


@dataclass
class DataSection:
    manifest: str = ""
    sample_rate: int = 20000
    clip_len: int = 30225


@dataclass
class FeaturesSection:
    n_fft: int = 510
    hop: int = 128
    n_mels: int = 256


@dataclass
class ModelSection:
    N: int = 64
    ssm_layers: int = 6
    ssm_enabled: bool = True
    width: int = 512
    ssm_mode: str = "direct"


@dataclass
class ContrastiveSection:
    method: str = "segments"
    batch: int = 32
    epochs: int = 500
    lr: float = 1e-4
    proj_hidden: int = 512
    proj_dim: int = 128
    ckpt_every: int = 50


@dataclass
class AugmentSection:
    pitch_semitones: list = field(default_factory=lambda: [-2.0, 2.0])
    fade_frac: list = field(default_factory=lambda: [0.0, 0.1])
    mask_frac: list = field(default_factory=lambda: [0.0, 0.1])
    shift_frac: list = field(default_factory=lambda: [-0.1, 0.1])


@dataclass
class FewshotSection:
    n_way: int = 5
    shots: int = 5
    ft_lr: float = 0.006
    ft_epochs: int = 50
    ft_batch: int = 5
    freeze_embedder: bool = False
    head_hidden: int = 256
    classes_per_group: int = 5


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    model: ModelSection = field(default_factory=ModelSection)
    contrastive: ContrastiveSection = field(default_factory=ContrastiveSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    fewshot: FewshotSection = field(default_factory=FewshotSection)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    # derived component configs

    def feature_config(self) -> FeatureConfig:
        f = self.features
        return FeatureConfig(n_fft=f.n_fft, hop=f.hop, n_mels=f.n_mels,
                             sample_rate=self.data.sample_rate)

    def embedder_config(self) -> EmbedderConfig:
        m = self.model
        return EmbedderConfig(width=m.width, state_size=m.N, n_ssm_layers=m.ssm_layers,
                              ssm_enabled=m.ssm_enabled, ssm_mode=m.ssm_mode)

    def augment_spec(self, seed: int = 0) -> AugmentSpec:
        a = self.augment
        return AugmentSpec(tuple(a.pitch_semitones), tuple(a.fade_frac), tuple(a.mask_frac),
                           tuple(a.shift_frac), seed)

    def validate(self) -> "RunConfig":
        try:
            self.feature_config()
            self.embedder_config()
            self.augment_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.contrastive.method not in ("segments", "augmentations"):
            raise ConfigError(
                f"contrastive.method must be 'segments' or 'augmentations', "
                f"got {self.contrastive.method!r}")
        return self


SECTIONS = {f.name: f.type for f in fields(RunConfig) if f.name != "seed"}


def _section_fields(section_obj) -> dict[str, Any]:
    return {f.name: getattr(section_obj, f.name) for f in fields(section_obj)}


def _coerce(key: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(default, list):
        if isinstance(value, list) and len(value) == len(default):
            return [float(v) for v in value]
        raise ConfigError(f"{key}: expected a list of {len(default)} numbers, got {value!r}")
    if isinstance(value, str):
        return value
    raise ConfigError(f"{key}: expected a string, got {value!r}")


def _line_of(text: str, section: str | None, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", stripped)
        if m:
            current = m.group(1).strip()
            if section is not None and key is None and current == section:
                return lineno
            continue
        if re.match(rf"^{re.escape(key)}\s*=", stripped) and current == section:
            return lineno
    return None


def apply(cfg: RunConfig, values: dict, text: str = "", source: str = "<overrides>") -> RunConfig:
    """Return a copy of ``cfg`` with nested ``values`` applied; unknown keys are errors."""
    sections = {name: replace(getattr(cfg, name)) for name in SECTIONS}
    seed = cfg.seed
    for name, body in values.items():
        if name == "seed":
            seed = _coerce("seed", 0, body)
            continue
        if name not in SECTIONS or not isinstance(body, dict):
            line = _line_of(text, None, name) or _line_of(text, name, None)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"{source}: unknown config key {name!r}{where}")
        known = _section_fields(sections[name])
        for key, value in body.items():
            if key not in known:
                line = _line_of(text, name, key)
                where = f" (line {line})" if line else ""
                raise ConfigError(f"{source}: unknown config key '{name}.{key}'{where}")
            setattr(sections[name], key, _coerce(f"{name}.{key}", known[key], value))
    return RunConfig(**sections, seed=seed)


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    try:
        values = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return apply(RunConfig(), values, text, str(path)).validate()


def parse_value(raw: str) -> Any:
    try:
        return tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        return raw


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings (TOML literals, bare strings allowed)."""
    nested: dict = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip().lstrip("-")
        if key == "seed":
            nested["seed"] = parse_value(raw)
            continue
        if "." not in key:
            raise ConfigError(f"unknown config key {key!r}")
        section, name = key.split(".", 1)
        nested.setdefault(section, {})[name] = parse_value(raw)
    return apply(cfg, nested).validate()


def dumps(cfg: RunConfig) -> str:
    """Serialize to TOML text that :func:`load_config` reads back."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = [f"seed = {cfg.seed}"]
    for name in SECTIONS:
        lines.append(f"\n[{name}]")
        for key, value in _section_fields(getattr(cfg, name)).items():
            lines.append(f"{key} = {fmt(value)}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    """One line per config key with its default, for ``--help``."""
    d = RunConfig()
    out = ["seed = 0"]
    for name in SECTIONS:
        for key, value in _section_fields(getattr(d, name)).items():
            out.append(f"{name}.{key} = {value!r}")
    return "\n".join(out)
