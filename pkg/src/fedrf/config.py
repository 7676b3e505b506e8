"""Experiment configuration: JSON file with a strict, fully-defaulted schema.

Every key is optional; the defaults reproduce the shipped desk-scale
non-i.i.d. profile. Unknown keys and invalid values are rejected with the
offending dotted key named in the error message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Tuple

from . import modality


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    num_transmitters: int = 16
    per_tx_count: int = 200
    window_len: int = 64
    snr_db: float = 10.0
    seed: int = 7
    path: Optional[str] = None
    test_fraction: float = 0.15


@dataclass
class PartitionConfig:
    mode: str = "noniid"
    num_aps: int = 4
    labels_per_ap: int = 5
    overlap_pairs: Optional[int] = None  # derived when omitted


@dataclass
class ModelConfig:
    kind: str = "softmax_linear"
    block_channels: Tuple[int, int] = (8, 16)
    kernel_len: int = 3
    hidden: int = 32
    l2_coeff: float = 1e-4


@dataclass
class TrainingConfigSection:
    rounds: int = 100
    local_steps: int = 20
    batch_size: int = 32
    eta: float = 0.01
    modalities: Tuple[str, ...] = modality.ALL_MODALITIES
    eval_stride: int = 1
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)


@dataclass
class AnalysisConfig:
    enabled: bool = False
    dim: int = 8
    num_aps: int = 4
    noise_scale: float = 1.0
    drift_scale: float = 1.0
    mu_target: float = 1.0
    smoothness_target: float = 10.0
    init_radius: float = 0.07
    rounds: int = 40
    local_steps: int = 5
    batch_size: int = 8
    eta: float = 0.035
    modality_count: int = 1
    mc_seeds: int = 200
    seed: int = 11


@dataclass
class PersonalizationConfig:
    enabled: bool = True
    fine_tune_steps: Optional[int] = None  # None -> 5 local epochs per AP


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfigSection = field(default_factory=TrainingConfigSection)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    personalization: PersonalizationConfig = field(default_factory=PersonalizationConfig)
    output_dir: Optional[str] = None

    def echo(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "model": ModelConfig,
    "training": TrainingConfigSection,
    "analysis": AnalysisConfig,
    "personalization": PersonalizationConfig,
}


def _as_int(key: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def _as_float(key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _as_bool(key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    return value


def _as_str(key: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _fill_section(name: str, cls, raw: dict):
    obj = cls()
    allowed = set(obj.__dataclass_fields__)
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"unknown key: {name}.{key}")
        setattr(obj, key, value)
    return obj


def _coerce(cfg: ExperimentConfig) -> None:
    d, p, m, t, a, pers = (
        cfg.dataset,
        cfg.partition,
        cfg.model,
        cfg.training,
        cfg.analysis,
        cfg.personalization,
    )
    d.num_transmitters = _as_int("dataset.num_transmitters", d.num_transmitters)
    d.per_tx_count = _as_int("dataset.per_tx_count", d.per_tx_count)
    d.window_len = _as_int("dataset.window_len", d.window_len)
    d.snr_db = _as_float("dataset.snr_db", d.snr_db)
    d.seed = _as_int("dataset.seed", d.seed)
    if d.path is not None:
        d.path = _as_str("dataset.path", d.path)
    d.test_fraction = _as_float("dataset.test_fraction", d.test_fraction)

    p.mode = _as_str("partition.mode", p.mode)
    p.num_aps = _as_int("partition.num_aps", p.num_aps)
    p.labels_per_ap = _as_int("partition.labels_per_ap", p.labels_per_ap)
    if p.overlap_pairs is not None:
        p.overlap_pairs = _as_int("partition.overlap_pairs", p.overlap_pairs)

    m.kind = _as_str("model.kind", m.kind)
    if not isinstance(m.block_channels, (list, tuple)) or len(m.block_channels) != 2:
        raise ConfigError("model.block_channels must be a list of two integers")
    m.block_channels = tuple(
        _as_int("model.block_channels", c) for c in m.block_channels
    )
    m.kernel_len = _as_int("model.kernel_len", m.kernel_len)
    m.hidden = _as_int("model.hidden", m.hidden)
    m.l2_coeff = _as_float("model.l2_coeff", m.l2_coeff)

    t.rounds = _as_int("training.rounds", t.rounds)
    t.local_steps = _as_int("training.local_steps", t.local_steps)
    t.batch_size = _as_int("training.batch_size", t.batch_size)
    t.eta = _as_float("training.eta", t.eta)
    if not isinstance(t.modalities, (list, tuple)) or not t.modalities:
        raise ConfigError("training.modalities must be a non-empty list")
    t.modalities = tuple(_as_str("training.modalities", x) for x in t.modalities)
    t.eval_stride = _as_int("training.eval_stride", t.eval_stride)
    if not isinstance(t.seeds, (list, tuple)) or not t.seeds:
        raise ConfigError("training.seeds must be a non-empty list")
    t.seeds = tuple(_as_int("training.seeds", s) for s in t.seeds)

    a.enabled = _as_bool("analysis.enabled", a.enabled)
    a.dim = _as_int("analysis.dim", a.dim)
    a.num_aps = _as_int("analysis.num_aps", a.num_aps)
    a.noise_scale = _as_float("analysis.noise_scale", a.noise_scale)
    a.drift_scale = _as_float("analysis.drift_scale", a.drift_scale)
    a.mu_target = _as_float("analysis.mu_target", a.mu_target)
    a.smoothness_target = _as_float("analysis.smoothness_target", a.smoothness_target)
    a.init_radius = _as_float("analysis.init_radius", a.init_radius)
    a.rounds = _as_int("analysis.rounds", a.rounds)
    a.local_steps = _as_int("analysis.local_steps", a.local_steps)
    a.batch_size = _as_int("analysis.batch_size", a.batch_size)
    a.eta = _as_float("analysis.eta", a.eta)
    a.modality_count = _as_int("analysis.modality_count", a.modality_count)
    a.mc_seeds = _as_int("analysis.mc_seeds", a.mc_seeds)
    a.seed = _as_int("analysis.seed", a.seed)

    pers.enabled = _as_bool("personalization.enabled", pers.enabled)
    if pers.fine_tune_steps is not None:
        pers.fine_tune_steps = _as_int(
            "personalization.fine_tune_steps", pers.fine_tune_steps
        )


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _coerce(cfg)
    d, p, m, t, a, pers = (
        cfg.dataset,
        cfg.partition,
        cfg.model,
        cfg.training,
        cfg.analysis,
        cfg.personalization,
    )
    if d.num_transmitters < 2:
        raise ConfigError("dataset.num_transmitters must be >= 2")
    if d.per_tx_count < 1:
        raise ConfigError("dataset.per_tx_count must be >= 1")
    if d.window_len < 2:
        raise ConfigError("dataset.window_len must be >= 2")
    if d.seed < 0:
        raise ConfigError("dataset.seed must be >= 0")
    if not 0.0 < d.test_fraction < 1.0:
        raise ConfigError("dataset.test_fraction must be in (0, 1)")

    if p.mode not in ("iid", "noniid"):
        raise ConfigError(f"partition.mode must be 'iid' or 'noniid', got {p.mode!r}")
    if p.num_aps < 1:
        raise ConfigError("partition.num_aps must be >= 1")
    if p.mode == "noniid":
        if p.labels_per_ap < 1:
            raise ConfigError("partition.labels_per_ap must be >= 1")
        derived = p.num_aps * p.labels_per_ap - d.num_transmitters
        if p.overlap_pairs is None:
            p.overlap_pairs = derived
        elif p.overlap_pairs != derived:
            raise ConfigError(
                f"partition.overlap_pairs must be {derived} for these counts"
            )
        if p.overlap_pairs < 0:
            raise ConfigError(
                "partition.labels_per_ap too small to cover every transmitter"
            )

    if m.kind not in ("softmax_linear", "mini_resnet"):
        raise ConfigError(f"model.kind must be softmax_linear or mini_resnet")
    if m.l2_coeff < 0:
        raise ConfigError("model.l2_coeff must be >= 0")
    if min(m.block_channels) < 1 or m.hidden < 1:
        raise ConfigError("model widths must be >= 1")
    if m.kernel_len < 1 or m.kernel_len % 2 == 0:
        raise ConfigError("model.kernel_len must be odd and >= 1")
    if m.kind == "mini_resnet" and d.window_len % 4 != 0:
        raise ConfigError("dataset.window_len must be divisible by 4 for mini_resnet")

    if t.rounds < 0:
        raise ConfigError("training.rounds must be >= 0")
    if t.local_steps < 1:
        raise ConfigError("training.local_steps must be >= 1")
    if t.batch_size < 1:
        raise ConfigError("training.batch_size must be >= 1")
    if t.eta <= 0:
        raise ConfigError("training.eta must be > 0")
    for mod in t.modalities:
        if mod not in modality.ALL_MODALITIES:
            raise ConfigError(
                f"training.modalities: unknown modality {mod!r} "
                f"(choose from {list(modality.ALL_MODALITIES)})"
            )
    if len(set(t.modalities)) != len(t.modalities):
        raise ConfigError("training.modalities contains duplicates")
    if t.eval_stride < 1:
        raise ConfigError("training.eval_stride must be >= 1")
    if any(s < 0 for s in t.seeds):
        raise ConfigError("training.seeds must be >= 0")

    if a.dim < 1 or a.num_aps < 1:
        raise ConfigError("analysis.dim and analysis.num_aps must be >= 1")
    if a.noise_scale < 0 or a.drift_scale < 0:
        raise ConfigError("analysis noise/drift scales must be >= 0")
    if a.mu_target <= 0 or a.smoothness_target < a.mu_target:
        raise ConfigError(
            "analysis.mu_target must be > 0 and <= analysis.smoothness_target"
        )
    if a.rounds < 1 or a.local_steps < 1 or a.batch_size < 1 or a.mc_seeds < 1:
        raise ConfigError("analysis loop counts must be >= 1")
    if a.eta <= 0:
        raise ConfigError("analysis.eta must be > 0")
    if a.modality_count < 1:
        raise ConfigError("analysis.modality_count must be >= 1")

    if pers.fine_tune_steps is not None and pers.fine_tune_steps < 0:
        raise ConfigError("personalization.fine_tune_steps must be >= 0")
    return cfg


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key == "output_dir":
            cfg.output_dir = _as_str("output_dir", value)
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown key: {key}")
        if not isinstance(value, dict):
            raise ConfigError(f"{key} must be a JSON object")
        setattr(cfg, key, _fill_section(key, _SECTIONS[key], value))
    return validate(cfg)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return from_dict(raw)
