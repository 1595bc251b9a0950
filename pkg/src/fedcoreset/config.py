"""Experiment configuration: dataclasses, INI parsing, and validation.

Config files are INI-style key = value sections.  Protocol-level keys live
in ``[experiment]``; the nested groups ``[dataset]``, ``[noise]`` and
``[model]`` are addressed from the command line with dotted flags
(``--noise.ratio 0.4``), while ``[experiment]`` keys are addressed bare
(``--rounds 100``).  Unknown keys are rejected by name.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import NoiseSpec
from .errors import ConfigurationError
from .federation import Algo, parse_algo
from .model import ARCHS

__all__ = [
    "DatasetConfig",
    "ModelConfig",
    "ExperimentConfig",
    "SweepSpec",
    "SWEEPABLE",
    "parse_config",
    "config_to_dict",
    "apply_override",
]

SWEEPABLE = (
    "noise.ratio",
    "budget_fraction",
    "dirichlet_alpha",
    "refresh_period",
    "num_clients",
)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"  # blobs | csv
    num_blobs: int = 10
    dim: int = 10
    stds: tuple[float, ...] = ()  # empty -> linspace(1, 8, num_blobs)
    samples_per_blob: int = 500
    csv_path: str = ""

    def resolved_stds(self) -> np.ndarray:
        if self.stds:
            return np.asarray(self.stds, dtype=np.float64)
        return np.linspace(1.0, 8.0, self.num_blobs)

    def validate(self) -> None:
        if self.kind not in ("blobs", "csv"):
            raise ConfigurationError(f"dataset.kind must be blobs or csv, got {self.kind!r}")
        if self.kind == "csv" and not self.csv_path:
            raise ConfigurationError("dataset.csv_path is required when dataset.kind = csv")
        if self.kind == "blobs":
            if self.num_blobs < 1:
                raise ConfigurationError("dataset.num_blobs must be >= 1")
            if self.dim < 1:
                raise ConfigurationError("dataset.dim must be >= 1")
            if self.samples_per_blob < 1:
                raise ConfigurationError("dataset.samples_per_blob must be >= 1")
            if self.stds and len(self.stds) != self.num_blobs:
                raise ConfigurationError(
                    "dataset.stds must have one entry per blob "
                    f"({len(self.stds)} given for {self.num_blobs} blobs)"
                )


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "softmax_regression"
    hidden_dim: int = 32

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigurationError(f"model.arch must be one of {ARCHS}, got {self.arch!r}")
        if self.arch == "one_hidden" and self.hidden_dim < 1:
            raise ConfigurationError("model.hidden_dim must be >= 1 for one_hidden")


@dataclass(frozen=True)
class ExperimentConfig:
    """All protocol hyperparameters for one experiment."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    num_clients: int = 10
    clients_per_round: int | None = None  # None -> all clients every round
    rounds: int = 100
    refresh_period: int = 10
    budget_fraction: float = 0.1
    local_epochs: int = 1
    local_lr: float = 0.01
    global_lr: float = 0.01
    lam: float = 0.5
    dirichlet_alpha: float = 0.4
    batch_size: int = 32
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    arms: tuple[Algo, ...] = (Algo("gcfl"),)
    model: ModelConfig = field(default_factory=ModelConfig)
    val_frac: float = 0.10
    test_frac: float = 0.15
    seed: int = 0
    output_dir: str = "runs"
    per_iteration_picks: int = 1
    residual_tolerance: float = 0.0
    momentum: float = 0.0
    weight_decay: float = 0.0
    cosine_lr: bool = False
    fine_tune_epochs: int = 0
    fine_tune_lr: float = 0.0  # 0 -> local_lr

    def validate(self) -> None:
        self.dataset.validate()
        self.model.validate()
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be >= 1")
        m = self.clients_per_round
        if m is not None and not 1 <= m <= self.num_clients:
            raise ConfigurationError(
                f"clients_per_round must satisfy 1 <= m <= num_clients ({m} vs {self.num_clients})"
            )
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0")
        if self.refresh_period < 1:
            raise ConfigurationError("refresh_period must be >= 1")
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ConfigurationError("budget_fraction must be in (0, 1]")
        if self.local_epochs < 0:
            raise ConfigurationError("local_epochs must be >= 0")
        if self.local_lr <= 0 or self.global_lr <= 0:
            raise ConfigurationError("learning rates must be > 0")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if self.dirichlet_alpha <= 0:
            raise ConfigurationError("dirichlet_alpha must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.arms:
            raise ConfigurationError("at least one algorithm arm is required")
        if self.val_frac < 0 or self.test_frac < 0 or self.val_frac + self.test_frac >= 1:
            raise ConfigurationError("val_frac and test_frac must be >= 0 and sum below 1")
        if self.per_iteration_picks < 1:
            raise ConfigurationError("per_iteration_picks must be >= 1")
        if self.residual_tolerance < 0:
            raise ConfigurationError("residual_tolerance must be non-negative")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigurationError("momentum and weight_decay must be non-negative")
        if self.fine_tune_epochs < 0:
            raise ConfigurationError("fine_tune_epochs must be >= 0")
        if self.fine_tune_lr < 0:
            raise ConfigurationError("fine_tune_lr must be non-negative")


_TOP_KEYS = {
    f.name
    for f in fields(ExperimentConfig)
    if f.name not in ("dataset", "noise", "model", "arms", "lam", "clients_per_round")
} | {"lambda", "arms", "clients_per_round"}

_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")


def _coerce(key: str, text: str, kind: type) -> object:
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() in _BOOL_TRUE:
                return True
            if text.lower() in _BOOL_FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(
            f"config key {key!r}: cannot parse {text!r} as {kind.__name__}"
        ) from None


def _parse_floats(key: str, text: str) -> tuple[float, ...]:
    if not text.strip():
        return ()
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: expected comma-separated floats") from None


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical nested dict echo of a resolved config (JSON-stable)."""
    out = {}
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if f.name == "dataset":
            out["dataset"] = asdict(value) | {"stds": list(value.stds)}
        elif f.name == "noise":
            out["noise"] = asdict(value)
        elif f.name == "model":
            out["model"] = asdict(value)
        elif f.name == "arms":
            out["arms"] = [a.label for a in value]
        elif f.name == "lam":
            out["lambda"] = value
        else:
            out[f.name] = value
    return out


def _set_nested(values: dict, key: str, text: str) -> None:
    """Route one dotted (or bare) key = value pair into the builder dict."""
    if key.startswith("dataset."):
        sub = key.split(".", 1)[1]
        types = {
            "kind": str,
            "num_blobs": int,
            "dim": int,
            "samples_per_blob": int,
            "csv_path": str,
        }
        if sub == "stds":
            values["dataset"]["stds"] = _parse_floats(key, text)
        elif sub in types:
            values["dataset"][sub] = _coerce(key, text, types[sub])
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    elif key.startswith("noise."):
        sub = key.split(".", 1)[1]
        types = {"kind": str, "ratio": float, "severity": float}
        if sub not in types:
            raise ConfigurationError(f"unknown config key {key!r}")
        values["noise"][sub] = _coerce(key, text, types[sub])
    elif key.startswith("model."):
        sub = key.split(".", 1)[1]
        types = {"arch": str, "hidden_dim": int}
        if sub not in types:
            raise ConfigurationError(f"unknown config key {key!r}")
        values["model"][sub] = _coerce(key, text, types[sub])
    elif key in _TOP_KEYS:
        if key == "arms":
            values["arms"] = tuple(parse_algo(tok) for tok in text.split(",") if tok.strip())
        elif key == "lambda":
            values["lam"] = _coerce(key, text, float)
        elif key == "clients_per_round":
            values["clients_per_round"] = (
                None if text.strip().lower() in ("", "all") else _coerce(key, text, int)
            )
        else:
            ann = ExperimentConfig.__dataclass_fields__[key].type
            kind = {"int": int, "float": float, "str": str, "bool": bool}.get(str(ann), str)
            values[key] = _coerce(key, text, kind)
    else:
        raise ConfigurationError(f"unknown config key {key!r}")


def _builder() -> dict:
    return {"dataset": {}, "noise": {}, "model": {}}


def _build(values: dict) -> ExperimentConfig:
    kwargs = {k: v for k, v in values.items() if k not in ("dataset", "noise", "model")}
    kwargs["dataset"] = DatasetConfig(**values["dataset"])
    kwargs["noise"] = NoiseSpec(**values["noise"])
    kwargs["model"] = ModelConfig(**values["model"])
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def parse_config(
    source: str | Path, overrides: dict[str, str] | None = None
) -> ExperimentConfig:
    """Parse an INI config from a file path or inline text, then apply
    dotted-key overrides.  Raises ConfigurationError naming any unknown key,
    type mismatch, or violated invariant."""
    import configparser

    looks_like_path = isinstance(source, Path) or (
        "\n" not in str(source)
        and "=" not in str(source)
        and not str(source).lstrip().startswith("[")
    )
    if isinstance(source, Path) or os.path.exists(str(source)):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    elif looks_like_path:
        raise ConfigurationError(f"config file not found: {source}")
    else:
        text = str(source)

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc

    values = _builder()
    for section in parser.sections():
        if section == "experiment":
            for key, val in parser.items(section):
                _set_nested(values, key, val)
        elif section in ("dataset", "noise", "model"):
            for key, val in parser.items(section):
                _set_nested(values, f"{section}.{key}", val)
        else:
            raise ConfigurationError(f"unknown config section [{section}]")

    for key, val in (overrides or {}).items():
        _set_nested(values, key, val)
    return _build(values)


def apply_override(cfg: ExperimentConfig, key: str, text: str) -> ExperimentConfig:
    """Return a new config with one dotted key overridden from text."""
    values = _builder()
    if key.startswith("dataset."):
        values["dataset"] = asdict(cfg.dataset)
    elif key.startswith("noise."):
        values["noise"] = asdict(cfg.noise)
    elif key.startswith("model."):
        values["model"] = asdict(cfg.model)
    _set_nested(values, key, text)
    if key.startswith("dataset."):
        new = replace(cfg, dataset=DatasetConfig(**values["dataset"]))
    elif key.startswith("noise."):
        new = replace(cfg, noise=NoiseSpec(**values["noise"]))
    elif key.startswith("model."):
        new = replace(cfg, model=ModelConfig(**values["model"]))
    else:
        field_name = "lam" if key == "lambda" else key
        new = replace(cfg, **{field_name: values[field_name]})
    new.validate()
    return new


@dataclass(frozen=True)
class SweepSpec:
    """A one-parameter sweep over explicit values."""

    parameter: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.parameter not in SWEEPABLE:
            raise ConfigurationError(
                f"sweep parameter must be one of {SWEEPABLE}, got {self.parameter!r}"
            )
        if not self.values:
            raise ConfigurationError("sweep values list is empty")
