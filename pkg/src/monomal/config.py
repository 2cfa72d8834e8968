"""Flat key=value experiment configs with one section per module.

The file format is INI-style text (stdlib configparser, case-sensitive
keys, full-line comments with # or ;). Every key has a default; unknown
sections or keys are rejected so typos fail loudly. A resolved copy of the
config, with all defaults filled in, lands next to every command's outputs.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass

from .attack import AttackConfig
from .constraints import ConstraintConfig
from .dataset import (
    Dataset,
    FeatureSpace,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    load_feature_space,
    split,
)
from .errors import ConfigError, ParameterError
from .network import HeadKind, InitMode, LayerSpec, mlp_architecture
from .training import DistillConfig, TrainConfig

_SCHEMA: dict[str, dict[str, str]] = {
    "dataset": {
        "source": "synthetic",
        "n_features": "5000",
        "manifest_fraction": "0.55",
        "n_samples": "20000",
        "malware_fraction": "0.08",
        "mean_density": "48",
        "n_rules": "40",
        "seed": "1",
        "test_fraction": "0.2",
        "space_file": "",
        "train_file": "",
        "test_file": "",
    },
    "network": {
        "hidden": "200 200",
        "head": "sigmoid_single",
        "temperature": "1.0",
    },
    "constraints": {
        "hard_scope": "none",
        "n1": "0.0",
        "n2": "0.0",
        "placement": "weights",
        "init": "glorot_normal",
    },
    "train": {
        "epochs": "10",
        "batch_size": "1000",
        "malware_ratio": "0.3",
        "learning_rate": "0.01",
        "momentum": "0.9",
        "dropout_rate": "0.5",
        "seed": "1",
    },
    "distill": {
        "temperature": "100.0",
        "learning_rate": "",
        "epochs": "",
    },
    "attack": {
        "max_iterations": "20",
        "require_negative_gradient": "true",
    },
    "certify": {
        "trials": "10000",
        "seed": "1",
    },
    "grid": {
        "n1_values": "0 0.1 0.22 0.46 0.67 1.0 2.2",
        "n2_values": "0 0.1 0.22 0.46 0.67 1.0 2.2",
        "seeds": "1 2 3",
    },
}

_SECTION_ORDER = list(_SCHEMA)


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from None


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from None


def _parse_bool(section: str, key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")


class ExperimentConfig:
    """Parsed and validated experiment description."""

    def __init__(self, values: dict[str, dict[str, str]]):
        self.values = values
        self._validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}".replace("\n", " ")) from exc
        values = {s: dict(defaults) for s, defaults in _SCHEMA.items()}
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, val in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[section][key] = val.strip()
        return cls(values)

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({s: dict(defaults) for s, defaults in _SCHEMA.items()})

    def _get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def _validate(self) -> None:
        source = self._get("dataset", "source")
        if source not in ("synthetic", "files"):
            raise ConfigError(f"[dataset] source must be 'synthetic' or 'files', got {source!r}")
        if source == "files":
            for key in ("space_file", "train_file"):
                path = self._get("dataset", key)
                if not path:
                    raise ConfigError(f"[dataset] {key} is required when source = files")
                if not os.path.exists(path):
                    raise ConfigError(f"[dataset] {key} does not exist: {path}")
            test_file = self._get("dataset", "test_file")
            if test_file and not os.path.exists(test_file):
                raise ConfigError(f"[dataset] test_file does not exist: {test_file}")
        else:
            for key in ("space_file", "train_file", "test_file"):
                if self._get("dataset", key):
                    raise ConfigError(
                        "[dataset] file paths are only valid with source = files"
                    )
        # Construct every derived object once so bad values fail at load time.
        try:
            if source == "synthetic":
                self.synth_spec()
            self.head()
            self.train_config()
            self.attack_config()
            self.grid_axes()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def override_seed(self, seed: int) -> None:
        """Apply the CLI-level seed override to every seeded section."""
        self.values["dataset"]["seed"] = str(seed)
        self.values["train"]["seed"] = str(seed)
        self.values["certify"]["seed"] = str(seed)

    # section accessors

    def synth_spec(self) -> SynthSpec:
        g = self.values["dataset"]
        return SynthSpec(
            n_features=_parse_int("dataset", "n_features", g["n_features"]),
            manifest_fraction=_parse_float("dataset", "manifest_fraction", g["manifest_fraction"]),
            n_samples=_parse_int("dataset", "n_samples", g["n_samples"]),
            malware_fraction=_parse_float("dataset", "malware_fraction", g["malware_fraction"]),
            mean_density=_parse_float("dataset", "mean_density", g["mean_density"]),
            n_rules=_parse_int("dataset", "n_rules", g["n_rules"]),
            seed=_parse_int("dataset", "seed", g["seed"]),
        )

    def test_fraction(self) -> float:
        return _parse_float("dataset", "test_fraction", self._get("dataset", "test_fraction"))

    def head(self) -> HeadKind:
        return HeadKind(
            self._get("network", "head"),
            _parse_float("network", "temperature", self._get("network", "temperature")),
        )

    def hidden(self) -> tuple[int, ...]:
        raw = self._get("network", "hidden").split()
        if not raw:
            raise ConfigError("[network] hidden must list at least one layer size")
        return tuple(_parse_int("network", "hidden", tok) for tok in raw)

    def architecture(self, n_features: int) -> list[LayerSpec]:
        return mlp_architecture(n_features, self.hidden(), self.head())

    def constraint_config(self) -> ConstraintConfig:
        c = self.values["constraints"]
        scope = c["hard_scope"]
        return ConstraintConfig(
            hard_nonneg=scope != "none",
            hard_scope=scope,
            n1_coeff=_parse_float("constraints", "n1", c["n1"]),
            n2_coeff=_parse_float("constraints", "n2", c["n2"]),
            placement=c["placement"],
            init=InitMode(c["init"], _parse_int("train", "seed", self._get("train", "seed"))),
        )

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(
            epochs=_parse_int("train", "epochs", t["epochs"]),
            batch_size=_parse_int("train", "batch_size", t["batch_size"]),
            malware_ratio=_parse_float("train", "malware_ratio", t["malware_ratio"]),
            learning_rate=_parse_float("train", "learning_rate", t["learning_rate"]),
            momentum=_parse_float("train", "momentum", t["momentum"]),
            dropout_rate=_parse_float("train", "dropout_rate", t["dropout_rate"]),
            constraint=self.constraint_config(),
            seed=_parse_int("train", "seed", t["seed"]),
        )

    def distill_config(self) -> DistillConfig:
        base = self.train_config()
        if base.constraint.hard_scope != "none" or base.constraint.has_penalty:
            raise ConfigError("distillation runs unconstrained; clear [constraints] first")
        d = self.values["distill"]
        temperature = _parse_float("distill", "temperature", d["temperature"])
        lr = _parse_float("distill", "learning_rate", d["learning_rate"]) if d["learning_rate"] else None
        cfg = DistillConfig.at_temperature(base, temperature, learning_rate=lr)
        if d["epochs"]:
            from dataclasses import replace

            epochs = _parse_int("distill", "epochs", d["epochs"])
            cfg = DistillConfig(
                temperature,
                replace(cfg.teacher_train, epochs=epochs),
                replace(cfg.student_train, epochs=epochs),
            )
        return cfg

    def attack_config(self) -> AttackConfig:
        a = self.values["attack"]
        return AttackConfig(
            max_iterations=_parse_int("attack", "max_iterations", a["max_iterations"]),
            require_negative_gradient=_parse_bool(
                "attack", "require_negative_gradient", a["require_negative_gradient"]
            ),
        )

    def certify_trials(self) -> int:
        return _parse_int("certify", "trials", self._get("certify", "trials"))

    def certify_seed(self) -> int:
        return _parse_int("certify", "seed", self._get("certify", "seed"))

    def grid_axes(self) -> tuple[tuple[float, ...], tuple[float, ...], tuple[int, ...]]:
        g = self.values["grid"]
        n1s = tuple(_parse_float("grid", "n1_values", tok) for tok in g["n1_values"].split())
        n2s = tuple(_parse_float("grid", "n2_values", tok) for tok in g["n2_values"].split())
        seeds = tuple(_parse_int("grid", "seeds", tok) for tok in g["seeds"].split())
        if not n1s or not n2s or not seeds:
            raise ConfigError("[grid] axes and seeds must be non-empty")
        return n1s, n2s, seeds

    def load_data(self) -> tuple[Dataset, Dataset | None, FeatureSpace]:
        """Materialize (train split, test split, space) from either source."""
        if self._get("dataset", "source") == "synthetic":
            full = generate_synthetic(self.synth_spec())
            train_d, test_d = split(full, self.test_fraction(), self.synth_spec().seed)
            return train_d, test_d, full.space
        space = load_feature_space(self._get("dataset", "space_file"))
        train_d = load_dataset(self._get("dataset", "train_file"), space, "train")
        test_file = self._get("dataset", "test_file")
        test_d = load_dataset(test_file, space, "test") if test_file else None
        return train_d, test_d, space

    def resolved_text(self) -> str:
        """Canonical INI rendering with every default filled in."""
        out = io.StringIO()
        for section in _SECTION_ORDER:
            out.write(f"[{section}]\n")
            for key in _SCHEMA[section]:
                out.write(f"{key} = {self.values[section][key]}\n")
            out.write("\n")
        return out.getvalue()
