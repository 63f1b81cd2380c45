"""Run configuration: a flat key-value file with dotted sections.

Config files look like:

    # comment
    seed.corpus = 7
    corpus.apps = 200
    model.hidden = 64

Every key must be in the registry below (unknown keys are a hard error),
values are typed, and command-line --set overrides beat file values. All
seeds are explicit numbers; nothing defaults to wall-clock time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .finetune import TASKS, FinetuneConfig
from .pretrain import LossWeights, TrainConfig
from .synth import GeneratorConfig
from .transformer import ModelConfig


class ConfigError(ValueError):
    pass


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


# key -> (type, default)
KNOWN_KEYS: dict[str, tuple[type, Any]] = {
    "seed.corpus": (int, 7),
    "seed.split": (int, 11),
    "seed.pairs": (int, 13),
    "seed.init": (int, 17),
    "seed.train": (int, 19),
    "seed.finetune": (int, 23),
    "corpus.apps": (int, 200),
    "corpus.traces_per_app": (int, 30),
    "corpus.screens_min": (int, 8),
    "corpus.screens_max": (int, 12),
    "corpus.slots_min": (int, 1),
    "corpus.slots_max": (int, 3),
    "corpus.max_buttons": (int, 3),
    "corpus.chain_bias": (float, 0.75),
    "corpus.dead_button_prob": (float, 0.6),
    "corpus.noise_eta": (float, 0.3),
    "corpus.max_trace_len": (int, 9),
    "corpus.n_functions": (int, 32),
    "corpus.n_icon_classes": (int, 32),
    "corpus.n_app_types": (int, 27),
    "corpus.screen_w": (int, 360),
    "corpus.screen_h": (int, 640),
    "corpus.referring_per_screen": (int, 3),
    "data.mask_rate": (float, 0.15),
    "model.layers": (int, 2),
    "model.heads": (int, 2),
    "model.hidden": (int, 64),
    "model.ffn_mult": (int, 4),
    "model.l_max": (int, 128),
    "model.dropout": (float, 0.1),
    "model.text_buckets": (int, 4096),
    "loss.lambda_cui": (float, 0.1),
    "loss.lambda_mask": (float, 0.01),
    "train.steps": (int, 4000),
    "train.batch_size": (int, 32),
    "train.lr": (float, 1e-3),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-7),
    "train.log_interval": (int, 50),
    "train.checkpoint_interval": (int, 0),
    "finetune.task": (str, "icon_cls"),
    "finetune.init": (str, "pretrained"),
    "finetune.epochs": (int, 3),
    "finetune.batch_size": (int, 16),
    "finetune.lr": (float, 1e-3),
    "finetune.max_train": (int, 5000),
    "threads": (int, 0),
}


def parse_value(key: str, raw: str) -> Any:
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    typ, _ = KNOWN_KEYS[key]
    raw = raw.strip()
    try:
        if typ is bool:
            return _bool(raw)
        return typ(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e


def parse_config_file(path: str | Path) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        values[key.strip()] = parse_value(key.strip(), raw)
    return values


@dataclass
class RunConfig:
    values: dict[str, Any]

    @classmethod
    def resolve(
        cls,
        config_file: str | Path | None = None,
        overrides: dict[str, Any] | None = None,
    ) -> "RunConfig":
        values = {k: default for k, (_, default) in KNOWN_KEYS.items()}
        if config_file is not None:
            values.update(parse_config_file(config_file))
        for key, raw in (overrides or {}).items():
            values[key] = parse_value(key, raw) if isinstance(raw, str) else raw
        for key in values:
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(values)
        if cfg["finetune.task"] not in TASKS:
            raise ConfigError(f"finetune.task must be one of {TASKS}")
        if cfg["finetune.init"] not in ("pretrained", "random"):
            raise ConfigError("finetune.init must be 'pretrained' or 'random'")
        return cfg

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def seeds(self) -> dict[str, int]:
        return {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("seed.")}

    def generator_config(self) -> GeneratorConfig:
        v = self.values
        return GeneratorConfig(
            n_apps=v["corpus.apps"],
            traces_per_app=v["corpus.traces_per_app"],
            screens_min=v["corpus.screens_min"],
            screens_max=v["corpus.screens_max"],
            slots_min=v["corpus.slots_min"],
            slots_max=v["corpus.slots_max"],
            max_buttons=v["corpus.max_buttons"],
            chain_bias=v["corpus.chain_bias"],
            dead_button_prob=v["corpus.dead_button_prob"],
            noise_eta=v["corpus.noise_eta"],
            max_trace_len=v["corpus.max_trace_len"],
            n_functions=v["corpus.n_functions"],
            n_icon_classes=v["corpus.n_icon_classes"],
            n_app_types=v["corpus.n_app_types"],
            screen_w=v["corpus.screen_w"],
            screen_h=v["corpus.screen_h"],
            referring_per_screen=v["corpus.referring_per_screen"],
        )

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            layers=v["model.layers"],
            heads=v["model.heads"],
            hidden=v["model.hidden"],
            ffn_mult=v["model.ffn_mult"],
            l_max=v["model.l_max"],
            dropout=v["model.dropout"],
            text_buckets=v["model.text_buckets"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            steps=v["train.steps"],
            batch_size=v["train.batch_size"],
            lr=v["train.lr"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            eps=v["train.eps"],
            seed=v["seed.train"],
            log_interval=v["train.log_interval"],
            checkpoint_interval=v["train.checkpoint_interval"],
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_cui=self.values["loss.lambda_cui"],
            lambda_mask=self.values["loss.lambda_mask"],
        )

    def finetune_config(self) -> FinetuneConfig:
        v = self.values
        return FinetuneConfig(
            epochs=v["finetune.epochs"],
            batch_size=v["finetune.batch_size"],
            lr=v["finetune.lr"],
            seed=v["seed.finetune"],
            max_train_examples=v["finetune.max_train"],
        )
