"""Run configuration: dataclasses, INI persistence, overrides and seeding."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from typing import Any

import numpy as np

MODES = ("fp", "lp", "det")


@dataclass
class ModelConfig:
    mode: str = "lp"
    frame_size: int = 32
    channels: tuple[int, ...] = (16, 32, 64)
    h_dim: int = 64
    g_dim: int = 64
    z_dim: int = 10
    rnn_size: int = 128
    predictor_layers: int = 2
    posterior_layers: int = 1
    prior_layers: int = 1
    normalization: str = "none"
    # Starting logit of the output sigmoid.  Frames are mostly black; starting
    # near that level keeps early ADAM steps from driving the un-normalised
    # decoder into saturation.
    output_bias: float = -3.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.frame_size != 4 * 2 ** len(self.channels):
            raise ValueError(
                f"frame_size {self.frame_size} needs {len(self.channels)} stride-2 stages "
                f"to reach 4x4; expected frame_size {4 * 2 ** len(self.channels)}")
        if self.normalization != "none":
            raise ValueError("only normalization = none is supported")

    @classmethod
    def desk(cls, mode: str = "lp") -> "ModelConfig":
        """Narrow 32x32 geometry sized for multi-thousand-step runs on one core."""
        return cls(mode=mode, channels=(8, 16, 32), h_dim=32, g_dim=32, rnn_size=64)

    @classmethod
    def paper(cls, mode: str = "lp") -> "ModelConfig":
        """Full-size SM-MNIST geometry: 64x64 frames, 256-cell LSTMs."""
        return cls(mode=mode, frame_size=64, channels=(64, 128, 256, 512), h_dim=128,
                   g_dim=128, z_dim=10, rnn_size=256)


@dataclass
class DataConfig:
    mnist_dir: str = "data/mnist"
    profile: str = "small"
    num_digits: int = 1

    def __post_init__(self):
        if self.profile not in ("small", "full"):
            raise ValueError(f"profile must be 'small' or 'full', got {self.profile!r}")
        if self.num_digits not in (1, 2):
            raise ValueError("num_digits must be 1 or 2")

    @property
    def frame_size(self) -> int:
        return 32 if self.profile == "small" else 64

    @property
    def digit_size(self) -> int:
        return 14 if self.profile == "small" else 28


@dataclass
class TrainConfig:
    C: int = 5
    T: int = 15
    beta: float = 1e-4
    lr: float = 0.002
    batch_size: int = 16
    steps: int = 1000
    seed: int = 0
    clip_norm: float = 10.0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not 1 <= self.C < self.T:
            raise ValueError(f"need 1 <= C < T, got C={self.C}, T={self.T}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class EvalConfig:
    C: int = 5
    horizon: int = 15
    n_samples: int = 100
    n_sequences: int = 64
    seed: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, dict[str, Any]]) -> "RunConfig":
        return cls(**{name: typ(**d.get(name, {})) for name, typ in _SECTIONS.items()})


_SECTIONS = {"model": ModelConfig, "data": DataConfig, "train": TrainConfig, "eval": EvalConfig}


def _parse_value(current: Any, text: str) -> Any:
    text = text.strip()
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(int(v) for v in text.replace("(", "").replace(")", "").split(",") if v.strip())
    return text


def _format_value(v: Any) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, values in cfg.to_dict().items():
        parser[section] = {k: _format_value(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def apply_updates(cfg: RunConfig, updates: dict[str, str]) -> RunConfig:
    """Return a new config with ``section.key -> text`` updates applied."""
    d = cfg.to_dict()
    for dotted, text in updates.items():
        if "." not in dotted:
            raise KeyError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in d or key not in d[section]:
            raise KeyError(f"unknown config key {dotted!r}")
        d[section][key] = _parse_value(d[section][key], text)
    return RunConfig.from_dict(d)


def load_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(text)
    updates = {f"{s}.{k}": v for s in parser.sections() for k, v in parser[s].items()}
    return apply_updates(base or RunConfig(), updates)


def parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise KeyError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


# Stream identifiers for seed derivation; every random draw in the package
# comes from ``stream(master_seed, STREAM, *indices)``.
MODEL_INIT = 1
TRAIN_BATCH = 2
TRAIN_LATENT = 3
EVAL_DATA = 4
EVAL_SAMPLE = 5
PROBE = 6
GENERATE = 7
EXPORT = 8


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)`` via ``SeedSequence`` entropy."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))
