"""Run configuration: flat TOML files, named presets and ``--key value`` overrides."""

import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import SynthConfig
from .optim import TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    # training
    learning_rate: float = 0.01
    batch_size: int = 32
    max_iterations: int = 300
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    grad_clip_norm: float = 5.0  # 0 disables clipping
    log_every: int = 25
    seed: int = 0
    # model
    cell_kind: str = "gru"
    hidden_dim: int = 32
    theta: float = 0.3
    delta: float = 0.01
    alpha: float = 0.5
    pooling: str = "mean_pool"
    window: int = 5
    length: int = 50
    # data; an empty dataset path means "generate synthetic data"
    dataset: str = ""
    channels: int = 0  # 0 = infer from files
    test_fraction: float = 0.3
    synth_classes: int = 4
    samples_per_class: int = 150
    speed_jitter: float = 0.2
    amplitude_jitter: float = 0.2
    noise_sigma: float = 0.05
    synth_seed: int = 0
    output_dir: str = "runs/default"

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_iterations=self.max_iterations, optimizer=self.optimizer, momentum=self.momentum,
            adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2, adam_epsilon=self.adam_epsilon,
            grad_clip_norm=self.grad_clip_norm or None, seed=self.seed, log_every=self.log_every,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_classes=self.synth_classes, samples_per_class=self.samples_per_class,
            base_speed_jitter=self.speed_jitter, amplitude_jitter=self.amplitude_jitter,
            noise_sigma=self.noise_sigma, seed=self.synth_seed, channels=self.channels or 6,
        )

    def to_toml(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            elif isinstance(value, float):
                lines.append(f"{key} = {value!r}")
            else:
                lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}

_CHOICES = {
    "optimizer": ("adam", "sgd_momentum"),
    "cell_kind": ("lstm", "gru"),
    "pooling": ("mean_pool", "per_step_vote"),
    "channels": (0, 3, 6),
}

# (low, high, low_inclusive, high_inclusive)
_RANGES = {
    "learning_rate": (0.0, None, True, False),
    "batch_size": (1, None, True, False),
    "max_iterations": (0, None, True, False),
    "momentum": (0.0, 1.0, True, False),
    "adam_beta1": (0.0, 1.0, False, False),
    "adam_beta2": (0.0, 1.0, False, False),
    "adam_epsilon": (0.0, None, False, False),
    "grad_clip_norm": (0.0, None, True, False),
    "log_every": (1, None, True, False),
    "hidden_dim": (1, None, True, False),
    "theta": (0.0, 1.0, True, True),
    "delta": (0.0, 1.0, True, True),
    "alpha": (0.0, 1.0, True, True),
    "window": (1, None, True, False),
    "length": (2, None, True, False),
    "test_fraction": (0.0, 1.0, False, False),
    "synth_classes": (1, 4, True, True),
    "samples_per_class": (1, None, True, False),
    "speed_jitter": (0.0, 0.5, True, True),
    "amplitude_jitter": (0.0, 0.5, True, True),
    "noise_sigma": (0.0, None, True, False),
}

PRESETS = ("synthetic", "mgd-fblstm", "mgd-fbgru", "buaa", "smartwatch", "smartwatch-blstm")


def _coerce(key, value, problems):
    kind = _TYPES[key]
    if kind is bool:
        kind = int
    if isinstance(value, str) and kind is not str:
        try:
            value = kind(value) if kind is float else int(value, 10)
        except ValueError:
            problems.append(f"{key}: expected {kind.__name__}, got {value!r}")
            return None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        problems.append(f"{key}: expected {kind.__name__}, got {type(value).__name__} {value!r}")
        return None
    return value


def _check_range(key, value, problems):
    if key in _CHOICES and value not in _CHOICES[key]:
        problems.append(f"{key}: must be one of {_CHOICES[key]}, got {value!r}")
    if key in _RANGES:
        lo, hi, lo_inc, hi_inc = _RANGES[key]
        bad = (lo is not None and (value < lo or (value == lo and not lo_inc))) or \
              (hi is not None and (value > hi or (value == hi and not hi_inc)))
        if bad:
            left = "[" if lo_inc else "("
            right = "]" if hi_inc else ")"
            problems.append(f"{key}: {value!r} outside {left}{lo}, {'inf' if hi is None else hi}{right}")
    if key == "window" and isinstance(value, int) and value % 2 == 0:
        problems.append(f"window: must be odd, got {value}")


def build_config(*layers: dict) -> RunConfig:
    """Merge raw key/value layers (later wins), validating every key; raises ConfigError listing all problems."""
    problems = []
    merged = {}
    for layer in layers:
        for raw_key, value in layer.items():
            key = raw_key.replace("-", "_")
            if key not in _TYPES:
                problems.append(f"{raw_key}: unknown key")
                continue
            value = _coerce(key, value, problems)
            if value is not None:
                merged[key] = value
    for key, value in merged.items():
        _check_range(key, value, problems)
    if problems:
        raise ConfigError(problems)
    return RunConfig(**merged)


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError([f"{k}: tables are not allowed, config is flat" for k in nested])
    return data


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"])
    text = resources.files("fishergesture.presets").joinpath(f"{name}.toml").read_text()
    return tomllib.loads(text)


def load_config(path=None, preset_name=None, overrides=None) -> RunConfig:
    layers = []
    if preset_name:
        layers.append(preset(preset_name))
    if path:
        layers.append(read_toml(path))
    layers.append(overrides or {})
    return build_config(*layers)
