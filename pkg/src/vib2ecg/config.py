"""TOML run configuration shared by the command-line tools.

Precedence for every value: command-line flag, then the config file,
then the built-in default. The seed additionally falls back to the
``VIB2ECG_SEED`` environment variable before the default of 0.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace

import tomlkit

from .cardiosynth import DayDriftModel, SubjectProfile
from .datastore import DEFAULT_TRAIN_STRIDE, POSITIONS
from .model import INPUT_MODES, TrainConfig, UNetConfig

SEED_ENV = "VIB2ECG_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class SynthSection:
    subjects: int = 1
    days: int = 1
    duration: float = 600.0
    profile: dict = field(default_factory=dict)
    drift: dict = field(default_factory=dict)


@dataclass
class PreprocessSection:
    train_stride: int = DEFAULT_TRAIN_STRIDE
    positions: list = field(default_factory=lambda: list(POSITIONS))
    axis: str = ""


@dataclass
class EvalSection:
    sample_size: int = 310
    modes: list = field(default_factory=lambda: list(INPUT_MODES))
    position: str = "V4"


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthSection = field(default_factory=SynthSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    eval: EvalSection = field(default_factory=EvalSection)

    def profile(self, subject=0):
        base = SubjectProfile(**self.synth.profile)
        return replace(base, rng_seed=base.rng_seed + self.seed * 1000 + subject).validate()

    def drift(self):
        return DayDriftModel(**self.synth.drift)

    def train_config(self, **overrides):
        values = {"seed": self.seed, **self.train, **{k: v for k, v in overrides.items() if v is not None}}
        if "betas" in values:
            values["betas"] = tuple(values["betas"])
        return TrainConfig(**values).validate()

    def unet_config(self, in_channels):
        values = dict(self.model)
        if "channel_ladder" in values:
            values["channel_ladder"] = tuple(values["channel_ladder"])
        return UNetConfig(**{**values, "in_channels": in_channels}).validate()

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return tomlkit.dumps(_drop_empty(self.to_dict()))


def _drop_empty(d):
    # TOML has no null; empty tables are fine but empty strings are kept as-is
    return {k: (_drop_empty(v) if isinstance(v, dict) else v) for k, v in d.items() if v is not None}


def _check_keys(section, data, cls):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def from_dict(data):
    data = dict(data)
    _check_keys("top level", data, RunConfig)
    cfg = RunConfig()
    if "seed" in data:
        cfg.seed = int(data["seed"])
    for name, cls in (("synth", SynthSection), ("preprocess", PreprocessSection), ("eval", EvalSection)):
        sec = dict(data.get(name, {}))
        _check_keys(name, sec, cls)
        setattr(cfg, name, cls(**sec))
    for name, cls in (("train", TrainConfig), ("model", UNetConfig)):
        sec = dict(data.get(name, {}))
        _check_keys(name, sec, cls)
        setattr(cfg, name, sec)
    _check_keys("synth.profile", cfg.synth.profile, SubjectProfile)
    _check_keys("synth.drift", cfg.synth.drift, DayDriftModel)
    try:
        cfg.profile()
        cfg.drift()
        cfg.train_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load(path=None, seed=None):
    """Read ``path`` (optional) and resolve the seed."""
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = tomlkit.parse(fh.read()).unwrap()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except tomlkit.exceptions.ParseError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if "seed" not in data and os.environ.get(SEED_ENV):
        try:
            data["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    cfg = from_dict(data)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def write_effective(cfg, directory, extra=None):
    """Dump the effective configuration as ``config.toml`` in ``directory``."""
    os.makedirs(directory, exist_ok=True)
    doc = _drop_empty(cfg.to_dict())
    if extra:
        doc["run"] = {k: v for k, v in extra.items() if v is not None}
    with open(os.path.join(directory, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(tomlkit.dumps(doc))
