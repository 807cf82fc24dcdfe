"""Run configuration: ``key = value`` sections, dotted overrides, snapshots.

One root seed (``run.seed``) feeds the dataset generator, the parameter
initialization and the batch order, so a snapshot fully determines a run.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .predictor import LossWeights, ModelConfig
from .simgen import DatasetConfig
from .trainer import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_override", "write_snapshot"]


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs"
    checkpoint: str = ""
    ablation: str = "C1"
    split: str = "test"


@dataclass
class RewardSection:
    alpha: float = 1e-4
    kp: float = 100.0
    kd: float = 2.0
    alpha_schedule: str = ""


@dataclass
class AcousticsSection:
    frame_ms: float = 125.0
    hop_ms: float = 62.5
    gain: float = 1.0
    energy_mean: bool = False


# section name -> (dataclass, keys hidden from the file because run.seed drives them)
_SECTIONS = {
    "run": (RunSection, ()),
    "data": (DatasetConfig, ("seed",)),
    "model": (ModelConfig, ("init_seed",)),
    "loss": (LossWeights, ()),
    "train": (TrainConfig, ("seed",)),
    "reward": (RewardSection, ()),
    "acoustics": (AcousticsSection, ()),
}
_SPLITS = ("train", "val", "test")


def _keys(section: str) -> dict:
    cls, hidden = _SECTIONS[section]
    out = {}
    for f in fields(cls):
        if not f.init or f.name in hidden:
            continue
        if section == "data" and f.name == "sessions":
            for s in _SPLITS:
                out[f"sessions_{s}"] = int
            continue
        out[f.name] = f
    return out


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or default is None:
        if default is None and raw.lower() in ("", "none", "auto"):
            return None
        return float(raw)
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if default and all(isinstance(d, int) for d in default):
            return tuple(int(x) for x in items)
        return tuple(items)
    return raw


def _format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardSection = field(default_factory=RewardSection)
    acoustics: AcousticsSection = field(default_factory=AcousticsSection)

    def seeded(self) -> "RunConfig":
        """Propagate the root seed into every seeded component."""
        s = self.run.seed
        self.data.seed = s
        self.train.seed = s
        self.model.init_seed = s
        return self

    def values(self) -> dict:
        """{section: {key: value}} for every visible key."""
        out = {}
        for sec in _SECTIONS:
            obj = getattr(self, sec)
            d = {}
            for key in _keys(sec):
                if sec == "data" and key.startswith("sessions_"):
                    d[key] = int(obj.sessions.get(key[len("sessions_"):], 0))
                else:
                    d[key] = getattr(obj, key)
            out[sec] = d
        return out


def _apply(cfg: RunConfig, section: str, key: str, raw: str) -> None:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section [{section}]; known: {', '.join(_SECTIONS)}")
    keys = _keys(section)
    if key not in keys:
        raise ConfigError(f"unknown key {section}.{key}; known keys: {', '.join(keys)}")
    current = cfg.values()[section][key]
    try:
        value = _parse_value(raw, current)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}") from None
    vals = cfg.values()[section]
    vals[key] = value
    cls = _SECTIONS[section][0]
    obj = getattr(cfg, section)
    if section == "data":
        sessions = {s: vals.pop(f"sessions_{s}") for s in _SPLITS}
        vals["sessions"] = sessions
        vals["seed"] = obj.seed
    elif section == "model":
        vals["init_seed"] = obj.init_seed
    elif section == "train":
        vals["seed"] = obj.seed
    try:
        setattr(cfg, section, cls(**vals))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section}.{key} = {raw!r}: {exc}") from None


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> (section, key, value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override key {lhs!r} needs a section prefix (section.key)")
    section, key = lhs.strip().split(".", 1)
    return section, key, value


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            parser.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(cfg, section, key, raw)
    for ov in overrides:
        _apply(cfg, *parse_override(ov))
    return cfg.seeded()


def write_snapshot(cfg: RunConfig, path, command: str | None = None) -> None:
    lines = []
    if command:
        lines.append(f"# effective configuration for: {command}")
    for sec, vals in cfg.values().items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {_format_value(v)}" for k, v in vals.items()]
        lines.append("")
    Path(path).write_text("\n".join(lines))


def as_dict(cfg: RunConfig) -> dict:
    return {sec: {k: (list(v) if isinstance(v, tuple) else v) for k, v in vals.items()}
            for sec, vals in cfg.values().items()}

