"""Run configuration: INI sections mapped onto the component dataclasses.

Example::

    [channel]
    amplitude_snr_db = 10
    seed = 3

    [trainer]
    batch_size = 64
    epochs = 30

Every section and key must be known; values are validated by the owning
dataclass. ``inf`` (or ``none``) disables a noise source.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import typing
from dataclasses import dataclass, field

from fmnd.channel import ChannelSpec
from fmnd.conventional import EmphasisParams
from fmnd.dsp import FmParams
from fmnd.neural.params import NetworkConfig, TrainerConfig


@dataclass(frozen=True)
class PathsConfig:
    input: str = ""
    output: str = ""
    model: str = ""


@dataclass(frozen=True)
class DataConfig:
    """Corpus used by ``train`` and ``sweep`` when no input WAVs are given."""

    n_utterances: int = 10
    utterance_s: float = 6.0
    train_fraction: float = 0.8
    corpus_seed: int = 0
    aug_snr_low_db: float = math.nan  # both set -> per-utterance noise augmentation
    aug_snr_high_db: float = math.nan

    def __post_init__(self):
        if self.n_utterances < 2:
            raise ValueError("n_utterances must be at least 2")
        if self.utterance_s <= 0:
            raise ValueError("utterance_s must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if math.isnan(self.aug_snr_low_db) != math.isnan(self.aug_snr_high_db):
            raise ValueError("set both aug_snr_low_db and aug_snr_high_db, or neither")
        if self.augmented and self.aug_snr_low_db > self.aug_snr_high_db:
            raise ValueError("aug_snr_low_db exceeds aug_snr_high_db")

    @property
    def augmented(self) -> bool:
        return not math.isnan(self.aug_snr_low_db)


@dataclass(frozen=True)
class SweepConfig:
    amp_snr_db: tuple = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 30.0)
    msg_snr_db: tuple = (math.inf, 0.0)
    seeds: tuple = (0,)
    streams: int = 16

    def __post_init__(self):
        if not self.amp_snr_db or not self.msg_snr_db or not self.seeds:
            raise ValueError("sweep grids must be non-empty")
        if self.streams < 1:
            raise ValueError("streams must be positive")


@dataclass(frozen=True)
class RunConfig:
    fm: FmParams = field(default_factory=FmParams)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    emphasis: EmphasisParams = field(default_factory=EmphasisParams)
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)


def _parse_float(text: str) -> float:
    if text.strip().lower() in ("none", "off"):
        return math.inf
    return float(text)


def _parse_value(text: str, hint):
    if hint is int:
        return int(text)
    if hint is float:
        return _parse_float(text)
    if hint is str:
        return text
    if hint is bool:
        low = text.strip().lower()
        if low not in ("true", "false", "yes", "no", "1", "0"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "yes", "1")
    if hint is tuple:
        items = [s for s in text.replace(",", " ").split() if s]
        return tuple(_parse_float(s) for s in items)
    raise TypeError(f"unsupported field type {hint}")


def _build(cls, values: dict, section: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in values.items():
        if key not in names:
            raise ValueError(f"unknown key [{section}] {key}")
        try:
            kwargs[key] = _parse_value(text, hints[key])
        except ValueError as exc:
            raise ValueError(f"bad value for [{section}] {key}: {exc}") from exc
    if cls is SweepConfig and "seeds" in kwargs:
        kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from exc
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    hints = typing.get_type_hints(RunConfig)
    parts = {}
    for name in cp.sections():
        if name not in sections:
            raise ValueError(f"unknown config section [{name}]")
        parts[name] = _build(hints[name], dict(cp[name]), name)
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def override(cfg: RunConfig, section: str, **changes) -> RunConfig:
    """Return ``cfg`` with fields of one section replaced (``None`` values skipped)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section),
                                                                   **changes)})
