"""Run configuration: one JSON document with a section per component."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .augment import DEFAULT_MARGIN
from .encoder import EncoderConfig
from .graph import ConfigError, SynthConfig
from .losses import LossConfig
from .trainer import TrainConfig

MODES = ("basic", "semi")
METRICS = ("cosine", "neg-l2")
EVAL_CANDIDATES = ("test", "all")


@dataclass(frozen=True)
class EvalOptions:
    k_list: Tuple[int, ...] = (1, 10)
    csls_k: int = 10
    metric: str = "cosine"
    candidates: str = "test"  # "test": right entities of the test pairs; "all": every right entity
    rank_dump: bool = False
    figures: bool = True

    def validate(self) -> None:
        if not self.k_list or any(int(k) < 1 for k in self.k_list):
            raise ConfigError("eval.k_list needs positive integers")
        if self.csls_k < 0:
            raise ConfigError("eval.csls_k must be >= 0 (0 disables CSLS)")
        if self.metric not in METRICS:
            raise ConfigError(f"eval.metric must be one of {METRICS}")
        if self.candidates not in EVAL_CANDIDATES:
            raise ConfigError(f"eval.candidates must be one of {EVAL_CANDIDATES}")


@dataclass(frozen=True)
class AugmentOptions:
    enabled: bool = True
    every: int = 1  # proposal rounds happen after every `every`-th dev evaluation
    start: int = 0  # no proposals before this epoch
    csls: bool = True
    min_margin: float = DEFAULT_MARGIN  # 0 accepts every mutual nearest pair

    def validate(self) -> None:
        if self.every < 1:
            raise ConfigError("augment.every must be at least 1")
        if self.start < 0 or self.min_margin < 0:
            raise ConfigError("augment.start and augment.min_margin must be non-negative")


SECTIONS = {
    "encoder": EncoderConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "eval": EvalOptions,
    "augment": AugmentOptions,
}
TOP_LEVEL = ("mode", "dataset", "output", "rng_seed", "train_fraction")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs.

    ``dataset`` is a directory in the standard layout; when it is ``None`` a
    synthetic pair is generated from the ``synth`` section. ``rng_seed``
    drives parameter init, batching and dropout; the seed split of a loaded
    dataset uses it too.
    """

    mode: str = "basic"
    dataset: Optional[str] = None
    output: str = "runs/latest"
    rng_seed: int = 0
    train_fraction: float = 0.3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    augment: AugmentOptions = field(default_factory=AugmentOptions)

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        for name in SECTIONS:
            try:
                getattr(self, name).validate()
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
        return self

    @property
    def train_effective(self) -> TrainConfig:
        return replace(self.train, rng_seed=self.rng_seed)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["eval"]["k_list"] = list(self.eval.k_list)
        del out["train"]["rng_seed"]  # carried by the top-level rng_seed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _coerce(cls, section: str, key: str, value):
    """Match JSON values to the dataclass field type (ints stay ints, lists become tuples)."""
    ftype = {f.name: f.type for f in fields(cls)}[key]
    ftype = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    where = f"{section}.{key}" if section else key
    if ftype == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if ftype == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if ftype == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if ftype == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if ftype.startswith("Optional[str]"):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{where} must be a string or null")
        return value
    if ftype.startswith("Tuple[int"):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where} must be a list of integers")
        return tuple(value)
    return value


def _build_section(cls, name: str, data) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    if name == "train":
        known.discard("rng_seed")  # the top-level rng_seed is the only seed knob
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**{k: _coerce(cls, name, k, v) for k, v in data.items()})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Build and validate a :class:`RunConfig`; missing keys take their defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw: Dict[str, Any] = {}
    for key in TOP_LEVEL:
        if key in data:
            kw[key] = _coerce(RunConfig, "", key, data[key])
    for name, cls in SECTIONS.items():
        if name in data:
            kw[name] = _build_section(cls, name, data[name])
    try:
        cfg = RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path) -> Dict[str, Any]:
    """Read a JSON config file into a plain dict (not yet validated)."""
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return data


def parse_override(text: str) -> Tuple[List[str], Any]:
    """``section.key=value`` (or ``key=value`` at top level); the value is read as JSON if it parses."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path or len(path) > 2:
        raise ConfigError(f"override key {key!r} must be 'key' or 'section.key'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    out = json.loads(json.dumps(data))
    for text in overrides:
        path, value = parse_override(text)
        if len(path) == 1:
            out[path[0]] = value
        else:
            section = out.setdefault(path[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"cannot override {'.'.join(path)}: {path[0]!r} is not a section")
            section[path[1]] = value
    return out
