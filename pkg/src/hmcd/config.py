"""Run configuration: every tunable constant in one validated, nested structure.

Files are TOML (``.toml``) or JSON (anything else). Unknown sections or keys
are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import json
import math
import sys
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import SchemaError
from .evaluation import DEFAULT_IOU_THRESH, DEFAULT_VOTE_THRESHOLD
from .losses import LossConfig
from .map_model import RoiConfig
from .synthesis import DEFAULT_P_DEL, DEFAULT_PRIOR_THRESHOLD
from .training import NmsConfig, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class RoiSection:
    tau_dis_m: float = 100.0
    tau_ori_cos: float = math.cos(5 * math.pi / 6)

    def to_roi(self) -> RoiConfig:
        return RoiConfig(self.tau_dis_m, self.tau_ori_cos)


@dataclass(frozen=True)
class ModelSection:
    preset: str = "tiny"
    input_size: int = 224
    # 9 (w, h) pairs in pixels; empty means k-means on the training boxes
    anchors: list = field(default_factory=list)


@dataclass(frozen=True)
class LossSection:
    alpha: float = 0.5
    gamma: float = 2.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda_obj: float = 1.0
    lambda_noobj: float = 0.5

    def to_loss(self) -> LossConfig:
        return LossConfig(**asdict(self))


@dataclass(frozen=True)
class NmsSection:
    mode: str = "soft_linear"
    iou: float = 0.45
    score_floor: float = 0.001
    conf: float = 0.25

    def to_nms(self) -> NmsConfig:
        return NmsConfig(**asdict(self))


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    lr_schedule: str = "constant"
    lr_final_ratio: float = 0.01
    epochs: int = 100
    max_steps: typing.Optional[int] = None
    target_loss: typing.Optional[float] = None
    temporal: bool = False
    clip_len: int = 8
    log_every: int = 25
    init_from: typing.Optional[str] = None


@dataclass(frozen=True)
class EvalSection:
    iou_thresh: float = DEFAULT_IOU_THRESH
    vote_threshold: int = DEFAULT_VOTE_THRESHOLD


@dataclass(frozen=True)
class SynthSection:
    prior_threshold: int = DEFAULT_PRIOR_THRESHOLD
    p_del: float = DEFAULT_P_DEL


@dataclass(frozen=True)
class RunConfig:
    roi: RoiSection = field(default_factory=RoiSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    nms: NmsSection = field(default_factory=NmsSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    synth: SynthSection = field(default_factory=SynthSection)
    seed: int = 0

    def train_config(self) -> TrainConfig:
        return TrainConfig(preset=self.model.preset, input_size=self.model.input_size,
                           seed=self.seed, **asdict(self.train))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        text = path.read_text()
        try:
            data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: cannot parse config: {exc}") from exc
        return cls.from_dict(data)


def _check_value(value, hint, where: str):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(hint)
        if value is None and type(None) in args:
            return None
        return _check_value(value, next(a for a in args if a is not type(None)), where)
    if hint is bool:
        if not isinstance(value, bool):
            raise SchemaError(f"{where}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise SchemaError(f"{where}: expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise SchemaError(f"{where}: expected a list, got {value!r}")
        return value
    if is_dataclass(hint):
        return _build(hint, value, where + ".")
    return value


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise SchemaError(f"{prefix or 'config'}: expected a table")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise SchemaError(f"unknown config key(s) {', '.join(prefix + k for k in unknown)}")
    kwargs = {k: _check_value(v, hints[k], prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{prefix or 'config'}: {exc}") from exc


def validate(cfg: RunConfig) -> None:
    """Build every downstream config once so invalid values fail before any work starts."""
    try:
        cfg.train_config()
        cfg.loss.to_loss()
        cfg.roi.to_roi()
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc
    anchors = cfg.model.anchors
    if anchors and (len(anchors) != 9 or any(len(a) != 2 or min(a) <= 0 for a in anchors)):
        raise SchemaError("model.anchors must be 9 positive (w, h) pairs")
    if cfg.nms.mode not in ("hard", "soft_linear"):
        raise SchemaError(f"nms.mode must be 'hard' or 'soft_linear', got {cfg.nms.mode!r}")
