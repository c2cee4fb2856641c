"""Training configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ContractError
from .losses import LossWeights
from .network import NetworkConfig


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_halve_every: int = 500
    epochs: int = 3000
    batch: int = 2
    beta1: float = 0.9
    beta2: float = 0.9  # as published; unusually low but kept
    eps_opt: float = 1e-8
    weight_decay: float = 0.0
    lambda1: float = 0.05
    lambda2: float = 0.05
    eps_contrastive: float = 1e-7
    detach_negatives: bool = False
    crop: int = 64  # 0 trains on whole images
    flip: bool = True
    seed: int = 0
    max_steps: int = 0  # 0 = no limit
    checkpoint_every: int = 0  # epochs; 0 = only at the end
    single_thread: bool = True
    float64: bool = False
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def validate(self) -> None:
        if not self.lr0 > 0:
            raise ContractError("lr0 must be positive")
        if self.batch < 1:
            raise ContractError("batch must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractError("betas must lie in (0, 1)")
        if self.lr_halve_every < 1 or self.epochs < 0:
            raise ContractError("lr_halve_every >= 1 and epochs >= 0 required")
        self.loss_weights().validate()
        self.network.validate()

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.eps_contrastive, self.detach_negatives)

    def to_flat(self) -> dict[str, object]:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "network"}
        out.update(dataclasses.asdict(self.network))
        return out

    @classmethod
    def from_flat(cls, values: dict[str, object]) -> TrainConfig:
        own = {f.name for f in fields(cls)} - {"network"}
        net = set(NetworkConfig.field_names())
        unknown = set(values) - own - net
        if unknown:
            raise ContractError(f"unknown config keys: {', '.join(sorted(unknown))}")
        ncfg = NetworkConfig(**{k: v for k, v in values.items() if k in net})
        return cls(network=ncfg, **{k: v for k, v in values.items() if k in own})


def _convert(raw: str, typ, key: str):
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"{key}: not a boolean: {raw!r}")
    try:
        return typ(raw.strip())
    except ValueError:
        raise ContractError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def _field_types() -> dict[str, type]:
    types = {}
    for cls in (TrainConfig, NetworkConfig):
        hints = typing.get_type_hints(cls)
        for f in fields(cls):
            if f.name != "network":
                types[f.name] = hints[f.name]
    return types


def parse_config_text(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    types = _field_types()
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ContractError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _convert(raw, types[key], key)
    return TrainConfig.from_flat(values)


def load_config(path: str | Path | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_flat().items())
