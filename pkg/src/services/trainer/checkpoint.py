from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import orjson

from src.core.tensor import Tensor
from src.extensions import CHECKPOINT_FORMAT_VERSION
from src.utils.errors import ConfigurationError, DimensionError
from src.utils.io_utils import read_json, write_json

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config_hash: str
    step: int
    metric: float
    metadata: dict[str, Any] = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    @classmethod
    def capture(cls, params: dict[str, Tensor], config_hash: str, step: int, metric: float, **metadata) -> "Checkpoint":
        return cls({name: t.data.copy() for name, t in params.items()}, config_hash, step, float(metric), dict(metadata))

    def restore(self, params: dict[str, Tensor], strict: bool = True):
        """Copy saved tensors into `params`; with `strict`, every saved tensor must have a destination."""
        unknown = sorted(set(self.tensors) - set(params))
        if strict and unknown:
            raise ConfigurationError(f"Checkpoint holds tensors this model does not have: {unknown[:5]}")
        for name, value in self.tensors.items():
            if name not in params:
                continue
            if value.shape != params[name].shape:
                raise DimensionError(f"Checkpoint tensor '{name}' has shape {value.shape}, model expects {params[name].shape}")
            params[name].data = value.copy()

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "config_hash": self.config_hash,
            "step": self.step,
            "metric": self.metric,
            "metadata": self.metadata,
            "tensors": {
                name: {"shape": list(value.shape), "data": value.reshape(-1).tolist()}
                for name, value in sorted(self.tensors.items())
            },
        }

    def save(self, path: str | Path) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Checkpoint":
        version = data.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigurationError(f"Unsupported checkpoint format_version {version!r}, expected {CHECKPOINT_FORMAT_VERSION}")
        tensors = {}
        for name, entry in data.get("tensors", {}).items():
            values = np.asarray(entry["data"], dtype=np.float64)
            shape = tuple(entry["shape"])
            if values.size != int(np.prod(shape)):
                raise ConfigurationError(f"Checkpoint tensor '{name}' has {values.size} values for shape {shape}")
            tensors[name] = values.reshape(shape)
        return cls(
            tensors=tensors,
            config_hash=data.get("config_hash", ""),
            step=int(data.get("step", 0)),
            metric=float(data.get("metric", 0.0)),
            metadata=dict(data.get("metadata", {})),
            format_version=version,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            data = read_json(path)
        except (OSError, orjson.JSONDecodeError) as e:
            raise ConfigurationError(f"Cannot read checkpoint {path}: {e}")
        return cls.from_dict(data)
