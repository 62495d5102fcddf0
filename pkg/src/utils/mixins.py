from __future__ import annotations

from dataclasses import fields, is_dataclass
from enum import Enum
from typing import Any

import numpy as np


def _plain(value: Any) -> Any:
    if isinstance(value, SerializationMixin):
        return value.to_dict()
    if is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_plain(v) for v in items]
    return value


class SerializationMixin:
    def to_dict(self, exclude: list | None = None) -> dict:
        if exclude is None:
            exclude = []

        data = {}
        for f in fields(self):
            if f.name in exclude or f.name.startswith("_"):
                continue
            data[f.name] = _plain(getattr(self, f.name))
        return data
