"""Miniature pre-LN transformer text encoder and the frozen image-embedding bank."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor, no_grad
from src.extensions import EVAL_CHUNK_SIZE, PAD_ID
from src.schemas.run_config_schemas import EncoderConfig
from src.utils.errors import CorpusFormatError, DegenerateVectorError, DimensionError, LengthError, MissingImageError, TokenError
from src.utils.random_utils import rng_stream

if TYPE_CHECKING:
    from src.models.peft import PeftModules

logger = logging.getLogger(__name__)

MASK_BIAS = -1e9
LN_EPS = 1e-5


def layer_names(i: int) -> dict[str, str]:
    prefix = f"layers.{i}"
    return {
        "W_q": f"{prefix}.W_q",
        "W_k": f"{prefix}.W_k",
        "W_v": f"{prefix}.W_v",
        "W_o": f"{prefix}.W_o",
        "W_ff1": f"{prefix}.ff.W1",
        "b_ff1": f"{prefix}.ff.b1",
        "W_ff2": f"{prefix}.ff.W2",
        "b_ff2": f"{prefix}.ff.b2",
        "ln1_gamma": f"{prefix}.ln1.gamma",
        "ln1_beta": f"{prefix}.ln1.beta",
        "ln2_gamma": f"{prefix}.ln2.gamma",
        "ln2_beta": f"{prefix}.ln2.beta",
    }


def per_layer_params(cfg: EncoderConfig) -> int:
    d, d_ff = cfg.d_model, cfg.d_ff
    attention = 4 * d * d
    feed_forward = d * d_ff + d_ff + d_ff * d + d
    norms = 2 * 2 * d
    return attention + feed_forward + norms


def count_params(cfg: EncoderConfig | "TextEncoder") -> int:
    """Closed-form parameter count of the text encoder."""
    if isinstance(cfg, TextEncoder):
        cfg = cfg.config
    embeddings = cfg.vocab_size * cfg.d_model + cfg.max_len * cfg.d_model
    head = cfg.d_model * cfg.d_proj + cfg.d_proj
    return embeddings + cfg.n_layers * per_layer_params(cfg) + head


class TextEncoder:
    def __init__(self, config: EncoderConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, seed: int = 0) -> "TextEncoder":
        rng = rng_stream(seed, "encoder", "init")
        d, d_ff = config.d_model, config.d_ff

        def normal(name: str, shape: tuple[int, ...], std: float) -> tuple[str, Tensor]:
            return name, Tensor(rng.normal(0.0, std, size=shape), name=name)

        def const(name: str, shape: tuple[int, ...], value: float) -> tuple[str, Tensor]:
            return name, Tensor(np.full(shape, value), name=name)

        params = dict([
            normal("token_embedding", (config.vocab_size, d), 0.02),
            normal("position_embedding", (config.max_len, d), 0.02),
        ])
        for i in range(config.n_layers):
            n = layer_names(i)
            params.update([
                normal(n["W_q"], (d, d), 1.0 / math.sqrt(d)),
                normal(n["W_k"], (d, d), 1.0 / math.sqrt(d)),
                normal(n["W_v"], (d, d), 1.0 / math.sqrt(d)),
                normal(n["W_o"], (d, d), 1.0 / math.sqrt(d)),
                normal(n["W_ff1"], (d, d_ff), 1.0 / math.sqrt(d)),
                const(n["b_ff1"], (d_ff,), 0.0),
                normal(n["W_ff2"], (d_ff, d), 1.0 / math.sqrt(d_ff)),
                const(n["b_ff2"], (d,), 0.0),
                const(n["ln1_gamma"], (d,), 1.0),
                const(n["ln1_beta"], (d,), 0.0),
                const(n["ln2_gamma"], (d,), 1.0),
                const(n["ln2_beta"], (d,), 0.0),
            ])
        params.update([
            normal("linear_head.W", (d, config.d_proj), 1.0 / math.sqrt(d)),
            const("linear_head.b", (config.d_proj,), 0.0),
        ])
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, tensors: dict[str, np.ndarray], strict: bool = False):
        missing = set(self.params) - set(tensors)
        if strict and missing:
            raise DimensionError(f"Encoder state is missing {sorted(missing)[:5]}")
        for name, value in tensors.items():
            if name not in self.params:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise DimensionError(f"Tensor '{name}' has shape {value.shape}, expected {self.params[name].shape}")
            self.params[name].data = value.copy()

    def _validate(self, sequences: Sequence[Sequence[int]], n_prefix: int):
        cfg = self.config
        for tokens in sequences:
            if len(tokens) == 0:
                raise LengthError("Cannot encode an empty token sequence")
            if len(tokens) + n_prefix > cfg.max_len:
                raise LengthError(
                    f"Sequence of length {len(tokens)} plus {n_prefix} prompt tokens exceeds max_len {cfg.max_len}"
                )
            bad = [t for t in tokens if not 0 <= int(t) < cfg.vocab_size]
            if bad:
                raise TokenError(f"Token id(s) {bad[:5]} outside vocabulary of size {cfg.vocab_size}")

    def _attention(self, x: Tensor, i: int, mask: Tensor | None, peft: "PeftModules | None") -> Tensor:
        cfg = self.config
        n = layer_names(i)
        N, L, d = x.shape
        h, dh = cfg.n_heads, cfg.d_head

        def project(target: str) -> Tensor:
            delta = peft.lora(i, target) if peft is not None else None
            if delta is not None:
                return delta(self.params[n[target]], x)
            return x @ self.params[n[target]]

        def heads(t: Tensor) -> Tensor:
            return t.reshape(N, L, h, dh).swapaxes(1, 2)

        q, k, v = heads(project("W_q")), heads(project("W_k")), heads(project("W_v"))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        attended = F.softmax(scores, axis=-1) @ v
        merged = attended.swapaxes(1, 2).reshape(N, L, d)
        return merged @ self.params[n["W_o"]]

    def _feed_forward(self, x: Tensor, i: int) -> Tensor:
        n = layer_names(i)
        hidden = F.gelu(x @ self.params[n["W_ff1"]] + self.params[n["b_ff1"]])
        return hidden @ self.params[n["W_ff2"]] + self.params[n["b_ff2"]]

    def encode_batch(self, sequences: Sequence[Sequence[int]], peft: "PeftModules | None" = None) -> Tensor:
        """Encode token sequences into a [N x d_proj] tensor of text embeddings."""
        cfg = self.config
        prefix = peft.prefix if peft is not None else None
        n_prefix = 0 if prefix is None else prefix.shape[0]
        self._validate(sequences, n_prefix)

        lengths = np.array([len(s) for s in sequences])
        width = int(lengths.max())
        ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
        for row, tokens in enumerate(sequences):
            ids[row, : len(tokens)] = tokens

        x = F.take_rows(self.params["token_embedding"], ids)
        if prefix is not None:
            x = F.concat([F.broadcast_to(prefix, (len(sequences), *prefix.shape)), x], axis=1)
        total = n_prefix + width
        x = x + self.params["position_embedding"][:total]

        valid = np.arange(width)[None, :] < lengths[:, None]
        valid = np.concatenate([np.ones((len(sequences), n_prefix), dtype=bool), valid], axis=1)
        padded = not valid.all()
        mask = Tensor._wrap(np.where(valid, 0.0, MASK_BIAS)[:, None, None, :]) if padded else None

        for i in range(cfg.n_layers):
            n = layer_names(i)
            a = self._attention(F.layer_norm(x, self.params[n["ln1_gamma"]], self.params[n["ln1_beta"]], LN_EPS), i, mask, peft)
            if peft is not None and (adapter := peft.adapter(i, "attn")) is not None:
                a = adapter(a)
            x = x + a
            f = self._feed_forward(F.layer_norm(x, self.params[n["ln2_gamma"]], self.params[n["ln2_beta"]], LN_EPS), i)
            if peft is not None and (adapter := peft.adapter(i, "ffn")) is not None:
                f = adapter(f)
            x = x + f

        if cfg.pooling == "first_token":
            pooled = x[:, 0, :]
        elif padded:
            weights = Tensor._wrap((valid / valid.sum(axis=1, keepdims=True))[:, :, None])
            pooled = (x * weights).sum(axis=1)
        else:
            pooled = x.mean(axis=1)
        return pooled @ self.params["linear_head.W"] + self.params["linear_head.b"]

    def encode_text(self, tokens: Sequence[int], peft: "PeftModules | None" = None) -> Tensor:
        return self.encode_batch([tokens], peft)[0]

    def embed(self, sequences: Sequence[Sequence[int]], peft: "PeftModules | None" = None, chunk_size: int = EVAL_CHUNK_SIZE) -> np.ndarray:
        """Gradient-free encoding in chunks; returns a plain [N x d_proj] array."""
        out = []
        with no_grad():
            for start in range(0, len(sequences), chunk_size):
                out.append(self.encode_batch(sequences[start : start + chunk_size], peft).data)
        if not out:
            return np.zeros((0, self.config.d_proj))
        return np.concatenate(out, axis=0)


def encode_text(enc: TextEncoder, tokens: Sequence[int], peft: "PeftModules | None" = None) -> Tensor:
    return enc.encode_text(tokens, peft)


@dataclass
class ImageBank:
    """Frozen unit vectors standing in for the image encoder's outputs."""

    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for image_id, v in list(self.vectors.items()):
            self.vectors[image_id] = _freeze(v)

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values())).shape[0] if self.vectors else 0

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.vectors

    def ids(self) -> list[str]:
        return list(self.vectors)

    def add(self, image_id: str, vector: np.ndarray):
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise DegenerateVectorError(f"Image '{image_id}' has a zero vector")
        self.vectors[image_id] = _freeze(np.asarray(vector, dtype=np.float64) / norm)

    def encode_image(self, image_id: str) -> Tensor:
        if image_id not in self.vectors:
            raise MissingImageError(f"Unknown image id '{image_id}'")
        return Tensor(self.vectors[image_id])

    def matrix(self, image_ids: Iterable[str]) -> Tensor:
        rows = []
        for image_id in image_ids:
            if image_id not in self.vectors:
                raise MissingImageError(f"Unknown image id '{image_id}'")
            rows.append(self.vectors[image_id])
        return Tensor(np.stack(rows) if rows else np.zeros((0, self.dim)))

    def save_tsv(self, path: str | Path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for image_id, v in self.vectors.items():
                f.write(f"{image_id}\t{','.join(repr(float(x)) for x in v)}\n")

    @classmethod
    def load_tsv(cls, path: str | Path, dim: int | None = None) -> "ImageBank":
        bank = cls()
        renormalized = 0
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise CorpusFormatError("expected 'image_id<TAB>values'", line=line_no, path=str(path))
                image_id, raw = parts
                try:
                    v = np.array([float(x) for x in raw.split(",")], dtype=np.float64)
                except ValueError:
                    raise CorpusFormatError("non-numeric vector component", line=line_no, path=str(path))
                if dim is not None and v.shape[0] != dim:
                    raise CorpusFormatError(f"vector has {v.shape[0]} values, expected {dim}", line=line_no, path=str(path))
                if image_id in bank.vectors:
                    raise CorpusFormatError(f"duplicate image id '{image_id}'", line=line_no, path=str(path))
                norm = np.linalg.norm(v)
                if norm == 0 or not np.isfinite(norm):
                    raise CorpusFormatError("vector has zero or non-finite norm", line=line_no, path=str(path))
                if abs(norm - 1.0) > 1e-6:
                    renormalized += 1
                    bank.vectors[image_id] = _freeze(v / norm)
                else:
                    bank.vectors[image_id] = _freeze(v)
        if renormalized:
            logger.warning(f"Re-normalized {renormalized} image vector(s) from {path} with |v| off by more than 1e-6")
        return bank


def encode_image(bank: ImageBank, image_id: str) -> Tensor:
    return bank.encode_image(image_id)


def _freeze(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=np.float64)
    v.flags.writeable = False
    return v
