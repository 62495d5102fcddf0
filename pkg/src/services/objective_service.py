"""Image-text contrastive loss, alignment losses, alignment routines and the lambda-weighted total."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor
from src.extensions import PIVOT
from src.models.encoder import ImageBank
from src.schemas.run_config_schemas import AlignmentSpec
from src.services.corpus.corpus_service import Dataset
from src.services.corpus.translation_service import Tokens
from src.utils.errors import BatchConstructionError, DimensionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TextSource:
    """A column of texts to encode: the view it came from and the language it is written in."""

    view: str
    lang: str
    tokens: tuple[Tokens, ...]


@dataclass
class Batch:
    images: Tensor
    language: str
    pivot_texts: tuple[Tokens, ...]
    target_texts: tuple[Tokens, ...]
    mt_to_pivot: tuple[Tokens, ...] | None = None
    mt_from_pivot: tuple[Tokens, ...] | None = None
    image_ids: tuple[str, ...] = ()
    pivot: str = PIVOT

    def __post_init__(self):
        n = self.images.shape[0]
        for name in ("pivot_texts", "target_texts", "mt_to_pivot", "mt_from_pivot"):
            view = getattr(self, name)
            if view is not None and len(view) != n:
                raise BatchConstructionError(f"Batch view '{name}' has {len(view)} texts for {n} images")

    @property
    def size(self) -> int:
        return self.images.shape[0]

    @property
    def is_pivot(self) -> bool:
        return self.language == self.pivot

    def source(self, name: str) -> TextSource:
        if name == "pivot":
            return TextSource("pivot", self.pivot, self.pivot_texts)
        if name == "target":
            return TextSource("target", self.language, self.target_texts)
        if name == "mt_to_pivot":
            if self.mt_to_pivot is None:
                raise BatchConstructionError(f"Batch for '{self.language}' lacks the mt_to_pivot view")
            return TextSource(name, self.pivot, self.mt_to_pivot)
        if name == "mt_from_pivot":
            if self.mt_from_pivot is None:
                raise BatchConstructionError(f"Batch for '{self.language}' lacks the mt_from_pivot view")
            return TextSource(name, self.language, self.mt_from_pivot)
        raise BatchConstructionError(f"Unknown text source '{name}'")


def build_batch(dataset: Dataset, bank: ImageBank, image_ids: Sequence[str], language: str) -> Batch:
    samples = [dataset.sample(i) for i in image_ids]
    pivot = dataset.pivot

    def column(lang: str, view: str) -> tuple[Tokens, ...] | None:
        texts = [s.texts.get((lang, view)) for s in samples]
        if any(t is None for t in texts):
            return None
        return tuple(texts)

    pivot_texts = column(pivot, "natural")
    if pivot_texts is None:
        raise BatchConstructionError(f"Batch is missing natural {pivot} texts")
    if language == pivot:
        target, to_pivot, from_pivot = pivot_texts, pivot_texts, pivot_texts
    else:
        target = column(language, "natural")
        if target is None:
            raise BatchConstructionError(f"Batch is missing natural '{language}' texts")
        to_pivot = column(language, "mt_to_pivot")
        from_pivot = column(language, "mt_from_pivot")
    return Batch(bank.matrix(image_ids), language, pivot_texts, target, to_pivot, from_pivot, tuple(image_ids), pivot)


def _info_nce(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """Symmetric in-batch InfoNCE over cosine similarities scaled by 1/tau."""
    if a.shape != b.shape:
        raise DimensionError(f"Contrastive loss needs matching shapes, got {a.shape} and {b.shape}")
    n = a.shape[0]
    logits = F.cosine_matrix(a, b) * (1.0 / tau)
    diag = (np.arange(n), np.arange(n))
    rows = F.log_softmax(logits, axis=1)[diag]
    cols = F.log_softmax(logits, axis=0)[diag]
    return -(rows.mean() + cols.mean())


def contrastive_it_loss(V: Tensor, T: Tensor, tau: float = 0.01) -> Tensor:
    """L_i2t + L_t2i between image rows V and their captions' embeddings T."""
    return _info_nce(V, T, tau)


def contrastive_alignment(Tp: Tensor, X: Tensor, tau: float = 0.01) -> Tensor:
    return _info_nce(Tp, X, tau)


def mse_alignment(Tp: Tensor, Tt: Tensor) -> Tensor:
    if Tp.shape != Tt.shape:
        raise DimensionError(f"MSE alignment needs matching shapes, got {Tp.shape} and {Tt.shape}")
    diff = Tp - Tt
    return (diff * diff).mean()


def select_routine(batch: Batch, routine: int) -> tuple[TextSource, TextSource] | None:
    """Anchor and counterpart text sources for an alignment routine; None on pivot-language batches."""
    if batch.is_pivot:
        return None
    if routine == 1:
        return batch.source("pivot"), batch.source("target")
    if routine == 2:
        return batch.source("mt_from_pivot"), batch.source("target")
    if routine == 3:
        return batch.source("pivot"), batch.source("mt_to_pivot")
    raise BatchConstructionError(f"Unknown alignment routine {routine}")


def retrieval_source(batch: Batch, mt_inference: bool) -> TextSource:
    if mt_inference and not batch.is_pivot:
        return batch.source("mt_to_pivot")
    return batch.source("target")


Encoder = Callable[[TextSource], Tensor]


def combined_loss(batch: Batch, spec: AlignmentSpec, encode: Encoder, mt_inference: bool = False) -> Tensor:
    """L = L_i2t + L_t2i + lambda * L_alignment on one batch."""
    cache: dict[str, Tensor] = {}

    def embed(source: TextSource) -> Tensor:
        if source.view not in cache:
            cache[source.view] = encode(source)
        return cache[source.view]

    retrieval = contrastive_it_loss(batch.images, embed(retrieval_source(batch, mt_inference)), spec.tau)
    if spec.lambda_ == 0:
        return retrieval

    pair = select_routine(batch, spec.routine)
    if pair is None:
        return retrieval
    anchor, other = pair
    if spec.pair == "pivot_image":
        alignment = contrastive_alignment(embed(anchor), batch.images, spec.tau)
    elif spec.loss == "mse":
        alignment = mse_alignment(embed(anchor), embed(other))
    else:
        alignment = contrastive_alignment(embed(anchor), embed(other), spec.tau)
    return retrieval + spec.lambda_ * alignment
