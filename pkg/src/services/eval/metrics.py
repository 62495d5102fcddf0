from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from src.core.tensor import Tensor
from src.extensions import PIVOT
from src.utils.errors import EvaluationError, KOutOfRangeError, PivotMissingError
from src.utils.mixins import SerializationMixin


def ranks_of_truth(sim: np.ndarray, truth: Sequence[int]) -> np.ndarray:
    """0-based rank of each query's true item; equal scores rank the lower gallery index first."""
    sim = np.asarray(sim, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    rows = np.arange(sim.shape[0])
    true_scores = sim[rows, truth][:, None]
    higher = (sim > true_scores).sum(axis=1)
    tied_before = ((sim == true_scores) & (np.arange(sim.shape[1])[None, :] < truth[:, None])).sum(axis=1)
    return higher + tied_before


def recall_at_k(sim: Tensor | np.ndarray, truth: Sequence[int] | None = None, k: int = 1) -> float:
    """Percentage of queries whose true gallery item is among the k best scored."""
    sim = sim.data if isinstance(sim, Tensor) else np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise EvaluationError(f"Similarity matrix must be 2-D, got shape {sim.shape}")
    n_queries, n_gallery = sim.shape
    if not 1 <= k <= n_gallery:
        raise KOutOfRangeError(f"K must lie in [1, {n_gallery}], got {k}")
    if n_queries == 0:
        raise EvaluationError("Cannot compute recall over zero queries")
    truth = np.arange(n_queries) if truth is None else np.asarray(truth)
    if truth.shape != (n_queries,) or truth.min() < 0 or truth.max() >= n_gallery:
        raise EvaluationError("Each query needs exactly one ground-truth gallery index")
    return float(100.0 * np.mean(ranks_of_truth(sim, truth) < k))


def directional_recall(sim_t2i: np.ndarray, k: int, direction: str) -> float:
    if direction == "text_to_image":
        return recall_at_k(sim_t2i, k=k)
    if direction == "image_to_text":
        return recall_at_k(sim_t2i.T, k=k)
    return 0.5 * (recall_at_k(sim_t2i, k=k) + recall_at_k(sim_t2i.T, k=k))


@dataclass
class Disparity(SerializationMixin):
    avg: float
    avg_minus_en: float
    std: float
    range: float


def disparity(scores: Mapping[str, float], pivot: str = PIVOT) -> Disparity:
    """Avg, Avg without the pivot, sample std (n - 1) and max - min of per-language scores."""
    if pivot not in scores:
        raise PivotMissingError(f"Pivot language '{pivot}' missing from scores {sorted(scores)}")
    if len(scores) < 2:
        raise EvaluationError("Disparity needs at least two languages")
    values = np.array(list(scores.values()), dtype=np.float64)
    others = np.array([v for lang, v in scores.items() if lang != pivot], dtype=np.float64)
    return Disparity(
        avg=float(values.mean()),
        avg_minus_en=float(others.mean()),
        std=float(values.std(ddof=1)),
        range=float(values.max() - values.min()),
    )
