from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor, no_grad
from src.schemas.peft_schemas import PeftSpec
from src.services.corpus.corpus_service import Dataset, check_views
from src.services.eval.metrics import Disparity, directional_recall, disparity
from src.utils.errors import EvaluationError
from src.utils.io_utils import fmt, write_csv, write_json
from src.utils.mixins import SerializationMixin

if TYPE_CHECKING:
    from src.container import Lab

logger = logging.getLogger(__name__)


@dataclass
class RetrievalReport(SerializationMixin):
    scores: dict[str, float]
    k: int = 1
    direction: str = "text_to_image"
    text_view: str = "natural"
    split: str = "test"
    aggregate: Disparity | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.scores.values()))) if self.scores else 0.0

    def rows(self) -> list[list[str]]:
        rows = [["language", lang, fmt(score)] for lang, score in self.scores.items()]
        if self.aggregate is not None:
            for name, value in self.aggregate.to_dict().items():
                rows.append(["aggregate", name, fmt(value)])
        return rows

    def save(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path, int]:
        out_dir = Path(out_dir)
        csv_path = out_dir / f"{stem}.csv"
        count = write_csv(csv_path, ["kind", "name", f"recall_at_{self.k}"], self.rows())
        json_path = write_json(out_dir / f"{stem}.json", self.to_dict())
        return csv_path, json_path, count


def view_texts(dataset: Dataset, lang: str, text_view: str) -> tuple[list, str]:
    """Texts of one language under a text view, and the language they are written in."""
    pivot = dataset.pivot
    if lang == pivot or text_view == "natural":
        return [s.texts[(lang, "natural")] for s in dataset.samples], lang
    check_views(dataset, [lang], text_view)
    texts = [s.texts[(lang, text_view)] for s in dataset.samples]
    return texts, (pivot if text_view == "mt_to_pivot" else lang)


def similarity(text_embeddings: np.ndarray, image_embeddings: Tensor) -> np.ndarray:
    with no_grad():
        return F.cosine_matrix(Tensor(text_embeddings), image_embeddings).data


def evaluate(
    lab: "Lab",
    split: str | None = None,
    languages: Sequence[str] | None = None,
    text_view: str | None = None,
    combo: int | None = None,
    k: int | None = None,
    direction: str | None = None,
    template: Sequence[int] | None = None,
) -> RetrievalReport:
    """Recall@K per language on one split, aggregated into disparity statistics."""
    cfg = lab.run.eval
    split = split or cfg.split
    languages = list(languages or lab.run.eval_languages)
    text_view = text_view or cfg.text_view or ("mt_to_pivot" if lab.run.mt_inference else "natural")
    combo = combo if combo is not None else cfg.prompt_combo
    k = k or cfg.k
    direction = direction or cfg.direction
    prompt: PeftSpec = lab.prompt_spec(combo, template)

    effective_combo = getattr(prompt.variant, "combo", None)
    if lab.requires_mt_inference and text_view != "mt_to_pivot" and effective_combo != 3:
        logger.warning(
            "Checkpoint was trained on machine-translated input (routine 3) but is evaluated on "
            f"'{text_view}' text without translation; scores will not reflect the training setup"
        )

    dataset = lab.splits.get(split)
    images = lab.bank.matrix(dataset.image_ids)
    scores = {}
    for lang in languages:
        texts, written_in = view_texts(dataset, lang, text_view)
        embeddings = lab.embed(texts, written_in, prompt)
        scores[lang] = directional_recall(similarity(embeddings, images), k, direction)

    aggregate = None
    if len(scores) >= 2 and dataset.pivot in scores:
        aggregate = disparity(scores, dataset.pivot)
    return RetrievalReport(scores, k, direction, text_view, split, aggregate)


def mean_recall(lab: "Lab", split: str, languages: Sequence[str], text_view: str) -> tuple[float, dict[str, float]]:
    report = evaluate(lab, split=split, languages=languages, text_view=text_view, k=1)
    return report.mean, report.scores


@dataclass
class PromptSelection(SerializationMixin):
    best: tuple[int, ...]
    scores: list[float] = field(default_factory=list)
    candidates: list[tuple[int, ...]] = field(default_factory=list)


def select_prompt(
    lab: "Lab",
    candidates: Sequence[Sequence[int]],
    combo: int = 1,
    split: str = "dev",
    languages: Sequence[str] | None = None,
) -> PromptSelection:
    """Pick the hard-prompt template with the best mean dev Recall@1 (first one wins ties)."""
    if not candidates:
        raise EvaluationError("select_prompt needs at least one candidate template")
    scores = []
    for template in candidates:
        report = evaluate(lab, split=split, languages=languages, combo=combo, k=1, template=template)
        scores.append(report.mean)
    best = int(np.argmax(scores))
    logger.info(f"Selected prompt {list(candidates[best])} (mean dev R@1 {scores[best]:.2f})")
    return PromptSelection(tuple(candidates[best]), scores, [tuple(c) for c in candidates])
