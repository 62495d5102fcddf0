from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Sequence

from src.extensions import PIVOT
from src.schemas.run_config_schemas import VIEWS
from src.services.corpus.corpus_service import Dataset, Sample
from src.utils.errors import CorpusFormatError, EmptyDatasetError

logger = logging.getLogger(__name__)

LANGUAGE_TAG = re.compile(r"^[a-z]{2,3}(-[A-Za-z0-9]{1,8})*$")


def save_tsv(dataset: Dataset, path: str | Path) -> int:
    """Write one line per (sample, language, view); returns the row count."""
    rows = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sample in dataset.samples:
            for lang in dataset.languages:
                for view in VIEWS:
                    tokens = sample.texts.get((lang, view))
                    if tokens is None:
                        continue
                    f.write(f"{sample.image_id}\t{lang}\t{view}\t{' '.join(str(t) for t in tokens)}\n")
                    rows += 1
    return rows


def load_tsv(path: str | Path, languages: Sequence[str] | None = None, pivot: str = PIVOT) -> Dataset:
    """Read a corpus TSV; malformed lines raise CorpusFormatError naming the line."""
    known = set(languages) if languages is not None else None
    samples: dict[str, Sample] = {}
    seen_languages: list[str] = []

    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusFormatError(f"expected 4 tab-separated fields, got {len(parts)}", line=line_no, path=str(path))
            image_id, lang, view, raw_tokens = parts
            if not image_id:
                raise CorpusFormatError("empty image id", line=line_no, path=str(path))
            if not LANGUAGE_TAG.match(lang) or (known is not None and lang not in known):
                raise CorpusFormatError(f"unknown language tag '{lang}'", line=line_no, path=str(path))
            if view not in VIEWS:
                raise CorpusFormatError(f"unknown view '{view}', expected one of {list(VIEWS)}", line=line_no, path=str(path))
            try:
                tokens = tuple(int(t) for t in raw_tokens.split())
            except ValueError:
                raise CorpusFormatError("token ids must be integers", line=line_no, path=str(path))
            if not tokens:
                raise CorpusFormatError("empty token sequence", line=line_no, path=str(path))
            if any(t < 0 for t in tokens):
                raise CorpusFormatError("token ids must be non-negative", line=line_no, path=str(path))

            sample = samples.setdefault(image_id, Sample(image_id))
            if (lang, view) in sample.texts:
                raise CorpusFormatError(f"duplicate {lang}/{view} text for '{image_id}'", line=line_no, path=str(path))
            sample.texts[(lang, view)] = tokens
            if lang not in seen_languages:
                seen_languages.append(lang)

    if not samples:
        raise EmptyDatasetError(f"Corpus file {path} contains no samples")
    if pivot not in seen_languages:
        raise CorpusFormatError(f"pivot language '{pivot}' does not appear in the corpus", path=str(path))

    order = languages if languages is not None else seen_languages
    dataset = Dataset(tuple(lang for lang in order if lang in seen_languages), list(samples.values()), pivot)
    for s in dataset.samples:
        if (pivot, "natural") not in s.texts:
            raise CorpusFormatError(f"sample '{s.image_id}' has no natural {pivot} text", path=str(path))
    logger.info(f"Loaded corpus {path}: {len(dataset)} items, languages {list(dataset.languages)}")
    return dataset
