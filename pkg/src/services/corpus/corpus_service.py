from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from src.extensions import N_RESERVED, PIVOT
from src.models.encoder import ImageBank
from src.schemas.run_config_schemas import VIEWS, CorpusSpec, EncoderConfig, SplitConfig
from src.services.corpus.translation_service import Tokens, TranslationModel
from src.utils.errors import BatchConstructionError, ConfigurationError, MissingImageError, SizeError
from src.utils.random_utils import rng_stream

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    image_id: str
    texts: dict[tuple[str, str], Tokens] = field(default_factory=dict)

    def text(self, lang: str, view: str = "natural") -> Tokens | None:
        return self.texts.get((lang, view))


@dataclass
class Dataset:
    languages: tuple[str, ...]
    samples: list[Sample]
    pivot: str = PIVOT

    def __post_init__(self):
        self.languages = tuple(self.languages)
        self._index = {s.image_id: i for i, s in enumerate(self.samples)}

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.languages == other.languages
            and self.pivot == other.pivot
            and [(s.image_id, s.texts) for s in self.samples] == [(s.image_id, s.texts) for s in other.samples]
        )

    @property
    def image_ids(self) -> list[str]:
        return [s.image_id for s in self.samples]

    def sample(self, image_id: str) -> Sample:
        if image_id not in self._index:
            raise MissingImageError(f"Image '{image_id}' is not part of this dataset")
        return self.samples[self._index[image_id]]

    def subset(self, image_ids: Iterable[str]) -> "Dataset":
        return Dataset(self.languages, [self.sample(i) for i in image_ids], self.pivot)

    def views(self) -> set[tuple[str, str]]:
        keys: set[tuple[str, str]] = set()
        for s in self.samples:
            keys.update(s.texts)
        return keys

    def row_count(self) -> int:
        return sum(len(s.texts) for s in self.samples)


@dataclass
class Splits:
    train: Dataset
    dev: Dataset
    test: Dataset

    def get(self, name: str) -> Dataset:
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]


def caption_from_latent(z: np.ndarray, seq_len: int, vocab_size: int) -> Tokens:
    """Quantize a latent vector into seq_len non-reserved token ids (position j reads z[j mod d])."""
    usable = vocab_size - N_RESERVED
    d = z.shape[0]
    values = z[np.arange(seq_len) % d]
    bins = np.floor((values + 3.0) / 6.0 * usable).astype(np.int64)
    return tuple(int(t) for t in N_RESERVED + np.clip(bins, 0, usable - 1))


def build_translator(spec: CorpusSpec, seed: int) -> TranslationModel:
    return TranslationModel(spec.languages, spec.vocab_size, spec.gaps(), seed=seed)


def generate(spec: CorpusSpec, seed: int = 0, encoder: EncoderConfig | None = None) -> tuple[Dataset, ImageBank, TranslationModel]:
    """Synthesize a parallel corpus: images are unit latents, captions quantize them, targets permute and drift."""
    if encoder is not None and encoder.d_proj != spec.latent_dim:
        raise ConfigurationError(f"corpus.latent_dim ({spec.latent_dim}) must equal encoder.d_proj ({encoder.d_proj})")

    translator = build_translator(spec, seed)
    latent_rng = rng_stream(seed, "corpus", "latent")
    natural_rng = {lang: rng_stream(seed, "corpus", "natural", lang) for lang in spec.languages}
    gaps = spec.gaps()
    width = max(5, len(str(spec.n_items - 1)))

    bank = ImageBank()
    samples = []
    for index in range(spec.n_items):
        z = latent_rng.standard_normal(spec.latent_dim)
        image_id = f"img{index:0{width}d}"
        bank.add(image_id, z)

        english = caption_from_latent(z, spec.seq_len, spec.vocab_size)
        sample = Sample(image_id, {(PIVOT, "natural"): english})
        for lang in spec.languages:
            if lang == PIVOT:
                continue
            natural = translator.add_noise(translator.permute(english, lang), gaps[lang], natural_rng[lang])
            sample.texts[(lang, "natural")] = natural
            if "mt_from_pivot" in spec.views:
                sample.texts[(lang, "mt_from_pivot")] = translator.translate(english, PIVOT, lang)
            if "mt_to_pivot" in spec.views:
                sample.texts[(lang, "mt_to_pivot")] = translator.translate(natural, lang, PIVOT)
        samples.append(sample)

    dataset = Dataset(tuple(spec.languages), samples)
    logger.info(f"Generated corpus: {len(dataset)} items, {len(spec.languages)} languages, {dataset.row_count()} texts")
    return dataset, bank, translator


def split_sizes(n: int, split: SplitConfig) -> tuple[int, int, int]:
    n_train = int(round(n * split.train))
    n_dev = int(round(n * split.dev))
    n_test = n - n_train - n_dev
    if min(n_train, n_dev, n_test) < 1:
        raise SizeError(f"{n} items are too few for a {split.train}/{split.dev}/{split.test} split")
    return n_train, n_dev, n_test


def split_few_shot(dataset: Dataset, seed: int = 0, split: SplitConfig | None = None) -> Splits:
    """Disjoint train/dev/test buckets of image ids shared by every language (50/50/900 for 1000 items)."""
    split = split or SplitConfig()
    n_train, n_dev, _ = split_sizes(len(dataset), split)
    order = rng_stream(seed, "split").permutation(len(dataset))
    ids = dataset.image_ids
    train = [ids[i] for i in order[:n_train]]
    dev = [ids[i] for i in order[n_train : n_train + n_dev]]
    test = [ids[i] for i in order[n_train + n_dev :]]
    return Splits(dataset.subset(train), dataset.subset(dev), dataset.subset(test))


def check_views(dataset: Dataset, languages: Sequence[str], view: str):
    """Raise if any sample lacks the given view for a non-pivot language."""
    if view not in VIEWS:
        raise ConfigurationError(f"Unknown text view '{view}'")
    for lang in languages:
        if lang == dataset.pivot:
            continue
        for s in dataset.samples:
            if (lang, view) not in s.texts:
                raise BatchConstructionError(f"Sample '{s.image_id}' has no '{view}' text for language '{lang}'")
