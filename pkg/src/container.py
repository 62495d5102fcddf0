from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.core.tensor import Tensor
from src.extensions import DEFAULT_PROMPT
from src.models.encoder import ImageBank, TextEncoder
from src.models.peft import PeftModules, build_peft, trainable_parameters
from src.models.prompt import prepare_texts
from src.schemas.peft_schemas import HardPromptConfig, PeftSpec
from src.schemas.run_config_schemas import RunConfig
from src.services.corpus.corpus_service import Dataset, Splits, build_translator, generate, split_few_shot
from src.services.corpus.translation_service import Tokens, Translator
from src.services.corpus.tsv_service import load_tsv
from src.services.trainer.checkpoint import Checkpoint
from src.utils.errors import MissingImageError

logger = logging.getLogger(__name__)


@dataclass
class Lab:
    """Everything one run works on: data, translator, encoder and its PEFT modules."""

    run: RunConfig
    dataset: Dataset
    bank: ImageBank
    translator: Translator
    splits: Splits
    encoder: TextEncoder
    peft: PeftModules
    requires_mt_inference: bool = False

    def prompt_spec(self, combo: int | None = None, template: Sequence[int] | None = None) -> PeftSpec:
        spec = self.peft.spec
        if combo is None and template is None:
            return spec
        base = spec.variant if isinstance(spec.variant, HardPromptConfig) else HardPromptConfig(template=DEFAULT_PROMPT)
        return PeftSpec(HardPromptConfig(
            template=tuple(template) if template is not None else base.template,
            combo=combo or base.combo,
        ))

    def prepare(self, texts: Sequence[Tokens], lang: str, prompt: PeftSpec | None = None) -> list[Tokens]:
        return prepare_texts(texts, prompt or self.peft.spec, lang, self.translator, self.run.encoder.max_len)

    def encode(self, texts: Sequence[Tokens], lang: str, prompt: PeftSpec | None = None) -> Tensor:
        return self.encoder.encode_batch(self.prepare(texts, lang, prompt), self.peft)

    def embed(self, texts: Sequence[Tokens], lang: str, prompt: PeftSpec | None = None) -> np.ndarray:
        return self.encoder.embed(self.prepare(texts, lang, prompt), self.peft)

    def trainable(self) -> dict[str, Tensor]:
        return trainable_parameters(self.encoder, self.peft)

    def all_parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.params, **self.peft.parameters()}

    def load_checkpoint(self, checkpoint: Checkpoint | str):
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = Checkpoint.load(checkpoint)
        checkpoint.restore(self.all_parameters())
        self.requires_mt_inference = bool(checkpoint.metadata.get("requires_mt_inference", False))
        logger.info(f"Loaded checkpoint (step {checkpoint.step}, dev metric {checkpoint.metric:.2f}, {len(checkpoint.tensors)} tensors)")
        return checkpoint


def load_corpus(run: RunConfig) -> tuple[Dataset, ImageBank, Translator]:
    if run.data is None:
        return generate(run.corpus, seed=run.corpus_seed, encoder=run.encoder)

    dataset = load_tsv(run.data.corpus_path, languages=run.corpus.languages)
    bank = ImageBank.load_tsv(run.data.images_path, dim=run.encoder.d_proj)
    missing = [i for i in dataset.image_ids if i not in bank]
    if missing:
        raise MissingImageError(f"{len(missing)} corpus image id(s) missing from {run.data.images_path}, e.g. '{missing[0]}'")
    return dataset, bank, build_translator(run.corpus, run.corpus_seed)


def build_lab(run: RunConfig, checkpoint: str | None = None) -> Lab:
    dataset, bank, translator = load_corpus(run)
    splits = split_few_shot(dataset, seed=run.seed, split=run.split)

    encoder = TextEncoder.init(run.encoder, seed=run.seed)
    if run.encoder.init_checkpoint:
        pretrained = Checkpoint.load(run.encoder.init_checkpoint)
        pretrained.restore(encoder.params, strict=False)
        logger.info(f"Initialized encoder from {run.encoder.init_checkpoint}")

    peft = build_peft(run.peft, encoder, seed=run.seed)
    lab = Lab(run, dataset, bank, translator, splits, encoder, peft)
    if checkpoint:
        lab.load_checkpoint(checkpoint)
    return lab
