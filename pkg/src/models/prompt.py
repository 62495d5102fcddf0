from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from src.extensions import PIVOT
from src.schemas.peft_schemas import HardPromptConfig, PeftSpec, SoftPromptConfig
from src.services.corpus.translation_service import Tokens, Translator
from src.utils.errors import LengthError


@dataclass(frozen=True)
class PreparedInput:
    """Token ids to feed the encoder, plus how many trainable prefix rows it will prepend."""

    tokens: Tokens
    n_soft: int = 0

    @property
    def length(self) -> int:
        return len(self.tokens) + self.n_soft


def apply_prompt(
    tokens: Sequence[int],
    spec: PeftSpec,
    lang: str,
    translate: Translator | None,
    max_len: int | None = None,
    combo: int | None = None,
    pivot: str = PIVOT,
) -> PreparedInput:
    """Prepare one text for encoding under the prompt setting of `spec`.

    combo 1 prepends the pivot template, combo 2 a per-language translated
    template, combo 3 prepends the pivot template to the text translated into
    the pivot. `combo` overrides the combo stored in a hard-prompt spec.
    """
    tokens = tuple(int(t) for t in tokens)
    variant = spec.variant
    prepared = PreparedInput(tokens)

    if isinstance(variant, HardPromptConfig):
        template = variant.template
        combo = combo or variant.combo
        if combo == 1:
            prepared = PreparedInput(template + tokens)
        elif combo == 2:
            prompt = translate.translate_prompt(template, lang) if lang != pivot else template
            prepared = PreparedInput(tuple(prompt) + tokens)
        else:
            text = translate.translate(tokens, lang, pivot) if lang != pivot else tokens
            prepared = PreparedInput(template + tuple(text))
    elif isinstance(variant, SoftPromptConfig):
        prepared = PreparedInput(tokens, n_soft=variant.n_tokens)

    if max_len is not None and prepared.length > max_len:
        raise LengthError(f"Prompted input of length {prepared.length} exceeds max_len {max_len}")
    return prepared


def prepare_texts(
    texts: Sequence[Sequence[int]],
    spec: PeftSpec,
    lang: str,
    translate: Translator | None,
    max_len: int | None = None,
    combo: int | None = None,
) -> list[Tokens]:
    return [apply_prompt(t, spec, lang, translate, max_len, combo).tokens for t in texts]
