from __future__ import annotations

import logging
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import xxhash

from src.extensions import N_RESERVED, PIVOT, PROMPT_TOKEN_IDS
from src.utils.errors import ConfigurationError, TokenError
from src.utils.random_utils import rng_stream

logger = logging.getLogger(__name__)

Tokens = tuple[int, ...]


@runtime_checkable
class Translator(Protocol):
    """Anything that can stand in for machine translation between corpus languages."""

    pivot: str

    def translate(self, tokens: Sequence[int], source: str, target: str) -> Tokens: ...

    def translate_prompt(self, template: Sequence[int], lang: str) -> Tokens: ...


class TranslationModel:
    """Simulated MT: a per-language vocabulary permutation plus per-token noise.

    pivot -> L applies pi_L then noise; L -> pivot applies pi_L^-1 then noise; any
    other pair goes through the pivot. Noise replaces a non-reserved token with a
    uniformly drawn non-reserved id at the gap rate of the non-pivot language, and
    is keyed on (seed, languages, tokens) so the same request always yields the
    same output.
    """

    def __init__(self, languages: Sequence[str], vocab_size: int, p_gap: dict[str, float], seed: int = 0, pivot: str = PIVOT):
        if pivot not in languages:
            raise ConfigurationError(f"Pivot language '{pivot}' missing from {list(languages)}")
        if vocab_size <= N_RESERVED + 1:
            raise ConfigurationError(f"vocab_size must exceed {N_RESERVED + 1}, got {vocab_size}")
        self.languages = tuple(languages)
        self.vocab_size = vocab_size
        self.p_gap = {lang: float(p_gap.get(lang, 0.0)) for lang in languages}
        self.p_gap[pivot] = 0.0
        self.seed = seed
        self.pivot = pivot

        usable = vocab_size - N_RESERVED
        self._forward: dict[str, np.ndarray] = {}
        self._inverse: dict[str, np.ndarray] = {}
        self._prompt: dict[str, dict[int, int]] = {}
        identity = np.arange(vocab_size)
        for lang in self.languages:
            table = identity.copy()
            prompt_map = {t: t for t in PROMPT_TOKEN_IDS}
            if lang != pivot:
                rng = rng_stream(seed, "translation", "permutation", lang)
                table[N_RESERVED:] = N_RESERVED + rng.permutation(usable)
                shuffled = rng_stream(seed, "translation", "prompt", lang).permutation(len(PROMPT_TOKEN_IDS))
                prompt_map = {t: PROMPT_TOKEN_IDS[j] for t, j in zip(PROMPT_TOKEN_IDS, shuffled)}
            inverse = np.empty_like(table)
            inverse[table] = identity
            self._forward[lang] = table
            self._inverse[lang] = inverse
            self._prompt[lang] = prompt_map

    def _check(self, *langs: str):
        for lang in langs:
            if lang not in self._forward:
                raise ConfigurationError(f"Unknown language '{lang}', expected one of {list(self.languages)}")

    def _ids(self, tokens: Sequence[int]) -> np.ndarray:
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise TokenError(f"Token ids must lie in [0, {self.vocab_size}), got {tokens}")
        return ids

    def permute(self, tokens: Sequence[int], lang: str) -> Tokens:
        self._check(lang)
        return tuple(int(t) for t in self._forward[lang][self._ids(tokens)])

    def unpermute(self, tokens: Sequence[int], lang: str) -> Tokens:
        self._check(lang)
        return tuple(int(t) for t in self._inverse[lang][self._ids(tokens)])

    def add_noise(self, tokens: Sequence[int], p: float, rng: np.random.Generator) -> Tokens:
        ids = np.array(tokens, dtype=np.int64)
        if p <= 0 or ids.size == 0:
            return tuple(int(t) for t in ids)
        hit = (rng.random(ids.size) < p) & (ids >= N_RESERVED)
        replacement = rng.integers(N_RESERVED, self.vocab_size, size=ids.size)
        ids[hit] = replacement[hit]
        return tuple(int(t) for t in ids)

    def _noise_rng(self, source: str, target: str, ids: np.ndarray) -> np.random.Generator:
        h = xxhash.xxh64(f"{self.seed}|{source}|{target}|".encode("utf-8"))
        h.update(ids.astype("<i8").tobytes())
        return np.random.default_rng(h.intdigest())

    def _hop(self, ids: np.ndarray, source: str, target: str) -> np.ndarray:
        if source == self.pivot:
            moved = self._forward[target][ids]
            p = self.p_gap[target]
        else:
            moved = self._inverse[source][ids]
            p = self.p_gap[source]
        return np.asarray(self.add_noise(moved, p, self._noise_rng(source, target, ids)), dtype=np.int64)

    def translate(self, tokens: Sequence[int], source: str, target: str) -> Tokens:
        self._check(source, target)
        ids = self._ids(tokens)
        if source == target:
            return tuple(int(t) for t in ids)
        if source != self.pivot and target != self.pivot:
            ids = self._hop(ids, source, self.pivot)
            source = self.pivot
        return tuple(int(t) for t in self._hop(ids, source, target))

    def translate_prompt(self, template: Sequence[int], lang: str) -> Tokens:
        self._check(lang)
        mapping = self._prompt[lang]
        return tuple(mapping.get(int(t), int(t)) for t in template)


def translate(tm: Translator, tokens: Sequence[int], source: str, target: str) -> Tokens:
    return tm.translate(tokens, source, target)
