from __future__ import annotations

from typing import Annotated, Any, Literal, Optional

import orjson
import xxhash
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PlainSerializer,
    PlainValidator,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)

from src.extensions import N_RESERVED, PIVOT
from src.schemas.peft_schemas import PeftSpec, SoftPromptConfig, parse_peft_spec
from src.utils.errors import ConfigurationError

VIEWS = ("natural", "mt_from_pivot", "mt_to_pivot")

ALIGNMENT_COMBOS: dict[str, dict[str, Any]] = {
    "A": {"routine": 3, "loss": "contrastive", "pair": "pivot_image"},
    "B": {"routine": 3, "loss": "contrastive", "pair": "pivot_target"},
    "C": {"routine": 1, "loss": "mse", "pair": "pivot_target"},
    "D": {"routine": 2, "loss": "mse", "pair": "pivot_target"},
    "E": {"routine": 3, "loss": "mse", "pair": "pivot_target"},
}


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class EncoderConfig(StrictModel):
    vocab_size: PositiveInt = 2048
    d_model: PositiveInt = 64
    n_layers: NonNegativeInt = 2
    n_heads: PositiveInt = 4
    d_ff: PositiveInt = 128
    max_len: PositiveInt = 64
    d_proj: PositiveInt = 32
    pooling: Literal["first_token", "mean"] = "first_token"
    init_checkpoint: Optional[str] = Field(None, description="Checkpoint whose tensors seed the encoder (pretrained model).")

    @model_validator(mode="after")
    def check_shapes(self) -> "EncoderConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"encoder.d_model ({self.d_model}) must be divisible by encoder.n_heads ({self.n_heads})")
        if self.vocab_size <= N_RESERVED:
            raise ValueError(f"encoder.vocab_size must exceed the {N_RESERVED} reserved ids")
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def default_gaps(languages: list[str], pivot: str = PIVOT, step: float = 0.08, cap: float = 0.5) -> dict[str, float]:
    gaps, rank = {}, 0
    for lang in languages:
        if lang == pivot:
            gaps[lang] = 0.0
            continue
        rank += 1
        gaps[lang] = round(min(step * rank, cap), 6)
    return gaps


class CorpusSpec(StrictModel):
    languages: list[str] = Field(default_factory=lambda: ["en", "de", "fr", "ko"])
    n_items: int = Field(1000, ge=3)
    seq_len: PositiveInt = 32
    latent_dim: PositiveInt = 32
    vocab_size: PositiveInt = 256
    p_gap: Optional[dict[str, float]] = None
    views: list[Literal["natural", "mt_from_pivot", "mt_to_pivot"]] = Field(default_factory=lambda: list(VIEWS))
    seed: Optional[NonNegativeInt] = None

    @field_validator("languages")
    @classmethod
    def check_languages(cls, languages: list[str]) -> list[str]:
        if len(set(languages)) != len(languages):
            raise ValueError(f"languages must be distinct, got {languages}")
        if PIVOT not in languages:
            raise ValueError(f"languages must contain the pivot language '{PIVOT}'")
        for lang in languages:
            if not lang or not lang.replace("-", "").isalnum():
                raise ValueError(f"invalid language tag {lang!r}")
        return languages

    @model_validator(mode="after")
    def check_gaps(self) -> "CorpusSpec":
        if self.vocab_size <= N_RESERVED + 1:
            raise ValueError(f"corpus.vocab_size must leave at least two non-reserved ids")
        if "natural" not in self.views:
            raise ValueError("corpus.views must include 'natural'")
        if self.p_gap is None:
            return self
        unknown = sorted(set(self.p_gap) - set(self.languages))
        if unknown:
            raise ValueError(f"corpus.p_gap names unknown language(s) {unknown}")
        for lang, p in self.p_gap.items():
            if not 0.0 <= p < 1.0:
                raise ValueError(f"corpus.p_gap[{lang}] must lie in [0, 1), got {p}")
        return self

    def gaps(self) -> dict[str, float]:
        gaps = default_gaps(self.languages)
        gaps.update(self.p_gap or {})
        gaps[PIVOT] = 0.0
        return gaps


class CorpusFiles(StrictModel):
    corpus_path: str
    images_path: str


class SplitConfig(StrictModel):
    train: PositiveFloat = 0.05
    dev: PositiveFloat = 0.05
    test: PositiveFloat = 0.90

    @model_validator(mode="after")
    def check_total(self) -> "SplitConfig":
        if abs(self.train + self.dev + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        return self


class AlignmentSpec(StrictModel):
    routine: Literal[1, 2, 3] = 3
    loss: Literal["mse", "contrastive"] = "mse"
    pair: Literal["pivot_target", "pivot_image"] = "pivot_target"
    lambda_: NonNegativeFloat = Field(1.0, alias="lambda")
    tau: PositiveFloat = 0.01

    @model_validator(mode="after")
    def check_pair(self) -> "AlignmentSpec":
        if self.pair == "pivot_image" and self.loss != "contrastive":
            raise ValueError("alignment.pair 'pivot_image' requires alignment.loss 'contrastive'")
        return self

    @classmethod
    def combo(cls, name: str, **overrides) -> "AlignmentSpec":
        return cls(**{**ALIGNMENT_COMBOS[name], **overrides})


class TrainConfig(StrictModel):
    learning_rate: PositiveFloat = 1e-4
    epochs: PositiveInt = 40
    batch_size: PositiveInt = 10
    eval_every: PositiveInt = 5
    scenario: Literal["zero_shot", "few_shot", "full_dataset"] = "few_shot"
    mt_inference: Optional[bool] = None
    languages: Optional[list[str]] = None
    include_mt_views: bool = False


class EvalConfig(StrictModel):
    k: PositiveInt = 1
    direction: Literal["text_to_image", "image_to_text", "both"] = "text_to_image"
    languages: Optional[list[str]] = None
    split: Literal["dev", "test"] = "test"
    text_view: Optional[Literal["natural", "mt_to_pivot", "mt_from_pivot"]] = None
    prompt_combo: Optional[Literal[1, 2, 3]] = None
    prompt_candidates: list[list[int]] = Field(default_factory=list)


class SweepGrid(StrictModel):
    learning_rates: Optional[list[PositiveFloat]] = None
    lambdas: list[NonNegativeFloat] = Field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0, 10.0])
    per_language: bool = False
    metric: Literal["dev_r1"] = "dev_r1"

    @field_validator("learning_rates", "lambdas")
    @classmethod
    def non_empty(cls, values):
        if values is not None and len(values) == 0:
            raise ValueError("sweep axes must not be empty")
        return values

    def lr_axis(self, peft: PeftSpec) -> list[float]:
        if self.learning_rates is not None:
            return list(self.learning_rates)
        if peft.full_fine_tune:
            return [1e-6, 3e-6, 1e-5]
        return [3e-5, 1e-4, 3e-4]


def _parse_peft(value) -> PeftSpec:
    try:
        return parse_peft_spec(value)
    except ConfigurationError as e:
        raise ValueError(e.message)


PeftField = Annotated[
    PeftSpec,
    PlainValidator(_parse_peft),
    PlainSerializer(lambda peft: peft.to_dict(), return_type=dict),
]


class RunConfig(StrictModel):
    name: str = "run"
    seed: NonNegativeInt = 0
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    corpus: CorpusSpec = Field(default_factory=CorpusSpec)
    data: Optional[CorpusFiles] = None
    split: SplitConfig = Field(default_factory=SplitConfig)
    peft: PeftField = Field(default_factory=PeftSpec)
    alignment: Optional[AlignmentSpec] = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    sweep: SweepGrid = Field(default_factory=SweepGrid)
    output_dir: Optional[str] = None

    @property
    def effective_alignment(self) -> AlignmentSpec:
        """The no-alignment baseline is the lambda = 0 case of the combined objective."""
        return self.alignment if self.alignment is not None else AlignmentSpec(lambda_=0.0)

    @model_validator(mode="after")
    def check_cross_fields(self) -> "RunConfig":
        enc, corpus = self.encoder, self.corpus
        if corpus.latent_dim != enc.d_proj:
            raise ValueError(f"corpus.latent_dim ({corpus.latent_dim}) must equal encoder.d_proj ({enc.d_proj})")
        if corpus.vocab_size > enc.vocab_size:
            raise ValueError(f"corpus.vocab_size ({corpus.vocab_size}) exceeds encoder.vocab_size ({enc.vocab_size})")
        if corpus.seq_len + self.peft.prompt_length > enc.max_len:
            raise ValueError(
                f"corpus.seq_len ({corpus.seq_len}) plus prompt length ({self.peft.prompt_length}) "
                f"exceeds encoder.max_len ({enc.max_len})"
            )
        if isinstance(self.peft.variant, SoftPromptConfig) and self.peft.variant.init == "from_hard_prompt":
            outside = [t for t in self.peft.variant.template if t >= enc.vocab_size]
            if outside:
                raise ValueError(f"peft.template ids {outside} are outside the encoder vocabulary")
        for field_name, langs in (("train.languages", self.train.languages), ("eval.languages", self.eval.languages)):
            unknown = sorted(set(langs or []) - set(corpus.languages))
            if unknown:
                raise ValueError(f"{field_name}: unknown language(s) {unknown}")
        if self.alignment is not None and self.data is None:
            if self.alignment.routine == 2 and "mt_from_pivot" not in corpus.views:
                raise ValueError("alignment.routine 2 requires 'mt_from_pivot' in corpus.views")
            if self.alignment.routine == 3 and "mt_to_pivot" not in corpus.views:
                raise ValueError("alignment.routine 3 requires 'mt_to_pivot' in corpus.views")
        return self

    @property
    def corpus_seed(self) -> int:
        return self.seed if self.corpus.seed is None else self.corpus.seed

    @property
    def mt_inference(self) -> bool:
        if self.train.mt_inference is not None:
            return self.train.mt_inference
        alignment = self.alignment
        return alignment is not None and alignment.routine == 3 and alignment.lambda_ > 0

    @property
    def train_languages(self) -> list[str]:
        if self.train.languages:
            return list(self.train.languages)
        return [lang for lang in self.corpus.languages if lang != PIVOT] or [PIVOT]

    @property
    def eval_languages(self) -> list[str]:
        return list(self.eval.languages or self.corpus.languages)

    def to_json_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)

    def config_hash(self) -> str:
        return xxhash.xxh64_hexdigest(orjson.dumps(self.to_json_dict(), option=orjson.OPT_SORT_KEYS))

    def with_overrides(self, **changes: Any) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``with_overrides(**{"train.learning_rate": 3e-4})``."""
        data = self.to_json_dict()
        for path, value in changes.items():
            node = data
            *parents, leaf = path.split(".")
            for part in parents:
                if not isinstance(node.get(part), dict):
                    node[part] = {}
                node = node[part]
            node[leaf] = value
        return RunConfig.model_validate(data)
