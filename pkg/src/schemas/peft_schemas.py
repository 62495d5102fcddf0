from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Union

from src.extensions import DEFAULT_PROMPT, PROMPT_TOKEN_IDS
from src.utils.errors import ConfigurationError

LORA_TARGETS = ("W_q", "W_v")
UNFREEZE_GROUPS = ("linear_head", "layer_norm", "all")
ACTIVATIONS = ("gelu", "relu")


@dataclass(frozen=True)
class NoPeftConfig:
    type: Literal["none"] = "none"


@dataclass(frozen=True)
class AdapterConfig:
    type: Literal["adapter"] = "adapter"
    r: int = 8
    activation: Literal["gelu", "relu"] = "gelu"

    def __post_init__(self):
        if self.r < 1:
            raise ConfigurationError(f"peft.r must be >= 1, got {self.r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"peft.activation must be one of {ACTIVATIONS}, got {self.activation!r}")


@dataclass(frozen=True)
class CompacterConfig:
    type: Literal["compacter"] = "compacter"
    k: int = 4
    r: int = 8
    r_B: int = 1
    shared_A: bool = True
    activation: Literal["gelu", "relu"] = "gelu"

    def __post_init__(self):
        if self.r < 1 or self.k < 1 or self.r_B < 1:
            raise ConfigurationError(f"peft.k, peft.r and peft.r_B must be >= 1, got k={self.k} r={self.r} r_B={self.r_B}")
        if self.r % self.k != 0:
            raise ConfigurationError(f"peft.k ({self.k}) must divide peft.r ({self.r})")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"peft.activation must be one of {ACTIVATIONS}, got {self.activation!r}")


@dataclass(frozen=True)
class LoraConfig:
    type: Literal["lora"] = "lora"
    r: int = 2
    targets: tuple[str, ...] = LORA_TARGETS

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.r < 1:
            raise ConfigurationError(f"peft.r must be >= 1, got {self.r}")
        if not self.targets:
            raise ConfigurationError("peft.targets must name at least one projection")
        unknown = [t for t in self.targets if t not in LORA_TARGETS]
        if unknown:
            raise ConfigurationError(f"peft.targets: unknown projection(s) {unknown}, expected a subset of {list(LORA_TARGETS)}")


@dataclass(frozen=True)
class SoftPromptConfig:
    type: Literal["soft_prompt"] = "soft_prompt"
    n_tokens: int = len(DEFAULT_PROMPT)
    init: Literal["from_hard_prompt", "random"] = "from_hard_prompt"
    template: tuple[int, ...] = DEFAULT_PROMPT
    sigma: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "template", tuple(self.template))
        if self.n_tokens < 1:
            raise ConfigurationError(f"peft.n_tokens must be >= 1, got {self.n_tokens}")
        if self.init not in ("from_hard_prompt", "random"):
            raise ConfigurationError(f"peft.init must be 'from_hard_prompt' or 'random', got {self.init!r}")
        if self.init == "from_hard_prompt" and len(self.template) != self.n_tokens:
            raise ConfigurationError(
                f"peft.n_tokens ({self.n_tokens}) must equal the template length ({len(self.template)}) "
                f"when initializing from a hard prompt"
            )
        if self.init == "random" and self.sigma <= 0:
            raise ConfigurationError(f"peft.sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class HardPromptConfig:
    type: Literal["hard_prompt"] = "hard_prompt"
    template: tuple[int, ...] = DEFAULT_PROMPT
    combo: Literal[1, 2, 3] = 1

    def __post_init__(self):
        object.__setattr__(self, "template", tuple(self.template))
        if not self.template:
            raise ConfigurationError("peft.template must not be empty")
        outside = [t for t in self.template if t not in PROMPT_TOKEN_IDS]
        if outside:
            raise ConfigurationError(f"peft.template ids {outside} are not prompt tokens {list(PROMPT_TOKEN_IDS)}")
        if self.combo not in (1, 2, 3):
            raise ConfigurationError(f"peft.combo must be 1, 2 or 3, got {self.combo}")


PeftVariant = Union[
    NoPeftConfig,
    AdapterConfig,
    CompacterConfig,
    LoraConfig,
    SoftPromptConfig,
    HardPromptConfig,
]

VARIANTS: dict[str, type] = {
    "none": NoPeftConfig,
    "adapter": AdapterConfig,
    "compacter": CompacterConfig,
    "lora": LoraConfig,
    "soft_prompt": SoftPromptConfig,
    "hard_prompt": HardPromptConfig,
}

DEFAULT_UNFREEZE = {
    "adapter": frozenset({"linear_head", "layer_norm"}),
    "compacter": frozenset({"linear_head", "layer_norm"}),
    "lora": frozenset({"linear_head", "layer_norm"}),
}


@dataclass(frozen=True)
class PeftSpec:
    variant: PeftVariant = field(default_factory=NoPeftConfig)
    unfreeze: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "unfreeze", frozenset(self.unfreeze))
        unknown = sorted(self.unfreeze - set(UNFREEZE_GROUPS))
        if unknown:
            raise ConfigurationError(f"peft.unfreeze: unknown group(s) {unknown}, expected a subset of {list(UNFREEZE_GROUPS)}")

    @property
    def type(self) -> str:
        return self.variant.type

    @property
    def full_fine_tune(self) -> bool:
        return "all" in self.unfreeze

    @property
    def prompt_length(self) -> int:
        if isinstance(self.variant, SoftPromptConfig):
            return self.variant.n_tokens
        if isinstance(self.variant, HardPromptConfig):
            return len(self.variant.template)
        return 0

    def to_dict(self) -> dict:
        data = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.variant.__dict__.items()}
        data["unfreeze"] = sorted(self.unfreeze)
        return data


def infer_peft_type(config: dict) -> str:
    if "k" in config or "r_B" in config or "shared_A" in config:
        return "compacter"
    if "targets" in config:
        return "lora"
    if "n_tokens" in config or "sigma" in config or "init" in config:
        return "soft_prompt"
    if "combo" in config or "template" in config:
        return "hard_prompt"
    if "r" in config or "activation" in config:
        return "adapter"
    return "none"


def sanitize_config(config: dict, peft_type: str) -> dict:
    allowed_keys = set(VARIANTS[peft_type].__dataclass_fields__)
    unknown = sorted(set(config) - allowed_keys - {"unfreeze"})
    if unknown:
        raise ConfigurationError(f"peft: unknown key(s) {unknown} for type '{peft_type}'")
    return {k: v for k, v in config.items() if k in allowed_keys}


def parse_peft_spec(config: dict | PeftSpec | None) -> PeftSpec:
    if config is None:
        return PeftSpec()
    if isinstance(config, PeftSpec):
        return config
    if not isinstance(config, dict):
        raise ConfigurationError(f"peft must be an object, got {type(config).__name__}")

    config = dict(config)
    peft_type = config.get("type") or infer_peft_type(config)
    if peft_type not in VARIANTS:
        raise ConfigurationError(f"peft.type: unknown variant '{peft_type}', expected one of {list(VARIANTS)}")

    unfreeze = config.pop("unfreeze", None)
    if unfreeze is None:
        unfreeze = DEFAULT_UNFREEZE.get(peft_type, frozenset())
    elif isinstance(unfreeze, str):
        unfreeze = [unfreeze]

    fields = sanitize_config(config, peft_type)
    fields["type"] = peft_type
    try:
        variant = VARIANTS[peft_type](**fields)
    except TypeError as e:
        raise ConfigurationError(f"peft: {e}")
    return PeftSpec(variant=variant, unfreeze=frozenset(unfreeze))
