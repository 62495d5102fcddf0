"""Adapter, Compacter, LoRA and soft-prompt modules with freeze policy and parameter accounting.

Every module starts at its neutral initialization: an encoder carrying any of
them computes exactly what the bare encoder computes until training moves the
parameters away from their starting values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from src.core import functional as F
from src.core.tensor import Tensor
from src.models.encoder import TextEncoder, count_params, layer_names
from src.schemas.peft_schemas import (
    AdapterConfig,
    CompacterConfig,
    LoraConfig,
    PeftSpec,
    SoftPromptConfig,
)
from src.schemas.run_config_schemas import EncoderConfig
from src.utils.errors import ConfigurationError, DimensionError
from src.utils.random_utils import rng_stream

logger = logging.getLogger(__name__)

INIT_STD = 0.02
SITES = ("attn", "ffn")


@dataclass
class AdapterLayer:
    W_down: Tensor
    b_down: Tensor
    W_up: Tensor
    b_up: Tensor
    activation: str = "gelu"

    @property
    def d(self) -> int:
        return self.W_down.shape[0]

    @property
    def r(self) -> int:
        return self.W_down.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return adapter_forward(self, x)

    def parameters(self) -> dict[str, Tensor]:
        return {"W_down": self.W_down, "b_down": self.b_down, "W_up": self.W_up, "b_up": self.b_up}

    @staticmethod
    def n_params(d: int, r: int) -> int:
        return d * r + r + r * d + d


def adapter_forward(layer: AdapterLayer, x: Tensor) -> Tensor:
    """O = x + f(x W_down + b_down) W_up + b_up."""
    if x.shape[-1] != layer.d:
        raise DimensionError(f"Adapter expects trailing dimension {layer.d}, got shape {x.shape}")
    hidden = F.ACTIVATIONS[layer.activation](x @ layer.W_down + layer.b_down)
    return x + (hidden @ layer.W_up + layer.b_up)


@dataclass
class KroneckerProjection:
    """W = sum_i kron(A_i, s_i t_i) of shape [k * rows x k * cols]; A is stacked as [k x k x k]."""

    A: Tensor
    s: Tensor
    t: Tensor

    @property
    def k(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.k * self.s.shape[1], self.k * self.t.shape[2]

    def materialize(self) -> Tensor:
        total = None
        for i in range(self.k):
            term = F.kron(self.A[i], self.s[i] @ self.t[i])
            total = term if total is None else total + term
        return total

    def apply(self, x: Tensor) -> Tensor:
        """x @ W without building W: blocks of x are mixed by A_i^T after the low-rank factor."""
        rows, cols = self.shape
        lead = x.shape[:-1]
        blocks = x.reshape(-1, self.k, rows // self.k)
        total = None
        for i in range(self.k):
            low_rank = (blocks @ self.s[i]) @ self.t[i]
            term = self.A[i].swapaxes(0, 1) @ low_rank
            total = term if total is None else total + term
        return total.reshape(*lead, cols)


@dataclass
class CompacterLayer:
    down: KroneckerProjection
    b_down: Tensor
    up: KroneckerProjection
    b_up: Tensor
    activation: str = "gelu"

    @property
    def d(self) -> int:
        return self.down.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return compacter_forward(self, x)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "down.s": self.down.s, "down.t": self.down.t, "b_down": self.b_down,
            "up.s": self.up.s, "up.t": self.up.t, "b_up": self.b_up,
        }

    def materialize(self) -> AdapterLayer:
        return AdapterLayer(self.down.materialize(), self.b_down, self.up.materialize(), self.b_up, self.activation)


def compacter_forward(layer: CompacterLayer, x: Tensor, fused: bool = True) -> Tensor:
    if not fused:
        return adapter_forward(layer.materialize(), x)
    if x.shape[-1] != layer.d:
        raise DimensionError(f"Compacter expects trailing dimension {layer.d}, got shape {x.shape}")
    hidden = F.ACTIVATIONS[layer.activation](layer.down.apply(x) + layer.b_down)
    return x + (layer.up.apply(hidden) + layer.b_up)


@dataclass
class LoraDelta:
    W_A: Tensor
    W_B: Tensor

    @property
    def r(self) -> int:
        return self.W_A.shape[1]

    def __call__(self, W: Tensor, x: Tensor) -> Tensor:
        return lora_forward(self, W, x)

    def delta(self) -> Tensor:
        return self.W_A @ self.W_B


def lora_forward(delta: LoraDelta, W: Tensor, x: Tensor) -> Tensor:
    """O = xW + x W_A W_B with W frozen."""
    if W.shape[0] != delta.W_A.shape[0] or W.shape[1] != delta.W_B.shape[1]:
        raise DimensionError(f"LoRA factors {delta.W_A.shape}/{delta.W_B.shape} do not fit projection {W.shape}")
    return x @ W + (x @ delta.W_A) @ delta.W_B


@dataclass
class PeftModules:
    """Instantiated PEFT parameters for one encoder."""

    spec: PeftSpec
    adapters: dict[tuple[int, str], AdapterLayer | CompacterLayer] = field(default_factory=dict)
    loras: dict[tuple[int, str], LoraDelta] = field(default_factory=dict)
    prefix: Tensor | None = None
    shared: dict[str, Tensor] = field(default_factory=dict)

    def adapter(self, layer: int, site: str) -> AdapterLayer | CompacterLayer | None:
        return self.adapters.get((layer, site))

    def lora(self, layer: int, target: str) -> LoraDelta | None:
        return self.loras.get((layer, target))

    def parameters(self) -> dict[str, Tensor]:
        params = {f"peft.{name}": t for name, t in self.shared.items()}
        for (i, site), module in sorted(self.adapters.items()):
            for name, t in module.parameters().items():
                params[f"peft.layers.{i}.{site}.{name}"] = t
            if isinstance(module, CompacterLayer) and not self.shared:
                params[f"peft.layers.{i}.{site}.down.A"] = module.down.A
                params[f"peft.layers.{i}.{site}.up.A"] = module.up.A
        for (i, target), delta in sorted(self.loras.items()):
            params[f"peft.layers.{i}.{target}.W_A"] = delta.W_A
            params[f"peft.layers.{i}.{target}.W_B"] = delta.W_B
        if self.prefix is not None:
            params["peft.soft_prompt"] = self.prefix
        for name, t in params.items():
            t.name = name
        return params


def _normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _adapter_layer(rng: np.random.Generator, d: int, variant: AdapterConfig) -> AdapterLayer:
    r = variant.r
    return AdapterLayer(_normal(rng, (d, r), INIT_STD), _zeros((r,)), _zeros((r, d)), _zeros((d,)), variant.activation)


def _kron_A(rng: np.random.Generator, k: int) -> Tensor:
    return _normal(rng, (k, k, k), 1.0)


def _compacter_layer(rng: np.random.Generator, d: int, variant: CompacterConfig, shared_A: Tensor | None) -> CompacterLayer:
    k, r, r_B = variant.k, variant.r, variant.r_B
    A_down = shared_A if shared_A is not None else _kron_A(rng, k)
    A_up = shared_A if shared_A is not None else _kron_A(rng, k)
    down = KroneckerProjection(A_down, _normal(rng, (k, d // k, r_B), 0.1), _normal(rng, (k, r_B, r // k), 0.1))
    up = KroneckerProjection(A_up, _normal(rng, (k, r // k, r_B), 0.1), _zeros((k, r_B, d // k)))
    return CompacterLayer(down, _zeros((r,)), up, _zeros((d,)), variant.activation)


def build_peft(spec: PeftSpec, encoder: TextEncoder, seed: int = 0) -> PeftModules:
    """Instantiate the PEFT modules of `spec` for `encoder` and apply the freeze policy."""
    cfg = encoder.config
    d = cfg.d_model
    rng = rng_stream(seed, "peft", spec.type)
    variant = spec.variant
    modules = PeftModules(spec=spec)

    if isinstance(variant, CompacterConfig) and d % variant.k != 0:
        raise ConfigurationError(f"peft.k ({variant.k}) must divide encoder.d_model ({d})")

    if isinstance(variant, AdapterConfig):
        for i in range(cfg.n_layers):
            for site in SITES:
                modules.adapters[(i, site)] = _adapter_layer(rng, d, variant)
    elif isinstance(variant, CompacterConfig):
        shared_A = None
        if variant.shared_A:
            shared_A = _kron_A(rng, variant.k)
            modules.shared["compacter.A"] = shared_A
        for i in range(cfg.n_layers):
            for site in SITES:
                modules.adapters[(i, site)] = _compacter_layer(rng, d, variant, shared_A)
    elif isinstance(variant, LoraConfig):
        for i in range(cfg.n_layers):
            for target in variant.targets:
                modules.loras[(i, target)] = LoraDelta(_normal(rng, (d, variant.r), INIT_STD), _zeros((variant.r, d)))
    elif isinstance(variant, SoftPromptConfig):
        if variant.init == "from_hard_prompt":
            table = encoder.params["token_embedding"].data
            modules.prefix = Tensor(table[list(variant.template)].copy(), requires_grad=True)
        else:
            modules.prefix = _normal(rng, (variant.n_tokens, d), variant.sigma)

    apply_freeze(encoder, modules)
    return modules


def unfrozen_names(encoder: TextEncoder, unfreeze: frozenset[str]) -> set[str]:
    if "all" in unfreeze:
        return set(encoder.params)
    names = set()
    if "linear_head" in unfreeze:
        names |= {"linear_head.W", "linear_head.b"}
    if "layer_norm" in unfreeze:
        for i in range(encoder.config.n_layers):
            n = layer_names(i)
            names |= {n["ln1_gamma"], n["ln1_beta"], n["ln2_gamma"], n["ln2_beta"]}
    return names


def apply_freeze(encoder: TextEncoder, modules: PeftModules):
    unfrozen = unfrozen_names(encoder, modules.spec.unfreeze)
    for name, t in encoder.params.items():
        t.requires_grad = name in unfrozen
    for t in modules.parameters().values():
        t.requires_grad = True


def trainable_parameters(encoder: TextEncoder, modules: PeftModules) -> dict[str, Tensor]:
    params = {name: t for name, t in encoder.params.items() if t.requires_grad}
    params.update(modules.parameters())
    return params


def frozen_parameters(encoder: TextEncoder, modules: PeftModules) -> dict[str, Tensor]:
    return {name: t for name, t in encoder.params.items() if not t.requires_grad}


def perturb(modules: PeftModules, seed: int = 0, scale: float = 0.1):
    """Move every PEFT tensor off its neutral initialization (gradient checks need non-zero paths)."""
    rng = rng_stream(seed, "peft", "perturb")
    for name, t in sorted(modules.parameters().items()):
        t.data = t.data + rng.normal(0.0, scale, size=t.shape)


def _peft_count(spec: PeftSpec, cfg: EncoderConfig) -> int:
    variant, d, L = spec.variant, cfg.d_model, cfg.n_layers
    if isinstance(variant, AdapterConfig):
        return 2 * L * AdapterLayer.n_params(d, variant.r)
    if isinstance(variant, CompacterConfig):
        k, r, r_B = variant.k, variant.r, variant.r_B
        factors = (d * r_B + r * r_B) + (r * r_B + d * r_B)
        biases = r + d
        a_count = k ** 3 if variant.shared_A else 2 * 2 * L * k ** 3
        return 2 * L * (factors + biases) + a_count
    if isinstance(variant, LoraConfig):
        return L * len(variant.targets) * (d * variant.r + variant.r * d)
    if isinstance(variant, SoftPromptConfig):
        return variant.n_tokens * d
    return 0


def _unfreeze_count(unfreeze: frozenset[str], cfg: EncoderConfig) -> int:
    if "all" in unfreeze:
        return count_params(cfg)
    total = 0
    if "linear_head" in unfreeze:
        total += cfg.d_model * cfg.d_proj + cfg.d_proj
    if "layer_norm" in unfreeze:
        total += cfg.n_layers * 2 * 2 * cfg.d_model
    return total


def count_trainable(spec: PeftSpec, cfg: EncoderConfig) -> tuple[int, float]:
    """Trainable-parameter count and its ratio to the text encoder's size."""
    count = _peft_count(spec, cfg) + _unfreeze_count(spec.unfreeze, cfg)
    return count, count / count_params(cfg)


def count_per_language(spec: PeftSpec, cfg: EncoderConfig, n_languages: int) -> tuple[int, float]:
    """Stored parameters when each target language keeps its own module next to one shared encoder.

    The ratio compares against keeping one fully fine-tuned encoder per language.
    """
    if n_languages < 1:
        raise ConfigurationError(f"n_languages must be >= 1, got {n_languages}")
    base = count_params(cfg)
    per_language, _ = count_trainable(spec, cfg)
    if spec.full_fine_tune:
        stored = base * n_languages
    else:
        stored = base + (n_languages - 1) * per_language
    return stored, stored / (base * n_languages)
