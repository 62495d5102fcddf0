import numpy as np
import pytest

from src.container import build_lab
from src.schemas.run_config_schemas import CorpusSpec, EncoderConfig, RunConfig

TINY_ENCODER = {"vocab_size": 32, "d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_len": 16, "d_proj": 8}
TINY_CORPUS = {"languages": ["en", "de", "fr"], "n_items": 20, "seq_len": 4, "latent_dim": 8, "vocab_size": 32}


def tiny_run(**overrides) -> RunConfig:
    data = {
        "name": "tiny",
        "seed": 0,
        "encoder": dict(TINY_ENCODER),
        "corpus": dict(TINY_CORPUS),
        "split": {"train": 0.4, "dev": 0.2, "test": 0.4},
        "train": {"epochs": 2, "batch_size": 4, "eval_every": 2},
    }
    run = RunConfig.model_validate(data)
    return run.with_overrides(**overrides) if overrides else run


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig(**TINY_ENCODER)


@pytest.fixture
def tiny_corpus_spec():
    return CorpusSpec(**TINY_CORPUS)


@pytest.fixture
def run_config():
    return tiny_run()


@pytest.fixture
def lab(run_config):
    return build_lab(run_config)


@pytest.fixture
def random_tokens(rng):
    def make(n: int, length: int = 6, vocab: int = 32, low: int = 9):
        return [tuple(int(t) for t in rng.integers(low, vocab, size=length)) for _ in range(n)]

    return make
