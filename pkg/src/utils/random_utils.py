import numpy as np
import xxhash


def stream_key(name: str) -> int:
    return xxhash.xxh32_intdigest(name.encode("utf-8"))


def rng_stream(seed: int, *names: str) -> np.random.Generator:
    """Independent, reproducible generator for one concern of a run (corpus, init, shuffle, ...)."""
    entropy = [int(seed)] + [stream_key(name) for name in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))
