import numpy as np
import torch

# independent random streams drawn from one user seed
STREAMS = {"task": 0, "policy": 1, "simplex": 2}


def auto_seed(seed: int) -> int:
    """Negative seeds draw a fresh one; the seed actually used is returned so it can be logged."""
    if seed < 0:
        seed = int(np.random.SeedSequence().entropy % 2 ** 31)
    torch.manual_seed(seed)
    return seed


def make_rng(seed: int, stream: str) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, STREAMS[stream]])))
