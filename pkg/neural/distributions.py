from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import log_softmax, rel_entr

from .modules import ShapeError, softmax_forward

__all__ = [
    "SupportError",
    "PreferencePair",
    "CategoricalPolicy",
    "kl_divergence",
    "nll_of_chosen",
]


class SupportError(ValueError):
    """p puts mass where q has none, so KL(p || q) is infinite."""


class PreferencePair(NamedTuple):
    prompt: int
    chosen: int
    rejected: int


@dataclass
class CategoricalPolicy:
    """Direct logit parameterisation: one row of logits per prompt."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.atleast_2d(np.asarray(self.logits, dtype=np.float64))
        if self.logits.ndim != 2:
            raise ShapeError(f"logits must be [prompts x responses], got {self.logits.shape}")

    @property
    def num_prompts(self) -> int:
        return self.logits.shape[0]

    @property
    def num_responses(self) -> int:
        return self.logits.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return softmax_forward(self.logits)

    @property
    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits, axis=-1)


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {q.shape}")
    if np.any((p > 0.0) & (q <= 0.0)):
        raise SupportError("p has mass outside the support of q")
    return max(float(np.sum(rel_entr(p, q))), 0.0)


def nll_of_chosen(policy: CategoricalPolicy, pairs: Sequence[PreferencePair]) -> float:
    """Mean negative log-likelihood of the chosen response over the pairs."""
    if len(pairs) == 0:
        raise ValueError("nll_of_chosen needs at least one pair")
    log_probs = policy.log_probs
    try:
        values = [-log_probs[pair.prompt, pair.chosen] for pair in pairs]
    except IndexError as e:
        raise IndexError(f"pair indexes outside a {log_probs.shape} policy") from e
    return float(np.mean(values))
