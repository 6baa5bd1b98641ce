import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.special import log_softmax, softmax

from experiment_tools.seeding import make_rng

__all__ = [
    "ShapeError",
    "NonFiniteInputError",
    "softmax_forward",
    "softmax_backward",
    "MlpPolicy",
    "ParamGradient",
    "init_mlp",
    "mlp_forward",
    "backprop",
]

INIT_SCHEME = "uniform(+-1/sqrt(fan_in)), philox"


class ShapeError(ValueError):
    """Array shapes disagree with what the operation needs."""


class NonFiniteInputError(ValueError):
    """NaN or infinite values were passed where finite numbers are required."""


def softmax_forward(logits) -> np.ndarray:
    """Row-wise softmax of a vector or [rows x classes] matrix, shifted by the row max."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim not in (1, 2) or logits.shape[-1] == 0:
        raise ShapeError(f"expected a non-empty vector or matrix, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInputError("softmax input contains NaN or inf")
    return softmax(logits, axis=-1)


def softmax_backward(probs: np.ndarray, dloss_dprobs: np.ndarray) -> np.ndarray:
    # J^T g with J = diag(p) - p p^T
    return probs * (dloss_dprobs - np.dot(probs, dloss_dprobs))


class ForwardCache(NamedTuple):
    inputs: np.ndarray
    pre_activation: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class ParamGradient:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, policy: "MlpPolicy") -> "ParamGradient":
        return cls(*(np.zeros_like(p) for p in policy.parameters()))

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient(*(a + b for a, b in zip(self.as_list(), other.as_list())))

    def as_list(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def flatten(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.as_list()])


@dataclass
class MlpPolicy:
    """
    One-hidden-layer ReLU network mapping a one-hot prompt to response logits:
    logits = w2 @ relu(w1 @ onehot + b1) + b2.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        hidden, num_prompts = self.w1.shape
        num_responses = self.w2.shape[0]
        if (
            self.b1.shape != (hidden,)
            or self.w2.shape != (num_responses, hidden)
            or self.b2.shape != (num_responses,)
        ):
            raise ShapeError(
                f"inconsistent MLP shapes w1={self.w1.shape} b1={self.b1.shape} "
                f"w2={self.w2.shape} b2={self.b2.shape}"
            )

    @property
    def num_prompts(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[0]

    @property
    def num_responses(self) -> int:
        return self.w2.shape[0]

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def parameters(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "MlpPolicy":
        return MlpPolicy(*(p.copy() for p in self.parameters()), seed=self.seed)

    def logits(self, prompt: int) -> np.ndarray:
        return _forward_cache(self, prompt).logits

    def probs(self, prompt: int) -> np.ndarray:
        return mlp_forward(self, prompt)

    def all_logits(self) -> np.ndarray:
        return np.stack([self.logits(i) for i in range(self.num_prompts)])

    def all_probs(self) -> np.ndarray:
        return np.stack([self.probs(i) for i in range(self.num_prompts)])

    def all_log_probs(self) -> np.ndarray:
        return log_softmax(self.all_logits(), axis=-1)


def init_mlp(num_prompts: int, num_responses: int, hidden: int = 32, seed: int = 0) -> MlpPolicy:
    """Each layer is drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) on the seed's policy stream."""
    if min(num_prompts, num_responses, hidden) < 1:
        raise ShapeError(
            f"sizes must be positive, got prompts={num_prompts} responses={num_responses} hidden={hidden}"
        )
    rng = make_rng(seed, "policy")
    bound1 = 1.0 / math.sqrt(num_prompts)
    w1 = rng.uniform(-bound1, bound1, size=(hidden, num_prompts))
    b1 = rng.uniform(-bound1, bound1, size=hidden)
    bound2 = 1.0 / math.sqrt(hidden)
    w2 = rng.uniform(-bound2, bound2, size=(num_responses, hidden))
    b2 = rng.uniform(-bound2, bound2, size=num_responses)
    return MlpPolicy(w1, b1, w2, b2, seed=seed)


def _check_prompt(policy: MlpPolicy, prompt: int) -> None:
    if not 0 <= prompt < policy.num_prompts:
        raise IndexError(f"prompt index {prompt} out of range [0, {policy.num_prompts})")


def _forward_cache(policy: MlpPolicy, prompt: int) -> ForwardCache:
    _check_prompt(policy, prompt)
    inputs = np.zeros(policy.num_prompts)
    inputs[prompt] = 1.0
    pre_activation = policy.w1 @ inputs + policy.b1
    hidden = np.maximum(pre_activation, 0.0)
    logits = policy.w2 @ hidden + policy.b2
    return ForwardCache(inputs, pre_activation, hidden, logits, softmax_forward(logits))


def mlp_forward(policy: MlpPolicy, prompt: int) -> np.ndarray:
    return _forward_cache(policy, prompt).probs


def backprop(policy: MlpPolicy, prompt: int, dloss_dprobs) -> ParamGradient:
    """Parameter gradient of a scalar loss given its gradient w.r.t. the prompt's response probabilities."""
    dloss_dprobs = np.asarray(dloss_dprobs, dtype=np.float64)
    if dloss_dprobs.shape != (policy.num_responses,):
        raise ShapeError(
            f"expected a gradient of shape ({policy.num_responses},), got {dloss_dprobs.shape}"
        )
    cache = _forward_cache(policy, prompt)

    d_logits = softmax_backward(cache.probs, dloss_dprobs)
    d_w2 = np.outer(d_logits, cache.hidden)
    d_b2 = d_logits
    d_hidden = policy.w2.T @ d_logits
    d_pre = d_hidden * (cache.pre_activation > 0.0)
    d_w1 = np.outer(d_pre, cache.inputs)
    d_b1 = d_pre
    return ParamGradient(d_w1, d_b1, d_w2, d_b2)
