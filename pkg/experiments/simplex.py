import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import log_softmax

from losses import LossDomainError, LossSpec, PairPoint, analytic_gradient, loss
from neural.modules import NonFiniteInputError, softmax_backward, softmax_forward

from .optim import OptimizerKind, PolicyOptimizer
from .training import DivergenceError, PreconditionError

logger = logging.getLogger(__name__)

StopRule = Callable[[np.ndarray], bool]


@dataclass(frozen=True)
class SimplexPoint:
    logits: np.ndarray
    steps_taken: int
    loss: float
    stop_reason: str

    @property
    def probs(self) -> np.ndarray:
        return softmax_forward(self.logits)

    @property
    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits)


def converged_to_pair(chosen: int, rejected: int, high: float = 0.99, low: float = 0.01) -> StopRule:
    def rule(probs: np.ndarray) -> bool:
        return probs[chosen] >= high and probs[rejected] <= low

    return rule


def rejected_below(rejected: int, low: float = 0.01) -> StopRule:
    return lambda probs: probs[rejected] <= low


def check_reference(ref, chosen: int, rejected: int) -> np.ndarray:
    ref = np.asarray(ref, dtype=np.float64)
    if ref.ndim != 1 or ref.size < 2:
        raise PreconditionError(f"reference must be a probability vector, got shape {ref.shape}")
    if not np.all(ref > 0.0):
        raise PreconditionError("reference must be strictly positive")
    if abs(ref.sum() - 1.0) > 1e-9:
        raise PreconditionError(f"reference sums to {ref.sum()}, not 1")
    if chosen == rejected:
        raise PreconditionError(f"chosen and rejected are the same response ({chosen})")
    for index in (chosen, rejected):
        if not 0 <= index < ref.size:
            raise PreconditionError(f"response index {index} outside [0, {ref.size})")
    return ref


def minimize_over_simplex(
    ref,
    chosen: int,
    rejected: int,
    spec: LossSpec,
    steps: int = 5000,
    learning_rate: float = 10.0,
    line_search: bool = True,
    stop_when: Optional[StopRule] = None,
) -> SimplexPoint:
    """
    Gradient descent on the free logits of one categorical distribution,
    starting from the reference, for a dataset holding the single pair
    (chosen, rejected).
    """
    ref = check_reference(ref, chosen, rejected)
    logits = np.log(ref)
    optimizer = PolicyOptimizer(
        [logits], OptimizerKind.PLAIN_GD, learning_rate=learning_rate, line_search=line_search
    )

    def point_of(probs: np.ndarray) -> PairPoint:
        return PairPoint(
            p_w=float(probs[chosen]), p_l=float(probs[rejected]), r_w=ref[chosen], r_l=ref[rejected]
        )

    def evaluate() -> np.ndarray:
        try:
            return np.array([loss(point_of(softmax_forward(logits)), spec)])
        except (LossDomainError, NonFiniteInputError):
            return np.array([np.inf])

    current = evaluate()
    stop_reason = "step budget"
    taken = 0
    for step in range(1, steps + 1):
        probs = softmax_forward(logits)
        if stop_when is not None and stop_when(probs):
            stop_reason = "stop rule"
            break
        try:
            grad = analytic_gradient(point_of(probs), spec)
        except LossDomainError as e:
            raise DivergenceError(f"{spec.kind.value}: gradient undefined at step {step}: {e}") from e
        dloss_dprobs = np.zeros_like(probs)
        dloss_dprobs[chosen] = grad.d_p_w
        dloss_dprobs[rejected] = grad.d_p_l

        result = optimizer.step([softmax_backward(probs, dloss_dprobs)], evaluate, current)
        if not result.accepted:
            stop_reason = f"line search exhausted at step {step}"
            logger.info("%s: %s", spec.kind.value, stop_reason)
            break
        current = result.losses if result.losses is not None else evaluate()
        if not np.all(np.isfinite(logits)) or not np.isfinite(current[0]):
            raise DivergenceError(f"{spec.kind.value} loss is non-finite at step {step}")
        taken = step
    else:
        if stop_when is not None and stop_when(softmax_forward(logits)):
            stop_reason = "stop rule"

    return SimplexPoint(logits=logits.copy(), steps_taken=taken, loss=float(current[0]), stop_reason=stop_reason)
