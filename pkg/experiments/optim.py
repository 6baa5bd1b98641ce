import copy
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

logger = logging.getLogger(__name__)


class OptimizerKind(str, Enum):
    PLAIN_GD = "plain_gd"
    ADAM = "adam"


@dataclass
class StepResult:
    accepted: bool
    halvings: int
    losses: Optional[np.ndarray]


def monotone_decrease(new_losses: np.ndarray, old_losses: np.ndarray) -> bool:
    """Total loss strictly lower and no individual term higher than before."""
    if not np.all(np.isfinite(new_losses)):
        return False
    return bool(new_losses.sum() < old_losses.sum() and np.all(new_losses <= old_losses))


class PolicyOptimizer:
    """
    Steps numpy parameters with a torch optimizer. Parameters are shared with
    float64 tensors through torch.from_numpy, so the optimizer updates the
    numpy arrays in place; gradients are supplied by the caller.

    With line_search the proposed update is scaled by 1, 1/2, 1/4, ... until
    `evaluate` reports a monotone decrease, at most `max_halvings` times.
    """

    def __init__(
        self,
        params: Sequence[np.ndarray],
        optimizer: OptimizerKind = OptimizerKind.ADAM,
        learning_rate: float = 0.05,
        line_search: bool = False,
        max_halvings: int = 40,
    ):
        self.params = list(params)
        self.tensors = [torch.from_numpy(p) for p in self.params]
        self.line_search = line_search
        self.max_halvings = max_halvings
        optimizer = OptimizerKind(optimizer)
        if optimizer is OptimizerKind.PLAIN_GD:
            self.optim = torch.optim.SGD(self.tensors, lr=learning_rate)
        else:
            self.optim = torch.optim.Adam(self.tensors, lr=learning_rate)

    def _proposed_update(self, grads: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        base = [p.copy() for p in self.params]
        for tensor, grad in zip(self.tensors, grads):
            tensor.grad = torch.from_numpy(np.ascontiguousarray(grad, dtype=np.float64))
        with torch.no_grad():
            self.optim.step()
        self.optim.zero_grad(set_to_none=True)
        update = [p - b for p, b in zip(self.params, base)]
        self._assign(base, update, 0.0)
        return base, update

    def _assign(self, base, update, scale: float) -> None:
        for p, b, u in zip(self.params, base, update):
            p[...] = b + scale * u

    def step(
        self,
        grads: Sequence[np.ndarray],
        evaluate: Optional[Callable[[], np.ndarray]] = None,
        current_losses: Optional[np.ndarray] = None,
    ) -> StepResult:
        saved = copy.deepcopy(self.optim.state_dict()) if self.line_search else None
        base, update = self._proposed_update(grads)
        if not self.line_search:
            self._assign(base, update, 1.0)
            return StepResult(accepted=True, halvings=0, losses=None)

        scale = 1.0
        for halving in range(self.max_halvings + 1):
            self._assign(base, update, scale)
            losses = evaluate()
            if monotone_decrease(losses, current_losses):
                return StepResult(accepted=True, halvings=halving, losses=losses)
            scale *= 0.5

        self._assign(base, update, 0.0)
        # a rejected step leaves no trace in the moment estimates
        self.optim.load_state_dict(saved)
        logger.debug("line search exhausted after %d halvings", self.max_halvings)
        return StepResult(accepted=False, halvings=self.max_halvings, losses=None)
