import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import trange

from experiment_tools import __version__
from losses import LossDomainError, LossSpec, PairPoint, analytic_gradient, implicit_rewards, loss
from neural.distributions import CategoricalPolicy, kl_divergence, nll_of_chosen
from neural.modules import INIT_SCHEME, MlpPolicy, NonFiniteInputError, ParamGradient, backprop, init_mlp

from .optim import OptimizerKind, PolicyOptimizer
from .task import ToyTask

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "step",
    "prompt",
    "p_chosen",
    "p_rejected",
    "log_p_chosen",
    "log_p_rejected",
    "kl_to_ref",
    "nll_chosen",
    "in_dist_log_mass",
    "loss",
]
EXTENDED_COLUMNS = TRACE_COLUMNS + ["ood_mass", "reward_chosen", "reward_rejected", "margin"]


class DivergenceError(ValueError):
    """Training produced a non-finite loss or probability."""


class PreconditionError(ValueError):
    """An experiment was configured outside the conditions it is defined for."""


@dataclass(frozen=True)
class TrainingConfig:
    loss_spec: LossSpec
    steps: int = 400
    learning_rate: float = 0.05
    optimizer: OptimizerKind = OptimizerKind.ADAM
    line_search: bool = False
    seed: int = 1
    trace_every: int = 1
    hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        if self.steps < 1:
            raise PreconditionError(f"steps must be >= 1, got {self.steps}")
        if not self.learning_rate > 0:
            raise PreconditionError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 1 <= self.trace_every <= self.steps:
            raise PreconditionError(
                f"trace_every must lie in [1, steps={self.steps}], got {self.trace_every}"
            )

    def with_spec(self, spec: LossSpec) -> "TrainingConfig":
        return replace(self, loss_spec=spec)

    def to_dict(self) -> Dict:
        return {
            "loss": self.loss_spec.to_dict(),
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer.value,
            "line_search": self.line_search,
            "seed": self.seed,
            "trace_every": self.trace_every,
            "hidden": self.hidden,
        }


@dataclass
class TrainingTrace:
    rows: List[Dict]
    reference: MlpPolicy
    policy: MlpPolicy
    metadata: Dict = field(default_factory=dict)
    stop_reason: Optional[str] = None

    def to_frame(self, extended: bool = False) -> pd.DataFrame:
        columns = EXTENDED_COLUMNS if extended else TRACE_COLUMNS
        return pd.DataFrame(self.rows, columns=EXTENDED_COLUMNS)[columns]

    @property
    def last_step(self) -> int:
        return self.rows[-1]["step"]

    def at_step(self, step: int) -> pd.DataFrame:
        frame = self.to_frame(extended=True)
        return frame[frame.step == step].reset_index(drop=True)


def pair_points(probs: np.ndarray, ref_probs: np.ndarray, task: ToyTask) -> List[PairPoint]:
    return [
        PairPoint(
            p_w=float(probs[pair.prompt, pair.chosen]),
            p_l=float(probs[pair.prompt, pair.rejected]),
            r_w=float(ref_probs[pair.prompt, pair.chosen]),
            r_l=float(ref_probs[pair.prompt, pair.rejected]),
        )
        for pair in task.pairs
    ]


def pair_losses(policy: MlpPolicy, ref_probs: np.ndarray, task: ToyTask, spec: LossSpec) -> np.ndarray:
    points = pair_points(policy.all_probs(), ref_probs, task)
    return np.array([loss(point, spec) for point in points])


def _losses_or_inf(policy, ref_probs, task, spec) -> np.ndarray:
    # rejected trial steps of the line search may leave the loss domain
    try:
        return pair_losses(policy, ref_probs, task, spec)
    except (LossDomainError, NonFiniteInputError):
        return np.full(len(task.pairs), np.inf)


def expected_loss_gradient(
    policy: MlpPolicy, ref_probs: np.ndarray, task: ToyTask, spec: LossSpec
) -> ParamGradient:
    """Gradient of the mean pair loss, chained through the response probabilities by backprop."""
    probs = policy.all_probs()
    total = ParamGradient.zeros_like(policy)
    scale = 1.0 / len(task.pairs)
    for pair, point in zip(task.pairs, pair_points(probs, ref_probs, task)):
        grad = analytic_gradient(point, spec)
        dloss_dprobs = np.zeros(policy.num_responses)
        dloss_dprobs[pair.chosen] += scale * grad.d_p_w
        dloss_dprobs[pair.rejected] += scale * grad.d_p_l
        total = total + backprop(policy, pair.prompt, dloss_dprobs)
    return total


def _trace_rows(step: int, policy: MlpPolicy, ref_probs: np.ndarray, task: ToyTask, spec: LossSpec) -> List[Dict]:
    probs = policy.all_probs()
    if not np.all((probs > 0.0) & np.isfinite(probs)):
        raise DivergenceError(f"{spec.kind.value}: a response probability collapsed to 0 at step {step}")
    kl_to_ref = float(np.mean([kl_divergence(p, q) for p, q in zip(probs, ref_probs)]))
    nll_chosen = nll_of_chosen(CategoricalPolicy(policy.all_logits()), task.pairs)

    rows = []
    for pair, point in zip(task.pairs, pair_points(probs, ref_probs, task)):
        value = loss(point, spec)
        if not math.isfinite(value):
            raise DivergenceError(f"{spec.kind.value} loss is non-finite at step {step}")
        rewards = implicit_rewards(point, spec)
        rows.append(
            {
                "step": step,
                "prompt": pair.prompt,
                "p_chosen": point.p_w,
                "p_rejected": point.p_l,
                "log_p_chosen": math.log(point.p_w),
                "log_p_rejected": math.log(point.p_l),
                "kl_to_ref": kl_to_ref,
                "nll_chosen": nll_chosen,
                "in_dist_log_mass": min(math.log(point.p_w + point.p_l), 0.0),
                "loss": value,
                "ood_mass": float(sum(probs[pair.prompt, i] for i in task.ood_indices[pair.prompt])),
                "reward_chosen": rewards.chosen,
                "reward_rejected": rewards.rejected,
                "margin": rewards.margin,
            }
        )
    return rows


def train_toy(
    task: ToyTask,
    config: TrainingConfig,
    progress: bool = False,
    reference: Optional[MlpPolicy] = None,
) -> TrainingTrace:
    """
    Full-batch training of a clone of the reference MLP on the mean pair loss.
    The reference is initialised from config.seed unless one is passed in, so
    runs of different losses with one seed start from the same policy.
    """
    spec = config.loss_spec
    if reference is None:
        reference = init_mlp(task.num_prompts, task.num_responses, config.hidden, config.seed)
    policy = reference.copy()
    ref_probs = reference.all_probs()

    optimizer = PolicyOptimizer(
        policy.parameters(),
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        line_search=config.line_search,
    )

    rows = _trace_rows(0, policy, ref_probs, task, spec)
    losses = pair_losses(policy, ref_probs, task, spec)
    last_recorded, completed, stop_reason = 0, 0, None

    for step in trange(1, config.steps + 1, desc=spec.kind.value, disable=not progress):
        try:
            grads = expected_loss_gradient(policy, ref_probs, task, spec)
        except (LossDomainError, NonFiniteInputError) as e:
            raise DivergenceError(f"{spec.kind.value}: gradient undefined at step {step}: {e}") from e
        result = optimizer.step(
            grads.as_list(),
            evaluate=lambda: _losses_or_inf(policy, ref_probs, task, spec),
            current_losses=losses,
        )
        if not result.accepted:
            stop_reason = f"line search exhausted at step {step}"
            logger.info("%s: %s, stopping", spec.kind.value, stop_reason)
            break

        if result.losses is not None:
            losses = result.losses
        else:
            try:
                losses = pair_losses(policy, ref_probs, task, spec)
            except (LossDomainError, NonFiniteInputError) as e:
                raise DivergenceError(f"{spec.kind.value} loss is non-finite at step {step}: {e}") from e
            if not np.all(np.isfinite(losses)):
                raise DivergenceError(f"{spec.kind.value} loss is non-finite at step {step}")
        completed = step

        if step % config.trace_every == 0 or step == config.steps:
            rows.extend(_trace_rows(step, policy, ref_probs, task, spec))
            last_recorded = step

    if completed != last_recorded:
        rows.extend(_trace_rows(completed, policy, ref_probs, task, spec))

    metadata = {
        "config": config.to_dict(),
        "task": task.to_dict(),
        "init": INIT_SCHEME,
        "completed_steps": completed,
        "stop_reason": stop_reason,
        "tool_version": __version__,
    }
    return TrainingTrace(rows, reference, policy, metadata, stop_reason)
