import logging
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from losses import LossKind, LossSpec
from neural.modules import MlpPolicy, init_mlp

from .task import ToyTask
from .training import TrainingConfig, TrainingTrace, train_toy

logger = logging.getLogger(__name__)


def run_parallel(fn: Callable, jobs: Sequence, workers: int = 1) -> List:
    """Map fn over independent jobs, keeping input order; results are merged by the caller."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with Pool(min(workers, len(jobs))) as pool:
        return pool.map(fn, jobs)


def _train_job(job: Tuple[ToyTask, TrainingConfig, MlpPolicy, bool]) -> TrainingTrace:
    task, config, reference, progress = job
    return train_toy(task, config, progress=progress, reference=reference)


def train_many(
    task: ToyTask, configs: Sequence[TrainingConfig], workers: int = 1, progress: bool = False
) -> List[TrainingTrace]:
    """Train one policy per config; configs sharing a seed share one reference initialisation."""
    references: Dict[Tuple[int, int], MlpPolicy] = {}
    jobs = []
    for config in configs:
        key = (config.seed, config.hidden)
        if key not in references:
            references[key] = init_mlp(task.num_prompts, task.num_responses, config.hidden, config.seed)
        jobs.append((task, config, references[key], progress))
    return run_parallel(_train_job, jobs, workers)


def _pair_indexed(trace: TrainingTrace) -> pd.DataFrame:
    frame = trace.to_frame()
    frame["pair"] = frame.groupby("step").cumcount()
    return frame


def trace_distance(a: TrainingTrace, b: TrainingTrace) -> float:
    """RMS difference of p_chosen and p_rejected over the rows both traces recorded."""
    merged = _pair_indexed(a).merge(_pair_indexed(b), on=["step", "pair"], suffixes=("_a", "_b"))
    if merged.empty:
        raise ValueError("traces share no recorded steps")
    diffs = np.concatenate(
        [
            merged.p_chosen_a - merged.p_chosen_b,
            merged.p_rejected_a - merged.p_rejected_b,
        ]
    )
    return float(np.sqrt(np.mean(diffs ** 2)))


@dataclass
class SweepResult:
    parameter: str
    values: List[float]
    traces: List[TrainingTrace]
    baseline: TrainingTrace

    def combined_frame(self, extended: bool = False) -> pd.DataFrame:
        frames = []
        for value, trace in zip(self.values, self.traces):
            frame = trace.to_frame(extended)
            frame.insert(0, self.parameter, value)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def distances(self) -> List[float]:
        return [trace_distance(trace, self.baseline) for trace in self.traces]

    def summary_frame(self) -> pd.DataFrame:
        rows = []
        for value, trace, distance in zip(self.values, self.traces, self.distances()):
            final = trace.at_step(trace.last_step)
            rows.append(
                {
                    self.parameter: value,
                    "trace_distance_to_dpo": distance,
                    "final_mean_p_chosen": final.p_chosen.mean(),
                    "final_mean_p_rejected": final.p_rejected.mean(),
                    "final_mean_in_dist_log_mass": final.in_dist_log_mass.mean(),
                    "completed_steps": trace.metadata["completed_steps"],
                }
            )
        return pd.DataFrame(rows)

    def distance_monotone(self) -> bool:
        """Distance to the DPO trace strictly shrinks as the parameter value grows."""
        order = np.argsort(self.values, kind="stable")
        return bool(np.all(np.diff(np.asarray(self.distances())[order]) < 0.0))


def _sweep(
    parameter: str,
    task: ToyTask,
    base_config: TrainingConfig,
    values: Sequence[float],
    make_spec: Callable[[float], LossSpec],
    workers: int,
) -> SweepResult:
    if len(values) == 0:
        raise ValueError(f"{parameter} sweep needs at least one value")
    baseline_spec = LossSpec(LossKind.DPO, beta=base_config.loss_spec.beta)
    configs = [base_config.with_spec(baseline_spec)]
    configs += [base_config.with_spec(make_spec(value)) for value in values]
    traces = train_many(task, configs, workers)
    logger.info("%s sweep finished over %d values", parameter, len(values))
    return SweepResult(parameter, list(values), traces[1:], traces[0])


def lambda_sweep(
    task: ToyTask, base_config: TrainingConfig, lambdas: Sequence[float], workers: int = 1
) -> SweepResult:
    """BDPO at each mixture weight against the DPO run it approaches as the weight tends to 1."""
    beta = base_config.loss_spec.beta
    return _sweep(
        "lambda",
        task,
        base_config,
        lambdas,
        lambda value: LossSpec(LossKind.BDPO, beta=beta, mixture=value),
        workers,
    )


def alpha_sweep_toy(
    task: ToyTask, base_config: TrainingConfig, alphas: Sequence[float], workers: int = 1
) -> SweepResult:
    beta = base_config.loss_spec.beta
    return _sweep(
        "alpha",
        task,
        base_config,
        alphas,
        lambda value: LossSpec(LossKind.DPO_NLL, beta=beta, alpha=value),
        workers,
    )
