"""Central finite-difference checks of the closed-form loss gradients and of MLP backprop."""
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from losses import (
    ALL_KINDS,
    LossKind,
    LossSpec,
    PairPoint,
    analytic_gradient,
    loss,
    rejected_gradient_bound,
)
from losses.types_ import LossGradient
from neural.modules import init_mlp

from .task import generate_toy_task
from .training import expected_loss_gradient, pair_losses

logger = logging.getLogger(__name__)

FD_STEP = 1e-6


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    return 0.0 if scale == 0.0 else abs(analytic - numeric) / scale


def finite_difference_gradient(point: PairPoint, spec: LossSpec, step: float = FD_STEP) -> LossGradient:
    def shifted(**delta) -> float:
        values = {"p_w": point.p_w, "p_l": point.p_l, "r_w": point.r_w, "r_l": point.r_l}
        for key, d in delta.items():
            values[key] += d
        return loss(PairPoint(**values), spec)

    d_p_w = (shifted(p_w=step) - shifted(p_w=-step)) / (2 * step)
    d_p_l = (shifted(p_l=step) - shifted(p_l=-step)) / (2 * step)
    return LossGradient(d_p_w, d_p_l)


def sample_interior_points(count: int, seed: int, kink_margin: float = 1e-3) -> List[PairPoint]:
    """Points away from 0, 1 and from the DPOP kink at p_w == r_w."""
    rng = np.random.default_rng(seed)
    points = []
    while len(points) < count:
        p_w, p_l, r_w, r_l = rng.uniform(0.02, 0.95, size=4)
        if abs(p_w - r_w) < kink_margin:
            continue
        points.append(PairPoint(float(p_w), float(p_l), float(r_w), float(r_l)))
    return points


def check_loss_gradients(
    spec: LossSpec, samples: int = 1000, seed: int = 0, rtol: float = 1e-6
) -> Dict:
    worst = 0.0
    for point in sample_interior_points(samples, seed):
        analytic = analytic_gradient(point, spec)
        numeric = finite_difference_gradient(point, spec)
        worst = max(
            worst,
            relative_error(analytic.d_p_w, numeric.d_p_w),
            relative_error(analytic.d_p_l, numeric.d_p_l),
        )
    logger.debug("%s: max relative error %.3g over %d points", spec.kind.value, worst, samples)
    return {"passed": worst <= rtol, "max_relative_error": worst, "samples": samples, "rtol": rtol}


def check_backprop(
    seed: int,
    spec: LossSpec,
    hidden: int = 32,
    step: float = FD_STEP,
    rtol: float = 1e-5,
) -> Dict:
    """
    Parameter gradient of the mean toy loss from backprop against central
    differences over every parameter. The trained and reference networks are
    two independent initialisations so the loss is away from its value at the
    reference.
    """
    task = generate_toy_task(seed)
    policy = init_mlp(task.num_prompts, task.num_responses, hidden, seed)
    reference = init_mlp(task.num_prompts, task.num_responses, hidden, seed + 1)
    ref_probs = reference.all_probs()

    analytic = expected_loss_gradient(policy, ref_probs, task, spec).flatten()
    numeric = []
    for param in policy.parameters():
        flat = param.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + step
            upper = pair_losses(policy, ref_probs, task, spec).mean()
            flat[k] = original - step
            lower = pair_losses(policy, ref_probs, task, spec).mean()
            flat[k] = original
            numeric.append((upper - lower) / (2 * step))
    numeric = np.array(numeric)

    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    error = float(np.linalg.norm(analytic - numeric) / scale) if scale > 0 else 0.0
    return {"seed": seed, "loss": spec.kind.value, "relative_error": error, "passed": error <= rtol}


def gradient_ratio_table(
    spec_bdpo: LossSpec,
    ref: Tuple[float, float] = (0.4, 0.1),
    p_w: float = 0.4,
    p_ls: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
) -> List[Dict]:
    """|dL/dp_l| of BDPO and DPO as p_l shrinks: DPO's grows without bound, BDPO's stays under its supremum."""
    spec_dpo = LossSpec(LossKind.DPO, beta=spec_bdpo.beta)
    bound = rejected_gradient_bound(spec_bdpo, ref[1])
    rows = []
    for p_l in p_ls:
        point = PairPoint(p_w, p_l, ref[0], ref[1])
        bdpo = abs(analytic_gradient(point, spec_bdpo).d_p_l)
        dpo = abs(analytic_gradient(point, spec_dpo).d_p_l)
        rows.append(
            {
                "p_l": p_l,
                "bdpo_grad": bdpo,
                "dpo_grad": dpo,
                "dpo_over_bdpo": dpo / bdpo,
                "bound": bound,
                "within_bound": bdpo <= bound,
            }
        )
    return rows


def verify_gradients(
    samples: int = 1000,
    backprop_seeds: int = 20,
    beta: float = 0.1,
    alpha: float = 1.0,
    penalty: float = 5.0,
    mixture: float = 0.5,
    seed: int = 0,
) -> Dict:
    specs = {
        kind: LossSpec(kind, beta=beta, alpha=alpha, penalty=penalty, mixture=mixture)
        for kind in ALL_KINDS
    }
    losses = {kind.value: check_loss_gradients(spec, samples, seed) for kind, spec in specs.items()}
    backprop = [
        check_backprop(seed + k, specs[ALL_KINDS[k % len(ALL_KINDS)]]) for k in range(backprop_seeds)
    ]
    ratios = gradient_ratio_table(specs[LossKind.BDPO])

    properties = {f"finite_difference_{name}": result["passed"] for name, result in losses.items()}
    properties["backprop"] = all(r["passed"] for r in backprop)
    properties["bdpo_rejected_gradient_bounded"] = all(r["within_bound"] for r in ratios)
    return {
        "passed": all(properties.values()),
        "properties": properties,
        "losses": losses,
        "backprop": backprop,
        "gradient_ratio": ratios,
    }
