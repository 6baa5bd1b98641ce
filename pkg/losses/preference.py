"""
Pairwise preference losses (DPO, DPO+NLL, DPOP, BDPO) and their gradients,
written over the chosen/rejected probabilities of a single preference pair.
"""
import math

import numpy as np
from scipy.special import expit, log_expit

from .types_ import (
    ImplicitRewards,
    LossDomainError,
    LossGradient,
    LossKind,
    LossSpec,
    PairPoint,
    WrongLossKindError,
)

__all__ = [
    "log_ratio_score",
    "mixture_prob",
    "dpo_loss",
    "dpo_nll_loss",
    "dpop_loss",
    "bdpo_loss",
    "loss",
    "analytic_gradient",
    "nll_coefficient",
    "implicit_rewards",
    "loss_from_log_probs",
    "rejected_gradient_bound",
]


def _neg_log_sigmoid(x: float) -> float:
    # softplus(-x); the + 0.0 folds -0.0 into 0.0
    return float(-log_expit(x)) + 0.0


def _sigmoid(x: float) -> float:
    return float(expit(x))


def _require_positive(**probs: float) -> None:
    for name, value in probs.items():
        if value <= 0.0:
            raise LossDomainError(
                f"{name}={value}: the loss takes log of this probability and is unbounded at 0"
            )


def log_ratio_score(p_num: float, p_den: float, beta: float) -> float:
    """beta * log(p_num / p_den), the scaled log-ratio of one model."""
    if beta <= 0.0:
        raise LossDomainError(f"beta must be > 0, got {beta}")
    _require_positive(p_num=p_num, p_den=p_den)
    return beta * math.log(p_num / p_den)


def mixture_prob(p_theta: float, p_ref: float, mixture: float) -> float:
    if not 0.0 < mixture < 1.0:
        raise LossDomainError(f"mixture must lie in (0, 1), got {mixture}")
    if not (0.0 <= p_theta <= 1.0 and 0.0 <= p_ref <= 1.0):
        raise LossDomainError(f"mixture inputs must be probabilities, got {p_theta}, {p_ref}")
    return mixture * p_theta + (1.0 - mixture) * p_ref


def _reference_score(point: PairPoint, beta: float) -> float:
    return log_ratio_score(point.r_w, point.r_l, beta)


def _dpo_margin(point: PairPoint, beta: float) -> float:
    _require_positive(p_w=point.p_w, p_l=point.p_l)
    return log_ratio_score(point.p_w, point.p_l, beta) - _reference_score(point, beta)


def _dpop_margin(point: PairPoint, spec: LossSpec) -> float:
    margin = _dpo_margin(point, spec.beta)
    reward_w = spec.beta * math.log(point.p_w / point.r_w)
    return margin - spec.penalty * max(0.0, -reward_w)


def _bdpo_margin(point: PairPoint, spec: LossSpec) -> float:
    _require_positive(p_w=point.p_w)
    mixed = mixture_prob(point.p_l, point.r_l, spec.mixture)
    return log_ratio_score(point.p_w, mixed, spec.beta) - _reference_score(point, spec.beta)


def dpo_loss(point: PairPoint, spec: LossSpec) -> float:
    return _neg_log_sigmoid(_dpo_margin(point, spec.beta))


def dpo_nll_loss(point: PairPoint, spec: LossSpec) -> float:
    return dpo_loss(point, spec) + spec.alpha * -math.log(point.p_w)


def dpop_loss(point: PairPoint, spec: LossSpec) -> float:
    return _neg_log_sigmoid(_dpop_margin(point, spec))


def bdpo_loss(point: PairPoint, spec: LossSpec) -> float:
    """BDPO keeps p_l = 0 legal: the mixture denominator is at least (1 - mixture) * r_l."""
    return _neg_log_sigmoid(_bdpo_margin(point, spec))


_LOSSES = {
    LossKind.DPO: dpo_loss,
    LossKind.DPO_NLL: dpo_nll_loss,
    LossKind.DPOP: dpop_loss,
    LossKind.BDPO: bdpo_loss,
}


def loss(point: PairPoint, spec: LossSpec) -> float:
    return _LOSSES[spec.kind](point, spec)


def analytic_gradient(point: PairPoint, spec: LossSpec) -> LossGradient:
    """
    Closed-form partial derivatives of the loss w.r.t. p_w and p_l.
    DPOP uses the subgradient of the inactive penalty branch at p_w == r_w.
    """
    beta = spec.beta
    if spec.kind is LossKind.BDPO:
        margin = _bdpo_margin(point, spec)
        weight = beta * _sigmoid(-margin)
        mixed = mixture_prob(point.p_l, point.r_l, spec.mixture)
        return LossGradient(
            d_p_w=-weight / point.p_w, d_p_l=weight * spec.mixture / mixed
        )

    if spec.kind is LossKind.DPOP:
        margin = _dpop_margin(point, spec)
        weight = beta * _sigmoid(-margin)
        slope_w = 1.0 + spec.penalty if point.p_w < point.r_w else 1.0
        return LossGradient(d_p_w=-weight * slope_w / point.p_w, d_p_l=weight / point.p_l)

    margin = _dpo_margin(point, beta)
    weight = beta * _sigmoid(-margin)
    d_p_w = -weight / point.p_w
    if spec.kind is LossKind.DPO_NLL:
        d_p_w -= spec.alpha / point.p_w
    return LossGradient(d_p_w=d_p_w, d_p_l=weight / point.p_l)


def nll_coefficient(point: PairPoint, spec: LossSpec) -> float:
    """
    Scale of the gradient w.r.t. log p_w under DPO+NLL:
    beta * sigmoid(r(y_l) - r(y_w)) + alpha.
    """
    if spec.kind is not LossKind.DPO_NLL:
        raise WrongLossKindError(
            f"nll_coefficient is defined for {LossKind.DPO_NLL.value}, got {spec.kind.value}"
        )
    return spec.beta * _sigmoid(-_dpo_margin(point, spec.beta)) + spec.alpha


def implicit_rewards(point: PairPoint, spec: LossSpec) -> ImplicitRewards:
    """
    Rewards r(y) = beta * log(p / r) of the chosen and rejected response.
    For BDPO the rejected reward is taken against the mixture probability,
    for DPOP the chosen reward carries the penalty, so that margin is the
    argument of log-sigmoid in every loss.
    """
    beta = spec.beta
    if spec.kind is LossKind.BDPO:
        _require_positive(p_w=point.p_w)
        mixed = mixture_prob(point.p_l, point.r_l, spec.mixture)
        chosen = log_ratio_score(point.p_w, point.r_w, beta)
        rejected = log_ratio_score(mixed, point.r_l, beta)
        return ImplicitRewards(chosen, rejected, _bdpo_margin(point, spec))

    chosen = log_ratio_score(point.p_w, point.r_w, beta)
    rejected = log_ratio_score(point.p_l, point.r_l, beta)
    if spec.kind is LossKind.DPOP:
        chosen -= spec.penalty * max(0.0, -chosen)
        return ImplicitRewards(chosen, rejected, _dpop_margin(point, spec))
    return ImplicitRewards(chosen, rejected, _dpo_margin(point, beta))


def loss_from_log_probs(
    logp_w: float,
    logp_l: float,
    ref_logp_w: float,
    ref_logp_l: float,
    spec: LossSpec,
) -> float:
    """
    The same losses over log-probabilities, on the extended reals:
    logp_l = -inf is accepted and yields the limit of the loss as p_l -> 0
    (0 for DPO/DPOP, the NLL term alone for DPO+NLL, a finite value for BDPO).
    """
    if not math.isfinite(logp_w) or logp_w > 0.0:
        raise LossDomainError(f"logp_w must be a finite log-probability, got {logp_w}")
    if math.isnan(logp_l) or logp_l > 0.0:
        raise LossDomainError(f"logp_l must be a log-probability, got {logp_l}")
    if not (math.isfinite(ref_logp_w) and math.isfinite(ref_logp_l)):
        raise LossDomainError("reference log-probabilities must be finite")

    beta = spec.beta
    ref_score = beta * (ref_logp_w - ref_logp_l)
    if spec.kind is LossKind.BDPO:
        log_mixed = float(
            np.logaddexp(math.log(spec.mixture) + logp_l, math.log1p(-spec.mixture) + ref_logp_l)
        )
        return _neg_log_sigmoid(beta * (logp_w - log_mixed) - ref_score)

    margin = beta * (logp_w - logp_l) - ref_score
    if spec.kind is LossKind.DPOP:
        margin -= spec.penalty * max(0.0, -beta * (logp_w - ref_logp_w))
    value = _neg_log_sigmoid(margin)
    if spec.kind is LossKind.DPO_NLL:
        value += spec.alpha * -logp_w
    return value


def rejected_gradient_bound(spec: LossSpec, r_l: float) -> float:
    """Supremum over p_l of |dL/dp_l| for BDPO: beta * mixture / ((1 - mixture) * r_l)."""
    if spec.kind is not LossKind.BDPO:
        raise WrongLossKindError(
            f"only {LossKind.BDPO.value} has a bounded rejected gradient, got {spec.kind.value}"
        )
    _require_positive(r_l=r_l)
    return spec.beta * spec.mixture / ((1.0 - spec.mixture) * r_l)
