import math

import numpy as np
import pytest

from experiments.gradcheck import check_loss_gradients
from losses import (
    ALL_KINDS,
    LossDomainError,
    LossKind,
    LossSpec,
    PairPoint,
    WrongLossKindError,
    analytic_gradient,
    bdpo_loss,
    dpo_loss,
    dpo_nll_loss,
    dpop_loss,
    implicit_rewards,
    log_ratio_score,
    loss,
    loss_from_log_probs,
    mixture_prob,
    nll_coefficient,
    rejected_gradient_bound,
)

LN2 = math.log(2.0)
REF = PairPoint(0.4, 0.1, 0.4, 0.1)


def spec(kind, **kwargs):
    return LossSpec(LossKind(kind), **kwargs)


def random_points(n, seed, low=0.02, high=0.95):
    rng = np.random.default_rng(seed)
    return [PairPoint(*map(float, rng.uniform(low, high, size=4))) for _ in range(n)]


def test_log_ratio_score():
    assert log_ratio_score(0.4, 0.1, 0.1) == pytest.approx(0.1386294, abs=1e-7)
    assert log_ratio_score(0.3, 0.3, 0.1) == 0.0
    assert log_ratio_score(0.2, 0.8, 1.0) == pytest.approx(-1.3862944, abs=1e-7)
    with pytest.raises(LossDomainError):
        log_ratio_score(0.0, 0.1, 0.1)
    with pytest.raises(LossDomainError):
        log_ratio_score(0.1, 0.1, 0.0)


def test_loss_spec_validation():
    with pytest.raises(LossDomainError):
        LossSpec(LossKind.DPO, beta=0.0)
    with pytest.raises(LossDomainError):
        LossSpec(LossKind.BDPO, mixture=1.0)
    with pytest.raises(LossDomainError):
        LossSpec(LossKind.DPO_NLL, alpha=-1.0)
    # mixture is irrelevant outside BDPO
    LossSpec(LossKind.DPO, mixture=1.0)
    assert LossKind.from_name("DPO+NLL") is LossKind.DPO_NLL
    assert LossKind.from_name("dpo_nll") is LossKind.DPO_NLL


def test_pair_point_validation():
    with pytest.raises(LossDomainError):
        PairPoint(0.4, 0.1, 0.0, 0.1)
    with pytest.raises(LossDomainError):
        PairPoint(1.2, 0.1, 0.4, 0.1)
    assert PairPoint(0.7, 0.2, 0.4, 0.1).simplex_feasible
    assert not PairPoint(0.9, 0.2, 0.4, 0.1).simplex_feasible


def test_reference_point_is_ln2_for_every_loss():
    specs = [
        spec("dpo"),
        spec("dpop", penalty=5.0),
        spec("dpo-nll", alpha=0.0),
        spec("bdpo", mixture=0.5),
    ]
    for point in random_points(200, seed=0):
        at_ref = PairPoint(point.r_w, point.r_l, point.r_w, point.r_l)
        for s in specs:
            assert abs(loss(at_ref, s) - LN2) <= 1e-12
    for beta in (0.01, 0.1, 1.0, 10.0):
        assert loss(REF, spec("dpo", beta=beta)) == pytest.approx(LN2, abs=1e-12)


def test_dpo_values():
    s = spec("dpo", beta=0.1)
    expected = math.log1p(math.exp(-0.1 * LN2))
    assert dpo_loss(PairPoint(0.4, 0.05, 0.4, 0.1), s) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.6590903, abs=1e-7)
    # only the ratio p_w / p_l matters
    assert dpo_loss(PairPoint(0.2, 0.05, 0.4, 0.1), s) == pytest.approx(LN2, abs=1e-15)
    with pytest.raises(LossDomainError):
        dpo_loss(PairPoint(0.4, 0.0, 0.4, 0.1), s)


def test_dpo_scale_invariance_and_bdpo_scale_sensitivity():
    rng = np.random.default_rng(1)
    dpo, bdpo = spec("dpo"), spec("bdpo")
    for _ in range(1000):
        p_w, p_l, r_w, r_l = rng.uniform(0.01, 0.45, size=4)
        c = rng.uniform(0.5, 1.0)
        base = PairPoint(p_w, p_l, r_w, r_l)
        scaled = PairPoint(c * p_w, c * p_l, r_w, r_l)
        doubled = PairPoint(2 * c * p_w, 2 * c * p_l, r_w, r_l)
        assert abs(dpo_loss(scaled, dpo) - dpo_loss(base, dpo)) <= 1e-12
        assert dpo_loss(PairPoint(2 * p_w, 2 * p_l, r_w, r_l), dpo) == dpo_loss(base, dpo)
        assert bdpo_loss(doubled, bdpo) < bdpo_loss(scaled, bdpo)


def test_closed_form_gradients_match_finite_differences():
    for kind in ALL_KINDS:
        result = check_loss_gradients(spec(kind), samples=200, seed=11)
        assert result["passed"], result


def test_dpo_nll_values():
    assert dpo_nll_loss(REF, spec("dpo-nll", alpha=1.0)) == pytest.approx(1.6094379, abs=1e-7)
    for point in random_points(50, seed=2):
        assert dpo_nll_loss(point, spec("dpo-nll", alpha=0.0)) == dpo_loss(point, spec("dpo"))
    at_one = PairPoint(1.0, 0.1, 0.4, 0.1)
    assert dpo_nll_loss(at_one, spec("dpo-nll", alpha=3.0)) == dpo_loss(at_one, spec("dpo"))


def test_dpop_values():
    s = spec("dpop", beta=0.1, penalty=5.0)
    expected = math.log1p(2.0 ** 0.6)
    assert dpop_loss(PairPoint(0.2, 0.1, 0.4, 0.1), s) == pytest.approx(expected, rel=1e-12)
    for point in random_points(200, seed=3):
        if point.p_w >= point.r_w:
            assert dpop_loss(point, s) == dpo_loss(point, spec("dpo"))
        assert dpop_loss(point, spec("dpop", penalty=0.0)) == dpo_loss(point, spec("dpo"))


def test_dpop_parenthesisations_agree():
    beta, penalty = 0.3, 5.0
    s = spec("dpop", beta=beta, penalty=penalty)
    for p in random_points(200, seed=4):
        inside = beta * (
            math.log(p.p_w / p.r_w)
            - math.log(p.p_l / p.r_l)
            - penalty * max(0.0, math.log(p.r_w / p.p_w))
        )
        assert dpop_loss(p, s) == pytest.approx(math.log1p(math.exp(-inside)), rel=1e-12)


def test_mixture_prob():
    assert mixture_prob(0.0, 0.1, 0.5) == pytest.approx(0.05)
    assert mixture_prob(0.1, 0.1, 0.5) == pytest.approx(0.1)
    assert mixture_prob(0.8, 0.2, 0.25) == pytest.approx(0.35)
    assert mixture_prob(0.0, 0.3, 0.7) >= (1 - 0.7) * 0.3 - 1e-17
    with pytest.raises(LossDomainError):
        mixture_prob(0.1, 0.1, 0.0)


def test_bdpo_values():
    s = spec("bdpo", beta=0.1, mixture=0.5)
    assert bdpo_loss(REF, s) == pytest.approx(LN2, abs=1e-12)
    softplus = math.log1p(math.exp(-0.1 * LN2))
    assert bdpo_loss(PairPoint(0.4, 0.0, 0.4, 0.1), s) == pytest.approx(softplus, rel=1e-12)
    corner = bdpo_loss(PairPoint(1.0, 0.0, 0.4, 0.1), s)
    rng = np.random.default_rng(5)
    for _ in range(500):
        p_w = rng.uniform(0.001, 1.0)
        p_l = rng.uniform(0.0, 1.0 - p_w)
        if (p_w, p_l) != (1.0, 0.0):
            assert corner < bdpo_loss(PairPoint(p_w, p_l, 0.4, 0.1), s)
    with pytest.raises(LossDomainError):
        bdpo_loss(PairPoint(0.0, 0.1, 0.4, 0.1), s)


def test_irrelevant_hyperparameters_are_ignored():
    point = PairPoint(0.3, 0.2, 0.4, 0.1)
    assert loss(point, spec("dpo", alpha=7.0, penalty=1.0, mixture=0.9)) == loss(point, spec("dpo"))
    assert loss(point, spec("bdpo", alpha=7.0, penalty=1.0)) == loss(point, spec("bdpo"))
    assert loss(point, spec("dpop", alpha=7.0, mixture=0.2)) == loss(point, spec("dpop"))


def test_monotonicity_in_each_probability():
    for kind in ALL_KINDS:
        s = spec(kind)
        for p in random_points(100, seed=6, high=0.45):
            assert loss(PairPoint(p.p_w, p.p_l * 1.1, p.r_w, p.r_l), s) > loss(p, s)
            assert loss(PairPoint(p.p_w * 1.1, p.p_l, p.r_w, p.r_l), s) < loss(p, s)


def test_gradients_at_reference_point():
    assert analytic_gradient(REF, spec("dpo")).d_p_l == pytest.approx(0.5, abs=1e-12)
    assert analytic_gradient(REF, spec("bdpo")).d_p_l == pytest.approx(0.25, abs=1e-12)


def test_gradient_signs():
    for kind in ALL_KINDS:
        for p in random_points(200, seed=7):
            grad = analytic_gradient(p, spec(kind))
            assert grad.d_p_l >= 0.0
            assert grad.d_p_w <= 0.0


def test_bdpo_rejected_gradient_is_bounded():
    s = spec("bdpo", beta=0.1, mixture=0.5)
    bound = rejected_gradient_bound(s, 0.1)
    assert bound == pytest.approx(0.1 * 0.5 / (0.5 * 0.1))
    for p_l in np.linspace(0.0, 1.0, 101):
        for p_w in (0.01, 0.4, 1.0):
            grad = analytic_gradient(PairPoint(p_w, float(p_l), 0.4, 0.1), s)
            assert abs(grad.d_p_l) <= bound
    dpo = [analytic_gradient(PairPoint(0.4, p_l, 0.4, 0.1), spec("dpo")).d_p_l for p_l in (1e-2, 1e-4, 1e-6)]
    assert dpo[0] < dpo[1] < dpo[2]
    assert dpo[2] > 1e4
    with pytest.raises(WrongLossKindError):
        rejected_gradient_bound(spec("dpo"), 0.1)


def test_nll_coefficient():
    s = spec("dpo-nll", beta=0.1, alpha=1.0)
    assert nll_coefficient(REF, s) == pytest.approx(1.05, abs=1e-12)
    far = PairPoint(0.9, 1e-300, 0.4, 0.1)
    assert nll_coefficient(far, spec("dpo-nll", beta=10.0, alpha=1.0)) == pytest.approx(1.0, abs=1e-12)
    for p in random_points(300, seed=8):
        coefficient = nll_coefficient(p, s)
        assert s.alpha / (coefficient - s.alpha) >= 10.0
    with pytest.raises(WrongLossKindError):
        nll_coefficient(REF, spec("dpo"))


def test_implicit_rewards_margin_matches_loss():
    for kind in ALL_KINDS:
        s = spec(kind)
        for p in random_points(50, seed=9):
            rewards = implicit_rewards(p, s)
            expected = math.log1p(math.exp(-rewards.margin))
            if kind is LossKind.DPO_NLL:
                expected += s.alpha * -math.log(p.p_w)
            assert loss(p, s) == pytest.approx(expected, rel=1e-12)
            assert rewards.chosen - rewards.rejected == pytest.approx(rewards.margin, abs=1e-12)


def test_loss_from_log_probs_matches_and_takes_limits():
    for kind in ALL_KINDS:
        s = spec(kind)
        for p in random_points(50, seed=10):
            value = loss_from_log_probs(
                math.log(p.p_w), math.log(p.p_l), math.log(p.r_w), math.log(p.r_l), s
            )
            assert value == pytest.approx(loss(p, s), rel=1e-10)
    log_r = (math.log(0.4), math.log(0.1))
    assert loss_from_log_probs(math.log(0.1), -math.inf, *log_r, spec("dpo")) == 0.0
    assert loss_from_log_probs(math.log(0.1), -math.inf, *log_r, spec("dpop")) == 0.0
    assert loss_from_log_probs(0.0, -math.inf, *log_r, spec("dpo-nll")) == 0.0
    bdpo_limit = loss_from_log_probs(math.log(0.4), -math.inf, *log_r, spec("bdpo"))
    assert bdpo_limit == pytest.approx(bdpo_loss(PairPoint(0.4, 0.0, 0.4, 0.1), spec("bdpo")), rel=1e-12)
    # exp(-800) underflows; the mixture is then the reference share alone
    underflow = loss_from_log_probs(math.log(0.4), -800.0, *log_r, spec("bdpo"))
    assert underflow == pytest.approx(math.log1p(math.exp(-0.1 * LN2)), rel=1e-12)
    assert underflow == bdpo_limit
    with pytest.raises(LossDomainError):
        loss_from_log_probs(-math.inf, -1.0, *log_r, spec("dpo"))
