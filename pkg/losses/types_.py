from dataclasses import dataclass
from enum import Enum
from typing import Dict


class LossDomainError(ValueError):
    """A probability or hyperparameter lies outside the domain of a loss."""


class WrongLossKindError(ValueError):
    """An operation was asked for a loss kind it is not defined for."""


class LossKind(str, Enum):
    DPO = "dpo"
    DPOP = "dpop"
    DPO_NLL = "dpo-nll"
    BDPO = "bdpo"

    @classmethod
    def from_name(cls, name: str) -> "LossKind":
        key = name.strip().lower().replace("_", "-").replace("+", "-")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(
            f"Unknown loss '{name}', expected one of {[k.value for k in cls]}"
        )


@dataclass(frozen=True)
class LossSpec:
    """
    Which preference loss to evaluate and its hyperparameters.
    :param kind: (LossKind) DPO | DPOP | DPO_NLL | BDPO
    :param beta: (float) temperature on the log-ratio reward
    :param alpha: (float) NLL weight, read by DPO_NLL only
    :param penalty: (float) DPOP penalty weight, read by DPOP only
    :param mixture: (float) BDPO mixture weight in (0, 1), read by BDPO only
    """

    kind: LossKind
    beta: float = 0.1
    alpha: float = 1.0
    penalty: float = 5.0
    mixture: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not self.beta > 0:
            raise LossDomainError(f"beta must be > 0, got {self.beta}")
        if not self.alpha >= 0:
            raise LossDomainError(f"alpha must be >= 0, got {self.alpha}")
        if not self.penalty >= 0:
            raise LossDomainError(f"penalty must be >= 0, got {self.penalty}")
        if self.kind is LossKind.BDPO and not 0.0 < self.mixture < 1.0:
            raise LossDomainError(
                f"BDPO mixture must lie in the open interval (0, 1), got {self.mixture}"
            )

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "beta": self.beta,
            "alpha": self.alpha,
            "penalty": self.penalty,
            "mixture": self.mixture,
        }


@dataclass(frozen=True)
class PairPoint:
    """Chosen/rejected probabilities under the trained (p_*) and reference (r_*) models."""

    p_w: float
    p_l: float
    r_w: float
    r_l: float

    def __post_init__(self):
        for name in ("p_w", "p_l", "r_w", "r_l"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise LossDomainError(f"{name}={value} is not a probability")
        if self.r_w <= 0.0 or self.r_l <= 0.0:
            raise LossDomainError(
                f"reference probabilities must be > 0, got r_w={self.r_w}, r_l={self.r_l}"
            )

    @property
    def simplex_feasible(self) -> bool:
        return self.p_w + self.p_l <= 1.0 and self.r_w + self.r_l <= 1.0


@dataclass(frozen=True)
class LossGradient:
    d_p_w: float
    d_p_l: float


@dataclass(frozen=True)
class ImplicitRewards:
    # chosen - rejected == margin, i.e. the argument of log-sigmoid
    chosen: float
    rejected: float
    margin: float
