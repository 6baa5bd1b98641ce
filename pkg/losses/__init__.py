from .types_ import (
    ImplicitRewards,
    LossDomainError,
    LossGradient,
    LossKind,
    LossSpec,
    PairPoint,
    WrongLossKindError,
)
from .preference import *

ALL_KINDS = (LossKind.DPO, LossKind.DPOP, LossKind.DPO_NLL, LossKind.BDPO)
