from .checkpoint import load_policy, save_policy
from .distributions import CategoricalPolicy, PreferencePair, SupportError, kl_divergence, nll_of_chosen
from .modules import (
    MlpPolicy,
    NonFiniteInputError,
    ParamGradient,
    ShapeError,
    backprop,
    init_mlp,
    mlp_forward,
)
