"""Deep ResNets trained with a bias-ordering penalty that removes hidden-neuron
permutation symmetry."""
from .kernels import BACKEND_NAME
from .loss import LossBreakdown, LossConfig, order_penalty, total_loss
from .network import (
    NetworkSpec,
    Params,
    apply_permutation,
    count_equivalent_parameterizations,
    flatten,
    forward,
    init_params,
    order_violations,
    unflatten,
)
from .optim import TrainConfig, TrainReport, path_follow, train

__version__ = "0.1.0"
