from . import autodiff
from .gradcheck import check_gradients, finite_difference_grads, relative_error
from .nn import mlp_forward, mlp_graph
from .optim import OptimizerState, ema_update, global_norm, optimizer_step
from .params import GradientSet, MlpSpec, ParamBlock, ParameterSet

__all__ = [
    "autodiff",
    "check_gradients",
    "finite_difference_grads",
    "relative_error",
    "mlp_forward",
    "mlp_graph",
    "OptimizerState",
    "ema_update",
    "global_norm",
    "optimizer_step",
    "GradientSet",
    "MlpSpec",
    "ParamBlock",
    "ParameterSet",
]
