"""Multi-exit Kolmogorov-Arnold networks on B-spline activations."""

from .errors import DataError, NonFiniteLossError, TrainingAbort
from .gradients import GradientResult, loss_and_grad
from .lbfgs import LbfgsConfig, OptTrace, line_search_strong_wolfe, minimize
from .losses import (
    ExitWeights,
    LossSpec,
    exit_logit_grad,
    mse,
    multi_exit_loss,
    reg_loss,
    softmax_weights,
)
from .network import (
    KanLayer,
    KanShape,
    MultiExitKan,
    build,
    count_activations,
    count_parameters,
    flatten_params,
    forward,
    load_model,
    load_params,
    model_from_dict,
    model_to_dict,
    save_model,
)
from .splines import (
    SplineActivation,
    SplineGrid,
    eval_activation,
    eval_basis,
    refine_grid,
    update_grid_range,
)
from .tasks import Dataset
from .training import (
    ContinualResult,
    EvalReport,
    FitResult,
    RolloutResult,
    TrainConfig,
    divergence_time,
    evaluate,
    fit,
    fit_continual,
    rollout,
)

__version__ = "0.1.0"
