"""Training orchestration: staged grid refinement, continual phases,
learning-to-exit, evaluation metrics, and closed-loop rollout."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteLossError, TrainingAbort
from .gradients import loss_and_grad
from .lbfgs import LbfgsConfig, OptTrace, minimize
from .losses import ExitWeights, LossSpec, mse
from .network import MultiExitKan, count_parameters, flatten_params, forward, \
    load_params, node_values
from .splines import refine_grid, update_grid_range
from .tasks import Dataset, stack_datasets


@dataclass
class TrainConfig:
    loss_spec: LossSpec
    grid_schedule: tuple = (3, 5, 10, 20)
    steps_per_stage: int = 30
    seed: int = 0
    learn_to_exit: bool = False
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    record_iterates: bool = False

    def __post_init__(self):
        self.grid_schedule = tuple(int(g) for g in self.grid_schedule)
        if not self.grid_schedule:
            raise ValueError("grid_schedule must be nonempty")
        if any(b <= a for a, b in zip(self.grid_schedule, self.grid_schedule[1:])):
            raise ValueError("grid_schedule must be strictly increasing")
        if self.steps_per_stage < 0:
            raise ValueError("steps_per_stage must be >= 0")


@dataclass
class FitResult:
    model: MultiExitKan
    stage_traces: list
    exit_weights: ExitWeights

    @property
    def stage_final_losses(self):
        return [t.final_loss for t in self.stage_traces]


@dataclass
class ContinualResult:
    model: MultiExitKan
    phase_reports: list
    exit_weights: ExitWeights


@dataclass
class EvalReport:
    """Per-head test metrics; best_exit is the argmin RMSE (ties -> smallest)."""

    per_exit_rmse: np.ndarray
    per_exit_r2: np.ndarray
    best_exit: int
    n_test: int
    r2_defined: bool = True


@dataclass
class RolloutResult:
    states: np.ndarray  # (n_steps, d) predictions; shorter if truncated
    truncated: bool = False


def _refit_layer(layer, X, grid_size):
    for j in range(layer.out_width):
        for i in range(layer.in_width):
            samples = X[:, i]
            act, _ = refine_grid(layer.acts[j][i], grid_size, samples)
            act, _ = update_grid_range(act, samples)
            layer.acts[j][i] = act


def refit_grids(model: MultiExitKan, x, grid_size: int) -> None:
    """Refine every activation to ``grid_size`` and adapt domains, using the
    inputs each activation currently sees on the batch. Least-squares transfer
    keeps the represented functions (and hence the loss) nearly unchanged."""
    nodes = node_values(model, x)
    for l, layer in enumerate(model.trunk):
        _refit_layer(layer, nodes[l], grid_size)
    for k, ex in enumerate(model.exits):
        _refit_layer(ex, nodes[k], grid_size)


def _prepare_weights(model, cfg) -> LossSpec:
    spec = cfg.loss_spec
    ew = spec.exit_weights
    if ew.num_exits != model.num_heads:
        raise ValueError(
            f"{ew.num_exits} exit weights for a model with {model.num_heads} heads"
        )
    if cfg.learn_to_exit and ew.mode != "learnable":
        ew = ExitWeights.learnable(model.num_heads)
        spec = spec.with_exit_weights(ew)
    return spec


def _make_objective(model, x, y, spec, n_params, learnable):
    def objective(v):
        load_params(model, v[:n_params])
        local = spec.with_exit_weights(spec.exit_weights.with_logits(v[n_params:])) \
            if learnable else spec
        try:
            r = loss_and_grad(model, x, y, local)
        except NonFiniteLossError:
            # off-track line-search probe; report +inf so the search backs off
            return np.inf, np.zeros_like(v)
        return r.loss, r.grad

    return objective


def _run_stage(model, x, y, spec, cfg, stage_label):
    learnable = spec.exit_weights.mode == "learnable"
    n_params = count_parameters(model)
    v0 = flatten_params(model)
    if learnable:
        v0 = np.concatenate([v0, spec.exit_weights.logits])
    objective = _make_objective(model, x, y, spec, n_params, learnable)
    lcfg = replace(cfg.lbfgs, max_iters=cfg.steps_per_stage)
    try:
        v_best, trace = minimize(objective, v0, lcfg,
                                 record_iterates=cfg.record_iterates)
    except ValueError as e:
        raise TrainingAbort(f"{stage_label}: {e}") from e
    load_params(model, v_best[:n_params])
    if learnable:
        spec = spec.with_exit_weights(spec.exit_weights.with_logits(v_best[n_params:]))
    return spec, trace


def fit(model: MultiExitKan, train_data: Dataset, cfg: TrainConfig) -> FitResult:
    """Staged training: for each grid size, refine + re-range every activation,
    then run L-BFGS for steps_per_stage iterations on the flat parameters
    (plus the exit logits when learning to exit)."""
    x, y = train_data.x, train_data.y
    spec = _prepare_weights(model, cfg)
    traces = []
    for grid_size in cfg.grid_schedule:
        refit_grids(model, x, grid_size)
        if cfg.steps_per_stage > 0:
            spec, trace = _run_stage(model, x, y, spec, cfg,
                                     f"stage grid={grid_size}")
            traces.append(trace)
        else:
            traces.append(OptTrace())
    return FitResult(model, traces, spec.exit_weights)


def fit_continual(
    model: MultiExitKan,
    phase_datasets,
    cfg: TrainConfig,
    eval_data: Dataset | None = None,
) -> ContinualResult:
    """Sequential training on each phase's data only, fixed grid (no refinement
    or range updates). After each phase the model is scored on ``eval_data``
    (or the union of all phases when not given)."""
    if not phase_datasets:
        raise ValueError("need at least one phase")
    if eval_data is None:
        eval_data = stack_datasets(phase_datasets, split="test")
    spec = _prepare_weights(model, cfg)
    reports = []
    for p, phase in enumerate(phase_datasets):
        if cfg.steps_per_stage > 0:
            spec, _ = _run_stage(model, phase.x, phase.y, spec, cfg,
                                 f"phase {p}")
        reports.append(evaluate(model, eval_data))
    return ContinualResult(model, reports, spec.exit_weights)


def evaluate(model: MultiExitKan, test_data: Dataset) -> EvalReport:
    """Per-head RMSE and R^2 on held-out data."""
    if test_data.n < 1:
        raise ValueError("test set is empty")
    y = test_data.y
    preds = forward(model, test_data.x)
    rmse = np.array([np.sqrt(mse(y, p)) for p in preds])
    sst = float(((y - y.mean(axis=0)) ** 2).sum())
    if sst > 0:
        r2 = np.array([1.0 - ((p - y) ** 2).sum() / sst for p in preds])
        defined = True
    else:
        r2 = np.full(len(preds), np.nan)
        defined = False
    return EvalReport(rmse, r2, int(np.argmin(rmse)), test_data.n, defined)


def rollout(model: MultiExitKan, x0, n_steps: int, exit_index: int = -1) -> RolloutResult:
    """Closed-loop iteration x_{t+1} = head(x_t) from x0; returns the n_steps
    predicted states (truncated early if the state leaves the finite range)."""
    if model.in_dim != model.out_dim:
        raise ValueError(
            f"rollout needs matching input/output dims, got "
            f"{model.in_dim} vs {model.out_dim}"
        )
    s = np.asarray(x0, dtype=float).reshape(1, -1)
    states = np.empty((n_steps, model.in_dim))
    for t in range(n_steps):
        nxt = forward(model, s)[exit_index]
        if not np.isfinite(nxt).all():
            return RolloutResult(states[:t], truncated=True)
        states[t] = nxt[0]
        s = nxt
    return RolloutResult(states, truncated=False)


def divergence_time(pred, truth, threshold: float = 0.2) -> int:
    """1-based step at which the prediction first leaves the truth by more
    than ``threshold`` in max-norm; the number of compared steps if never."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    n = min(pred.shape[0], truth.shape[0])
    if n == 0:
        return 0
    dev = np.abs(pred[:n] - truth[:n]).max(axis=1)
    bad = np.flatnonzero(dev > threshold)
    return int(bad[0]) + 1 if bad.size else n
