"""Data loss, exit-weight handling, and activation regularization.

The joint objective is a simplex-weighted average of per-head MSEs, plus an
optional penalty combining the L1 norm of mean activation magnitudes with a
per-layer entropy over their normalized distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def softmax_weights(theta) -> np.ndarray:
    """exp(theta_i) / sum_j exp(theta_j), max-subtracted for overflow safety."""
    theta = np.asarray(theta, dtype=float)
    z = np.exp(theta - theta.max())
    return z / z.sum()


@dataclass
class ExitWeights:
    """Per-head loss weights: a fixed simplex vector, or learnable logits
    viewed through a softmax."""

    mode: str  # "fixed" | "learnable"
    fixed_w: np.ndarray | None = None
    logits: np.ndarray | None = None

    @classmethod
    def fixed(cls, w) -> "ExitWeights":
        """Normalize a nonnegative weight vector onto the simplex. Unnormalized
        inputs are fine; only the direction matters."""
        w = np.asarray(w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and nonnegative")
        s = w.sum()
        if s <= 0:
            raise ValueError("at least one weight must be positive")
        return cls("fixed", fixed_w=w / s)

    @classmethod
    def learnable(cls, logits_or_k) -> "ExitWeights":
        """Learnable logits; an integer K gives the uniform init (all zeros)."""
        if isinstance(logits_or_k, (int, np.integer)):
            logits = np.zeros(int(logits_or_k))
        else:
            logits = np.asarray(logits_or_k, dtype=float).copy()
            if not np.isfinite(logits).all():
                raise ValueError("logits must be finite")
        return cls("learnable", logits=logits)

    @property
    def num_exits(self) -> int:
        vec = self.fixed_w if self.mode == "fixed" else self.logits
        return vec.size

    def weights(self) -> np.ndarray:
        if self.mode == "fixed":
            return self.fixed_w
        return softmax_weights(self.logits)

    def with_logits(self, theta) -> "ExitWeights":
        if self.mode != "learnable":
            raise ValueError("with_logits only applies to learnable weights")
        return ExitWeights.learnable(theta)


@dataclass
class LossSpec:
    """Full objective description: exit weighting plus regularization knobs."""

    exit_weights: ExitWeights
    reg_strength: float = 0.0
    entropy_weight: float = 1.0

    def __post_init__(self):
        if self.reg_strength < 0:
            raise ValueError("reg_strength must be >= 0")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")

    def with_exit_weights(self, ew: ExitWeights) -> "LossSpec":
        return replace(self, exit_weights=ew)


def mse(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Mean squared error over all n*m entries."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("mse of an empty batch is undefined")
    d = y_pred - y_true
    return float(np.mean(d * d))


def multi_exit_loss(per_exit_mse, weights: ExitWeights) -> float:
    """Weighted average sum_k w_k * L_k of the per-head data losses."""
    losses = np.asarray(per_exit_mse, dtype=float)
    w = weights.weights()
    if losses.shape != w.shape:
        raise ValueError(f"{losses.size} losses vs {w.size} exit weights")
    return float(w @ losses)


def exit_logit_grad(per_exit_mse, theta) -> np.ndarray:
    """d/d theta_i of sum_j w_j(theta) L_j.

    The softmax Jacobian dw_j/d theta_i = w_i (delta_ij - w_j) collapses to
    w_i (L_i - sum_j w_j L_j); the result sums to zero.
    """
    losses = np.asarray(per_exit_mse, dtype=float)
    w = softmax_weights(theta)
    if losses.shape != w.shape:
        raise ValueError(f"{losses.size} losses vs {w.size} logits")
    return w * (losses - w @ losses)


def layer_reg(abs_means: np.ndarray, entropy_weight: float = 1.0) -> float:
    """L1-plus-entropy penalty for one layer.

    ``abs_means`` holds mean |phi| per activation. The entropy is taken over
    these values normalized within the layer; an all-zero layer contributes 0.
    """
    a = np.asarray(abs_means, dtype=float).ravel()
    s = a.sum()
    if s <= 0:
        return 0.0
    p = a[a > 0] / s
    entropy = float(-(p * np.log(p)).sum())
    return float(s + entropy_weight * entropy)


def entropy_grad(abs_means: np.ndarray) -> np.ndarray:
    """d/d a of the layer entropy term; zero entries keep a zero subgradient."""
    a = np.asarray(abs_means, dtype=float)
    out = np.zeros_like(a)
    s = a.sum()
    if s <= 0:
        return out
    p = a / s
    pos = p > 0
    h = float(-(p[pos] * np.log(p[pos])).sum())
    out[pos] = -(np.log(p[pos]) + h) / s
    return out


def reg_loss(model, entropy_weight: float = 1.0) -> float:
    """Regularization value from the model's cached forward statistics.

    Requires a prior ``forward(..., update_reg_cache=True)``; covers trunk and
    exit layers alike.
    """
    if model.reg_cache is None:
        raise RuntimeError(
            "no cached batch: run forward(model, x, update_reg_cache=True) first"
        )
    return sum(layer_reg(a, entropy_weight) for a in model.reg_cache)
