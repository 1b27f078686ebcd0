"""Joint loss and its exact gradient in one reverse pass.

The computation graph is small and static, so layer adjoints are hand-derived:
basis matrices cached during the forward pass are reused for both coefficient
gradients (B^T action) and input gradients (spline derivative action), and
deep supervision falls out of seeding every exit's adjoint before walking the
trunk backwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLossError
from .losses import LossSpec, entropy_grad, exit_logit_grad, layer_reg, mse
from .network import MultiExitKan, layer_abs_means, param_layout, run_network


@dataclass
class GradientResult:
    """Loss value and gradient aligned with flatten_params ordering; in
    learnable-exit mode the gradient is extended by the K logit entries."""

    loss: float
    grad: np.ndarray
    per_exit_mse: np.ndarray
    data_loss: float
    reg_value: float


def _layer_backward(layer, cache, adj_out, grad, slices, reg_coef):
    """Push an output adjoint through one layer.

    Accumulates coefficient gradients into ``grad`` (via the layer's slices)
    and returns the adjoint with respect to the layer input. ``reg_coef``
    carries per-activation scalars for the regularization path; its adjoint
    enters at the activation outputs alongside the data adjoint.
    """
    n = adj_out.shape[0]
    adj_in = np.zeros((n, layer.in_width))
    for g in cache:
        adj = adj_out[:, g.js]
        if reg_coef is not None:
            adj = adj + np.sign(g.phi) * (reg_coef[g.js, g.i] / n)
        gc = g.basis.T @ adj
        for col, j in enumerate(g.js):
            grad[slices[j][g.i]] += gc[:, col]
        dphi = g.base_deriv[:, None] + g.mask[:, None] * (g.dbasis @ g.coeffs)
        adj_in[:, g.i] += np.einsum("ng,ng->n", adj, dphi)
    return adj_in


def loss_and_grad(
    model: MultiExitKan, x: np.ndarray, y: np.ndarray, loss_spec: LossSpec
) -> GradientResult:
    """Evaluate the joint objective and its full analytic gradient.

    Gradients from exit k flow into trunk layers 0..k-1 (deep supervision);
    zero-weight exits contribute nothing to their branch parameters. Raises
    NonFiniteLossError, tagged with the offending head, on blow-up.
    """
    y = np.asarray(y, dtype=float)
    weights = loss_spec.exit_weights
    w = weights.weights()
    if w.size != model.num_heads:
        raise ValueError(f"{w.size} exit weights for {model.num_heads} heads")
    lam = loss_spec.reg_strength
    want_phi = lam > 0

    preds, _, trunk_caches, exit_caches = run_network(
        model, x, want_cache=True, want_phi=want_phi
    )
    per_mse = np.array([mse(y, p) for p in preds])
    for k, v in enumerate(per_mse):
        if not np.isfinite(v):
            raise NonFiniteLossError(f"non-finite loss at exit {k}", exit_index=k)
    data_loss = float(w @ per_mse)

    layers = model.all_layers()
    caches = trunk_caches + exit_caches
    reg_value = 0.0
    reg_coefs = [None] * len(layers)
    if want_phi:
        for idx, (layer, cache) in enumerate(zip(layers, caches)):
            a = layer_abs_means(layer, cache)
            reg_value += layer_reg(a, loss_spec.entropy_weight)
            reg_coefs[idx] = lam * (1.0 + loss_spec.entropy_weight * entropy_grad(a))
    loss = data_loss + lam * reg_value
    if not np.isfinite(loss):
        raise NonFiniteLossError("non-finite total loss")

    total, layouts = param_layout(model)
    grad = np.zeros(total)
    n_exits = len(model.exits)
    scale = 2.0 / y.size
    dmse = [scale * (p - y) for p in preds]

    # adjoint at the deepest node, then walk the trunk backwards, merging each
    # branch exit's contribution where it attaches
    adj = w[-1] * dmse[-1]
    for l in range(len(model.trunk) - 1, -1, -1):
        adj = _layer_backward(
            model.trunk[l], trunk_caches[l], adj, grad, layouts[l], reg_coefs[l]
        )
        if l < n_exits:
            pos = len(model.trunk) + l
            adj += _layer_backward(
                model.exits[l],
                exit_caches[l],
                w[l] * dmse[l],
                grad,
                layouts[pos],
                reg_coefs[pos],
            )
        # degenerate L=1 trunk: no branch exits exist at all
    if weights.mode == "learnable":
        grad = np.concatenate([grad, exit_logit_grad(per_mse, weights.logits)])

    return GradientResult(loss, grad, per_mse, data_loss, reg_value)
