"""Shared independent oracles for the test suite.

These deliberately reimplement behavior with the plainest possible code
(recursion, scalar loops) so the library's vectorized paths are checked
against something written a different way.
"""

import numpy as np


def naive_bspline_basis(x, order, i, knots):
    """Textbook recursive Cox-de Boor for one basis function."""
    if order == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        # right-closed last interval, mirroring the library convention
        if x == knots[-1] and i == len(knots) - 2:
            return 1.0
        return 0.0
    left = 0.0
    if knots[i + order] != knots[i]:
        left = (x - knots[i]) / (knots[i + order] - knots[i]) * naive_bspline_basis(
            x, order - 1, i, knots
        )
    right = 0.0
    if knots[i + order + 1] != knots[i + 1]:
        right = (
            (knots[i + order + 1] - x)
            / (knots[i + order + 1] - knots[i + 1])
            * naive_bspline_basis(x, order - 1, i + 1, knots)
        )
    return left + right


def naive_basis_vector(grid, x):
    x = min(max(x, grid.domain_lo), grid.domain_hi)
    return np.array(
        [naive_bspline_basis(x, grid.order, i, grid.knots)
         for i in range(grid.num_basis)]
    )


def loop_mse(y_true, y_pred):
    total = 0.0
    n, m = y_true.shape
    for r in range(n):
        for c in range(m):
            total += (y_true[r, c] - y_pred[r, c]) ** 2
    return total / (n * m)


def nested_loop_forward(model, x):
    """Scalar-loop evaluation of every head, no shared intermediates."""
    from mekan.splines import eval_activation

    def layer_out(layer, vec):
        out = np.zeros(layer.out_width)
        for j in range(layer.out_width):
            for i in range(layer.in_width):
                out[j] += eval_activation(layer.acts[j][i], vec[i])
        return out

    preds = [np.zeros((x.shape[0], model.out_dim)) for _ in range(model.num_heads)]
    for r in range(x.shape[0]):
        vec = x[r].copy()
        nodes = [vec]
        for layer in model.trunk:
            vec = layer_out(layer, vec)
            nodes.append(vec)
        for k, ex in enumerate(model.exits):
            preds[k][r] = layer_out(ex, nodes[k])
        preds[-1][r] = nodes[-1]
    return preds


def central_diff_grad(f, v, indices, rel_h=1e-6):
    """Central finite differences of a scalar function at chosen coordinates."""
    out = {}
    for i in indices:
        h = rel_h * max(1.0, abs(v[i]))
        vp = v.copy()
        vp[i] += h
        vm = v.copy()
        vm[i] -= h
        out[i] = (f(vp) - f(vm)) / (2.0 * h)
    return out


def grad_rel_err(analytic, fd):
    return abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))


def dense_bfgs_direction(grad, s_list, y_list):
    """Dense BFGS inverse-Hessian action with per-iteration rescaled identity
    start, applied pair by pair in chronological order."""
    n = grad.size
    if not s_list:
        return -grad
    s_last, y_last = s_list[-1], y_list[-1]
    gamma = (s_last @ y_last) / (y_last @ y_last)
    H = gamma * np.eye(n)
    for s, y in zip(s_list, y_list):
        rho = 1.0 / (s @ y)
        V = np.eye(n) - rho * np.outer(s, y)
        H = V @ H @ V.T + rho * np.outer(s, s)
    return -H @ grad
