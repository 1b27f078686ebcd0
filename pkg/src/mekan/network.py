"""Multi-exit KAN assembly, forward evaluation, and parameter plumbing.

A layer is a dense grid of univariate activations: unit j of the next layer
receives ``sum_i phi[j][i](x_i)``. Exit k is one such layer mapping the
depth-k representation straight to a prediction; the trunk output doubles as
the last exit, so a depth-L trunk yields K = L prediction heads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError
from .splines import (
    SplineActivation,
    SplineGrid,
    base_and_deriv,
    basis_and_deriv,
    basis_matrix,
    new_activation,
)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KanShape:
    """Widths [d, N_1, ..., m]; depth is len(widths) - 1 trunk layers."""

    widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("shape needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("all widths must be >= 1")

    @property
    def d(self) -> int:
        return self.widths[0]

    @property
    def m(self) -> int:
        return self.widths[-1]

    @property
    def depth(self) -> int:
        return len(self.widths) - 1


@dataclass
class KanLayer:
    """Functional matrix of activations, indexed acts[to_unit][from_unit]."""

    in_width: int
    out_width: int
    acts: list  # list[list[SplineActivation]]

    def __post_init__(self):
        if len(self.acts) != self.out_width or any(
            len(row) != self.in_width for row in self.acts
        ):
            raise ValueError("acts dimensions must be out_width x in_width")

    def iter_acts(self):
        for j in range(self.out_width):
            for i in range(self.in_width):
                yield j, i, self.acts[j][i]


@dataclass
class MultiExitKan:
    """Trunk layers plus per-depth exit branches.

    ``exits[k]`` attaches to the input of trunk layer k (exit 0 reads the raw
    input); the trunk output is the final head. Single-exit models simply have
    no exit branches.
    """

    widths: tuple
    multi_exit: bool
    trunk: list  # list[KanLayer]
    exits: list  # list[KanLayer]
    reg_cache: list | None = field(default=None, repr=False, compare=False)

    @property
    def num_heads(self) -> int:
        return len(self.exits) + 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def all_layers(self):
        """Trunk layers then exit layers, in flatten order."""
        return list(self.trunk) + list(self.exits)


def build(
    shape,
    multi_exit: bool = False,
    base_kind: str = "silu",
    grid_size: int = 3,
    order: int = 3,
    init_domain=(-1.0, 1.0),
    seed: int = 0,
    coeff_std: float = 0.1,
) -> MultiExitKan:
    """Construct a network with freshly initialized activations.

    With ``multi_exit`` an exit branch [N_k, m] is added at depths 0..L-2; a
    [d, m] shape has no room for extra branches and comes back single-headed.
    """
    shape = shape if isinstance(shape, KanShape) else KanShape(tuple(shape))
    rng = np.random.default_rng(seed)
    lo, hi = float(init_domain[0]), float(init_domain[1])

    def make_layer(n_in, n_out):
        acts = [
            [
                new_activation(
                    SplineGrid(grid_size, order, lo, hi), base_kind, rng, coeff_std
                )
                for _ in range(n_in)
            ]
            for _ in range(n_out)
        ]
        return KanLayer(n_in, n_out, acts)

    trunk = [
        make_layer(shape.widths[i], shape.widths[i + 1]) for i in range(shape.depth)
    ]
    exits = []
    if multi_exit:
        exits = [make_layer(shape.widths[k], shape.m) for k in range(shape.depth - 1)]
    return MultiExitKan(shape.widths, multi_exit, trunk, exits)


class _ColGroup(NamedTuple):
    """Per-layer cache for the activations of one input column that share a
    grid and base kind, evaluated together."""

    i: int
    js: list
    basis: np.ndarray  # (n, nb)
    dbasis: np.ndarray | None  # (n, nb) spline derivative, pre-mask
    coeffs: np.ndarray  # (nb, len(js))
    mask: np.ndarray | None  # (n,) in-domain indicator
    base_deriv: np.ndarray | None  # (n,)
    phi: np.ndarray | None  # (n, len(js)) activation outputs


def _apply_layer(layer, X, node_key, memo, want_cache, want_phi):
    n = X.shape[0]
    out = np.zeros((n, layer.out_width))
    cache = []
    for i in range(layer.in_width):
        u = X[:, i]
        groups = {}
        for j in range(layer.out_width):
            act = layer.acts[j][i]
            groups.setdefault((act.grid.signature, act.base_kind), []).append(j)
        for (sig, kind), js in groups.items():
            grid = layer.acts[js[0]][i].grid
            mkey = (node_key, i, sig)
            hit = memo.get(mkey)
            if hit is None:
                if want_cache:
                    B, dB, mask = basis_and_deriv(grid, u)
                else:
                    B, dB, mask = basis_matrix(grid, u), None, None
                memo[mkey] = (B, dB, mask)
            else:
                B, dB, mask = hit
            C = np.column_stack([layer.acts[j][i].coeffs for j in js])
            base, dbase = base_and_deriv(kind, u)
            phi = B @ C + base[:, None]
            out[:, js] += phi
            if want_cache:
                cache.append(
                    _ColGroup(i, js, B, dB, C, mask, dbase, phi if want_phi else None)
                )
    return out, cache


def run_network(model: MultiExitKan, x: np.ndarray, want_cache=False, want_phi=False):
    """Forward pass returning (predictions, node values, trunk caches, exit caches).

    All heads are computed in one pass; exits reuse the trunk's basis matrices
    whenever their grids coincide with the trunk's at the same node.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise DataError(
            f"input must be (n, {model.in_dim}); got array of shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise DataError("input contains non-finite values")
    memo = {}
    nodes = [x]
    trunk_caches = []
    for layer in model.trunk:
        out, cache = _apply_layer(
            layer, nodes[-1], len(nodes) - 1, memo, want_cache, want_phi
        )
        nodes.append(out)
        trunk_caches.append(cache)
    preds = []
    exit_caches = []
    for k, ex in enumerate(model.exits):
        out, cache = _apply_layer(ex, nodes[k], k, memo, want_cache, want_phi)
        preds.append(out)
        exit_caches.append(cache)
    preds.append(nodes[-1])
    return preds, nodes, trunk_caches, exit_caches


def layer_abs_means(layer: KanLayer, cache) -> np.ndarray:
    """Mean |phi| over the batch per activation, shape (out_width, in_width)."""
    a = np.zeros((layer.out_width, layer.in_width))
    for g in cache:
        if g.phi is None:
            raise RuntimeError("forward pass did not record activation outputs")
        a[g.js, g.i] = np.abs(g.phi).mean(axis=0)
    return a


def forward(model: MultiExitKan, x: np.ndarray, update_reg_cache: bool = False):
    """Predictions of every head on a batch; list of K (n, m) arrays.

    ``update_reg_cache`` additionally stores per-layer mean-|phi| matrices on
    the model for the regularization loss.
    """
    preds, _, tc, ec = run_network(model, x, want_cache=update_reg_cache,
                                   want_phi=update_reg_cache)
    if update_reg_cache:
        model.reg_cache = [
            layer_abs_means(layer, cache)
            for layer, cache in zip(model.all_layers(), tc + ec)
        ]
    return preds


def node_values(model: MultiExitKan, x: np.ndarray):
    """Representations entering each trunk layer (index 0 = raw input)."""
    _, nodes, _, _ = run_network(model, x)
    return nodes


def count_activations(model: MultiExitKan) -> int:
    return sum(layer.in_width * layer.out_width for layer in model.all_layers())


def count_parameters(model: MultiExitKan) -> int:
    return sum(
        act.coeffs.size for layer in model.all_layers() for _, _, act in layer.iter_acts()
    )


def param_layout(model: MultiExitKan):
    """(total length, per-layer [j][i] slices) in flatten order: trunk layers
    then exits by depth, (j, i) row-major, coefficients in index order."""
    layouts = []
    pos = 0
    for layer in model.all_layers():
        cur = [[None] * layer.in_width for _ in range(layer.out_width)]
        for j, i, act in layer.iter_acts():
            cur[j][i] = slice(pos, pos + act.coeffs.size)
            pos += act.coeffs.size
        layouts.append(cur)
    return pos, layouts


def flatten_params(model: MultiExitKan) -> np.ndarray:
    chunks = [
        act.coeffs
        for layer in model.all_layers()
        for _, _, act in layer.iter_acts()
    ]
    return np.concatenate(chunks) if chunks else np.zeros(0)


def load_params(model: MultiExitKan, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype=float)
    total = count_parameters(model)
    if vec.shape != (total,):
        raise ValueError(f"expected parameter vector of length {total}, got {vec.shape}")
    pos = 0
    for layer in model.all_layers():
        for _, _, act in layer.iter_acts():
            nb = act.coeffs.size
            act.coeffs[:] = vec[pos : pos + nb]
            pos += nb


def _act_to_dict(act: SplineActivation):
    return {
        "base": act.base_kind,
        "grid": {
            "num_intervals": act.grid.num_intervals,
            "order": act.grid.order,
            "lo": act.grid.domain_lo,
            "hi": act.grid.domain_hi,
        },
        "coeffs": [float(c) for c in act.coeffs],
    }


def _act_from_dict(doc):
    g = doc["grid"]
    grid = SplineGrid(int(g["num_intervals"]), int(g["order"]), g["lo"], g["hi"])
    return SplineActivation(grid, np.array(doc["coeffs"], dtype=float), doc["base"])


def _layer_to_dict(layer: KanLayer):
    return {
        "in_width": layer.in_width,
        "out_width": layer.out_width,
        "acts": [[_act_to_dict(a) for a in row] for row in layer.acts],
    }


def _layer_from_dict(doc):
    acts = [[_act_from_dict(a) for a in row] for row in doc["acts"]]
    return KanLayer(int(doc["in_width"]), int(doc["out_width"]), acts)


def model_to_dict(model: MultiExitKan):
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "widths": list(model.widths),
        "multi_exit": model.multi_exit,
        "trunk": [_layer_to_dict(l) for l in model.trunk],
        "exits": [_layer_to_dict(l) for l in model.exits],
    }


def model_from_dict(doc) -> MultiExitKan:
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version: {version!r}")
    return MultiExitKan(
        tuple(int(w) for w in doc["widths"]),
        bool(doc["multi_exit"]),
        [_layer_from_dict(l) for l in doc["trunk"]],
        [_layer_from_dict(l) for l in doc["exits"]],
    )


def save_model(model: MultiExitKan, path) -> None:
    # json emits shortest-round-trip decimal floats, so coefficients survive
    # save/load bit-exactly
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MultiExitKan:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
