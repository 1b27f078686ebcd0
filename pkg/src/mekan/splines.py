"""B-spline grids and the learnable univariate activations built on them.

An activation has the form ``phi(x) = b(x) + sum_j c_j B_j(x)``: a fixed base
function plus a spline correction on a uniform knot grid. The spline part sees
inputs clamped to the grid domain; the base function always receives the raw
input, so evaluation is total on the real line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BASE_KINDS = ("silu", "identity", "zero")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    """x * logistic(x), safe against exp overflow for large |x|."""
    x = np.asarray(x, dtype=float)
    return x * _sigmoid(x)


def base_and_deriv(kind: str, x: np.ndarray):
    """Value and derivative of the base function at raw (unclamped) inputs."""
    if kind == "silu":
        s = _sigmoid(x)
        return x * s, s * (1.0 + x * (1.0 - s))
    if kind == "identity":
        return x.astype(float, copy=True), np.ones_like(x)
    if kind == "zero":
        return np.zeros_like(x), np.zeros_like(x)
    raise ValueError(f"unknown base kind {kind!r}; expected one of {BASE_KINDS}")


@dataclass
class SplineGrid:
    """Uniform knot grid on [domain_lo, domain_hi] with `order` extra knots
    extended past each end, so every in-domain point carries a full local
    basis of order+1 functions. Treated as immutable once built."""

    num_intervals: int
    order: int = 3
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.num_intervals < 1:
            raise ValueError("num_intervals must be >= 1")
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if not self.domain_lo < self.domain_hi:
            raise ValueError("domain_lo must be < domain_hi")
        self.domain_lo = float(self.domain_lo)
        self.domain_hi = float(self.domain_hi)
        # linspace pins the domain endpoints exactly; the extension repeats
        # the uniform spacing so all knot differences stay positive
        interior = np.linspace(self.domain_lo, self.domain_hi, self.num_intervals + 1)
        h = (self.domain_hi - self.domain_lo) / self.num_intervals
        left = self.domain_lo - h * np.arange(self.order, 0, -1)
        right = self.domain_hi + h * np.arange(1, self.order + 1)
        self.knots = np.concatenate([left, interior, right])
        # reciprocal knot spans per recursion level, shared by every
        # evaluation on this grid
        t = self.knots
        self._recips = [
            (1.0 / (t[d:-1] - t[: -(d + 1)]), 1.0 / (t[d + 1 :] - t[1:-d]))
            for d in range(1, self.order + 1)
        ]

    @property
    def num_basis(self) -> int:
        return self.num_intervals + self.order

    @property
    def signature(self):
        """Value identity of the grid; equal signatures mean equal knots."""
        return (self.num_intervals, self.order, self.domain_lo, self.domain_hi)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.domain_lo, self.domain_hi)


def _basis_core(grid: SplineGrid, xc: np.ndarray, want_deriv: bool):
    """Dense (n, num_basis) basis matrix at already-clamped points, via the
    Cox-de Boor recursion over the full extended knot vector. Optionally the
    first-derivative matrix from the order-1 lower level."""
    t = grid.knots
    k = grid.order
    B = ((xc[:, None] >= t[None, :-1]) & (xc[:, None] < t[None, 1:])).astype(float)
    if k == 0:
        # half-open intervals leave the right domain endpoint uncovered
        B[xc == t[-1], -1] = 1.0
        return B, (np.zeros_like(B) if want_deriv else None)
    lower = None
    for d in range(1, k + 1):
        rl, rr = grid._recips[d - 1]
        if d == k:
            lower = B
        B = ((xc[:, None] - t[None, : -(d + 1)]) * rl) * B[:, :-1] + (
            (t[None, d + 1 :] - xc[:, None]) * rr
        ) * B[:, 1:]
    if not want_deriv:
        return B, None
    rl, rr = grid._recips[k - 1]
    dB = k * (lower[:, :-1] * rl - lower[:, 1:] * rr)
    return B, dB


def basis_matrix(grid: SplineGrid, x: np.ndarray) -> np.ndarray:
    """Basis values at each point of ``x`` (clamped into the domain)."""
    x = np.asarray(x, dtype=float)
    B, _ = _basis_core(grid, grid.clamp(x), want_deriv=False)
    return B


def basis_and_deriv(grid: SplineGrid, x: np.ndarray):
    """(basis, d/dx basis, in-domain mask) at each point of ``x``.

    The derivative is evaluated at the clamped point; callers zero it outside
    the domain via the mask, matching the clamped forward rule.
    """
    x = np.asarray(x, dtype=float)
    B, dB = _basis_core(grid, grid.clamp(x), want_deriv=True)
    mask = (x >= grid.domain_lo) & (x <= grid.domain_hi)
    return B, dB, mask.astype(float)


def eval_basis(grid: SplineGrid, x: float) -> np.ndarray:
    """All basis values at one point; length num_basis, nonnegative, at most
    order+1 nonzero, summing to 1 inside the domain."""
    return basis_matrix(grid, np.array([float(x)]))[0]


@dataclass
class SplineActivation:
    """One learnable univariate function: base + spline correction."""

    grid: SplineGrid
    coeffs: np.ndarray
    base_kind: str = "silu"

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.grid.num_basis,):
            raise ValueError(
                f"coeffs length {self.coeffs.shape} does not match "
                f"basis count {self.grid.num_basis}"
            )
        if self.base_kind not in BASE_KINDS:
            raise ValueError(f"unknown base kind {self.base_kind!r}")


def new_activation(
    grid: SplineGrid,
    base_kind: str = "silu",
    rng: np.random.Generator | None = None,
    coeff_std: float = 0.1,
) -> SplineActivation:
    """Fresh activation with small-noise coefficients, near the pure base map."""
    if rng is None:
        rng = np.random.default_rng()
    return SplineActivation(grid, rng.normal(0.0, coeff_std, grid.num_basis), base_kind)


def eval_activation(act: SplineActivation, x):
    """phi(x) = base(x) + spline(clamp(x)); scalar in, scalar out."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    base, _ = base_and_deriv(act.base_kind, arr)
    out = base + basis_matrix(act.grid, arr) @ act.coeffs
    return float(out[0]) if np.ndim(x) == 0 else out


def activation_deriv(act: SplineActivation, x):
    """Analytic d phi/dx; the spline term contributes zero outside the domain."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    _, dbase = base_and_deriv(act.base_kind, arr)
    _, dB, mask = basis_and_deriv(act.grid, arr)
    out = dbase + mask * (dB @ act.coeffs)
    return float(out[0]) if np.ndim(x) == 0 else out


@dataclass
class RefitInfo:
    """Diagnostics from a least-squares coefficient refit."""

    residual_rms: float
    min_norm: bool  # True when the system was rank-deficient (minimum-norm solve)


def _fit_coeffs(grid: SplineGrid, xs: np.ndarray, target: np.ndarray):
    design, _ = _basis_core(grid, grid.clamp(xs), want_deriv=False)
    coeffs, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    resid = design @ coeffs - target
    rms = float(np.sqrt(np.mean(resid**2)))
    return coeffs, RefitInfo(rms, bool(rank < grid.num_basis))


def refine_grid(act: SplineActivation, new_num_intervals: int, samples):
    """Move the activation onto a finer grid over the same domain.

    New coefficients are the least-squares fit of the old spline component at
    the given samples, so the represented function is preserved up to the
    reported residual. Rank-deficient systems get the minimum-norm solution.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    if new_num_intervals < act.grid.num_intervals:
        raise ValueError("grid refinement cannot reduce num_intervals")
    new_grid = SplineGrid(
        new_num_intervals, act.grid.order, act.grid.domain_lo, act.grid.domain_hi
    )
    target = basis_matrix(act.grid, samples) @ act.coeffs
    coeffs, info = _fit_coeffs(new_grid, samples, target)
    return SplineActivation(new_grid, coeffs, act.base_kind), info


def update_grid_range(
    act: SplineActivation,
    samples,
    rel_margin: float = 0.05,
    min_width: float = 1.0,
):
    """Expand the grid domain to cover the sample range, refitting coefficients.

    A no-op when the samples already lie inside the domain. The domain never
    shrinks, so previously fitted regions stay represented. Constant samples
    expand to a window of ``min_width`` around the value.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    if not np.isfinite(samples).all():
        raise ValueError("samples must be finite")
    s_lo, s_hi = float(samples.min()), float(samples.max())
    lo, hi = act.grid.domain_lo, act.grid.domain_hi
    if s_lo >= lo and s_hi <= hi:
        return act, RefitInfo(0.0, False)
    if s_hi == s_lo:
        s_lo -= 0.5 * min_width
        s_hi += 0.5 * min_width
    margin = rel_margin * (s_hi - s_lo)
    new_lo = min(lo, s_lo - margin)
    new_hi = max(hi, s_hi + margin)
    new_grid = SplineGrid(act.grid.num_intervals, act.grid.order, new_lo, new_hi)
    target = basis_matrix(act.grid, samples) @ act.coeffs
    coeffs, info = _fit_coeffs(new_grid, samples, target)
    return SplineActivation(new_grid, coeffs, act.base_kind), info


def activation_curve(act: SplineActivation, n_points: int = 200):
    """(x, phi(x)) sampled uniformly across the grid domain, for export."""
    x = np.linspace(act.grid.domain_lo, act.grid.domain_hi, n_points)
    return x, eval_activation(act, x)
