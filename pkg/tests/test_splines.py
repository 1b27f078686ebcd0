import numpy as np
import pytest

from mekan.splines import (
    SplineActivation,
    SplineGrid,
    activation_curve,
    activation_deriv,
    basis_matrix,
    eval_activation,
    eval_basis,
    new_activation,
    refine_grid,
    silu,
    update_grid_range,
)

from helpers import naive_basis_vector


def test_grid_knots_uniform_and_extended():
    g = SplineGrid(5, 3, -1.0, 1.0)
    assert g.num_basis == 8
    assert len(g.knots) == 5 + 2 * 3 + 1
    assert np.all(np.diff(g.knots) > 0)
    diffs = np.diff(g.knots)
    assert np.allclose(diffs, diffs[0])
    assert g.knots[3] == -1.0 and g.knots[8] == 1.0


def test_grid_validation():
    with pytest.raises(ValueError):
        SplineGrid(0, 3, -1, 1)
    with pytest.raises(ValueError):
        SplineGrid(5, 3, 1.0, -1.0)
    with pytest.raises(ValueError):
        SplineGrid(5, -1, -1, 1)


def test_degree_zero_single_interval():
    g = SplineGrid(1, 0, -1.0, 1.0)
    assert eval_basis(g, 0.0) == pytest.approx([1.0])
    # domain endpoints included
    assert eval_basis(g, -1.0) == pytest.approx([1.0])
    assert eval_basis(g, 1.0) == pytest.approx([1.0])


def test_partition_of_unity():
    rng = np.random.default_rng(0)
    for G in (3, 5, 10, 20):
        g = SplineGrid(G, 3, -1.5, 2.0)
        xs = rng.uniform(-1.5, 2.0, 2000)
        xs = np.concatenate([xs, [-1.5, 2.0]])
        B = basis_matrix(g, xs)
        assert np.abs(B.sum(axis=1) - 1.0).max() <= 1e-9
        assert (B >= -1e-12).all()


def test_local_support():
    g = SplineGrid(10, 3, -1.0, 1.0)
    xs = np.random.default_rng(1).uniform(-1, 1, 500)
    B = basis_matrix(g, xs)
    assert ((B > 1e-12).sum(axis=1) <= 4).all()


def test_basis_matches_recursive_oracle():
    rng = np.random.default_rng(2)
    g = SplineGrid(5, 3, -1.0, 1.0)
    for x in np.concatenate([[0.3, -1.0, 1.0], rng.uniform(-1, 1, 50)]):
        mine = eval_basis(g, x)
        oracle = naive_basis_vector(g, x)
        assert np.abs(mine - oracle).max() <= 1e-12


def test_basis_oracle_other_orders():
    rng = np.random.default_rng(3)
    for order in (0, 1, 2):
        g = SplineGrid(4, order, -2.0, 0.5)
        for x in rng.uniform(-2.0, 0.5, 20):
            assert np.abs(eval_basis(g, x) - naive_basis_vector(g, x)).max() <= 1e-12


def test_activation_zero_and_identity():
    g = SplineGrid(5, 3)
    act = SplineActivation(g, np.zeros(g.num_basis), "zero")
    assert eval_activation(act, 0.37) == 0.0
    act_id = SplineActivation(g, np.zeros(g.num_basis), "identity")
    assert eval_activation(act_id, 2.5) == 2.5


def test_activation_constant_coeffs_collapse():
    # partition of unity turns equal coefficients into a constant offset
    g = SplineGrid(7, 3, -1.0, 1.0)
    act = SplineActivation(g, np.full(g.num_basis, 0.7), "silu")
    for x in (-0.9, 0.0, 0.55, 1.0):
        expect = float(silu(np.array([x]))[0]) + 0.7
        assert eval_activation(act, x) == pytest.approx(expect, abs=1e-12)


def test_activation_out_of_domain_clamps_spline_only():
    g = SplineGrid(5, 3, -1.0, 1.0)
    rng = np.random.default_rng(4)
    act = new_activation(g, "identity", rng)
    at_edge = eval_activation(act, 1.0) - 1.0
    assert eval_activation(act, 3.0) == pytest.approx(3.0 + at_edge, abs=1e-12)
    assert np.isfinite(eval_activation(act, 1e8))


def test_coeff_length_checked():
    g = SplineGrid(5, 3)
    with pytest.raises(ValueError):
        SplineActivation(g, np.zeros(g.num_basis + 1))


def test_activation_deriv_matches_central_differences():
    rng = np.random.default_rng(5)
    g = SplineGrid(8, 3, -1.0, 1.0)
    for kind in ("silu", "identity", "zero"):
        act = new_activation(g, kind, rng)
        xs = rng.uniform(-0.98, 0.98, 100)
        h = 1e-6
        fd = (eval_activation(act, xs + h) - eval_activation(act, xs - h)) / (2 * h)
        an = activation_deriv(act, xs)
        rel = np.abs(an - fd) / np.maximum(1.0, np.abs(fd))
        assert rel.max() <= 1e-5


def test_activation_continuity_smoke():
    rng = np.random.default_rng(6)
    act = new_activation(SplineGrid(10, 3, -1, 1), "silu", rng)
    xs = rng.uniform(-0.99, 0.99, 200)
    h = 1e-8
    jumps = np.abs(eval_activation(act, xs + h) - eval_activation(act, xs))
    lipschitz = np.abs(activation_deriv(act, xs)) + 1.0
    assert (jumps <= 10.0 * lipschitz * h).all()


def test_refine_same_size_is_identity_on_values():
    rng = np.random.default_rng(7)
    act = new_activation(SplineGrid(3, 3), "silu", rng)
    xs = rng.uniform(-1, 1, 200)
    act2, info = refine_grid(act, 3, xs)
    assert np.abs(eval_activation(act2, xs) - eval_activation(act, xs)).max() <= 1e-9
    assert info.residual_rms <= 1e-9


def test_refine_reproduces_polynomial():
    # a cubic lies in every cubic spline space on the domain
    g = SplineGrid(4, 3, -1.0, 1.0)
    rng = np.random.default_rng(8)
    xs = rng.uniform(-1, 1, 300)
    poly = lambda t: 0.3 * t**3 - 0.5 * t**2 + 0.25 * t - 0.1
    coeffs, *_ = np.linalg.lstsq(basis_matrix(g, xs), poly(xs), rcond=None)
    act = SplineActivation(g, coeffs, "zero")
    assert np.abs(eval_activation(act, xs) - poly(xs)).max() <= 1e-8
    act2, _ = refine_grid(act, 9, xs)
    assert np.abs(eval_activation(act2, xs) - poly(xs)).max() <= 1e-8


def test_refine_matches_dense_normal_equations_oracle():
    rng = np.random.default_rng(9)
    act = new_activation(SplineGrid(5, 3), "silu", rng, coeff_std=0.5)
    xs = rng.uniform(-1, 1, 1000)
    act2, info = refine_grid(act, 10, xs)
    target = basis_matrix(act.grid, xs) @ act.coeffs
    design = basis_matrix(act2.grid, xs)
    # independent solve of the normal equations
    c_oracle = np.linalg.solve(design.T @ design, design.T @ target)
    ls_opt = np.abs(design @ c_oracle - target).max()
    achieved = np.abs(design @ act2.coeffs - target).max()
    assert achieved <= ls_opt + 1e-6


def test_refine_cannot_shrink():
    rng = np.random.default_rng(10)
    act = new_activation(SplineGrid(5, 3), "silu", rng)
    with pytest.raises(ValueError):
        refine_grid(act, 3, np.array([0.0]))
    with pytest.raises(ValueError):
        refine_grid(act, 10, np.array([]))


def test_refine_min_norm_flag_on_sparse_samples():
    rng = np.random.default_rng(11)
    act = new_activation(SplineGrid(3, 3), "silu", rng)
    act2, info = refine_grid(act, 20, np.array([0.1, 0.2]))
    assert info.min_norm
    assert np.isfinite(act2.coeffs).all()


def test_update_grid_range_noop_when_contained():
    rng = np.random.default_rng(12)
    act = new_activation(SplineGrid(5, 3, -1, 1), "silu", rng)
    xs = rng.uniform(-0.8, 0.8, 50)
    act2, info = update_grid_range(act, xs)
    assert act2.grid.signature == act.grid.signature
    assert np.abs(eval_activation(act2, xs) - eval_activation(act, xs)).max() <= 1e-9


def test_update_grid_range_expands_to_cover():
    rng = np.random.default_rng(13)
    act = new_activation(SplineGrid(5, 3, -1, 1), "silu", rng)
    act2, _ = update_grid_range(act, np.array([-3.0, 3.0]))
    assert act2.grid.domain_lo <= -3.0 and act2.grid.domain_hi >= 3.0
    assert act2.grid.num_intervals == 5


def test_update_grid_range_degenerate_samples():
    rng = np.random.default_rng(14)
    act = new_activation(SplineGrid(5, 3, -1, 1), "silu", rng)
    act2, _ = update_grid_range(act, np.full(10, 7.0))
    assert act2.grid.domain_lo < 7.0 < act2.grid.domain_hi


def test_activation_curve_shape():
    act = new_activation(SplineGrid(3, 3), "silu", np.random.default_rng(0))
    xs, ys = activation_curve(act, 57)
    assert xs.shape == (57,) and ys.shape == (57,)
    assert xs[0] == act.grid.domain_lo and xs[-1] == act.grid.domain_hi
