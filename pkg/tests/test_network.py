import json

import numpy as np
import pytest

from mekan.errors import DataError
from mekan.network import (
    KanShape,
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

from helpers import nested_loop_forward


def test_shape_validation():
    with pytest.raises(ValueError):
        KanShape((3,))
    with pytest.raises(ValueError):
        KanShape((2, 0, 1))
    s = KanShape((2, 3, 1))
    assert s.d == 2 and s.m == 1 and s.depth == 2


def test_build_head_counts():
    assert build([2, 3, 2, 1], multi_exit=False).num_heads == 1
    assert build([2, 3, 2, 1], multi_exit=True).num_heads == 3
    assert build([1, 1], multi_exit=True).num_heads == 1  # no room for branches
    assert build([1, 1], multi_exit=False).num_heads == 1


def test_activation_counts_examples():
    assert count_activations(build([2, 3, 2, 1], multi_exit=False)) == 14
    assert count_activations(build([2, 3, 2, 1], multi_exit=True)) == 19
    assert count_activations(build([1, 1], multi_exit=True)) == 1
    # [3,3,3,3]: trunk 9+9+9, exits (3+3)*3
    assert count_activations(build([3, 3, 3, 3], multi_exit=True)) == 45


def test_uniform_width_closed_forms():
    # uniform width d across L layers: (L-1) d^2 + d m trunk activations,
    # plus (L-1) d m across the added exits
    for d, L, m in ((3, 4, 1), (2, 3, 2), (4, 2, 3)):
        widths = [d] * L + [m]
        single = count_activations(build(widths, multi_exit=False))
        assert single == (L - 1) * d * d + d * m
        multi = count_activations(build(widths, multi_exit=True))
        assert multi - single == (L - 1) * d * m


def test_count_parameters_matches_enumeration():
    model = build([2, 3, 2, 1], multi_exit=True, grid_size=5, order=3)
    total = sum(
        act.coeffs.size
        for layer in model.all_layers()
        for _, _, act in layer.iter_acts()
    )
    assert count_parameters(model) == total == 19 * 8


def test_forward_zero_network():
    model = build([2, 2, 1], multi_exit=True, base_kind="zero", coeff_std=0.0)
    preds = forward(model, np.random.default_rng(0).normal(size=(5, 2)))
    assert len(preds) == 2
    for p in preds:
        assert np.all(p == 0.0)


def test_forward_identity_propagation():
    model = build([1, 1], base_kind="identity", coeff_std=0.0)
    out = forward(model, np.array([[2.0]]))
    assert np.allclose(out[0], [[2.0]], atol=1e-15)


def test_forward_matches_nested_loop_oracle():
    rng = np.random.default_rng(1)
    for multi in (False, True):
        model = build([2, 2, 1], multi_exit=multi, seed=7, coeff_std=0.4)
        x = rng.uniform(-1.5, 1.5, (6, 2))
        fast = forward(model, x)
        slow = nested_loop_forward(model, x)
        for a, b in zip(fast, slow):
            assert np.abs(a - b).max() <= 1e-12


def test_forward_rejects_bad_input():
    model = build([2, 2, 1])
    with pytest.raises(DataError):
        forward(model, np.array([[1.0, np.nan]]))
    with pytest.raises(DataError):
        forward(model, np.ones((3, 5)))


def test_batch_consistency():
    model = build([2, 3, 2], multi_exit=True, seed=2)
    x = np.random.default_rng(3).uniform(-1, 1, (10, 2))
    batch = forward(model, x)
    for r in range(10):
        rowwise = forward(model, x[r : r + 1])
        for a, b in zip(batch, rowwise):
            assert np.abs(a[r] - b[0]).max() <= 1e-12


def test_flatten_load_round_trip():
    model = build([2, 3, 2, 1], multi_exit=True, seed=4)
    x = np.random.default_rng(5).uniform(-1, 1, (4, 2))
    before = [p.copy() for p in forward(model, x)]
    vec = flatten_params(model)
    load_params(model, vec.copy())
    after = forward(model, x)
    for a, b in zip(before, after):
        assert np.array_equal(a, b)


def test_load_params_length_guard():
    model = build([2, 2, 1])
    with pytest.raises(ValueError):
        load_params(model, np.zeros(count_parameters(model) + 1))


def test_exit_topology_by_perturbation():
    # branch-exit parameters never reach the final head; trunk layer l feeds
    # only the heads strictly downstream of node l
    model = build([2, 3, 2, 1], multi_exit=True, seed=6)
    x = np.random.default_rng(7).uniform(-1, 1, (8, 2))
    base = [p.copy() for p in forward(model, x)]

    def changed_after(act):
        # shifting every coefficient shifts the whole curve (partition of
        # unity), so the perturbation is visible for any input distribution
        act.coeffs += 0.5
        preds = forward(model, x)
        act.coeffs -= 0.5
        return [bool(np.abs(p - b).max() > 1e-14) for p, b in zip(preds, base)]

    # exit-0 branch affects only head 0
    assert changed_after(model.exits[0].acts[0][0]) == [True, False, False]
    assert changed_after(model.exits[1].acts[0][0]) == [False, True, False]
    # trunk layer 0 affects heads 1 and 2, never head 0
    assert changed_after(model.trunk[0].acts[0][0]) == [False, True, True]
    assert changed_after(model.trunk[1].acts[0][0]) == [False, False, True]
    assert changed_after(model.trunk[2].acts[0][0]) == [False, False, True]


def test_single_and_multi_share_final_head():
    # identical seeds build identical trunks; extra branches must not change
    # the trunk's own prediction
    x = np.random.default_rng(8).uniform(-1, 1, (5, 2))
    single = build([2, 3, 2, 1], multi_exit=False, seed=9)
    multi = build([2, 3, 2, 1], multi_exit=True, seed=9)
    assert np.array_equal(forward(single, x)[-1], forward(multi, x)[-1])


def test_serialization_round_trip_bitwise():
    rng = np.random.default_rng(10)
    for trial in range(5):
        widths = [int(rng.integers(1, 4)) for _ in range(int(rng.integers(2, 5)))]
        widths = widths if len(widths) >= 2 else [2, 1]
        model = build(widths, multi_exit=bool(rng.integers(2)), seed=trial,
                      grid_size=int(rng.integers(3, 8)))
        x = rng.uniform(-1, 1, (6, widths[0]))
        doc = json.loads(json.dumps(model_to_dict(model)))
        clone = model_from_dict(doc)
        for a, b in zip(forward(model, x), forward(clone, x)):
            assert np.array_equal(a, b)


def test_save_load_file(tmp_path):
    model = build([2, 3, 1], multi_exit=True, seed=11)
    path = tmp_path / "model.json"
    save_model(model, path)
    clone = load_model(path)
    x = np.random.default_rng(12).uniform(-1, 1, (4, 2))
    for a, b in zip(forward(model, x), forward(clone, x)):
        assert np.array_equal(a, b)


def test_load_rejects_unknown_version(tmp_path):
    model = build([1, 1])
    doc = model_to_dict(model)
    doc["format_version"] = 999
    with pytest.raises(ValueError):
        model_from_dict(doc)
