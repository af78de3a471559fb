import numpy as np
import pytest

import prue.tensor as T
from prue.nn import ArchitectureSpec, Layer, build_model, family, forward, logits, mlp_s, predict_proba, sparsity_report
from prue.tensor import ShapeError, Tensor, backward

from conftest import tiny_cnn, tiny_mlp


def test_primitive_examples():
    np.testing.assert_array_equal(T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]])).data, [[3.0], [7.0]])
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_backward_examples():
    x = Tensor(3.0, requires_grad=True)
    assert backward(x * x, wrt=[x])[x].item() == 6.0
    m = Tensor([1.0, 1.0], requires_grad=True)
    w = Tensor([2.0, 5.0])
    np.testing.assert_array_equal(backward((m * w).sum(), wrt=[m])[m].data, [2.0, 5.0])


def test_mlp_s_parameter_count():
    model = build_model(mlp_s(784, 10), 0)
    assert model.num_params == 784 * 64 + 64 + 64 * 10 + 10 == 50_890
    assert model.num_prunable == 50_816


def test_same_seed_bit_identical():
    a = build_model(mlp_s(20, 3), 5)
    b = build_model(mlp_s(20, 3), 5)
    assert a.checksum() == b.checksum()
    assert a.checksum() != build_model(mlp_s(20, 3), 6).checksum()


def test_inconsistent_spec_names_layer_pair():
    spec = ArchitectureSpec("bad", (10,), (Layer("dense", 10, 64), Layer("dense", 32, 16), Layer("dense", 16, 10)), 10)
    spec_gap = ArchitectureSpec("gap", (64,), (Layer("dense", 64, 32), Layer("dense", 16, 10)), 10)
    for s in (spec, spec_gap):
        with pytest.raises(ValueError, match="layer 0 .* -> layer 1"):
            build_model(s, 0)


def test_masks_match_weights_biases_unmasked(cnn):
    for p in cnn.params:
        if p.name.endswith("bias"):
            assert p.mask is None
        else:
            assert p.mask.shape == p.weight.shape


def test_zero_masks_leave_only_biases(mlp):
    mlp.set_masks([np.zeros(p.weight.shape) for p in mlp.prunable()])
    x = np.random.default_rng(0).normal(size=(5, 2))
    out = forward(mlp, x).data
    np.testing.assert_allclose(out, np.broadcast_to(out[0], out.shape))


def test_ones_masks_equal_unmasked_forward(mlp):
    x = np.random.default_rng(0).normal(size=(4, 2))
    h = x
    for i, p in enumerate(mlp.prunable()):
        h = h @ p.weight.data + mlp.params[2 * i + 1].weight.data
        if i < 2:
            h = np.maximum(h, 0)
    np.testing.assert_allclose(forward(mlp, x).data, h, rtol=1e-12)


def test_flipping_mask_bit_changes_logits_iff_weight_nonzero():
    model = tiny_mlp(3)
    first = model.prunable()[0]
    first.weight.data[0, 0] = 0.0
    x = np.abs(np.random.default_rng(1).normal(size=(6, 2))) + 0.5
    base = forward(model, x).data
    for j, expect_change in (((0, 0), False), ((1, 2), True)):
        m = np.ones(first.weight.shape)
        m[j] = 0
        trial = model.copy()
        trial.set_masks({first.name: m, **{p.name: np.ones(p.weight.shape) for p in trial.prunable()[1:]}})
        changed = not np.array_equal(forward(trial, x).data, base)
        assert changed == expect_change


def test_sparsity_report_examples():
    model = build_model(mlp_s(784, 10), 0)
    assert sparsity_report(model)["global"] == 0.0
    flat = np.ones(50_816)
    flat[:5000] = 0
    model.set_masks(model.unflatten(flat))
    rep = sparsity_report(model)
    assert rep["zeros"] == 5000
    assert round(rep["global"], 4) == 0.0984
    model.set_masks(model.unflatten(np.zeros(50_816)))
    assert sparsity_report(model)["global"] == 1.0


def test_mask_validation(mlp):
    p = mlp.prunable()[0]
    with pytest.raises(ShapeError):
        mlp.set_masks({p.name: np.ones((3, 3))})
    with pytest.raises(ValueError):
        mlp.set_masks([np.full(q.weight.shape, 0.5) for q in mlp.prunable()])


def test_families_validate_for_common_inputs():
    for name in ("mlp-s", "mlp-l", "cnn-s", "cnn-l"):
        for shape in ((1, 28, 28), (3, 32, 32), (8, 8)):
            spec = family(name, shape, 10)
            spec.validate()
            assert spec.num_classes == 10
    with pytest.raises(KeyError):
        family("resnet", (1, 8, 8), 10)


def test_spec_round_trip_through_dict():
    spec = family("cnn-l", (3, 32, 32), 10)
    assert ArchitectureSpec.from_dict(spec.to_dict()) == spec


def test_forward_rejects_wrong_input(cnn):
    with pytest.raises(ShapeError):
        forward(cnn, np.zeros((2, 1, 7, 7)))
    assert forward(cnn, np.zeros((2, 64))).shape == (2, 3)


def test_predict_proba_rows_sum_to_one(cnn):
    x = np.random.default_rng(0).normal(size=(9, 1, 8, 8))
    p = predict_proba(cnn, x, batchsize=4)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(logits(cnn, x, batchsize=4), forward(cnn, x).data)


def test_copy_is_independent(mlp):
    c = mlp.copy()
    c.params[0].weight.data[...] = 0
    assert mlp.checksum() != c.checksum()


def test_unflatten_round_trip():
    model = tiny_cnn(1)
    flat = model.flat_weights()
    parts = model.unflatten(flat)
    for p in model.prunable():
        np.testing.assert_array_equal(parts[p.name], p.weight.data)
    with pytest.raises(ShapeError):
        model.unflatten(flat[:-1])
