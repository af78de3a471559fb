import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prue.data import Batch
from prue.distillation import DistillConfig, distill, kd_loss, student_loss, teacher_logits
from prue.nn import build_model, family, forward, logits
from prue.tensor import ShapeError, Tensor, backward
from prue.training import OptimizerState, cross_entropy, train

from conftest import assert_close_rel, blobs, gradient_oracle, images, tiny_cnn, tiny_mlp


def _kl(t, s, tau):
    p = np.exp(t / tau) / np.exp(t / tau).sum(axis=1, keepdims=True)
    q = np.exp(s / tau) / np.exp(s / tau).sum(axis=1, keepdims=True)
    return tau**2 * (p * (np.log(p) - np.log(q))).sum(axis=1).mean()


def test_identical_logits_give_zero():
    z = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]])
    for tau in (0.5, 1.0, 4.0):
        assert kd_loss(z, Tensor(z), tau).item() == pytest.approx(0.0, abs=1e-12)


def test_hand_kl_example():
    t, s = np.array([[2.0, 0.0]]), np.array([[0.0, 2.0]])
    p = np.array([0.8807970779778823, 0.11920292202211755])
    q = p[::-1]
    expected = float((p * (np.log(p) - np.log(q))).sum())
    assert kd_loss(t, Tensor(s), 1.0).item() == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.5231883119115297, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-20, 20, width=64)),
    arrays(np.float64, (3, 4), elements=st.floats(-20, 20, width=64)),
    st.floats(0.1, 10),
)
def test_kd_nonnegative_and_matches_brute_force(t, s, tau):
    v = kd_loss(t, Tensor(s), tau).item()
    assert v >= -1e-12
    assert v == pytest.approx(_kl(t, s, tau), rel=1e-8, abs=1e-10)


def test_tau_must_be_positive():
    with pytest.raises(ValueError):
        kd_loss(np.zeros((1, 2)), Tensor(np.zeros((1, 2))), 0.0)
    with pytest.raises(ValueError):
        DistillConfig(tau=-1.0)
    with pytest.raises(ValueError):
        DistillConfig(lam=1.5)


def test_kd_shape_mismatch():
    with pytest.raises(ShapeError):
        kd_loss(np.zeros((2, 3)), Tensor(np.zeros((2, 4))), 1.0)


def test_student_loss_mixing():
    ds = blobs(seed=1)
    batch = Batch(ds.x, ds.y)
    teacher, student = tiny_mlp(1), tiny_mlp(2)
    t = logits(teacher, ds.x)
    s = forward(student, ds.x).data
    ce = cross_entropy(Tensor(s), ds.y).item()
    kd = _kl(t, s, 2.0)
    assert student_loss(batch, teacher, student, 2.0, 1.0).item() == pytest.approx(kd, rel=1e-10)
    assert student_loss(batch, teacher, student, 2.0, 0.0).item() == pytest.approx(ce, rel=1e-12)
    assert abs(student_loss(batch, teacher, student, 2.0, 0.1).item() - (0.9 * ce + 0.1 * kd)) <= 1e-7


def test_kd_at_unit_temperature_equals_soft_target_ce_minus_entropy():
    ds = blobs(seed=4)
    t = logits(tiny_mlp(4), ds.x)
    s = forward(tiny_mlp(5), ds.x)
    p = np.exp(t) / np.exp(t).sum(axis=1, keepdims=True)
    entropy = -(p * np.log(p)).sum(axis=1).mean()
    soft_ce = cross_entropy(s, p).item()
    assert abs(kd_loss(t, s, 1.0).item() - (soft_ce - entropy)) <= 1e-6


def test_kd_gradient_equals_soft_target_ce_gradient():
    ds = blobs(seed=4)
    t = logits(tiny_mlp(4), ds.x)
    p = np.exp(t) / np.exp(t).sum(axis=1, keepdims=True)
    student = tiny_mlp(5)
    w = student.weights()
    g1 = backward(kd_loss(t, forward(student, ds.x), 1.0), wrt=w)
    g2 = backward(cross_entropy(forward(student, ds.x), p), wrt=w)
    for x in w:
        np.testing.assert_allclose(g1[x].data, g2[x].data, atol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("which", ["weights", "masks"])
def test_student_loss_gradient_oracle(seed, which):
    for teacher, student, ds in (
        (tiny_mlp(seed + 10), tiny_mlp(seed), blobs(seed=seed)),
        (tiny_cnn(seed + 10), tiny_cnn(seed), images(seed=seed)),
    ):
        batch = Batch(ds.x, ds.y)
        t = logits(teacher, ds.x)
        a, n = gradient_oracle(student, which, lambda m: student_loss(batch, t, m, 2.0, 0.5), seed=seed)
        assert_close_rel(a, n)


def _setup(epochs=3):
    tr = blobs(per_class=20, seed=3, dtype=np.float32)
    teacher = build_model(family("mlp-l", tr.input_shape, 3), 0)
    train(teacher, tr, 4, 16, OptimizerState(0.05))
    return tr, teacher, DistillConfig(tau=2.0, lam=1.0, epochs=epochs, batchsize=16, lr=0.05)


def test_distill_is_deterministic_and_leaves_teacher_alone():
    tr, teacher, cfg = _setup()
    before = teacher.checksum()
    runs = []
    for _ in range(2):
        student = build_model(family("mlp-s", tr.input_shape, 3), 7)
        _, rows = distill(teacher, student, tr, cfg, seed=2, teacher_info={"sparsity": 0.0})
        runs.append((student.checksum(), rows))
    assert runs[0] == runs[1]
    assert teacher.checksum() == before
    assert len(runs[0][1]) == 3


def test_lambda_one_logs_zero_ce_component():
    tr, teacher, cfg = _setup(2)
    student = build_model(family("mlp-s", tr.input_shape, 3), 7)
    _, rows = distill(teacher, student, tr, cfg, teacher_info={"delta": 0.1})
    for r in rows:
        assert r["ce_loss"] == 0.0
        assert r["kd_loss"] == pytest.approx(r["loss"], rel=1e-9)
        assert r["teacher_delta"] == 0.1


def test_perfect_mimic_is_a_fixed_point():
    tr, teacher, cfg = _setup(1)
    student = teacher.copy()
    batch = Batch(tr.x[:16], tr.y[:16])
    loss = student_loss(batch, logits(teacher, batch.x), student, 1.0, 1.0)
    assert abs(loss.item()) < 1e-6
    g = backward(loss, wrt=student.weights())
    assert max(np.abs(v.data).max() for v in g.values()) < 1e-6


def test_architecture_mismatch_rejected():
    tr, teacher, cfg = _setup(1)
    wrong_k = build_model(family("mlp-s", tr.input_shape, 4), 0)
    with pytest.raises(ShapeError):
        distill(teacher, wrong_k, tr, cfg)
    wrong_in = build_model(family("mlp-s", (5,), 3), 0)
    with pytest.raises(ShapeError):
        distill(teacher, wrong_in, tr, cfg)


def test_teacher_logits_cache_tracks_checksum():
    tr, teacher, _ = _setup(1)
    a = teacher_logits(teacher, tr)
    assert teacher_logits(teacher, tr) is a
    with pytest.raises(ValueError):
        a[0, 0] = 1.0
    pruned = teacher.copy()
    pruned.params[0].weight.data[...] = 0.0
    assert not np.array_equal(teacher_logits(pruned, tr), a)
