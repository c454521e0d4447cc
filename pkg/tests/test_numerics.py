"""Gradient-engine, optimizer, and checkpoint tests."""
import math

import numpy as np
import pytest

from mailbench.numerics.autodiff import (
    Node, Tape, add, clip, concat, dropout, exp, log, log_softmax_rows,
    matmul, mul, neg, reduce_mean, reduce_sum, reshape, sigmoid,
    softmax_rows, stop_gradient, sub, tanh)
from mailbench.numerics.checkpoint import CheckpointError, load_arrays, save_arrays
from mailbench.numerics.gradcheck import fd_gradient_check
from mailbench.numerics.optim import NonFiniteGradientError, adam_step, clip_global_norm
from mailbench.numerics.params import Dense, ParameterStore, uniform_fan_in

RNG = np.random.default_rng


# -- op-level gradients ------------------------------------------------------

def _check(loss_fn, store, samples=40, tol=1e-4):
    report = fd_gradient_check(loss_fn, store, samples=samples, rng=RNG(0))
    assert report.max_rel_error < tol, report.worst()


def test_dense_tanh_chain_gradients():
    store = ParameterStore()
    rng = RNG(1)
    layer1 = Dense(store, "l1", 5, 7, rng)
    layer2 = Dense(store, "l2", 7, 3, rng)
    x = rng.normal(size=(4, 5))

    def loss(tape):
        h = tanh(tape, layer1(tape, Node(x)))
        out = layer2(tape, h)
        return reduce_sum(tape, mul(tape, out, out))

    _check(loss, store)


def test_sigmoid_log_exp_gradients():
    store = ParameterStore()
    w = store.add("w", RNG(2).normal(size=(3, 4)))

    def loss(tape):
        s = sigmoid(tape, w)
        return reduce_sum(tape, add(tape, log(tape, s), exp(tape, neg(tape, s))))

    _check(loss, store)


def test_clip_concat_reshape_mean_gradients():
    store = ParameterStore()
    a = store.add("a", RNG(3).normal(size=(2, 3)))
    b = store.add("b", RNG(4).normal(size=(2, 2)))

    def loss(tape):
        joined = concat(tape, [clip(tape, a, -0.5, 0.5), b], axis=1)
        flat = reshape(tape, joined, (10, 1))
        return reduce_mean(tape, mul(tape, flat, flat))

    _check(loss, store)


def test_softmax_gradients():
    store = ParameterStore()
    logits = store.add("z", RNG(5).normal(size=(4, 6)))
    pick = RNG(6).integers(0, 6, size=4)
    onehot = np.eye(6)[pick]

    def loss(tape):
        lp = log_softmax_rows(tape, logits)
        return neg(tape, reduce_sum(tape, mul(tape, lp, Node(onehot))))

    _check(loss, store)


def test_softmax_rows_sum_to_one():
    z = Node(RNG(7).normal(size=(5, 9)) * 3)
    p = softmax_rows(None, z)
    np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-12)


def test_broadcast_add_unbroadcasts_gradient():
    store = ParameterStore()
    bias = store.add("bias", RNG(8).normal(size=(1, 4)))
    x = RNG(9).normal(size=(6, 4))

    def loss(tape):
        return reduce_sum(tape, mul(tape, add(tape, Node(x), bias),
                                    add(tape, Node(x), bias)))

    _check(loss, store)
    # shape must survive the reduction over the broadcast axis
    tape = Tape()
    out = loss(tape)
    store.zero_grads()
    tape.backward(out)
    assert store["bias"].grad.shape == (1, 4)


def test_sub_matmul_gradient_values():
    # tiny case with hand-derivable gradient: L = sum((xW - y)^2)
    store = ParameterStore()
    w = store.add("w", np.array([[2.0], [1.0]]))
    x = np.array([[1.0, 3.0]])
    y = np.array([[4.0]])
    tape = Tape()
    diff = sub(tape, matmul(tape, Node(x), w), Node(y))
    loss = reduce_sum(tape, mul(tape, diff, diff))
    store.zero_grads()
    tape.backward(loss)
    # d/dw = 2 x^T (xW - y); xW - y = 1
    np.testing.assert_allclose(store["w"].grad, [[2.0], [6.0]])


def test_inference_path_matches_taped_values():
    store = ParameterStore()
    rng = RNG(10)
    layer = Dense(store, "d", 4, 4, rng)
    x = rng.normal(size=(3, 4))

    def f(tape):
        return reduce_sum(tape, tanh(tape, layer(tape, Node(x))))

    assert f(None).data == pytest.approx(f(Tape()).data, abs=0)


def test_stop_gradient_blocks_backprop():
    store = ParameterStore()
    w = store.add("w", np.ones((2, 2)))
    tape = Tape()
    held = stop_gradient(mul(tape, w, w))
    loss = reduce_sum(tape, mul(tape, w, held))
    store.zero_grads()
    tape.backward(loss)
    # held contributes as a constant (= 1), so dL/dw is exactly 1
    np.testing.assert_allclose(store["w"].grad, np.ones((2, 2)))


def test_dropout_zero_rate_is_identity():
    x = Node(RNG(11).normal(size=(5, 5)))
    out = dropout(None, x, 0.0, RNG(0))
    np.testing.assert_array_equal(out.data, x.data)


def test_dropout_scales_survivors():
    x = Node(np.ones((200, 200)))
    out = dropout(None, x, 0.5, RNG(12))
    vals = np.unique(out.data)
    assert set(vals.tolist()) == {0.0, 2.0}
    assert abs(out.data.mean() - 1.0) < 0.02


def test_dropout_gradient_uses_same_mask():
    store = ParameterStore()
    w = store.add("w", np.ones((4, 4)))
    tape = Tape()
    out = dropout(tape, w, 0.5, RNG(13))
    loss = reduce_sum(tape, out)
    store.zero_grads()
    tape.backward(loss)
    # gradient is the keep mask itself: 0 where dropped, 2 where kept
    np.testing.assert_array_equal(store["w"].grad, out.data)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        dropout(None, Node(np.ones(3)), 1.0, RNG(0))


# -- optimizer ---------------------------------------------------------------

def _reference_adam(params, grads_seq, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Straightforward textbook Adam, kept independent of the shipped one."""
    p = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(x) for k, x in params.items()}
    for t, grads in enumerate(grads_seq, start=1):
        for k in p:
            g = grads[k]
            m[k] = beta1 * m[k] + (1 - beta1) * g
            v[k] = beta2 * v[k] + (1 - beta2) * g * g
            m_hat = m[k] / (1 - beta1 ** t)
            v_hat = v[k] / (1 - beta2 ** t)
            p[k] = p[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


def test_adam_matches_reference_over_ten_steps():
    rng = RNG(14)
    init = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(4,))}
    store = ParameterStore()
    for k, val in init.items():
        store.add(k, val.copy())
    grads_seq = [{k: rng.normal(size=val.shape) for k, val in init.items()}
                 for _ in range(10)]
    for grads in grads_seq:
        for k in init:
            store[k].grad[...] = grads[k]
        adam_step(store, lr=1e-3)
    expect = _reference_adam(init, grads_seq, lr=1e-3)
    for k in init:
        np.testing.assert_allclose(store[k].data, expect[k], rtol=1e-12, atol=1e-12)


def test_adam_rejects_nonfinite_and_leaves_state_untouched():
    store = ParameterStore()
    w = store.add("w", np.ones(3))
    w.grad[...] = [1.0, np.nan, 0.0]
    before = w.data.copy()
    with pytest.raises(NonFiniteGradientError):
        adam_step(store, lr=0.1)
    np.testing.assert_array_equal(w.data, before)
    assert store.step_count == 0


def test_adam_zeroes_gradients_after_step():
    store = ParameterStore()
    w = store.add("w", np.ones(3))
    w.grad[...] = 1.0
    adam_step(store, lr=0.1)
    np.testing.assert_array_equal(w.grad, np.zeros(3))


def test_clip_global_norm_above_threshold():
    grads = [np.array([3.0, 0.0]), np.array([[0.0, 4.0]])]
    norm = clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    clipped = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    assert clipped == pytest.approx(1.0)
    np.testing.assert_allclose(grads[0], [0.6, 0.0])


def test_clip_global_norm_below_threshold_is_identity():
    grads = [np.array([0.3, 0.4])]
    norm = clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(0.5)
    np.testing.assert_allclose(grads[0], [0.3, 0.4])


# -- parameter store ---------------------------------------------------------

def test_duplicate_parameter_name_rejected():
    store = ParameterStore()
    store.add("w", np.ones(2))
    with pytest.raises(ValueError):
        store.add("w", np.ones(2))


def test_state_round_trip_preserves_adam_moments():
    rng = RNG(15)
    store = ParameterStore()
    store.add("w", rng.normal(size=(2, 2)))
    store["w"].grad[...] = rng.normal(size=(2, 2))
    adam_step(store, lr=0.01)
    arrays = {k: v.copy() for k, v in store.state_arrays().items()}

    other = ParameterStore()
    other.add("w", np.zeros((2, 2)))
    other.load_state_arrays(arrays)
    np.testing.assert_array_equal(other["w"].data, store["w"].data)
    np.testing.assert_array_equal(other.adam_m["w"], store.adam_m["w"])
    np.testing.assert_array_equal(other.adam_v["w"], store.adam_v["w"])
    assert other.step_count == 1

    # continuing from restored state reproduces the original trajectory
    g = rng.normal(size=(2, 2))
    store["w"].grad[...] = g
    other["w"].grad[...] = g
    adam_step(store, lr=0.01)
    adam_step(other, lr=0.01)
    np.testing.assert_array_equal(other["w"].data, store["w"].data)


def test_load_state_rejects_shape_mismatch():
    store = ParameterStore()
    store.add("w", np.ones((2, 2)))
    arrays = store.state_arrays()
    other = ParameterStore()
    other.add("w", np.ones((3, 3)))
    with pytest.raises(ValueError):
        other.load_state_arrays(arrays)


def test_uniform_fan_in_bounds():
    vals = uniform_fan_in(RNG(16), fan_in=25, shape=(1000,))
    assert np.all(np.abs(vals) <= 1.0 / 5.0 + 1e-12)
    assert vals.std() > 0.05


# -- checkpoint format -------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = RNG(17)
    arrays = {"param/w": rng.normal(size=(4, 3)),
              "meta/steps": np.array([123.0])}
    path = tmp_path / "net.ckpt"
    save_arrays(path, arrays)
    back = load_arrays(path)
    assert set(back) == set(arrays)
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])


def test_checkpoint_detects_corruption(tmp_path):
    path = tmp_path / "net.ckpt"
    save_arrays(path, {"w": np.ones(16)})
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF  # flip a byte inside the array payload
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_arrays(path)


def test_checkpoint_detects_truncation(tmp_path):
    path = tmp_path / "net.ckpt"
    save_arrays(path, {"w": np.ones(16)})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_arrays(path)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    import hashlib
    path = tmp_path / "net.ckpt"
    save_arrays(path, {"w": np.ones(4)})
    blob = bytearray(path.read_bytes()[:-32])
    blob[:6] = b"NOTMB\x00"  # valid hash, wrong magic
    path.write_bytes(bytes(blob) + hashlib.sha256(bytes(blob)).digest())
    with pytest.raises(CheckpointError, match="magic"):
        load_arrays(path)
