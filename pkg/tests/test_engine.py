"""Autodiff engine: values against numpy, gradients against central
finite differences on the real and imaginary parts separately."""

from __future__ import annotations

import numpy as np
import pytest

from rtfrecon.cvnn import engine
from helpers import check_gradients

DT = np.complex128


def _t(rng, shape, requires_grad=True, name="x"):
    vals = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return engine.ComplexTensor(vals.astype(DT), requires_grad=requires_grad,
                                name=name)


def _scalar_loss(t):
    # |.| then sum: real-valued scalar usable as a generic test loss
    return engine.reduce_sum(engine.absolute(t))


def test_forward_values_match_numpy():
    rng = np.random.default_rng(0)
    a = _t(rng, (3, 4))
    b = _t(rng, (3, 4))
    assert np.allclose(engine.add(a, b).values, a.values + b.values)
    assert np.allclose(engine.sub(a, b).values, a.values - b.values)
    assert np.allclose(engine.mul(a, b).values, a.values * b.values)
    assert np.allclose(engine.div(a, b).values, a.values / b.values)
    assert np.allclose(engine.absolute(a).values, np.abs(a.values))
    assert np.allclose(engine.real(a).values, a.values.real)
    assert np.allclose(engine.imag(a).values, a.values.imag)
    assert np.allclose(engine.reduce_sum(a).values, a.values.sum())
    assert np.allclose(engine.reduce_mean(a, axis=0).values, a.values.mean(axis=0))


def test_backward_requires_scalar():
    rng = np.random.default_rng(1)
    a = _t(rng, (2, 2))
    with pytest.raises(ValueError):
        engine.add(a, a).backward()


def test_mul_gradient_closed_form():
    # L = Re(sum(a * b)): dL/d(a) as a real pair is conj(b)
    rng = np.random.default_rng(2)
    a = _t(rng, (5,))
    b = _t(rng, (5,))
    loss = engine.real(engine.reduce_sum(engine.mul(a, b)))
    loss.backward()
    assert np.allclose(a.grad, np.conj(b.values), atol=1e-12)
    assert np.allclose(b.grad, np.conj(a.values), atol=1e-12)


def test_abs_gradient_closed_form_and_origin_subgradient():
    vals = np.array([3 + 4j, 0.0 + 0.0j, -2.0 + 0j], dtype=DT)
    a = engine.ComplexTensor(vals, requires_grad=True)
    engine.reduce_sum(engine.absolute(a)).backward()
    # d|z| as a real pair is z/|z|; zero residual contributes zero
    assert np.allclose(a.grad[0], (3 + 4j) / 5)
    assert a.grad[1] == 0
    assert np.allclose(a.grad[2], -1.0)


def test_l1_loss_value_and_gradient():
    rng = np.random.default_rng(3)
    est = _t(rng, (4, 3))
    tgt = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
    loss = engine.l1_loss(est, tgt)
    assert np.allclose(loss.values, np.abs(est.values - tgt).sum())
    loss.backward()
    resid = est.values - tgt
    assert np.allclose(est.grad, resid / np.abs(resid), atol=1e-12)


def test_l1_loss_zero_residual_gradient_is_zero():
    vals = (np.arange(6) + 1j * np.arange(6)).reshape(2, 3).astype(DT)
    est = engine.ComplexTensor(vals, requires_grad=True)
    loss = engine.l1_loss(est, vals.copy())
    assert loss.values == 0
    loss.backward()
    assert np.all(est.grad == 0)


def test_gradient_accumulates_until_zeroed():
    rng = np.random.default_rng(4)
    a = _t(rng, (3,))
    _scalar_loss(a).backward()
    g1 = a.grad.copy()
    _scalar_loss(a).backward()
    assert np.allclose(a.grad, 2 * g1)
    a.grad = None
    _scalar_loss(a).backward()
    assert np.allclose(a.grad, g1)


def test_reused_tensor_accumulates_within_graph():
    rng = np.random.default_rng(5)
    a = _t(rng, (3,))
    loss = engine.real(engine.reduce_sum(engine.add(engine.mul(a, a), a)))
    loss.backward()
    # d Re(sum(a^2 + a)) real-pair gradient: conj(2a) + 1
    assert np.allclose(a.grad, np.conj(2 * a.values) + 1, atol=1e-12)


def test_no_grad_builds_no_tape():
    rng = np.random.default_rng(6)
    a = _t(rng, (3,))
    with engine.no_grad():
        out = engine.mul(a, a)
    assert out._backward is None and out._parents == ()


def test_broadcasting_gradients():
    rng = np.random.default_rng(7)
    a = _t(rng, (4, 3), name="a")
    b = _t(rng, (3,), name="b")

    def build():
        return _scalar_loss(engine.add(engine.mul(a, b), b))

    check_gradients(build, {"a": a, "b": b}, np.random.default_rng(8),
                    n_samples=24)


def test_elementwise_op_gradients_fd():
    rng = np.random.default_rng(9)
    a = _t(rng, (3, 4), name="a")
    b = _t(rng, (3, 4), name="b")

    def build():
        u = engine.div(a, engine.add(engine.absolute(b), 0.5))
        v = engine.mul(engine.sub(u, b), engine.mul(a, 0.3 + 0.7j))
        w = engine.add(engine.real(v), engine.mul(engine.imag(v), 0.25))
        return engine.reduce_sum(engine.absolute(engine.add(w, u)))

    check_gradients(build, {"a": a, "b": b}, np.random.default_rng(10),
                    n_samples=40)


def test_sqrt_gradient_fd():
    rng = np.random.default_rng(11)
    # keep away from the branch cut on the negative real axis
    vals = rng.uniform(0.5, 2.0, (4,)) + 1j * rng.uniform(0.5, 2.0, (4,))
    a = engine.ComplexTensor(vals.astype(DT), requires_grad=True, name="a")

    def build():
        return _scalar_loss(engine.sqrt(a))

    check_gradients(build, {"a": a}, np.random.default_rng(12), n_samples=8)


def test_reduce_and_slice_gradients_fd():
    rng = np.random.default_rng(13)
    a = _t(rng, (2, 3, 4, 6), name="a")

    def build():
        s = engine.reduce_mean(a, axis=(0, 1, 2), keepdims=True)
        centred = engine.sub(a, s)
        sliced = engine.channel_slice(centred, 1, 4)
        return _scalar_loss(sliced)

    check_gradients(build, {"a": a}, np.random.default_rng(14), n_samples=24)


def test_concat_gradients_fd():
    rng = np.random.default_rng(15)
    a = _t(rng, (2, 2, 2, 3), name="a")
    b = _t(rng, (2, 2, 2, 2), name="b")

    def build():
        return _scalar_loss(engine.concat([a, b], axis=3))

    check_gradients(build, {"a": a, "b": b}, np.random.default_rng(16),
                    n_samples=20)


def test_upsample_values_and_gradients():
    rng = np.random.default_rng(17)
    a = _t(rng, (1, 2, 2, 2), name="a")
    up = engine.upsample2x(a)
    assert up.values.shape == (1, 4, 4, 2)
    assert np.all(up.values[0, 0, 0] == a.values[0, 0, 0])
    assert np.all(up.values[0, 1, 1] == a.values[0, 0, 0])
    assert np.all(up.values[0, 3, 2] == a.values[0, 1, 1])

    def build():
        return _scalar_loss(engine.upsample2x(a))

    check_gradients(build, {"a": a}, np.random.default_rng(18), n_samples=16)


def test_linear_ops_phase_equivariant():
    rng = np.random.default_rng(19)
    a = _t(rng, (1, 4, 4, 3), requires_grad=False)
    w = _t(rng, (3, 3, 3, 2), requires_grad=False)
    phase = np.exp(1j * 0.73)
    rotated = engine.ComplexTensor(a.values * phase)
    base = engine.conv2d(a, w, stride=(1, 1)).values
    rot = engine.conv2d(rotated, w, stride=(1, 1)).values
    assert np.allclose(rot, base * phase, atol=1e-12)
    assert np.allclose(engine.upsample2x(rotated).values,
                       engine.upsample2x(a).values * phase, atol=1e-12)


def test_debug_mode_flags_nonfinite():
    engine.set_debug(True)
    try:
        a = engine.ComplexTensor(np.array([1.0 + 0j]), requires_grad=True)
        b = engine.ComplexTensor(np.array([0.0 + 0j]), requires_grad=True)
        with pytest.raises(Exception), np.errstate(all="ignore"):
            engine.div(a, b)
    finally:
        engine.set_debug(False)
