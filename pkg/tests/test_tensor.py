"""Autodiff primitives: value oracles, finite differences, optimizers, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from metacc import tensor as T
from metacc.tensor import Tape, Tensor, backward


def naive_conv2d(x, w, b, stride, padding):
    """Loop reference for cross-correlation; the oracle for the fast path."""
    bs, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((bs, f, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * sh:i * sh + kh, j * sw:j * sw + kw]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return out + b[None, :, None, None]


def fd_grad(make_loss, param: Tensor, idx, h=1e-5):
    flat = param.data.reshape(-1)
    old = flat[idx]
    flat[idx] = old + h
    up = make_loss().item()
    flat[idx] = old - h
    down = make_loss().item()
    flat[idx] = old
    return (up - down) / (2 * h)


def check_fd(make_loss, params, rng, coords_per_param=4):
    with Tape() as tape:
        loss = make_loss()
    backward(loss, tape)
    worst = 0.0
    for p in params:
        assert p.grad is not None and p.grad.shape == p.data.shape
        for _ in range(coords_per_param):
            idx = int(rng.integers(p.data.size))
            num = fd_grad(make_loss, p, idx)
            ana = p.grad.reshape(-1)[idx]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-4)
            worst = max(worst, rel)
    assert worst <= 1e-4, f"worst finite-difference rel err {worst:.2e}"


def test_conv2d_identity_kernel():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5, 4)))
    w = np.zeros((3, 3, 1, 1))
    for i in range(3):
        w[i, i, 0, 0] = 1.0
    out = T.conv2d(x, Tensor(w), Tensor(np.zeros(3)))
    assert np.allclose(out.data, x.data)


def test_conv2d_decoder_shape():
    x = Tensor(np.zeros((1, 1, 10, 2)))
    w = Tensor(np.zeros((64, 1, 3, 3)))
    out = T.conv2d(x, w, Tensor(np.zeros(64)), stride=(1, 2), padding=(1, 1))
    assert out.shape == (1, 64, 10, 1)


def test_conv2d_matches_naive_reference():
    rng = np.random.default_rng(1)
    cases = [
        ((2, 3, 7, 5), (4, 3, 3, 3), (1, 1), (1, 1)),
        ((1, 1, 10, 2), (8, 1, 3, 3), (1, 2), (1, 1)),
        ((3, 4, 6, 1), (5, 4, 3, 3), (1, 1), (1, 1)),  # thin-width fast path
        ((2, 2, 8, 4), (3, 2, 3, 3), (2, 2), (0, 0)),
    ]
    for xs, ws, stride, pad in cases:
        x = rng.normal(size=xs)
        w = rng.normal(size=ws)
        b = rng.normal(size=ws[0])
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
        ref = naive_conv2d(x, w, b, stride, pad)
        assert np.allclose(out.data, ref, atol=1e-12), (xs, ws, stride, pad)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 5, 3, 3))),
                 Tensor(np.zeros(3)))


def test_conv2d_finite_differences():
    rng = np.random.default_rng(2)
    for xs, ws, stride, pad in [
        ((2, 2, 6, 4), (3, 2, 3, 3), (1, 1), (1, 1)),
        ((2, 3, 5, 1), (4, 3, 3, 3), (1, 1), (1, 1)),  # thin-width fast path
        ((1, 1, 10, 2), (6, 1, 3, 3), (1, 2), (1, 1)),
    ]:
        x = Tensor(rng.normal(size=xs), requires_grad=True)
        w = Tensor(rng.normal(size=ws), requires_grad=True)
        b = Tensor(rng.normal(size=ws[0]), requires_grad=True)

        def make_loss():
            out = T.conv2d(x, w, b, stride, pad)
            return T.reduce_sum(T.mul(out, out))

        check_fd(make_loss, [x, w, b], rng)


def test_thin_path_side_columns_get_zero_gradient():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 3, 5, 1)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.conv2d(x, w, b, (1, 1), (1, 1)))
    backward(loss, tape)
    assert np.all(w.grad[:, :, :, 0] == 0.0)
    assert np.all(w.grad[:, :, :, 2] == 0.0)
    assert np.any(w.grad[:, :, :, 1] != 0.0)


def test_linear_relu_sigmoid_values():
    x = Tensor([[1.0, -2.0]])
    w = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([0.5, 0.5])
    out = T.linear(x, w, b)
    assert np.allclose(out.data, [[1.5, -1.5]])
    assert np.allclose(T.relu(out).data, [[1.5, 0.0]])
    assert T.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)


def test_bce_symmetric_point_and_stability():
    assert T.bce_with_logits(Tensor(0.0), Tensor(0.5)).item() == pytest.approx(np.log(2), abs=1e-9)
    big = T.bce_with_logits(Tensor([1e4, -1e4]), Tensor([1.0, 0.0]))
    assert np.isfinite(big.item())
    worst = T.bce_with_logits(Tensor([1e4, -1e4]), Tensor([0.0, 1.0]))
    assert np.isfinite(worst.item()) and worst.item() == pytest.approx(1e4, rel=1e-9)


def test_bce_rejects_bad_targets():
    with pytest.raises(ValueError):
        T.bce_with_logits(Tensor([0.0]), Tensor([1.5]))
    with pytest.raises(ValueError):
        T.bce_with_logits(Tensor([np.inf]), Tensor([0.5]))


def test_elementwise_and_reduction_finite_differences():
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)), requires_grad=True)
    c = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

    def make_loss():
        z = T.mul(T.add(a, b), T.sub(a, c))
        col = T.reduce_sum(z, axis=0)
        return T.reduce_sum(T.mul(col, col))

    check_fd(make_loss, [a, b, c], rng)


def test_matmul_transpose_reshape_finite_differences():
    rng = np.random.default_rng(5)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def make_loss():
        z = T.matmul(a, b)
        z = T.transpose(z, (1, 0))
        z = T.reshape(z, (6,))
        return T.reduce_sum(T.mul(z, z))

    check_fd(make_loss, [a, b], rng)


def test_sigmoid_bce_chain_finite_differences():
    rng = np.random.default_rng(6)
    z = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    t = Tensor(rng.random((5, 3)))

    def make_loss():
        return T.bce_with_logits(T.mul(z, z), t)

    check_fd(make_loss, [z], rng)


def test_backward_of_quadratic_is_2w():
    w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.mul(w, w))
    backward(loss, tape)
    assert np.allclose(w.grad, 2 * w.data)


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        out = T.mul(w, w)
    with pytest.raises(ValueError):
        backward(out, tape)


def test_grads_accumulate_across_reuse():
    w = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = T.add(T.mul(w, w), T.mul(Tensor([3.0]), w))  # w^2 + 3w
    backward(loss, tape)
    assert np.allclose(w.grad, [7.0])


def test_sgd_step_example():
    w = Tensor([1.0], requires_grad=True)
    w.grad = np.array([2.0])
    T.sgd_step([w], lr=0.1)
    assert np.allclose(w.data, [0.8])


def test_first_adam_step_moves_by_about_lr():
    w = Tensor([1.0, 1.0], requires_grad=True)
    w.grad = np.array([2.0, -0.003])
    before = w.data.copy()
    T.adam_step([w], lr=0.001)
    delta = w.data - before
    assert np.all(np.sign(delta) == [-1.0, 1.0])
    assert np.all(np.abs(delta) > 0)
    assert np.all(np.abs(delta) <= 0.001 + 1e-12)


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
        t = Tensor(rng.random((4, 2)))
        with Tape() as tape:
            loss = T.bce_with_logits(T.matmul(x, w), t)
        backward(loss, tape)
        return x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_no_tape_means_no_recording():
    w = Tensor([1.0], requires_grad=True)
    out = T.mul(w, w)
    assert out._tape is None
    with pytest.raises(RuntimeError):
        backward(out)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    arrays = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=(5,))}
    path = tmp_path / "ck.bin"
    T.save_checkpoint(path, arrays, meta={"note": 1})
    loaded, meta = T.load_checkpoint(path, with_meta=True)
    assert meta == {"note": 1}
    for k in arrays:
        assert np.array_equal(loaded[k], arrays[k])
    # byte-identical on re-save
    path2 = tmp_path / "ck2.bin"
    T.save_checkpoint(path2, arrays, meta={"note": 1})
    assert path.read_bytes() == path2.read_bytes()
