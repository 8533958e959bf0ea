"""Gradient checks for every autodiff op against central finite differences."""

import numpy as np
import pytest

from mwprank.model import autodiff as ad
from mwprank.model.autodiff import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        dn = f()
        flat[i] = orig
        gf[i] = (up - dn) / (2 * h)
    return g


def check(build, *shapes, seed=0, atol=1e-7):
    """build(*tensors) -> scalar Tensor; verifies every input's gradient."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [Tensor(a, needs_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for arr, tensor in zip(arrays, tensors):
        got = tensor.grad if tensor.grad is not None else np.zeros_like(arr)
        want = numeric_grad(lambda: float(build(*[Tensor(a) for a in arrays]).data), arr)
        np.testing.assert_allclose(got, want, atol=atol, rtol=1e-5)


class TestOps:
    def test_add_broadcast(self):
        check(lambda a, b: ad.tsum(ad.add(a, b)), (3, 4), (4,))

    def test_mul_broadcast(self):
        check(lambda a, b: ad.tsum(ad.mul(a, b)), (2, 3, 4), (3, 4))

    def test_matmul_plain(self):
        check(lambda a, b: ad.tsum(ad.matmul(a, b)), (3, 4), (4, 5))

    def test_matmul_batched_times_weight(self):
        check(lambda a, b: ad.tsum(ad.matmul(a, b)), (2, 3, 4), (4, 5))

    def test_matmul_batched_both(self):
        check(lambda a, b: ad.tsum(ad.matmul(a, b)), (2, 2, 3, 4), (2, 2, 4, 5))

    def test_reshape_swapaxes(self):
        check(lambda a: ad.tsum(ad.mul(ad.swapaxes(ad.reshape(a, (2, 3, 2)), 1, 2), 1.5)), (3, 4))

    def test_sum_axis_keepdims(self):
        check(lambda a: ad.tsum(ad.mul(ad.tsum(a, axis=1, keepdims=True), a)), (3, 4))

    def test_mean(self):
        check(lambda a: ad.tmean(ad.mul(a, a)), (5, 3))

    def test_exp_log(self):
        check(lambda a: ad.tsum(ad.log(ad.add(ad.exp(a), 2.0))), (4, 4))

    def test_tanh(self):
        check(lambda a: ad.tsum(ad.tanh(a)), (6,))

    def test_gelu(self):
        check(lambda a: ad.tsum(ad.gelu(a)), (10,))

    def test_softmax(self):
        check(lambda a: ad.tsum(ad.mul(ad.softmax(a, axis=-1), np.arange(5.0))), (3, 5))

    def test_log_softmax(self):
        check(lambda a: ad.tsum(ad.mul(ad.log_softmax(a, axis=-1), np.arange(5.0))), (3, 5))

    def test_layer_norm(self):
        check(
            lambda a, g, b: ad.tsum(ad.mul(ad.layer_norm(a, g, b), np.arange(6.0))),
            (4, 6),
            (6,),
            (6,),
        )

    def test_embedding(self):
        ids = np.array([[0, 2], [2, 1]])
        check(lambda w: ad.tsum(ad.mul(ad.embedding(w, ids), 2.0)), (3, 4))

    def test_gather_last(self):
        idx = np.array([[0, 2], [1, 1]])
        check(lambda a: ad.tsum(ad.gather_last(a, idx)), (2, 2, 3))

    def test_select_positions(self):
        pos = np.array([1, 0, 2])
        check(lambda a: ad.tsum(ad.mul(ad.select_positions(a, pos), np.arange(4.0))), (3, 3, 4))


class TestGraphMechanics:
    def test_no_grad_skips_recording(self):
        w = Tensor(np.ones((2, 2)), needs_grad=True)
        with ad.no_grad():
            out = ad.tsum(ad.matmul(w, w))
        assert out._parents == ()
        assert not out.needs_grad

    def test_gradient_accumulates_across_reuse(self):
        w = Tensor(np.array([2.0]), needs_grad=True)
        out = ad.tsum(ad.add(ad.mul(w, w), w))  # w^2 + w -> 2w + 1 = 5
        out.backward()
        np.testing.assert_allclose(w.grad, [5.0])

    def test_backward_requires_scalar(self):
        w = Tensor(np.ones(3), needs_grad=True)
        with pytest.raises(ValueError):
            ad.add(w, 1.0).backward()

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        s = ad.softmax(Tensor(rng.standard_normal((8, 11)) * 10), axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (s.data >= 0).all()

    def test_masked_softmax_ignores_masked_entries(self):
        logits = np.zeros((1, 4))
        bias = np.array([[0.0, -1e30, 0.0, -1e30]])
        s = ad.softmax(ad.add(Tensor(logits), bias), axis=-1)
        np.testing.assert_allclose(s.data, [[0.5, 0.0, 0.5, 0.0]], atol=1e-12)
