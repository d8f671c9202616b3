"""Channel affinity maps, two-branch fusion, and residual guidance."""

import numpy as np
import pytest

from camotta import affinity as af
from camotta import tensor as T
from camotta.tensor import Tensor


def naive_channel_nonlocal(x):
    c, h, w = x.shape
    xf = x.reshape(c, h * w)
    scores = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            scores[i, j] = float(np.dot(xf[i], xf[j])) / np.sqrt(h * w)
    a = np.zeros_like(scores)
    for i in range(c):
        e = np.exp(scores[i] - scores[i].max())
        a[i] = e / e.sum()
    x_hat = np.zeros_like(xf)
    for i in range(c):
        for j in range(c):
            x_hat[i] += a[i, j] * xf[j]
    return x_hat.reshape(c, h, w), a


class TestChannelNonlocal:
    def test_single_channel(self):
        x = np.random.default_rng(1).random((1, 4, 4))
        x_hat, a = af.channel_nonlocal(Tensor(x))
        np.testing.assert_allclose(a.data, [[1.0]], atol=1e-15)
        np.testing.assert_allclose(x_hat.data, x, atol=1e-12)

    def test_two_identical_channels(self):
        base = np.random.default_rng(2).random((4, 4))
        x = np.stack([base, base])
        x_hat, a = af.channel_nonlocal(Tensor(x))
        np.testing.assert_allclose(a.data, 0.5, atol=1e-12)
        np.testing.assert_allclose(x_hat.data[0], base, atol=1e-12)
        np.testing.assert_allclose(x_hat.data[1], base, atol=1e-12)

    def test_matches_loop_oracle(self):
        x = np.random.default_rng(3).normal(size=(3, 4, 4))
        x_hat, a = af.channel_nonlocal(Tensor(x))
        ref_hat, ref_a = naive_channel_nonlocal(x)
        np.testing.assert_allclose(a.data, ref_a, atol=1e-9)
        np.testing.assert_allclose(x_hat.data, ref_hat, atol=1e-9)

    def test_rows_stochastic(self):
        x = np.random.default_rng(4).normal(size=(5, 3, 3))
        _, a = af.channel_nonlocal(Tensor(x))
        np.testing.assert_allclose(a.data.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(a.data >= 0)


class TestFuseAffinities:
    def _affinities(self, seed, c=3):
        rng = np.random.default_rng(seed)
        a = rng.random((c, c))
        a /= a.sum(axis=1, keepdims=True)
        b = rng.random((c, c))
        b /= b.sum(axis=1, keepdims=True)
        return Tensor(a), Tensor(b)

    def test_identical_inputs_give_half_half(self):
        a, _ = self._affinities(5)
        params = af.init_fusion_params(3, requires_grad=False)
        fw = af.fuse_affinities(a, Tensor(a.data.copy()), 1.0, params)
        np.testing.assert_allclose(fw.w1.data, 0.5, atol=1e-12)
        np.testing.assert_allclose(fw.w2.data, 0.5, atol=1e-12)

    def test_keep_fraction_one_partition_of_unity(self):
        a, b = self._affinities(7)
        fw = af.fuse_affinities(a, b, 1.0, af.init_fusion_params(3, False))
        np.testing.assert_allclose(fw.w1.data + fw.w2.data, 1.0, atol=1e-9)

    def test_partition_of_unity_on_retained_only(self):
        a, b = self._affinities(9)
        fw = af.fuse_affinities(a, b, 0.5, af.init_fusion_params(3, False))
        s = fw.w1.data + fw.w2.data
        kept = fw.keep_mask == 1
        np.testing.assert_allclose(s[kept], 1.0, atol=1e-9)
        np.testing.assert_allclose(s[~kept], 0.0, atol=1e-15)
        assert abs(kept.sum() - round(0.5 * 9)) <= 1

    def test_rank_selection(self):
        # keep_fraction 0.5 over provisional maxima [0.1, 0.9, 0.4, 0.6]
        scores = np.array([0.1, 0.9, 0.4, 0.6])
        order = np.argsort(-scores, kind="stable")
        keep = np.zeros(4)
        keep[order[:2]] = 1
        np.testing.assert_array_equal(keep, [0, 1, 0, 1])

    def test_bad_keep_fraction(self):
        a, b = self._affinities(11)
        with pytest.raises(T.ContractError):
            af.fuse_affinities(a, b, 0.0, af.init_fusion_params(3, False))


class TestApplyGuidance:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(3, 4, 4)))
        x_hat, a = af.channel_nonlocal(x)
        zero = Tensor(np.zeros((3, 3)))
        fw = af.FusionWeights(zero, zero, 1.0, np.ones((3, 3)))
        out = af.apply_guidance(x, x_hat, a, a, fw)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_single_branch_case(self):
        rng = np.random.default_rng(17)
        x = Tensor(rng.normal(size=(2, 3, 3)))
        x_hat, a = af.channel_nonlocal(x)
        fw = af.FusionWeights(Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 2))),
                              1.0, np.ones((2, 2)))
        out = af.apply_guidance(x, x_hat, a, a, fw)
        expected = x.data + (a.data @ x_hat.data.reshape(2, 9)).reshape(2, 3, 3)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(19)
        c, h, w = 3, 2, 2
        x = rng.normal(size=(c, h, w))
        x_hat, a = af.channel_nonlocal(Tensor(x))
        a_rec = rng.random((c, c))
        fw = af.fuse_affinities(a, Tensor(a_rec), 0.7, af.init_fusion_params(c, False))
        out = af.apply_guidance(Tensor(x), x_hat, a, Tensor(a_rec), fw).data
        a_upd = fw.w1.data * a.data + fw.w2.data * a_rec
        ref = x.copy()
        for i in range(c):
            for j in range(c):
                ref[i] += a_upd[i, j] * x_hat.data[j]
        np.testing.assert_allclose(out, ref, atol=1e-9)


def test_permutation_equivariance():
    rng = np.random.default_rng(23)
    c = 4
    x = rng.normal(size=(c, 3, 3))
    perm = rng.permutation(c)
    x_hat, a = af.channel_nonlocal(Tensor(x))
    xp_hat, ap = af.channel_nonlocal(Tensor(x[perm]))
    np.testing.assert_allclose(ap.data, a.data[perm][:, perm], atol=1e-9)
    np.testing.assert_allclose(xp_hat.data, x_hat.data[perm], atol=1e-9)


def test_guidance_gradients():
    rng = np.random.default_rng(29)
    params = af.init_fusion_params(2, requires_grad=False)

    def f(x):
        x_hat, a = af.channel_nonlocal(x)
        fw = af.fuse_affinities(a, T.mul(a, 1.0), 1.0, params)
        out = af.apply_guidance(x, x_hat, a, a, fw)
        return T.tsum(T.square(out))

    assert T.grad_check(f, rng.normal(size=(2, 3, 3)), eps=1e-5) < 1e-3
