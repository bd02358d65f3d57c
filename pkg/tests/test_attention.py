import numpy as np
import pytest
from conftest import numeric_grad, rel_error
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from srgformer import autodiff as ad
from srgformer.attention import (
    AttentionParams,
    apply_global,
    fuse_structural,
    global_embedding,
    masked_attention,
    multi_head_attention,
)
from srgformer.autodiff import SparseMatrix, Tape
from srgformer.config import PRESETS
from srgformer.errors import ShapeError


def _identity_params(d):
    return AttentionParams([ad.constant(np.eye(d))], [ad.constant(np.eye(d))], [ad.constant(np.eye(d))])


def _random_params(seed, d=4, heads=2):
    return AttentionParams.init(np.random.default_rng(seed), d, heads)


def _brute_force(rows, cols, wq, wk, wv):
    """Per-element loop reference for single-head scaled dot-product attention."""
    q, k, v = rows @ wq, cols @ wk, cols @ wv
    dk = wq.shape[1]
    att = np.zeros((len(rows), len(cols)))
    for r in range(len(rows)):
        logits = [sum(q[r, t] * k[c, t] for t in range(dk)) / np.sqrt(dk) for c in range(len(cols))]
        m = max(logits)
        ex = [np.exp(x - m) for x in logits]
        for c in range(len(cols)):
            att[r, c] = ex[c] / sum(ex)
    out = np.zeros((len(rows), v.shape[1]))
    for r in range(len(rows)):
        for c in range(len(cols)):
            out[r] += att[r, c] * v[c]
    return att, out


class TestMultiHead:
    def test_identical_keys_give_uniform_weights(self):
        rows = ad.constant([[1.0, 2.0], [-1.0, 0.5]])
        cols = ad.constant([[0.3, 0.3], [0.3, 0.3], [0.3, 0.3]])
        att, res = multi_head_attention(rows, cols, _identity_params(2))
        np.testing.assert_allclose(att.value, 1 / 3, atol=1e-15)
        np.testing.assert_allclose(res.value, [[0.3, 0.3], [0.3, 0.3]], atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        rows, cols = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))
        w = [rng.normal(size=(4, 4)) for _ in range(3)]
        params = AttentionParams([ad.constant(w[0])], [ad.constant(w[1])], [ad.constant(w[2])])
        att, res = multi_head_attention(ad.constant(rows), ad.constant(cols), params)
        ref_att, ref_out = _brute_force(rows, cols, *w)
        np.testing.assert_allclose(att.value, ref_att, atol=1e-10)
        np.testing.assert_allclose(res.value, ref_out, atol=1e-10)

    def test_heads_average_and_concatenate(self):
        rng = np.random.default_rng(7)
        rows, cols = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        params = _random_params(7)
        att, res = multi_head_attention(ad.constant(rows), ad.constant(cols), params)
        per_head = [
            _brute_force(rows, cols, q.value, k.value, v.value) for q, k, v in zip(params.query, params.key, params.value)
        ]
        np.testing.assert_allclose(att.value, (per_head[0][0] + per_head[1][0]) / 2, atol=1e-12)
        np.testing.assert_allclose(res.value, np.hstack([per_head[0][1], per_head[1][1]]), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), arrays(np.float64, (5, 4), elements=st.floats(-5, 5)))
    def test_rows_stochastic(self, rows, cols):
        att, _ = multi_head_attention(ad.constant(rows), ad.constant(cols), _random_params(0))
        np.testing.assert_allclose(att.value.sum(axis=1), 1.0, atol=1e-9)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        rows, cols = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        params = _random_params(1)
        att, res = multi_head_attention(ad.constant(rows), ad.constant(cols), params)
        att_p, res_p = multi_head_attention(ad.constant(rows), ad.constant(cols[perm]), params)
        np.testing.assert_allclose(att_p.value, att.value[:, perm], atol=1e-12)
        np.testing.assert_allclose(res_p.value, res.value, atol=1e-12)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(2)
        cols = rng.normal(size=(6, 3))
        _, res = multi_head_attention(ad.constant(rng.normal(size=(4, 3))), ad.constant(cols), _identity_params(3))
        assert (res.value >= cols.min(axis=0) - 1e-12).all()
        assert (res.value <= cols.max(axis=0) + 1e-12).all()

    def test_indivisible_dim(self):
        with pytest.raises(ShapeError):
            AttentionParams.init(np.random.default_rng(0), 5, 2)
        with pytest.raises(ShapeError):
            multi_head_attention(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 4))), _random_params(0))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        rows, cols = ad.parameter(rng.normal(size=(3, 4))), ad.parameter(rng.normal(size=(4, 4)))
        params = _random_params(3)
        w = rng.normal(size=(3, 4))

        def loss():
            att, res = multi_head_attention(rows, cols, params)
            return ad.add(ad.sum(ad.mul(res, ad.constant(w))), ad.squared_norm(att))

        with Tape() as tape:
            out = loss()
        grads = tape.backward(out)
        for t in [rows, cols, params.query[0], params.key[1], params.value[0]]:
            assert rel_error(grads[t], numeric_grad(lambda: loss().value, t)) < 1e-4


class TestMasked:
    def test_matches_dense_with_full_mask(self):
        rng = np.random.default_rng(0)
        rows, cols = ad.constant(rng.normal(size=(3, 4))), ad.constant(rng.normal(size=(5, 4)))
        params = _random_params(0)
        dense, _ = multi_head_attention(rows, cols, params)
        edge = masked_attention(rows, cols, params, SparseMatrix.from_dense(np.ones((3, 5))))
        got = np.zeros((3, 5))
        got[edge.rows, edge.cols] = edge.weights.value[:, 0]
        np.testing.assert_allclose(got, dense.value, atol=1e-12)

    def test_restricted_rows_renormalize(self):
        rng = np.random.default_rng(1)
        rows, cols = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        mask = np.array([[1, 0, 1, 0, 0], [0, 0, 0, 0, 0], [1, 1, 1, 1, 1]], dtype=float)
        params = _random_params(1)
        edge = masked_attention(ad.constant(rows), ad.constant(cols), params, SparseMatrix.from_dense(mask))
        got = np.zeros((3, 5))
        got[edge.rows, edge.cols] = edge.weights.value[:, 0]
        np.testing.assert_allclose(got.sum(axis=1), [1.0, 0.0, 1.0], atol=1e-12)
        # masked-out logits behave like -inf in the dense computation
        heads = []
        for q, k in zip(params.query, params.key):
            logits = (rows @ q.value) @ (cols @ k.value).T / np.sqrt(2)
            logits = np.where(mask > 0, logits, -np.inf)
            with np.errstate(invalid="ignore"):
                e = np.exp(logits - logits.max(axis=1, keepdims=True))
                heads.append(np.nan_to_num(e / e.sum(axis=1, keepdims=True)))
        np.testing.assert_allclose(got, np.mean(heads, axis=0), atol=1e-12)

    def test_mask_shape_checked(self):
        with pytest.raises(ShapeError):
            masked_attention(
                ad.constant(np.ones((2, 4))), ad.constant(np.ones((3, 4))), _random_params(0), SparseMatrix.from_dense(np.ones((3, 2)))
            )


class TestApplyGlobal:
    def test_identity_weights(self):
        collab = ad.constant(np.arange(8.0).reshape(4, 2))
        out = apply_global(ad.constant(np.eye(2)), ad.constant(np.eye(2)), collab, 2).value
        np.testing.assert_array_equal(out[:2], collab.value[2:])
        np.testing.assert_array_equal(out[2:], collab.value[:2])

    def test_uniform_weights_give_means(self):
        rng = np.random.default_rng(0)
        c = rng.normal(size=(5, 3))
        out = apply_global(ad.constant(np.full((2, 3), 1 / 3)), ad.constant(np.full((3, 2), 0.5)), ad.constant(c), 2).value
        np.testing.assert_allclose(out[:2], np.tile(c[2:].mean(axis=0), (2, 1)), atol=1e-15)
        np.testing.assert_allclose(out[2:], np.tile(c[:2].mean(axis=0), (3, 1)), atol=1e-15)

    def test_zero_collab(self):
        out = apply_global(ad.constant(np.full((2, 3), 1 / 3)), ad.constant(np.full((3, 2), 0.5)), ad.constant(np.zeros((5, 2))), 2)
        assert not out.value.any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_global(ad.constant(np.ones((2, 4))), ad.constant(np.ones((3, 2))), ad.constant(np.zeros((5, 2))), 2)

    def test_masked_equals_dense_on_complete_graph(self):
        rng = np.random.default_rng(5)
        cid, c = ad.constant(rng.normal(size=(5, 4))), ad.constant(rng.normal(size=(5, 4)))
        params = _random_params(5)
        dense = global_embedding(cid, c, params, 2).value
        masked = global_embedding(cid, c, params, 2, SparseMatrix.from_dense(np.ones((2, 3)))).value
        np.testing.assert_allclose(masked, dense, atol=1e-12)

    def test_masked_gradients(self):
        rng = np.random.default_rng(6)
        cid, c = ad.parameter(rng.normal(size=(5, 4))), ad.parameter(rng.normal(size=(5, 4)))
        params = _random_params(6)
        graph = SparseMatrix.from_dense([[1.0, 0, 1], [0, 1, 1]])
        w = rng.normal(size=(5, 4))

        def loss():
            return ad.sum(ad.mul(global_embedding(cid, c, params, 2, graph), ad.constant(w)))

        with Tape() as tape:
            out = loss()
        grads = tape.backward(out)
        for t in (cid, c, params.query[0], params.key[1]):
            assert rel_error(grads[t], numeric_grad(lambda: loss().value, t)) < 1e-4


class TestFuseStructural:
    def _pair(self):
        rng = np.random.default_rng(0)
        return ad.constant(rng.normal(size=(4, 3))), ad.constant(rng.normal(size=(4, 3)))

    def test_alpha_only(self):
        g, loc = self._pair()
        expected = g.value / np.linalg.norm(g.value, axis=1, keepdims=True)
        np.testing.assert_allclose(fuse_structural(g, loc, 1.0, 0.0).value, expected, atol=1e-15)

    def test_both_zero(self):
        g, loc = self._pair()
        assert not fuse_structural(g, loc, 0.0, 0.0).value.any()

    def test_baby_weights(self):
        g, loc = self._pair()
        a, b = PRESETS["baby"]["alpha"], PRESETS["baby"]["beta"]
        assert (a, b) == (0.1, 0.3)
        ng = g.value / np.linalg.norm(g.value, axis=1, keepdims=True)
        nl = loc.value / np.linalg.norm(loc.value, axis=1, keepdims=True)
        np.testing.assert_allclose(fuse_structural(g, loc, a, b).value, 0.1 * ng + 0.3 * nl, atol=1e-15)

    def test_absent_terms(self):
        g, _ = self._pair()
        assert fuse_structural(None, None, 0.5, 0.5) is None
        np.testing.assert_allclose(fuse_structural(g, None, 0.5, 0.5).value, fuse_structural(g, g, 0.5, 0.0).value)

    def test_validation(self):
        g, loc = self._pair()
        with pytest.raises(ValueError):
            fuse_structural(g, loc, 1.5, 0.0)
        with pytest.raises(ShapeError):
            fuse_structural(g, ad.constant(np.ones((2, 3))), 0.5, 0.5)

    def test_gradients(self):
        rng = np.random.default_rng(9)
        g, loc = ad.parameter(rng.normal(size=(3, 4))), ad.parameter(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))

        def loss():
            return ad.sum(ad.mul(fuse_structural(g, loc, 0.1, 0.3), ad.constant(w)))

        with Tape() as tape:
            out = loss()
        grads = tape.backward(out)
        for t in (g, loc):
            assert rel_error(grads[t], numeric_grad(lambda: loss().value, t)) < 1e-4


def test_logit_shift_invariance():
    # shifting every key by s adds q.s to each logit of a query row
    rows = ad.constant([[1.0, 0.0], [0.5, -2.0]])
    cols = np.array([[0.0, 1.0], [2.0, 1.0], [-1.0, 1.0]])
    base, _ = multi_head_attention(rows, ad.constant(cols), _identity_params(2))
    shifted, _ = multi_head_attention(rows, ad.constant(cols + [5.0, -3.0]), _identity_params(2))
    np.testing.assert_allclose(shifted.value, base.value, atol=1e-12)
    logits = np.array([[0.2, -1.0, 3.0]])
    np.testing.assert_allclose(
        ad.softmax_rows(ad.constant(logits + 7.5)).value, ad.softmax_rows(ad.constant(logits)).value, atol=1e-15
    )
