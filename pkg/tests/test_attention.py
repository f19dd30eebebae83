import math

import numpy as np
import pytest

from dimattn import attention
from dimattn.opcount import counting

# Shared fixture from the dimension-wise walkthrough:
#   S = [[1,2],[3,4]], V = [[1,1],[2,2]], f = none
S_FIX = np.array([[1.0, 2.0], [3.0, 4.0]])
V_FIX = np.array([[1.0, 1.0], [2.0, 2.0]])


def loop_token_attention(q, k, v):
    """Literal two-loop evaluation of softmax(QK^T/sqrt(d)) V."""
    n, d = q.shape
    out = np.zeros_like(v)
    for i in range(n):
        scores = np.array([q[i] @ k[j] / math.sqrt(d) for j in range(n)])
        scores -= scores.max()
        w = np.exp(scores)
        w /= w.sum()
        for j in range(n):
            out[i] += w[j] * v[j]
    return out


class TestTokenAttention:
    def test_single_token_returns_value(self, rng):
        q, k, v = (rng.standard_normal((1, 4)) for _ in range(3))
        assert np.allclose(attention.token_attention(q, k, v), v, atol=1e-15)

    def test_zero_keys_average_values(self, rng):
        q = rng.standard_normal((5, 3))
        v = rng.standard_normal((5, 3))
        out = attention.token_attention(q, np.zeros((5, 3)), v)
        assert np.allclose(out, np.tile(v.mean(axis=0), (5, 1)), atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        q, k, v = (rng.standard_normal((3, 2)) for _ in range(3))
        assert np.allclose(attention.token_attention(q, k, v),
                           loop_token_attention(q, k, v), atol=1e-12)

    def test_row_blocked_equals_full(self, rng):
        q, k, v = (rng.standard_normal((13, 4)) for _ in range(3))
        full = attention.token_attention(q, k, v)
        blocked = attention.token_attention(q, k, v, row_block=5)
        assert np.abs(full - blocked).max() <= 1e-12

    def test_causal_first_row_is_value(self, rng):
        q, k, v = (rng.standard_normal((4, 3)) for _ in range(3))
        out = attention.token_attention(q, k, v, causal=True)
        assert np.allclose(out[0], v[0], atol=1e-15)

    def test_softmax_rows_sum_to_one_via_uniform_values(self, rng):
        # with V = all-ones, output rows are exactly the softmax row sums
        q, k = (rng.standard_normal((6, 3)) for _ in range(2))
        out = attention.token_attention(q, k, np.ones((6, 3)))
        assert np.abs(out - 1.0).max() <= 1e-12


class TestMultiHeadBaseline:
    def test_single_head_identity_projections(self, rng):
        x = rng.standard_normal((4, 3))
        params = attention.MultiHeadParams(
            wq=[np.eye(3)], wk=[np.eye(3)], wv=[np.eye(3)], wo=np.eye(3))
        assert np.allclose(attention.multi_head_baseline(x, params),
                           attention.token_attention(x, x, x), atol=1e-12)

    def test_zero_output_projection(self, rng):
        x = rng.standard_normal((4, 4))
        params = attention.MultiHeadParams(
            wq=[rng.standard_normal((4, 2)) for _ in range(2)],
            wk=[rng.standard_normal((4, 2)) for _ in range(2)],
            wv=[rng.standard_normal((4, 2)) for _ in range(2)],
            wo=np.zeros((4, 4)))
        assert not attention.multi_head_baseline(x, params).any()

    def test_two_heads_match_loop_oracle(self, rng):
        x = rng.standard_normal((3, 4))
        wq = [rng.standard_normal((4, 2)) for _ in range(2)]
        wk = [rng.standard_normal((4, 2)) for _ in range(2)]
        wv = [rng.standard_normal((4, 2)) for _ in range(2)]
        wo = rng.standard_normal((4, 4))
        params = attention.MultiHeadParams(wq=wq, wk=wk, wv=wv, wo=wo)
        heads = [loop_token_attention(x @ wq[i], x @ wk[i], x @ wv[i])
                 for i in range(2)]
        expected = np.concatenate(heads, axis=1) @ wo
        assert np.allclose(attention.multi_head_baseline(x, params), expected,
                           atol=1e-12)

    def test_divisibility_error(self, rng):
        x = rng.standard_normal((3, 5))
        params = attention.MultiHeadParams(
            wq=[rng.standard_normal((5, 2))] * 2,
            wk=[rng.standard_normal((5, 2))] * 2,
            wv=[rng.standard_normal((5, 2))] * 2,
            wo=rng.standard_normal((4, 5)))
        with pytest.raises(ValueError, match="heads"):
            attention.multi_head_baseline(x, params)


class TestDimScore:
    def test_identity_query(self):
        k = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(attention.dim_score(np.eye(2), k), k)

    def test_double_loop_oracle(self):
        q = np.array([[1.0, 2.0], [3.0, 4.0]])
        k = np.array([[5.0, 6.0], [7.0, 8.0]])
        expected = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                expected[i, j] = sum(q[n, i] * k[n, j] for n in range(2))
        assert np.array_equal(expected, np.array([[26.0, 30.0], [38.0, 44.0]]))
        assert np.allclose(attention.dim_score(q, k), expected, atol=1e-12)

    def test_orthogonal_columns_score_zero(self):
        q = np.array([[1.0], [-1.0]])
        k = np.array([[1.0], [1.0]])
        assert attention.dim_score(q, k)[0, 0] == 0.0

    def test_permutation_exact_on_integer_inputs(self, rng):
        # exact in exact arithmetic; integer-valued f64 keeps it exact
        q = rng.integers(-4, 5, (12, 5)).astype(float)
        k = rng.integers(-4, 5, (12, 5)).astype(float)
        perm = rng.permutation(12)
        assert np.array_equal(attention.dim_score(q, k),
                              attention.dim_score(q[perm], k[perm]))


class TestCovarianceIdentity:
    def test_identity_coefficients_give_gram_matrix(self, rng):
        h = rng.standard_normal((8, 3))
        h -= h.mean(axis=0)
        assert attention.covariance_identity_check(h, np.eye(3), np.eye(3)) == 0.0

    def test_random_coefficients(self, rng):
        h = rng.standard_normal((16, 4))
        h -= h.mean(axis=0)
        h /= h.std(axis=0)
        h -= h.mean(axis=0)
        wq = rng.standard_normal((4, 4))
        wk = rng.standard_normal((4, 4))
        assert attention.covariance_identity_check(h, wq, wk) <= 1e-10

    def test_constant_column_zeroes_out(self, rng):
        h = rng.standard_normal((10, 3))
        h[:, 1] = 4.2
        h -= h.mean(axis=0)
        gram = h.T @ h
        assert np.allclose(gram[1, :], 0.0, atol=1e-12)
        assert np.allclose(gram[:, 1], 0.0, atol=1e-12)

    def test_uncentered_rejected(self, rng):
        h = rng.standard_normal((6, 3)) + 5.0
        with pytest.raises(ValueError, match="centered"):
            attention.covariance_identity_check(h, np.eye(3), np.eye(3))


class TestKrTensor:
    def test_fixture(self):
        x = attention.kr_tensor(S_FIX, V_FIX, "none")
        assert np.array_equal(x[0], np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert np.array_equal(x[1], np.array([[2.0, 4.0], [6.0, 8.0]]))

    def test_zero_values(self):
        assert not attention.kr_tensor(S_FIX, np.zeros((3, 2)), "none").any()

    def test_unit_values_absorb_scores(self):
        x = attention.kr_tensor(S_FIX, np.ones((1, 2)), "none")
        assert np.array_equal(x[0], S_FIX)

    def test_slices_are_outer_products(self, rng):
        # slice [:, :, k] is the outer product of f(S) column k with V column k
        s = rng.standard_normal((3, 3))
        v = rng.standard_normal((5, 3))
        x = attention.kr_tensor(s, v, "none")
        for k in range(3):
            assert np.allclose(x[:, :, k], np.outer(v[:, k], s[:, k]), atol=1e-15)


class TestRepresentations:
    def test_explicit_fixture(self):
        x = attention.kr_tensor(S_FIX, V_FIX, "none")
        assert np.array_equal(attention.explicit_rep(x),
                              np.array([[4.0, 6.0], [8.0, 12.0]]))

    def test_explicit_column_softmax_recovers_values(self, rng):
        s = rng.standard_normal((4, 4))
        v = rng.standard_normal((6, 4))
        x = attention.kr_tensor(s, v, "softmax_cols_over_j")
        assert np.abs(attention.explicit_rep(x) - v).max() <= 1e-12

    def test_explicit_zero(self):
        assert not attention.explicit_rep(np.zeros((2, 3, 3))).any()

    def test_implicit_fixture(self):
        x = attention.kr_tensor(S_FIX, V_FIX, "none")
        assert np.array_equal(attention.implicit_rep(x),
                              np.array([[3.0, 7.0], [6.0, 14.0]]))

    def test_implicit_equals_value_times_scores(self, rng):
        s = rng.standard_normal((3, 3))
        v = rng.standard_normal((7, 3))
        for mode in attention.NORM_MODES:
            fs = attention.normalize_scores(s, mode, 7)
            x = attention.kr_tensor(s, v, mode)
            assert np.abs(attention.implicit_rep(x) - v @ fs.T).max() <= 1e-12

    def test_implicit_scaled_identity_scores(self, rng):
        v = rng.standard_normal((4, 3))
        x = attention.kr_tensor(2.5 * np.eye(3), v, "none")
        assert np.allclose(attention.implicit_rep(x), 2.5 * v, atol=1e-15)


class TestConvExtract:
    def test_all_ones_filter_is_implicit_rep(self, rng):
        x = rng.standard_normal((4, 3, 3))
        assert np.array_equal(attention.conv_extract(x, np.ones((3, 3))),
                              attention.implicit_rep(x))

    def test_identity_filter_picks_diagonal(self):
        x = attention.kr_tensor(S_FIX, V_FIX, "none")
        assert np.array_equal(attention.conv_extract(x, np.eye(2)),
                              np.array([[1.0, 4.0], [2.0, 8.0]]))

    def test_zero_filter(self, rng):
        x = rng.standard_normal((4, 3, 3))
        assert not attention.conv_extract(x, np.zeros((3, 3))).any()


class TestFactoredPath:
    def test_fixture_identity_filter(self):
        q = np.eye(2)  # makes S = K exactly
        out = attention.dim_attention_factored(q, S_FIX, V_FIX, np.eye(2), "none")
        assert np.array_equal(out, np.array([[1.0, 4.0], [2.0, 8.0]]))

    def test_fixture_ones_filter_matches_implicit(self):
        q = np.eye(2)
        out = attention.dim_attention_factored(q, S_FIX, V_FIX, np.ones((2, 2)), "none")
        assert np.array_equal(out, np.array([[3.0, 7.0], [6.0, 14.0]]))

    def test_zero_values(self, rng):
        q, k = (rng.standard_normal((4, 3)) for _ in range(2))
        w = rng.standard_normal((3, 3))
        assert not attention.dim_attention_factored(q, k, np.zeros((4, 3)), w).any()

    def test_equivalence_with_materialized(self, rng):
        for case in range(40):
            n = int(rng.integers(1, 65))
            d = int(rng.integers(1, 17))
            q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
            w = rng.standard_normal((d, d))
            mode = attention.NORM_MODES[case % 4]
            lit = attention.dim_attention_materialized(q, k, v, w, mode)
            fac = attention.dim_attention_factored(q, k, v, w, mode)
            assert np.abs(lit - fac).max() <= 1e-10

    def test_linear_cost_in_n(self, rng):
        d = 5
        counts = {}
        for n in (16, 32, 64):
            q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
            w = rng.standard_normal((d, d))
            with counting() as tally:
                attention.dim_attention_factored(q, k, v, w)
            counts[n] = tally.total
        assert counts[64] - counts[32] == 2 * (counts[32] - counts[16])


class TestMultiConvBlock:
    def test_degenerate_matches_factored(self, rng):
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 3))
        params = attention.MultiConvParams(
            wq=[np.eye(3)], wk=[np.eye(3)], wv=[np.eye(3)],
            filters=[[w]], wo=np.eye(3))
        out = attention.multi_conv_block(x, params, "softmax_rows_over_k")
        expected = attention.dim_attention_factored(x, x, x, w, "softmax_rows_over_k")
        assert np.abs(out - expected).max() <= 1e-12

    def test_duplicate_filters_duplicate_columns(self, rng):
        x = rng.standard_normal((5, 2))
        w = rng.standard_normal((2, 2))
        params = attention.MultiConvParams(
            wq=[rng.standard_normal((2, 2))], wk=[rng.standard_normal((2, 2))],
            wv=[rng.standard_normal((2, 2))],
            filters=[[w] * 8], wo=np.eye(16))
        out = attention.multi_conv_block(x, params, "none")
        for c in range(1, 8):
            assert np.array_equal(out[:, :2], out[:, 2 * c: 2 * c + 2])

    def test_matches_equation_loop_oracle(self, rng):
        n, dm, d, c = 4, 4, 4, 2
        x = rng.standard_normal((n, dm))
        wq = rng.standard_normal((dm, d))
        wk = rng.standard_normal((dm, d))
        wv = rng.standard_normal((dm, d))
        filters = [rng.standard_normal((d, d)) for _ in range(c)]
        wo = rng.standard_normal((c * d, dm))
        params = attention.MultiConvParams(
            wq=[wq], wk=[wk], wv=[wv], filters=[filters], wo=wo)
        out = attention.multi_conv_block(x, params, "softmax_rows_over_k")

        q, k, v = x @ wq, x @ wk, x @ wv
        s = np.zeros((d, d))
        for i in range(d):
            for j in range(d):
                s[i, j] = sum(q[nn, i] * k[nn, j] for nn in range(n))
        fs = attention.normalize_scores(s, "softmax_rows_over_k", n)
        cols = []
        for w in filters:
            tensor3 = np.zeros((n, d, d))
            for i in range(n):
                for j in range(d):
                    for kk in range(d):
                        tensor3[i, j, kk] = fs[j, kk] * v[i, kk]
            o = np.zeros((n, d))
            for i in range(n):
                for j in range(d):
                    o[i, j] = sum(w[j, m] * tensor3[i, j, m] for m in range(d))
            cols.append(o)
        expected = np.concatenate(cols, axis=1) @ wo
        assert np.abs(out - expected).max() <= 1e-10

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError, match="concat width"):
            attention.MultiConvParams(
                wq=[np.eye(3)], wk=[np.eye(3)], wv=[np.eye(3)],
                filters=[[np.eye(3), np.eye(3)]], wo=np.eye(3))
