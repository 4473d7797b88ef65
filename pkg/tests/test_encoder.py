"""Text encoder forward/backward against hand computations and finite differences."""

import numpy as np
import pytest

from debias_mf import encoder as enc


def finite_difference(params, seq, upstream, step=1e-6):
    """Central-difference gradient of upstream . forward(params, seq)."""
    flat = params.flatten()
    grad = np.zeros_like(flat)
    for i in range(len(flat)):
        up = flat.copy()
        up[i] += step
        dn = flat.copy()
        dn[i] -= step
        f_up = upstream @ enc.forward(params.with_flat(up), seq).value
        f_dn = upstream @ enc.forward(params.with_flat(dn), seq).value
        grad[i] = (f_up - f_dn) / (2 * step)
    return grad


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def tiny_params(seed=0, variant="conv", output_dim=2, scale=0.5):
    return enc.init_params(vocab_size=7, output_dim=output_dim, embed_dim=3,
                           windows=(2, 3), filters=2, variant=variant,
                           seed=seed, scale=scale)


class TestForwardConv:
    def test_hand_computed_value(self):
        # e=2, f=1, one window of 3, L=4: two positions, tanh, max, dense
        params = enc.EncoderParams(
            variant="conv",
            embedding=np.array([[0.0, 0.0], [1.0, -1.0], [0.5, 2.0], [-1.0, 0.5]]),
            conv_w={3: np.array([[[0.1, 0.2], [0.3, -0.1], [0.2, 0.4]]])},
            conv_b={3: np.array([0.05])},
            dense_w=np.array([[2.0]]),
            dense_b=np.array([-0.3]),
        )
        seq = np.array([1, 2, 3, 1])
        emb = params.embedding[seq]
        z = []
        for t in range(2):
            window = emb[t:t + 3]
            z.append(np.sum(window * params.conv_w[3][0]) + 0.05)
        pooled = np.tanh(max(z))
        expected = 2.0 * pooled - 0.3
        out = enc.forward(params, seq)
        assert out.value == pytest.approx([expected], abs=1e-12)

    def test_all_pad_sequence_with_zero_pad_row(self):
        params = tiny_params(seed=1)
        params.embedding[0] = 0.0
        seq = np.zeros(5, dtype=int)
        out = enc.forward(params, seq)
        pooled = np.concatenate([np.tanh(params.conv_b[w]) for w in (2, 3)])
        expected = params.dense_w @ pooled + params.dense_b
        np.testing.assert_allclose(out.value, expected, atol=1e-14)

    def test_max_pool_invariance_to_non_argmax_tokens(self):
        # token 2 has a large embedding and the filters are positive, so the
        # argmax windows stay at the front whichever small token fills the tail
        params = enc.init_params(vocab_size=5, output_dim=1, embed_dim=2,
                                 windows=(3,), filters=2, seed=2, scale=0.05)
        params.embedding[2] = 5.0
        params.conv_w[3] = np.abs(params.conv_w[3]) + 0.1
        seq_a = np.array([2, 2, 2, 3, 3, 3])
        seq_b = np.array([2, 2, 2, 4, 4, 4])
        out_a = enc.forward(params, seq_a)
        out_b = enc.forward(params, seq_b)
        assert (out_a.argmax[3] == out_b.argmax[3]).all()
        assert out_a.argmax[3].max() == 0
        np.testing.assert_array_equal(out_a.value, out_b.value)

    def test_deterministic(self):
        params = tiny_params(seed=3)
        seq = np.array([1, 4, 2, 6, 3])
        a = enc.forward(params, seq).value
        b = enc.forward(params, seq).value
        np.testing.assert_array_equal(a, b)

    def test_short_sequence_is_an_error(self):
        params = tiny_params(seed=4)
        with pytest.raises(ValueError, match="shorter than the largest window"):
            enc.forward(params, np.array([1, 2]))


class TestForwardAverage:
    def test_single_token_is_dense_of_embedding(self):
        params = tiny_params(seed=5, variant="average", output_dim=2)
        seq = np.array([4])
        out = enc.forward(params, seq)
        expected = params.dense_w @ params.embedding[4] + params.dense_b
        np.testing.assert_allclose(out.value, expected, atol=1e-14)

    def test_mean_over_positions(self):
        params = tiny_params(seed=6, variant="average", output_dim=1)
        seq = np.array([1, 2, 5, 0])
        out = enc.forward(params, seq)
        expected = params.dense_w @ params.embedding[seq].mean(axis=0) + params.dense_b
        np.testing.assert_allclose(out.value, expected, atol=1e-14)


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        params = tiny_params(seed=7)
        seq = np.array([1, 2, 3, 4, 5])
        out = enc.forward(params, seq)
        grads = enc.backward(params, out, np.zeros(2))
        assert np.all(grads.flatten() == 0.0)

    def test_unused_token_embedding_gets_zero_gradient(self):
        params = tiny_params(seed=8)
        seq = np.array([1, 2, 3, 2, 1])  # token 6 never appears
        out = enc.forward(params, seq)
        grads = enc.backward(params, out, np.ones(2))
        assert np.all(grads.embedding[6] == 0.0)

    def test_tokens_outside_every_argmax_window_get_zero_gradient(self):
        params = enc.init_params(vocab_size=5, output_dim=1, embed_dim=2,
                                 windows=(3,), filters=2, seed=2, scale=0.05)
        params.embedding[2] = 5.0
        params.conv_w[3] = np.abs(params.conv_w[3]) + 0.1
        seq = np.array([2, 2, 2, 3, 3, 3])
        out = enc.forward(params, seq)
        assert out.argmax[3].max() == 0  # both filters pool the first window
        grads = enc.backward(params, out, np.ones(1))
        # positions 3..5 are beyond every argmax window; token 3 only there
        assert np.all(grads.embedding[3] == 0.0)

    def test_upstream_shape_mismatch_is_an_error(self):
        params = tiny_params(seed=9)
        out = enc.forward(params, np.array([1, 2, 3, 4]))
        with pytest.raises(ValueError, match="upstream"):
            enc.backward(params, out, np.zeros(3))

    @pytest.mark.parametrize("variant", ["conv", "average"])
    def test_gradients_match_finite_differences(self, variant):
        rng = np.random.default_rng(10)
        for trial in range(5):
            params = tiny_params(seed=20 + trial, variant=variant)
            seq = rng.integers(0, 7, size=6)
            upstream = rng.standard_normal(2)
            out = enc.forward(params, seq)
            grads = enc.backward(params, out, upstream)
            fd = finite_difference(params, seq, upstream)
            assert relative_error(grads.flatten(), fd) <= 1e-4


class TestBatched:
    @pytest.mark.parametrize("variant", ["conv", "average"])
    def test_corpus_forward_matches_single(self, variant):
        # BLAS blocking may differ between batch shapes, so agreement is
        # to rounding, not bitwise
        rng = np.random.default_rng(11)
        params = tiny_params(seed=30, variant=variant)
        seqs = rng.integers(0, 7, size=(9, 6))
        values, _ = enc.forward_corpus(params, seqs)
        for i, seq in enumerate(seqs):
            np.testing.assert_allclose(values[i], enc.forward(params, seq).value,
                                       rtol=0, atol=1e-12)

    @pytest.mark.parametrize("variant", ["conv", "average"])
    def test_corpus_backward_matches_summed_singles(self, variant):
        rng = np.random.default_rng(12)
        params = tiny_params(seed=31, variant=variant)
        seqs = rng.integers(0, 7, size=(7, 6))
        upstream = rng.standard_normal((7, 2))
        _, cache = enc.forward_corpus(params, seqs)
        batched = enc.backward_corpus(params, seqs, cache, upstream)
        summed = params.zeros_like()
        for i, seq in enumerate(seqs):
            out = enc.forward(params, seq)
            summed.iadd_scaled(enc.backward(params, out, upstream[i]), 1.0)
        np.testing.assert_allclose(batched.flatten(), summed.flatten(), atol=1e-12)


class TestSerialization:
    @pytest.mark.parametrize("variant", ["conv", "average"])
    def test_round_trip_is_bit_exact(self, tmp_path, variant):
        params = tiny_params(seed=40, variant=variant)
        path = tmp_path / "enc.bin"
        enc.save_params(params, path, seed=40)
        back = enc.load_params(path)
        assert back.variant == params.variant
        np.testing.assert_array_equal(back.flatten(), params.flatten())

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="variant"):
            enc.init_params(vocab_size=5, output_dim=1, variant="rnn")
