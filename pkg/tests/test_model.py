"""Query/video encoders, Gaussian masks, proposal heads, checkpoints."""

import numpy as np
import pytest

from groundmine.errors import FormatError, ValidationError
from groundmine.model import (
    ModelConfig,
    Proposal,
    encode_query,
    forward_bundle,
    gaussian_weights,
    init_params,
    interval_of,
    load_checkpoint,
    negative_weights,
    propose,
    save_checkpoint,
)


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


class TestQueryEncoder:
    """Mean-pool, tanh affine, shared projection, L2 normalization."""

    def test_single_word_mean_identity(self, small_params, rng):
        """With one word, the pooled vector is that word itself."""
        word = rng.standard_normal((1, 3))
        enc = encode_query(small_params, word)
        np.testing.assert_allclose(enc.word_mean, word[0])

    def test_duplicate_words_leave_encoding_unchanged(self, small_params, rng):
        """Repeating a word row does not move the mean, so q is unchanged."""
        word = rng.standard_normal((1, 3))
        repeated = np.repeat(word, 4, axis=0)
        q_single = encode_query(small_params, word).q
        q_repeated = encode_query(small_params, repeated).q
        np.testing.assert_allclose(q_repeated, q_single, atol=1e-12)

    def test_matches_hand_computation(self, small_params, rng):
        """A 2-word encoding equals the affine chain recomputed by hand."""
        words = rng.standard_normal((2, 3))
        enc = encode_query(small_params, words)
        u = words.mean(axis=0)
        hidden = np.tanh(u @ small_params.w_query + small_params.b_query)
        z = hidden @ small_params.w_out + small_params.b_out
        expected = z / np.linalg.norm(z)
        np.testing.assert_allclose(enc.q, expected, atol=1e-12)
        np.testing.assert_allclose(enc.hidden, hidden, atol=1e-12)

    def test_unit_norm(self, small_params, rng):
        """Encoded queries always have unit L2 norm."""
        for _ in range(10):
            enc = encode_query(small_params, rng.standard_normal((3, 3)))
            np.testing.assert_allclose(np.linalg.norm(enc.q), 1.0, atol=1e-12)


class TestGaussianWeights:
    """Normalized Gaussian masks over segment midpoints."""

    def test_single_segment_is_one(self):
        """With one segment the mask is exactly [1.0]."""
        np.testing.assert_array_equal(gaussian_weights(0.7, 0.2, 1), [1.0])

    def test_centered_mask_is_symmetric(self):
        """center=0.5 over an even segment count mirrors around the middle."""
        g = gaussian_weights(0.5, 0.2, 8)
        np.testing.assert_allclose(g, g[::-1], atol=1e-15)

    def test_matches_hand_exponentials(self):
        """center=0.25, half_width=0.15, 8 segments recomputed from the formula."""
        g = gaussian_weights(0.25, 0.15, 8)
        tau = (np.arange(8) + 0.5) / 8
        sigma = 0.15 / 3.0
        u = np.exp(-((tau - 0.25) ** 2) / (2 * sigma * sigma))
        np.testing.assert_allclose(g, u / u.sum(), atol=1e-15)

    def test_sums_to_one(self, rng):
        """Masks are a distribution over segments."""
        for _ in range(20):
            c = float(rng.uniform(0, 1))
            r = float(rng.uniform(0.05, 0.45))
            t = int(rng.integers(1, 30))
            np.testing.assert_allclose(gaussian_weights(c, r, t).sum(), 1.0, atol=1e-12)

    def test_zero_half_width_rejected(self):
        """A degenerate half width cannot define a mask."""
        with pytest.raises(ValidationError):
            gaussian_weights(0.5, 0.0, 4)


class TestNegativeWeights:
    """Complementary masks emphasize what the positive mask ignores."""

    def test_flat_mask_falls_back_to_uniform(self):
        """A perfectly uniform mask has no outside, so the fallback is uniform."""
        np.testing.assert_allclose(negative_weights(np.full(4, 0.25)), np.full(4, 0.25))

    def test_peaked_mask_excludes_peak(self):
        """g=[1,0,0,0] yields h=[0, 1/3, 1/3, 1/3]."""
        h = negative_weights(np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(h, [0.0, 1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_matches_hand_computation(self):
        """The peak-deficit formula recomputed for a real Gaussian mask."""
        g = gaussian_weights(0.25, 0.15, 8)
        d = g.max() - g
        np.testing.assert_allclose(negative_weights(g), d / d.sum(), atol=1e-15)

    def test_sums_to_one(self, rng):
        """Negative masks are distributions too."""
        for _ in range(20):
            g = gaussian_weights(float(rng.uniform(0, 1)), 0.2, 12)
            np.testing.assert_allclose(negative_weights(g).sum(), 1.0, atol=1e-12)


class TestProposalHeads:
    """Sigmoid geometry heads over pooled video + query hidden state."""

    def test_single_segment_collapses_features(self, small_params, rng):
        """With T=1 both masks are [1], so pos and neg features coincide."""
        video = rng.standard_normal((1, 3))
        hidden = encode_query(small_params, rng.standard_normal((2, 3))).hidden
        for prop in propose(small_params, video, hidden):
            np.testing.assert_allclose(prop.pos_feat, prop.neg_feat, atol=1e-15)
            x = video[0]
            y = x @ small_params.w_video + small_params.b_video
            z = y @ small_params.w_out + small_params.b_out
            np.testing.assert_allclose(prop.pos_feat, z / np.linalg.norm(z), atol=1e-12)

    def test_permuting_heads_permutes_proposals(self, small_params, rng):
        """Swapping the two heads' geometry rows swaps the two proposals."""
        video = rng.standard_normal((5, 3))
        hidden = encode_query(small_params, rng.standard_normal((2, 3))).hidden
        original = propose(small_params, video, hidden)
        swapped_params = small_params.copy()
        for name in ("w_center", "b_center", "w_width", "b_width"):
            arr = getattr(swapped_params, name)
            arr[[0, 1]] = arr[[1, 0]]
        swapped = propose(swapped_params, video, hidden)
        for a, b in zip(original, reversed(swapped)):
            assert a.center == b.center
            assert a.half_width == b.half_width
            np.testing.assert_array_equal(a.pos_feat, b.pos_feat)

    def test_matches_hand_forward(self, small_params, rng):
        """A T=3 proposal recomputed end to end from the parameter arrays."""
        p = small_params
        video = rng.standard_normal((3, 3))
        words = rng.standard_normal((2, 3))
        enc = encode_query(p, words)
        prop = propose(p, video, enc.hidden)[0]

        vbar = video.mean(axis=0) @ p.w_video + p.b_video
        cat = np.concatenate([vbar, enc.hidden])
        center = sigmoid(float(p.w_center[0] @ cat + p.b_center[0]))
        r_min, r_max = p.config.r_min, p.config.r_max
        half = r_min + (r_max - r_min) * sigmoid(float(p.w_width[0] @ cat + p.b_width[0]))
        assert prop.center == pytest.approx(center, abs=1e-12)
        assert prop.half_width == pytest.approx(half, abs=1e-12)

        tau = (np.arange(3) + 0.5) / 3
        sigma = half / 3.0
        u = np.exp(-((tau - center) ** 2) / (2 * sigma * sigma))
        g = u / u.sum()
        np.testing.assert_allclose(prop.pos_weights, g, atol=1e-12)
        z = (video.T @ g) @ p.w_video + p.b_video
        z = z @ p.w_out + p.b_out
        np.testing.assert_allclose(prop.pos_feat, z / np.linalg.norm(z), atol=1e-12)

    def test_half_width_respects_config_bounds(self, small_params, rng):
        """Every proposal's half width lies inside (r_min, r_max)."""
        video = rng.standard_normal((6, 3))
        hidden = encode_query(small_params, rng.standard_normal((2, 3))).hidden
        c = small_params.config
        for prop in propose(small_params, video, hidden):
            assert c.r_min < prop.half_width < c.r_max


class TestIntervalOf:
    """Mask geometry maps to clamped intervals in seconds."""

    def test_interior_interval(self):
        """center=0.5, half=0.25, duration=30 gives (7.5, 22.5)."""
        prop = Proposal(0.5, 0.25, None, None, None, None)
        assert interval_of(prop, 30.0) == (7.5, 22.5)

    def test_clamped_at_zero(self):
        """center=0.05, half=0.2, duration=10 clamps the start to 0."""
        prop = Proposal(0.05, 0.2, None, None, None, None)
        assert interval_of(prop, 10.0) == (0.0, 2.5)

    def test_widest_configured_interval(self):
        """center=0.5 at the configured r_max spans the symmetric middle band."""
        r_max = 0.45
        prop = Proposal(0.5, r_max, None, None, None, None)
        start, end = interval_of(prop, 118.0)
        assert start == pytest.approx((0.5 - r_max) * 118.0)
        assert end == pytest.approx((0.5 + r_max) * 118.0)

    def test_nonpositive_duration_rejected(self):
        """Duration must be positive."""
        with pytest.raises(ValidationError):
            interval_of(Proposal(0.5, 0.2, None, None, None, None), 0.0)


class TestForwardBundle:
    """The triple forward pass wires anchor, similar, and dissimilar branches."""

    def triple(self, rng):
        return [(rng.standard_normal((2, 3)), rng.standard_normal((4, 3))) for _ in range(3)]

    def test_degenerate_triple_collapses(self, small_params, rng):
        """Using the anchor as its own sim and dis makes the pairs coincide."""
        words, video = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
        bundle = forward_bundle(
            small_params, words, video, words, video, words, video
        )
        np.testing.assert_array_equal(bundle.q_sim, bundle.q)
        np.testing.assert_array_equal(bundle.q_dis, bundle.q)
        np.testing.assert_array_equal(bundle.p_sim, bundle.p_dis)

    def test_all_features_unit_norm(self, small_params, rng):
        """Every feature entering the loss is L2-normalized."""
        (aw, av), (sw, sv), (dw, dv) = self.triple(rng)
        bundle = forward_bundle(small_params, aw, av, sw, sv, dw, dv)
        for vec in (bundle.q, bundle.q_sim, bundle.q_dis, bundle.p_sim, bundle.p_dis):
            np.testing.assert_allclose(np.linalg.norm(vec), 1.0, atol=1e-12)
        for prop in bundle.proposals:
            np.testing.assert_allclose(np.linalg.norm(prop.pos_feat), 1.0, atol=1e-12)
            np.testing.assert_allclose(np.linalg.norm(prop.neg_feat), 1.0, atol=1e-12)

    def test_matches_componentwise_encoders(self, small_params, rng):
        """Bundle fields equal separate encode/propose calls on each branch."""
        (aw, av), (sw, sv), (dw, dv) = self.triple(rng)
        bundle = forward_bundle(small_params, aw, av, sw, sv, dw, dv)
        enc_a = encode_query(small_params, aw)
        np.testing.assert_array_equal(bundle.q, enc_a.q)
        props_a = propose(small_params, av, enc_a.hidden)
        for bp, ap in zip(bundle.proposals, props_a):
            np.testing.assert_array_equal(bp.pos_feat, ap.pos_feat)
        enc_s = encode_query(small_params, sw)
        props_s = propose(small_params, sv, enc_s.hidden)
        np.testing.assert_array_equal(bundle.p_sim, props_s[0].pos_feat)
        enc_d = encode_query(small_params, dw)
        props_d = propose(small_params, dv, enc_d.hidden)
        np.testing.assert_array_equal(bundle.p_dis, props_d[0].pos_feat)


class TestCheckpointIO:
    """Float32 checkpoints round-trip exactly and reject corruption."""

    def test_round_trip_params(self, small_params, tmp_path):
        """Saved parameters load back bit-identically (already float32-valued)."""
        from groundmine.trainer import round_state_f32

        round_state_f32(small_params)
        path = tmp_path / "model.psmc"
        save_checkpoint(path, small_params, step=7, epoch=2)
        ckpt = load_checkpoint(path)
        assert ckpt.step == 7
        assert ckpt.epoch == 2
        for name in small_params.as_dict():
            np.testing.assert_array_equal(
                getattr(ckpt.params, name), getattr(small_params, name)
            )

    def test_extra_arrays_round_trip(self, small_params, tmp_path):
        """Named extra arrays (optimizer state) survive the round trip."""
        extras = {"adam_m.w_out": np.ones_like(small_params.w_out)}
        path = tmp_path / "model.psmc"
        save_checkpoint(path, small_params, extra_arrays=extras)
        ckpt = load_checkpoint(path)
        np.testing.assert_array_equal(
            ckpt.extra_arrays["adam_m.w_out"], extras["adam_m.w_out"]
        )

    def test_save_is_deterministic(self, small_params, tmp_path):
        """Equal state writes equal bytes."""
        save_checkpoint(tmp_path / "a.psmc", small_params, step=1)
        save_checkpoint(tmp_path / "b.psmc", small_params, step=1)
        assert (tmp_path / "a.psmc").read_bytes() == (tmp_path / "b.psmc").read_bytes()

    def test_corrupted_magic_rejected(self, small_params, tmp_path):
        """A checkpoint with flipped magic bytes fails to load."""
        path = tmp_path / "model.psmc"
        save_checkpoint(path, small_params)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, small_params, tmp_path):
        """A checkpoint missing its tail fails to load."""
        path = tmp_path / "model.psmc"
        save_checkpoint(path, small_params)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 8])
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestModelConfigValidation:
    """Config invariants guard the mask geometry."""

    def test_r_bounds_ordering_enforced(self):
        """r_min must be strictly below r_max, both inside (0, 1)."""
        with pytest.raises(ValidationError):
            ModelConfig(word_dim=3, video_dim=3, r_min=0.5, r_max=0.4).validate()
        with pytest.raises(ValidationError):
            ModelConfig(word_dim=3, video_dim=3, r_min=0.0, r_max=0.4).validate()
        with pytest.raises(ValidationError):
            ModelConfig(word_dim=3, video_dim=3, r_min=0.1, r_max=1.0).validate()

    def test_init_shapes_match_config(self):
        """Initialized parameters have the documented shapes."""
        config = ModelConfig(word_dim=5, video_dim=7, hidden=4, feat_dim=6, n_heads=3)
        params = init_params(config, np.random.default_rng(42))
        assert params.w_query.shape == (5, 4)
        assert params.w_video.shape == (7, 4)
        assert params.w_out.shape == (4, 6)
        assert params.w_center.shape == (3, 8)
        assert params.w_width.shape == (3, 8)
        assert params.b_out.shape == (6,)
