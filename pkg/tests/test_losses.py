"""Hinge values, contrastive and rank terms, selection, and additivity."""

import numpy as np
import pytest

from groundmine.errors import ValidationError
from groundmine.losses import (
    HingeAlignmentBase,
    LossToggles,
    Margins,
    contrastive_pair,
    grad_total,
    hinge,
    psm_contrastive,
    psm_contrastive_negative,
    rank_losses,
    select_proposal,
    total_loss,
)
from groundmine.model import forward_bundle


def random_triple(rng, n_words=2, n_segments=4, dim=3):
    return [
        (rng.standard_normal((n_words, dim)), rng.standard_normal((n_segments, dim)))
        for _ in range(3)
    ]


def make_bundle(params, rng, **kwargs):
    (aw, av), (sw, sv), (dw, dv) = random_triple(rng)
    return forward_bundle(params, aw, av, sw, sv, dw, dv, **kwargs)


class TestHinge:
    """max(x + margin, 0) in its three regimes."""

    def test_inactive(self):
        """A comfortably satisfied constraint costs nothing."""
        assert hinge(-1.0, 0.5) == 0.0

    def test_boundary(self):
        """At zero pre-activation the cost is exactly the margin."""
        assert hinge(0.0, 0.5) == 0.5

    def test_active(self):
        """A violated constraint costs violation plus margin."""
        assert hinge(0.3, 0.15) == pytest.approx(0.45, abs=1e-15)

    def test_nonnegative_everywhere(self, rng):
        """Hinge losses are never negative."""
        for _ in range(100):
            assert hinge(float(rng.normal()), float(rng.uniform(0, 1))) >= 0.0


class TestContrastivePair:
    """Query- and proposal-level margin contrasts for one feature."""

    def test_coincident_targets_cost_margin(self):
        """f = q_sim = q_dis leaves no separation, costing the full margin."""
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        l_query, l_prop = contrastive_pair(e1, e1, e1, e1, e1, 0.5, 0.5)
        assert l_query == 0.5
        assert l_prop == 0.5

    def test_perfect_separation_costs_nothing(self):
        """f aligned with sim and anti-aligned with dis clears the margin."""
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        l_query, l_prop = contrastive_pair(e1, e1, -e1, e1, -e1, 0.5, 0.5)
        assert l_query == 0.0
        assert l_prop == 0.0

    def test_matches_hand_dots(self, rng):
        """Random unit vectors reproduce the hinge of hand-computed dots."""
        vecs = [v / np.linalg.norm(v) for v in rng.standard_normal((5, 4))]
        f, q_sim, q_dis, p_sim, p_dis = vecs
        l_query, l_prop = contrastive_pair(f, q_sim, q_dis, p_sim, p_dis, 0.5, 0.5)
        assert l_query == pytest.approx(
            max(float(f @ q_dis) - float(f @ q_sim) + 0.5, 0.0), abs=1e-15
        )
        assert l_prop == pytest.approx(
            max(float(f @ p_dis) - float(f @ p_sim) + 0.5, 0.0), abs=1e-15
        )


class TestRankLosses:
    """The positive proposal must beat the negative one by a margin."""

    def test_tied_contrasts_cost_margin(self):
        """Equal positive and negative contrastive losses cost 0.15 each."""
        margins = Margins()
        l_rq, l_rp, total = rank_losses(0.3, 0.2, 0.3, 0.2, margins)
        assert l_rq == pytest.approx(0.15, abs=1e-15)
        assert l_rp == pytest.approx(0.15, abs=1e-15)
        assert total == pytest.approx(0.3, abs=1e-15)

    def test_clear_win_costs_nothing(self):
        """Positive far ahead of negative clears the rank margin."""
        l_rq, l_rp, _ = rank_losses(0.0, 0.0, 1.0, 1.0, Margins())
        assert l_rq == 0.0
        assert l_rp == 0.0

    def test_losing_costs_gap_plus_margin(self):
        """Positive behind by 0.3 costs 0.45 at margin 0.15."""
        l_rq, _, _ = rank_losses(0.4, 0.0, 0.1, 1.0, Margins())
        assert l_rq == pytest.approx(0.45, abs=1e-15)


class TestBaseSurrogate:
    """Alignment plus a hinge keeping the outside feature behind."""

    def test_perfect_alignment_scores_zero(self):
        """p = q with p_n anti-aligned scores exactly zero."""
        q = np.array([1.0, 0.0, 0.0])
        assert HingeAlignmentBase().score(q, -q, q) == 0.0

    def test_degenerate_masks_score_margin(self):
        """p = p_n = q scores the hinge margin 0.3."""
        q = np.array([1.0, 0.0, 0.0])
        assert HingeAlignmentBase().score(q, q, q) == pytest.approx(0.3, abs=1e-15)

    def test_matches_hand_formula(self, rng):
        """Random unit vectors reproduce the two-term hand formula."""
        p, p_n, q = [v / np.linalg.norm(v) for v in rng.standard_normal((3, 4))]
        expected = (1.0 - float(p @ q)) + max(
            float(p_n @ q) - float(p @ q) + 0.3, 0.0
        )
        assert HingeAlignmentBase().score(p, p_n, q) == pytest.approx(expected, abs=1e-15)

    def test_inactive_hinge_zeroes_negative_gradient(self):
        """With the hinge inactive, the outside feature gets zero gradient."""
        q = np.array([1.0, 0.0, 0.0])
        score = HingeAlignmentBase().score_with_grads(q, -q, q)
        np.testing.assert_array_equal(score.grad_p_n, np.zeros(3))
        np.testing.assert_allclose(score.grad_p, -q, atol=1e-15)

    def test_active_hinge_gradients(self):
        """With the hinge active, both features receive the documented pulls."""
        q = np.array([1.0, 0.0, 0.0])
        score = HingeAlignmentBase().score_with_grads(q, q, q)
        np.testing.assert_allclose(score.grad_p, -2.0 * q, atol=1e-15)
        np.testing.assert_allclose(score.grad_p_n, q, atol=1e-15)


class TestProposalSelection:
    """Training optimizes the head with the lowest base score."""

    def test_single_head_selects_zero(self, rng):
        """With one proposal there is nothing to choose."""
        from groundmine.model import ModelConfig, init_params

        config = ModelConfig(word_dim=3, video_dim=3, hidden=4, feat_dim=4, n_heads=1)
        params = init_params(config, np.random.default_rng(42))
        bundle = make_bundle(params, rng)
        idx, values = select_proposal(bundle, HingeAlignmentBase())
        assert idx == 0
        assert len(values) == 1

    def test_selects_strictly_lower_head(self, small_params, rng):
        """The head with the strictly lower base score wins."""
        bundle = make_bundle(small_params, rng)
        base = HingeAlignmentBase()
        idx, values = select_proposal(bundle, base)
        assert idx == int(np.argmin(values))
        assert values[idx] == min(values)

    def test_values_match_hand_scores(self, small_params, rng):
        """Selection values equal base scores recomputed per head."""
        bundle = make_bundle(small_params, rng)
        base = HingeAlignmentBase()
        _, values = select_proposal(bundle, base)
        for value, prop in zip(values, bundle.proposals):
            assert value == pytest.approx(
                base.score(prop.pos_feat, prop.neg_feat, bundle.q), abs=1e-15
            )


class TestTotalLoss:
    """The full objective decomposes exactly into its reported terms."""

    def test_additivity_identities(self, small_params, rng):
        """l_cl = l_query + l_prop and total = l_base + l_cl + l_rank to 1e-12."""
        for _ in range(20):
            bundle = make_bundle(small_params, rng)
            b = total_loss(bundle, Margins())
            assert b.l_cl == pytest.approx(b.l_query + b.l_prop, abs=1e-12)
            assert b.l_rank == pytest.approx(b.l_rank_query + b.l_rank_prop, abs=1e-12)
            assert b.total == pytest.approx(b.l_base + b.l_cl + b.l_rank, abs=1e-12)

    def test_disabled_terms_report_zero(self, small_params, rng):
        """With all toggles off only the base term is non-zero."""
        bundle = make_bundle(small_params, rng)
        b = total_loss(bundle, Margins(), toggles=LossToggles.none())
        assert (b.l_query, b.l_prop, b.l_cl) == (0.0, 0.0, 0.0)
        assert (b.l_rank_query, b.l_rank_prop, b.l_rank) == (0.0, 0.0, 0.0)
        assert b.total == b.l_base

    def test_negative_contrasts_always_reported_raw(self, small_params, rng):
        """l_query_n / l_prop_n are diagnostics, never zeroed by toggles."""
        bundle = make_bundle(small_params, rng)
        off = total_loss(bundle, Margins(), toggles=LossToggles.none())
        on = total_loss(bundle, Margins())
        assert off.l_query_n == on.l_query_n
        assert off.l_prop_n == on.l_prop_n
        expected = psm_contrastive_negative(bundle, on.selected_proposal, Margins())
        assert on.l_query_n == pytest.approx(expected[0], abs=1e-15)
        assert on.l_prop_n == pytest.approx(expected[1], abs=1e-15)

    def test_terms_match_componentwise_functions(self, small_params, rng):
        """Breakdown terms equal the standalone loss functions on the bundle."""
        bundle = make_bundle(small_params, rng)
        margins = Margins()
        b = total_loss(bundle, margins)
        idx = b.selected_proposal
        l_query, l_prop, l_cl = psm_contrastive(bundle, idx, margins)
        assert b.l_query == pytest.approx(l_query, abs=1e-15)
        assert b.l_prop == pytest.approx(l_prop, abs=1e-15)
        assert b.l_cl == pytest.approx(l_cl, abs=1e-15)
        l_qn, l_pn, _ = psm_contrastive_negative(bundle, idx, margins)
        l_rq, l_rp, l_rank = rank_losses(l_query, l_prop, l_qn, l_pn, margins)
        assert b.l_rank_query == pytest.approx(l_rq, abs=1e-15)
        assert b.l_rank_prop == pytest.approx(l_rp, abs=1e-15)
        assert b.l_rank == pytest.approx(l_rank, abs=1e-15)
        sel, values = select_proposal(bundle, HingeAlignmentBase())
        assert idx == sel
        assert b.l_base == pytest.approx(values[sel], abs=1e-15)

    def test_breakdown_validates(self, small_params, rng):
        """Reported breakdowns satisfy their own consistency checks."""
        bundle = make_bundle(small_params, rng)
        total_loss(bundle, Margins()).validate()


class TestGradientTermLinearity:
    """Loss-term gradients accumulate additively into the total gradient."""

    def test_term_gradients_add(self, small_params, rng):
        """grads(full) - grads(base) = sum of each term family's contribution."""
        triple = random_triple(rng)
        args = [a for pair in triple for a in pair]
        margins = Margins()

        def grads_for(toggles):
            _, g = grad_total(small_params, *args, margins, toggles=toggles)
            return g

        g_base = grads_for(LossToggles.none())
        g_cl = grads_for(LossToggles(True, True, False, False))
        g_rank = grads_for(LossToggles(False, False, True, True))
        g_full = grads_for(LossToggles(True, True, True, True))
        for name in g_full:
            lhs = g_full[name] - g_base[name]
            rhs = (g_cl[name] - g_base[name]) + (g_rank[name] - g_base[name])
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_loss_value_unchanged_by_stop_gradient(self, small_params, rng):
        """Freezing branch encoders changes gradients, never the loss value."""
        triple = random_triple(rng)
        args = [a for pair in triple for a in pair]
        margins = Margins()
        b_flow, _ = grad_total(small_params, *args, margins)
        b_stop, _ = grad_total(
            small_params, *args, margins, stop_gradient_branches=True
        )
        assert b_flow.total == b_stop.total
        assert b_flow.as_dict() == b_stop.as_dict()


class TestMargins:
    """Margin defaults and validation."""

    def test_defaults(self):
        """Contrastive margins default to 0.5, rank margins to 0.15."""
        m = Margins()
        assert (m.gamma1, m.gamma2, m.gamma3, m.gamma4) == (0.5, 0.5, 0.5, 0.5)
        assert (m.gamma5, m.gamma6) == (0.15, 0.15)
        assert m.gamma_base == 0.3

    def test_non_finite_rejected(self):
        """NaN margins are invalid."""
        with pytest.raises(ValidationError):
            Margins(gamma1=float("nan")).validate()
