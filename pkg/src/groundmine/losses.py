"""Mined-contrastive and rank losses with analytic gradients.

Loss structure for one (anchor, similar, dissimilar) triple:

- base: an alignment surrogate scoring how well a proposal explains the
  anchor query; also used to pick the proposal (argmin over heads).
- contrastive: hinge terms pushing the selected positive proposal feature
  closer to the mined-similar query/proposal than to the dissimilar one, and
  the negative proposal feature likewise (margins gamma1..gamma4).
- rank: hinge terms demanding the positive proposal beat the negative
  proposal at the contrastive task by margins gamma5/gamma6.

Gradients are hand-derived reverse-mode accumulation over the numpy forward
in ``model`` (no autograd framework); ``fd_check`` verifies them against
central finite differences, excluding coordinates adjacent to hinge kinks,
argmin selection flips, or mask argmax flips, where the loss is not
differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ValidationError
from . import model as model_mod
from .model import FeatureBundle, ModelParams

# |hinge pre-activation| below this counts as "at the kink" for fd exclusion
KINK_ATOL = 1e-6
# |analytic| + |numeric| below this is noise, not a meaningful comparison
FD_DENOM_FLOOR = 1e-8
# refine the fd step when the primary-step discrepancy exceeds this
FD_REFINE_THRESHOLD = 1e-5
# step multipliers for refinement: truncation error wants a smaller step,
# roundoff on near-zero gradient coordinates wants a larger one
FD_REFINE_FACTORS = (0.1, 10.0)


def hinge(x: float, margin: float) -> float:
    """max(x + margin, 0); subgradient 0 at the kink."""
    return max(x + margin, 0.0)


@dataclass
class Margins:
    """Hinge margins. 1/2: contrastive (query/proposal); 3/4: the negative
    proposal's contrastive terms; 5/6: rank; base: the alignment surrogate."""

    gamma1: float = 0.5
    gamma2: float = 0.5
    gamma3: float = 0.5
    gamma4: float = 0.5
    gamma5: float = 0.15
    gamma6: float = 0.15
    gamma_base: float = 0.3

    def validate(self) -> None:
        for name in ("gamma1", "gamma2", "gamma3", "gamma4", "gamma5", "gamma6", "gamma_base"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossToggles:
    """Which additive terms contribute to the total (for ablations).

    Distances and diagnostics are always computed; a disabled term is
    reported as 0 and contributes no gradient.
    """

    use_l_query: bool = True
    use_l_prop: bool = True
    use_l_rank_query: bool = True
    use_l_rank_prop: bool = True

    @classmethod
    def none(cls) -> "LossToggles":
        return cls(False, False, False, False)


@dataclass
class LossBreakdown:
    """Per-term values for one triple. Disabled terms appear as 0 so the
    additivity invariants hold for every toggle combination."""

    l_base: float
    l_query: float
    l_prop: float
    l_cl: float
    l_query_n: float
    l_prop_n: float
    l_rank_query: float
    l_rank_prop: float
    l_rank: float
    total: float
    selected_proposal: int

    def as_dict(self) -> dict[str, float]:
        return {
            "l_base": self.l_base,
            "l_query": self.l_query,
            "l_prop": self.l_prop,
            "l_cl": self.l_cl,
            "l_query_n": self.l_query_n,
            "l_prop_n": self.l_prop_n,
            "l_rank_query": self.l_rank_query,
            "l_rank_prop": self.l_rank_prop,
            "l_rank": self.l_rank,
            "total": self.total,
            "selected_proposal": float(self.selected_proposal),
        }

    def validate(self) -> None:
        checks = (
            ("l_cl", self.l_cl, self.l_query + self.l_prop),
            ("l_rank", self.l_rank, self.l_rank_query + self.l_rank_prop),
            ("total", self.total, self.l_base + self.l_cl + self.l_rank),
        )
        for name, got, want in checks:
            if abs(got - want) > 1e-9 * max(1.0, abs(want)):
                raise ValidationError(f"breakdown field {name}={got} != {want}")
        for name in ("l_query", "l_prop", "l_query_n", "l_prop_n", "l_rank_query", "l_rank_prop"):
            if getattr(self, name) < 0.0:
                raise ValidationError(f"hinge loss {name} is negative")


@dataclass
class BaseScore:
    value: float
    grad_p: np.ndarray
    grad_p_n: np.ndarray
    grad_q: np.ndarray
    hinge_pre: tuple[float, ...]


class BaseScorer(Protocol):
    """Alignment surrogate; swap in a stronger base model by implementing this."""

    def score(self, p: np.ndarray, p_n: np.ndarray, q: np.ndarray) -> float: ...

    def score_with_grads(self, p: np.ndarray, p_n: np.ndarray, q: np.ndarray) -> BaseScore: ...


@dataclass
class HingeAlignmentBase:
    """(1 - p.q) + hinge(p_n.q - p.q, margin): align the proposal with its
    own query while keeping the outside-proposal feature behind by a margin."""

    margin: float = 0.3

    def score(self, p: np.ndarray, p_n: np.ndarray, q: np.ndarray) -> float:
        s = float(p @ q)
        z = float(p_n @ q) - s + self.margin
        return (1.0 - s) + max(z, 0.0)

    def score_with_grads(self, p: np.ndarray, p_n: np.ndarray, q: np.ndarray) -> BaseScore:
        s = float(p @ q)
        sn = float(p_n @ q)
        z = sn - s + self.margin
        act = 1.0 if z > 0.0 else 0.0
        return BaseScore(
            value=(1.0 - s) + max(z, 0.0),
            grad_p=-(1.0 + act) * q,
            grad_p_n=act * q,
            grad_q=-p + act * (p_n - p),
            hinge_pre=(z,),
        )


def contrastive_pair(
    f: np.ndarray,
    q_sim: np.ndarray,
    q_dis: np.ndarray,
    p_sim: np.ndarray,
    p_dis: np.ndarray,
    margin_query: float,
    margin_prop: float,
) -> tuple[float, float]:
    """Query-level and proposal-level hinge losses for one feature f."""
    l_query = hinge(float(f @ q_dis) - float(f @ q_sim), margin_query)
    l_prop = hinge(float(f @ p_dis) - float(f @ p_sim), margin_prop)
    return l_query, l_prop


def psm_contrastive(
    bundle: FeatureBundle, proposal_idx: int, margins: Margins
) -> tuple[float, float, float]:
    """Contrastive losses of the selected positive proposal feature."""
    f = bundle.proposals[proposal_idx].pos_feat
    l_query, l_prop = contrastive_pair(
        f, bundle.q_sim, bundle.q_dis, bundle.p_sim, bundle.p_dis,
        margins.gamma1, margins.gamma2,
    )
    return l_query, l_prop, l_query + l_prop


def psm_contrastive_negative(
    bundle: FeatureBundle, proposal_idx: int, margins: Margins
) -> tuple[float, float, float]:
    """Same contrast applied to the negative (outside-mask) feature."""
    f = bundle.proposals[proposal_idx].neg_feat
    l_query, l_prop = contrastive_pair(
        f, bundle.q_sim, bundle.q_dis, bundle.p_sim, bundle.p_dis,
        margins.gamma3, margins.gamma4,
    )
    return l_query, l_prop, l_query + l_prop


def rank_losses(
    l_query: float, l_prop: float, l_query_n: float, l_prop_n: float, margins: Margins
) -> tuple[float, float, float]:
    """The positive proposal must beat the negative one at each contrast."""
    l_rq = hinge(l_query - l_query_n, margins.gamma5)
    l_rp = hinge(l_prop - l_prop_n, margins.gamma6)
    return l_rq, l_rp, l_rq + l_rp


def select_proposal(bundle: FeatureBundle, base: BaseScorer) -> tuple[int, list[float]]:
    """Training-time head choice: lowest base score, ties to the lowest index."""
    values = [
        base.score(prop.pos_feat, prop.neg_feat, bundle.q) for prop in bundle.proposals
    ]
    return int(np.argmin(values)), values


@dataclass
class _LossDiag:
    """Forward diagnostics: everything fd_check needs to spot nonsmooth points."""

    breakdown: LossBreakdown
    selected: int
    base_values: list[float]
    sel_gap: float
    raw: dict[str, float]
    pre: tuple[float, ...]
    acts: tuple[bool, ...]
    sel_peak: int
    sel_flat: bool


def _resolve(margins, toggles, base):
    margins.validate()
    if toggles is None:
        toggles = LossToggles()
    if base is None:
        base = HingeAlignmentBase(margins.gamma_base)
    return toggles, base


def _loss_parts(
    bundle: FeatureBundle, margins: Margins, toggles: LossToggles, base: BaseScorer
) -> tuple[_LossDiag, BaseScore]:
    sel, values = select_proposal(bundle, base)
    prop = bundle.proposals[sel]
    p, p_n, q = prop.pos_feat, prop.neg_feat, bundle.q
    base_score = base.score_with_grads(p, p_n, q)

    z1 = float(p @ bundle.q_dis) - float(p @ bundle.q_sim) + margins.gamma1
    z2 = float(p @ bundle.p_dis) - float(p @ bundle.p_sim) + margins.gamma2
    z3 = float(p_n @ bundle.q_dis) - float(p_n @ bundle.q_sim) + margins.gamma3
    z4 = float(p_n @ bundle.p_dis) - float(p_n @ bundle.p_sim) + margins.gamma4
    l_query, l_prop = max(z1, 0.0), max(z2, 0.0)
    l_query_n, l_prop_n = max(z3, 0.0), max(z4, 0.0)
    z5 = l_query - l_query_n + margins.gamma5
    z6 = l_prop - l_prop_n + margins.gamma6
    l_rank_query, l_rank_prop = max(z5, 0.0), max(z6, 0.0)

    t = toggles
    rep_lq = l_query if t.use_l_query else 0.0
    rep_lp = l_prop if t.use_l_prop else 0.0
    rep_rq = l_rank_query if t.use_l_rank_query else 0.0
    rep_rp = l_rank_prop if t.use_l_rank_prop else 0.0
    l_cl = rep_lq + rep_lp
    l_rank = rep_rq + rep_rp
    breakdown = LossBreakdown(
        l_base=base_score.value,
        l_query=rep_lq,
        l_prop=rep_lp,
        l_cl=l_cl,
        l_query_n=l_query_n,
        l_prop_n=l_prop_n,
        l_rank_query=rep_rq,
        l_rank_prop=rep_rp,
        l_rank=l_rank,
        total=base_score.value + l_cl + l_rank,
        selected_proposal=sel,
    )
    if len(values) > 1:
        ordered = sorted(values)
        sel_gap = ordered[1] - ordered[0]
    else:
        sel_gap = np.inf
    pre = (z1, z2, z3, z4, z5, z6) + base_score.hinge_pre
    if bundle.anchor_cache is not None:
        head = bundle.anchor_cache.prop.heads[sel]
        sel_peak, sel_flat = head.neg_peak, head.neg_flat
    else:  # hand-assembled bundle without forward caches
        sel_peak, sel_flat = -1, False
    diag = _LossDiag(
        breakdown=breakdown,
        selected=sel,
        base_values=values,
        sel_gap=sel_gap,
        raw={
            "l_query": l_query,
            "l_prop": l_prop,
            "l_query_n": l_query_n,
            "l_prop_n": l_prop_n,
        },
        pre=pre,
        acts=tuple(z > 0.0 for z in pre),
        sel_peak=sel_peak,
        sel_flat=sel_flat,
    )
    return diag, base_score


def total_loss(
    bundle: FeatureBundle,
    margins: Margins,
    toggles: LossToggles | None = None,
    base: BaseScorer | None = None,
) -> LossBreakdown:
    """Full objective for one triple: base + contrastive + rank."""
    toggles, base = _resolve(margins, toggles, base)
    return _loss_parts(bundle, margins, toggles, base)[0].breakdown


# ---------------------------------------------------------------------------
# backward pass


def _bw_normalize(grad_f: np.ndarray, feat: np.ndarray, norm: float) -> np.ndarray:
    # f = z/|z|: J^T grad = (grad - (grad.f) f) / |z|
    return (grad_f - float(grad_f @ feat) * feat) / norm


def _backward_branch(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    branch: model_mod._BranchCache,
    head_idx: int,
    feat_pos: np.ndarray | None,
    g_pos: np.ndarray | None,
    feat_neg: np.ndarray | None,
    g_neg: np.ndarray | None,
    g_q: np.ndarray | None,
) -> None:
    """Accumulate one sample's parameter gradients from its feature gradients."""
    cfg = params.config
    enc, pc = branch.enc, branch.prop
    hc = pc.heads[head_idx]
    n_hidden = cfg.hidden
    g_hidden = np.zeros(n_hidden)

    if g_q is not None:
        gz = _bw_normalize(g_q, enc.q, enc.z_norm)
        grads["w_out"] += np.outer(enc.hidden, gz)
        grads["b_out"] += gz
        g_hidden += params.w_out @ gz

    g_mask = np.zeros(hc.tau.shape[0])
    touched_mask = False

    if g_pos is not None:
        gz = _bw_normalize(g_pos, feat_pos, hc.pos_norm)
        grads["w_out"] += np.outer(hc.y_pos, gz)
        grads["b_out"] += gz
        g_y = params.w_out @ gz
        grads["w_video"] += np.outer(hc.x_pos, g_y)
        grads["b_video"] += g_y
        g_mask += pc.video @ (params.w_video @ g_y)
        touched_mask = True

    if g_neg is not None:
        gz = _bw_normalize(g_neg, feat_neg, hc.neg_norm)
        grads["w_out"] += np.outer(hc.y_neg, gz)
        grads["b_out"] += gz
        g_y = params.w_out @ gz
        grads["w_video"] += np.outer(hc.x_neg, g_y)
        grads["b_video"] += g_y
        g_h = pc.video @ (params.w_video @ g_y)
        if not hc.neg_flat:
            # h = d/sum(d), d_t = g_peak - g_t
            g_vec = hc.u / hc.u_sum
            h_vec = (g_vec[hc.neg_peak] - g_vec) / hc.neg_sum
            g_d = (g_h - float(g_h @ h_vec)) / hc.neg_sum
            g_mask -= g_d
            g_mask[hc.neg_peak] += float(g_d.sum())
            touched_mask = True
        # flat fallback is a constant mask: no gradient path

    if touched_mask:
        g_vec = hc.u / hc.u_sum
        center = model_mod._sigmoid(hc.a_center)
        half_width = cfg.r_min + (cfg.r_max - cfg.r_min) * hc.s_width
        sigma = half_width / 3.0
        diff = hc.tau - center
        g_u = (g_mask - float(g_mask @ g_vec)) / hc.u_sum
        weighted = g_u * hc.u
        d_center = float((weighted * diff).sum()) / (sigma * sigma)
        d_sigma = float((weighted * diff * diff).sum()) / (sigma ** 3)
        d_half = d_sigma / 3.0
        g_ac = d_center * center * (1.0 - center)
        g_aw = d_half * (cfg.r_max - cfg.r_min) * hc.s_width * (1.0 - hc.s_width)
        grads["w_center"][head_idx] += g_ac * pc.cat
        grads["b_center"][head_idx] += g_ac
        grads["w_width"][head_idx] += g_aw * pc.cat
        grads["b_width"][head_idx] += g_aw
        g_cat = g_ac * params.w_center[head_idx] + g_aw * params.w_width[head_idx]
        g_vbar = g_cat[:n_hidden]
        g_hidden += g_cat[n_hidden:]
        grads["w_video"] += np.outer(pc.video_mean, g_vbar)
        grads["b_video"] += g_vbar

    g_pre = g_hidden * (1.0 - enc.hidden ** 2)
    grads["w_query"] += np.outer(enc.word_mean, g_pre)
    grads["b_query"] += g_pre


def _grad_total_impl(
    params: ModelParams,
    bundle: FeatureBundle,
    margins: Margins,
    toggles: LossToggles,
    base: BaseScorer,
) -> tuple[_LossDiag, dict[str, np.ndarray]]:
    diag, base_score = _loss_parts(bundle, margins, toggles, base)
    sel = diag.selected
    prop = bundle.proposals[sel]
    p, p_n = prop.pos_feat, prop.neg_feat
    a1, a2, a3, a4, a5, a6 = (1.0 if a else 0.0 for a in diag.acts[:6])
    t = toggles

    # coefficient of each raw hinge loss inside the (toggled) total
    c_lq = (1.0 if t.use_l_query else 0.0) + (a5 if t.use_l_rank_query else 0.0)
    c_lqn = -(a5 if t.use_l_rank_query else 0.0)
    c_lp = (1.0 if t.use_l_prop else 0.0) + (a6 if t.use_l_rank_prop else 0.0)
    c_lpn = -(a6 if t.use_l_rank_prop else 0.0)

    dq = bundle.q_dis - bundle.q_sim
    dp = bundle.p_dis - bundle.p_sim
    g_p = c_lq * a1 * dq + c_lp * a2 * dp + base_score.grad_p
    g_pn = c_lqn * a3 * dq + c_lpn * a4 * dp + base_score.grad_p_n
    g_q = base_score.grad_q
    g_qsim = -(c_lq * a1) * p - (c_lqn * a3) * p_n
    g_qdis = (c_lq * a1) * p + (c_lqn * a3) * p_n
    g_psim = -(c_lp * a2) * p - (c_lpn * a4) * p_n
    g_pdis = (c_lp * a2) * p + (c_lpn * a4) * p_n

    grads = model_mod.zero_grads(params)
    _backward_branch(
        params, grads, bundle.anchor_cache, sel,
        feat_pos=p, g_pos=g_p, feat_neg=p_n, g_neg=g_pn, g_q=g_q,
    )
    if not bundle.stop_gradient_branches:
        _backward_branch(
            params, grads, bundle.sim_cache, 0,
            feat_pos=bundle.p_sim, g_pos=g_psim, feat_neg=None, g_neg=None, g_q=g_qsim,
        )
        _backward_branch(
            params, grads, bundle.dis_cache, 0,
            feat_pos=bundle.p_dis, g_pos=g_pdis, feat_neg=None, g_neg=None, g_q=g_qdis,
        )
    return diag, grads


def grad_total(
    params: ModelParams,
    anchor_words: np.ndarray,
    anchor_video: np.ndarray,
    sim_words: np.ndarray,
    sim_video: np.ndarray,
    dis_words: np.ndarray,
    dis_video: np.ndarray,
    margins: Margins,
    toggles: LossToggles | None = None,
    base: BaseScorer | None = None,
    stop_gradient_branches: bool = False,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Forward + analytic backward for one triple.

    Returns the loss breakdown and a parameter-name -> gradient dict. With
    ``stop_gradient_branches`` the mined samples' features are treated as
    constants (their encoder passes contribute nothing).
    """
    toggles, base = _resolve(margins, toggles, base)
    bundle = model_mod.forward_bundle(
        params, anchor_words, anchor_video, sim_words, sim_video, dis_words, dis_video,
        stop_gradient_branches=stop_gradient_branches,
    )
    diag, grads = _grad_total_impl(params, bundle, margins, toggles, base)
    return diag.breakdown, grads


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class FdReport:
    """Outcome of one finite-difference gradient check."""

    max_rel_error: float
    n_checked: int
    n_excluded: int
    n_small: int
    n_coords: int
    worst_coord: str = ""

    @property
    def all_excluded(self) -> bool:
        return self.n_checked == 0


def _diag_kink(a: _LossDiag, b: _LossDiag) -> bool:
    if a.selected != b.selected or a.sel_peak != b.sel_peak or a.sel_flat != b.sel_flat:
        return True
    if a.acts != b.acts:
        return True
    for diag in (a, b):
        if any(abs(z) < KINK_ATOL for z in diag.pre):
            return True
        if diag.sel_gap < KINK_ATOL:
            return True
    return False


def fd_check_report(
    params: ModelParams,
    anchor_words: np.ndarray,
    anchor_video: np.ndarray,
    sim_words: np.ndarray,
    sim_video: np.ndarray,
    dis_words: np.ndarray,
    dis_video: np.ndarray,
    margins: Margins,
    eps: float = 1e-4,
    toggles: LossToggles | None = None,
    base: BaseScorer | None = None,
    stop_gradient_branches: bool = False,
) -> FdReport:
    """Central-difference check of grad_total over every parameter coordinate.

    Coordinates where +-eps crosses a hinge kink, flips the selected head, or
    flips a mask argmax are excluded: the objective is only piecewise smooth
    and finite differences are meaningless across the seams. A coordinate
    whose primary-step discrepancy is large is re-estimated at eps/10 and
    10*eps and the best agreement is kept; truncation and roundoff push the
    optimal step in opposite directions, so no single step suits both a
    high-curvature coordinate and a near-zero-gradient one.
    """
    toggles, base = _resolve(margins, toggles, base)

    frozen = None
    if stop_gradient_branches:
        probe = model_mod.forward_bundle(
            params, anchor_words, anchor_video, sim_words, sim_video, dis_words, dis_video,
            stop_gradient_branches=True,
        )
        frozen = (probe.q_sim, probe.q_dis, probe.p_sim, probe.p_dis)

    def evaluate(p: ModelParams) -> _LossDiag:
        if frozen is None:
            bundle = model_mod.forward_bundle(
                p, anchor_words, anchor_video, sim_words, sim_video, dis_words, dis_video
            )
        else:
            enc = model_mod.encode_query(p, anchor_words)
            props, cache = model_mod._propose_cached(p, anchor_video, enc.hidden)
            bundle = FeatureBundle(
                q=enc.q,
                q_sim=frozen[0],
                q_dis=frozen[1],
                proposals=props,
                p_sim=frozen[2],
                p_dis=frozen[3],
                stop_gradient_branches=True,
                anchor_cache=model_mod._BranchCache(enc, cache),
            )
        return _loss_parts(bundle, margins, toggles, base)[0]

    diag_c = evaluate(params)
    bundle_grad = model_mod.forward_bundle(
        params, anchor_words, anchor_video, sim_words, sim_video, dis_words, dis_video,
        stop_gradient_branches=stop_gradient_branches,
    )
    _, grads = _grad_total_impl(params, bundle_grad, margins, toggles, base)

    def probe(flat: np.ndarray, i: int, analytic: float, step: float):
        """-> ('ok', rel) | ('kink', inf) | ('small', 0) for one step size."""
        orig = flat[i]
        flat[i] = orig + step
        diag_p = evaluate(params)
        flat[i] = orig - step
        diag_m = evaluate(params)
        flat[i] = orig
        if _diag_kink(diag_c, diag_p) or _diag_kink(diag_c, diag_m):
            return "kink", np.inf
        numeric = (diag_p.breakdown.total - diag_m.breakdown.total) / (2.0 * step)
        denom = abs(analytic) + abs(numeric)
        if denom <= FD_DENOM_FLOOR:
            return "small", 0.0
        return "ok", abs(analytic - numeric) / denom

    max_rel = 0.0
    worst = ""
    n_checked = n_excluded = n_small = n_coords = 0
    for name in model_mod.PARAM_NAMES:
        arr = getattr(params, name)
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.shape[0]):
            n_coords += 1
            outcomes = [probe(flat, i, gflat[i], eps)]
            if not (outcomes[0][0] == "ok" and outcomes[0][1] <= FD_REFINE_THRESHOLD):
                outcomes += [
                    probe(flat, i, gflat[i], eps * f) for f in FD_REFINE_FACTORS
                ]
            rels = [r for kind, r in outcomes if kind == "ok"]
            if rels:
                rel = min(rels)
                n_checked += 1
                if rel > max_rel:
                    max_rel = rel
                    worst = f"{name}[{i}]"
            elif any(kind == "small" for kind, _ in outcomes):
                n_small += 1
            else:
                n_excluded += 1
    return FdReport(
        max_rel_error=max_rel,
        n_checked=n_checked,
        n_excluded=n_excluded,
        n_small=n_small,
        n_coords=n_coords,
        worst_coord=worst,
    )


def fd_check(
    params: ModelParams,
    anchor_words: np.ndarray,
    anchor_video: np.ndarray,
    sim_words: np.ndarray,
    sim_video: np.ndarray,
    dis_words: np.ndarray,
    dis_video: np.ndarray,
    margins: Margins,
    eps: float = 1e-4,
    toggles: LossToggles | None = None,
    base: BaseScorer | None = None,
    stop_gradient_branches: bool = False,
) -> float:
    """Maximum relative analytic-vs-numeric gradient discrepancy (see report)."""
    return fd_check_report(
        params, anchor_words, anchor_video, sim_words, sim_video, dis_words, dis_video,
        margins, eps=eps, toggles=toggles, base=base,
        stop_gradient_branches=stop_gradient_branches,
    ).max_rel_error
