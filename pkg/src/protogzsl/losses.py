"""Information-theoretic training losses.

Sign conventions: every entropy here is the positive quantity
H = -sum p ln p, and "regularized" means divided by log2(K) so the value
lives in [0, ln 2] no matter how many classes K the probability vector
spans. Cross entropy is -sum p ln q. Hinges [.]+ take subgradient 0 at
the kink. Probabilities are clamped at prob_floor inside every log;
0 * log(floor) contributes exactly 0, so one-hot vectors score entropy 0.

Each loss has a scalar public form and an internal *_term form returning
(value, dZ) where dZ is the gradient w.r.t. the full (S+T) x P prototype
matrix; the trainer sums dZ across terms and backpropagates once through
the embedding net.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import GeneratedSet
from .proto import prob_matrix, score_matrix, score_matrix_backward

LN2 = float(np.log(2.0))


@dataclass
class LossConfig:
    """Weights, margins, and the probability floor for all loss terms."""

    lambda0: float = 1.0    # conditional-entropy weight inside the MI loss
    lambda1: float = 0.025  # MI loss weight
    lambda2: float = 0.5    # entropy-constraint weight
    lambda3: float = 0.05   # semantic-preserving weight
    gamma1: float = 0.3     # generated cross-entropy weight
    gamma2: float = 0.05    # generated MI weight
    margin1: float = 0.15
    margin2: float = 0.05
    margin3: float = 0.3
    margin4: float = 0.3
    prob_floor: float = 1e-12
    mi_marginal: bool = True  # ablation switch: marginal-entropy term on/off

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2", "lambda3",
                     "gamma1", "gamma2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("margin1", "margin2", "margin3", "margin4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.prob_floor <= 1e-6:
            raise ValueError("prob_floor must be in (0, 1e-6]")


@dataclass
class LossReport:
    """Total plus unweighted per-term values; total is their weighted sum."""

    total: float
    per_term: dict
    batch_size: int
    flags: dict = field(default_factory=dict)


def reg_entropy(probs, prob_floor=1e-12):
    """Entropy in nats divided by log2(K); K >= 2 required.

    Bounded by ln 2 for every K, which keeps margins comparable across
    class-set sizes.
    """
    p = np.asarray(getattr(probs, "probs", probs), dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ValueError("regularized entropy needs at least 2 classes")
    h = kernels.entropy_rows(p[None, :], prob_floor)[0]
    return float(h / np.log2(p.shape[0]))


def _reg_entropy_rows(probs, prob_floor):
    """(values, d/dp) of the regularized entropy for each row."""
    k = probs.shape[1]
    cap = np.log2(k)
    vals = kernels.entropy_rows(probs, prob_floor) / cap
    grads = kernels.entropy_rows_grad(probs, prob_floor) / cap
    return vals, grads


class _TermContext:
    """Shared carrier for one loss evaluation over one prototype matrix."""

    def __init__(self, z_full, spec, cfg):
        self.z_full = np.asarray(z_full, dtype=np.float64)
        self.spec = spec
        self.cfg = cfg

    def probs(self, x, classes):
        return prob_matrix(x, self.z_full, classes, self.spec)

    def lift(self, dz_rows, classes):
        """Scatter-add a subset-row gradient into full-matrix coordinates."""
        dz = np.zeros_like(self.z_full)
        np.add.at(dz, classes.id_array() - 1, dz_rows)
        return dz


def _backprop_probs(probs, dprobs, aux, want_dx=False):
    """dL/dp -> dL/d(prototype rows) through softmax and the score."""
    ds = kernels.softmax_backward_rows(probs, dprobs)
    return score_matrix_backward(aux, ds, want_dx=want_dx)


# -- cross entropy over source prototypes ------------------------------------

def ce_term(ctx, x, y, classes, want_grad=False):
    """Mean -ln p_label with soft assignments over classes.ids."""
    y = np.asarray(y)
    id_to_col = {c: j for j, c in enumerate(classes.ids)}
    try:
        cols = np.array([id_to_col[int(c)] for c in y])
    except KeyError as e:
        raise ValueError(f"label {e.args[0]} outside the class set")
    probs, aux = ctx.probs(x, classes)
    n = probs.shape[0]
    floor = ctx.cfg.prob_floor
    p_true = probs[np.arange(n), cols]
    value = float(-np.mean(np.log(np.maximum(p_true, floor))))
    if not want_grad:
        return value, None
    dprobs = np.zeros_like(probs)
    live = p_true > floor
    dprobs[np.arange(n)[live], cols[live]] = -1.0 / (n * p_true[live])
    _, dz_rows = _backprop_probs(probs, dprobs, aux)
    return value, ctx.lift(dz_rows, classes)


def cross_entropy_loss(x, y, z_full, classes, spec, cfg=None):
    ctx = _TermContext(z_full, spec, cfg or LossConfig())
    return ce_term(ctx, x, y, classes)[0]


# -- conditional-entropy margin over target prototypes -----------------------

def ent_term(ctx, x, classes, want_grad=False):
    """Mean hinge [reg_entropy(p) - margin1]+ over the batch."""
    probs, aux = ctx.probs(x, classes)
    vals, grads = _reg_entropy_rows(probs, ctx.cfg.prob_floor)
    margin = ctx.cfg.margin1
    active = vals > margin
    value = float(np.mean(np.maximum(vals - margin, 0.0)))
    if not want_grad:
        return value, None
    dprobs = grads * (active[:, None] / probs.shape[0])
    _, dz_rows = _backprop_probs(probs, dprobs, aux)
    return value, ctx.lift(dz_rows, classes)


def entropy_margin_loss(x, z_full, target_classes, spec, cfg=None):
    ctx = _TermContext(z_full, spec, cfg or LossConfig())
    return ent_term(ctx, x, target_classes)[0]


# -- mutual information -------------------------------------------------------

def mi_term(ctx, x, classes, want_grad=False):
    """-reg_entropy(batch-mean PV) + lambda0 * conditional hinge.

    The batch mean estimates the marginal assignment probability;
    minimizing the first part spreads mass across prototypes (cluster
    balancing) while the second part sharpens per-point assignments down
    to margin1.
    """
    x = np.atleast_2d(x)
    if x.shape[0] < 2:
        raise ValueError("MI loss needs a batch of at least 2 points")
    probs, aux = ctx.probs(x, classes)
    n, k = probs.shape
    cap = np.log2(k)
    floor = ctx.cfg.prob_floor

    cond_vals, cond_grads = _reg_entropy_rows(probs, floor)
    margin = ctx.cfg.margin1
    cond_active = cond_vals > margin
    cond_value = float(np.mean(np.maximum(cond_vals - margin, 0.0)))

    marginal = probs.mean(axis=0, keepdims=True)
    marg_value = float(kernels.entropy_rows(marginal, floor)[0] / cap)

    lam0 = ctx.cfg.lambda0
    if ctx.cfg.mi_marginal:
        value = -marg_value + lam0 * cond_value
    else:
        value = lam0 * cond_value
    if not want_grad:
        return value, None

    dprobs = cond_grads * (lam0 * cond_active[:, None] / n)
    if ctx.cfg.mi_marginal:
        dmarg = kernels.entropy_rows_grad(marginal, floor)[0] / cap
        dprobs -= dmarg[None, :] / n
    _, dz_rows = _backprop_probs(probs, dprobs, aux)
    return value, ctx.lift(dz_rows, classes)


def mutual_info_loss(x, z_full, target_classes, spec, cfg=None):
    ctx = _TermContext(z_full, spec, cfg or LossConfig())
    return mi_term(ctx, x, target_classes)[0]


# -- entropy constraint --------------------------------------------------------

def ec_term(ctx, x, source_classes, target_classes, want_grad=False):
    """Mean hinge [R_source + margin2 - R_target]+ per point.

    Penalizes points whose uncertainty over target prototypes fails to
    exceed their uncertainty over source prototypes by the margin.
    """
    probs_s, aux_s = ctx.probs(x, source_classes)
    probs_u, aux_u = ctx.probs(x, target_classes)
    floor = ctx.cfg.prob_floor
    r_s, g_s = _reg_entropy_rows(probs_s, floor)
    r_u, g_u = _reg_entropy_rows(probs_u, floor)
    gap = r_s + ctx.cfg.margin2 - r_u
    active = gap > 0.0
    value = float(np.mean(np.maximum(gap, 0.0)))
    if not want_grad:
        return value, None
    n = probs_s.shape[0]
    w = active[:, None] / n
    _, dz_s = _backprop_probs(probs_s, g_s * w, aux_s)
    _, dz_u = _backprop_probs(probs_u, -g_u * w, aux_u)
    return value, ctx.lift(dz_s, source_classes) + ctx.lift(
        dz_u, target_classes)


def entropy_constraint_loss(x, z_full, source_classes, target_classes, spec,
                            cfg=None):
    ctx = _TermContext(z_full, spec, cfg or LossConfig())
    return ec_term(ctx, x, source_classes, target_classes)[0]


# -- semantic preserving -------------------------------------------------------

def semantic_pv(v, source_classes, target_classes, spec):
    """Target-class assignment rows over source classes in attribute space.

    Constant w.r.t. the network: attributes are data, so this side of the
    cross entropy never receives gradients. Source-side m applies to every
    prototype here.
    """
    v = np.asarray(v, dtype=np.float64)
    vs = v[source_classes.id_array() - 1]
    vt = v[target_classes.id_array() - 1]
    m_row = source_classes.m_factors(spec)
    s, _ = score_matrix(vt, vs, spec, m_row)
    return kernels.softmax_rows(s)


def spce_term(ctx, v, source_classes, target_classes, want_grad=False,
              sem_pv=None):
    """Mean hinge over target classes of the regularized cross entropy
    between attribute-space and visual-space assignments over sources.

    Gradients flow through the visual-space side only, into both the
    embedded target rows and the embedded source rows.
    """
    s_count = len(source_classes)
    if s_count < 2:
        raise ValueError("semantic-preserving loss needs at least 2 source "
                         "classes")
    if sem_pv is None:
        sem_pv = semantic_pv(v, source_classes, target_classes, ctx.spec)
    zs = ctx.z_full[source_classes.id_array() - 1]
    zt = ctx.z_full[target_classes.id_array() - 1]
    m_row = source_classes.m_factors(ctx.spec)
    s, aux = score_matrix(zt, zs, ctx.spec, m_row)
    probs = kernels.softmax_rows(s)

    floor = ctx.cfg.prob_floor
    clamped = np.maximum(probs, floor)
    cap = np.log2(s_count)
    ce = -np.sum(sem_pv * np.log(clamped), axis=1) / cap
    margin = ctx.cfg.margin3
    active = ce > margin
    t_count = ce.shape[0]
    value = float(np.mean(np.maximum(ce - margin, 0.0)))
    if not want_grad:
        return value, None
    dprobs = -(sem_pv / clamped) * (probs > floor)
    dprobs *= active[:, None] / (t_count * cap)
    ds = kernels.softmax_backward_rows(probs, dprobs)
    dzt, dzs = score_matrix_backward(aux, ds, want_dx=True)
    return value, ctx.lift(dzt, target_classes) + ctx.lift(
        dzs, source_classes)


def semantic_preserving_loss(v, z_full, source_classes, target_classes, spec,
                             cfg=None):
    ctx = _TermContext(z_full, spec, cfg or LossConfig())
    return spce_term(ctx, v, source_classes, target_classes)[0]


def spce_class_values(v, z_full, source_classes, target_classes, spec,
                      cfg=None):
    """Per-target-class regularized cross entropy, no hinge (diagnostic)."""
    cfg = cfg or LossConfig()
    sem = semantic_pv(v, source_classes, target_classes, spec)
    zs = np.asarray(z_full)[source_classes.id_array() - 1]
    zt = np.asarray(z_full)[target_classes.id_array() - 1]
    s, _ = score_matrix(zt, zs, spec, source_classes.m_factors(spec))
    probs = kernels.softmax_rows(s)
    clamped = np.maximum(probs, cfg.prob_floor)
    return -np.sum(sem * np.log(clamped), axis=1) / np.log2(len(source_classes))


# -- generated-data terms ------------------------------------------------------

def selection_mask(gen, z_full, target_classes, spec, cfg=None):
    """Boolean row mask: target-side assignment entropy strictly below
    margin4 (confident points survive)."""
    cfg = cfg or LossConfig()
    if gen.m == 0:
        return np.zeros(0, dtype=bool)
    probs, _ = prob_matrix(gen.X, z_full, target_classes, spec)
    vals = kernels.entropy_rows(probs, cfg.prob_floor) / np.log2(
        probs.shape[1])
    return vals < cfg.margin4


def select_generated(gen, z_full, target_classes, spec, cfg=None):
    """Filter a generated set down to the rows passing the entropy
    criterion; may come back empty."""
    keep = selection_mask(gen, z_full, target_classes, spec, cfg)
    return GeneratedSet(gen.X[keep], gen.y[keep])


def gen_ce_term(ctx, sel, target_classes, want_grad=False):
    """Cross entropy of selected generated points over target prototypes."""
    if sel.m == 0:
        warnings.warn("empty generated selection: generated cross entropy "
                      "is 0 by definition")
        dz = np.zeros_like(ctx.z_full) if want_grad else None
        return 0.0, dz
    return ce_term(ctx, sel.X, sel.y, target_classes, want_grad=want_grad)


def generated_cross_entropy_loss(sel, z_full, target_classes, spec, cfg=None):
    ctx = _TermContext(z_full, spec, cfg or LossConfig())
    return gen_ce_term(ctx, sel, target_classes)[0]


def generated_mutual_info_loss(gen_x, z_full, source_classes, spec, cfg=None):
    """The MI loss with generated points assigned over source prototypes."""
    ctx = _TermContext(z_full, spec, cfg or LossConfig())
    return mi_term(ctx, gen_x, source_classes)[0]


# -- combined objectives -------------------------------------------------------

def total_loss_det(x, y, v, z_full, source_classes, target_classes, spec,
                   cfg, want_grad=False, sem_pv=None):
    """CE + lambda1*MI + lambda2*EC + lambda3*SPCE -> (LossReport, dZ).

    Every term's value is computed even at weight zero (they feed the
    training diagnostics); gradient work is skipped for zero weights.
    """
    ctx = _TermContext(z_full, spec, cfg)
    terms = {}
    dz = np.zeros_like(ctx.z_full) if want_grad else None

    val, g = ce_term(ctx, x, y, source_classes, want_grad=want_grad)
    terms["ce"] = val
    if want_grad:
        dz += g
    val, g = mi_term(ctx, x, target_classes,
                     want_grad=want_grad and cfg.lambda1 > 0)
    terms["mi"] = val
    if want_grad and cfg.lambda1 > 0:
        dz += cfg.lambda1 * g
    val, g = ec_term(ctx, x, source_classes, target_classes,
                     want_grad=want_grad and cfg.lambda2 > 0)
    terms["ec"] = val
    if want_grad and cfg.lambda2 > 0:
        dz += cfg.lambda2 * g
    val, g = spce_term(ctx, v, source_classes, target_classes,
                       want_grad=want_grad and cfg.lambda3 > 0,
                       sem_pv=sem_pv)
    terms["spce"] = val
    if want_grad and cfg.lambda3 > 0:
        dz += cfg.lambda3 * g

    total = (terms["ce"] + cfg.lambda1 * terms["mi"]
             + cfg.lambda2 * terms["ec"] + cfg.lambda3 * terms["spce"])
    report = LossReport(float(total), terms, int(np.atleast_2d(x).shape[0]))
    return report, dz


def total_loss_gen(x, y, gen, v, z_full, source_classes, target_classes,
                   spec, cfg, want_grad=False, sem_pv=None, selected=None):
    """Seen-data objective plus gamma1 * generated CE (on the selected
    subset) and gamma2 * generated MI (on all generated points)."""
    report, dz = total_loss_det(x, y, v, z_full, source_classes,
                                target_classes, spec, cfg,
                                want_grad=want_grad, sem_pv=sem_pv)
    ctx = _TermContext(z_full, spec, cfg)
    if selected is None:
        selected = select_generated(gen, z_full, target_classes, spec, cfg)
    terms = dict(report.per_term)
    flags = dict(report.flags)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, g = gen_ce_term(ctx, selected, target_classes,
                             want_grad=want_grad and cfg.gamma1 > 0)
    terms["gen_ce"] = val
    flags["gen_selected"] = int(selected.m)
    flags["gen_total"] = int(gen.m)
    if selected.m == 0:
        flags["gen_empty"] = True
    if want_grad and cfg.gamma1 > 0:
        dz += cfg.gamma1 * g

    if gen.m >= 2:
        val, g = mi_term(ctx, gen.X, source_classes,
                         want_grad=want_grad and cfg.gamma2 > 0)
        terms["gen_mi"] = val
        if want_grad and cfg.gamma2 > 0:
            dz += cfg.gamma2 * g
    else:
        terms["gen_mi"] = 0.0

    total = (report.total + cfg.gamma1 * terms["gen_ce"]
             + cfg.gamma2 * terms["gen_mi"])
    return LossReport(float(total), terms, report.batch_size, flags), dz
