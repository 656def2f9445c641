"""GZSL metrics and training diagnostics.

Accuracies follow the per-class protocol: accuracy is computed inside each
class, then averaged unweighted over classes, so rare classes count as much
as common ones. Micro (pooled) accuracy is also reported for transparency.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .losses import spce_class_values
from .proto import all_set, embed_prototypes, predict_batch, prob_matrix
from .proto import source_set as make_source_set
from .proto import target_set as make_target_set


@dataclass
class EvalReport:
    ts: float                     # per-class mean on test_unseen, S∪T space
    tr: float                     # per-class mean on test_seen, S∪T space
    h: float
    zsl: float = None             # test_unseen over target classes only
    micro_ts: float = None
    micro_tr: float = None
    per_class: dict = field(default_factory=dict)

    def to_dict(self):
        return {"ts": self.ts, "tr": self.tr, "H": self.h, "zsl": self.zsl,
                "micro_ts": self.micro_ts, "micro_tr": self.micro_tr,
                "per_class": {str(k): v for k, v in self.per_class.items()}}


def per_class_accuracy(preds, truths, class_ids):
    """Per-class accuracy map plus its unweighted mean, in percent.

    Classes of class_ids with no test points are left out of both the map
    and the mean.
    """
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if truths.size == 0:
        raise ValueError("no test points")
    if preds.shape != truths.shape:
        raise ValueError("preds and truths lengths differ")
    acc = {}
    for c in class_ids:
        mask = truths == c
        if mask.any():
            acc[int(c)] = float(100.0 * np.mean(preds[mask] == c))
    if not acc:
        raise ValueError("no test points belong to the given classes")
    return acc, float(np.mean(list(acc.values())))


def harmonic_mean(ts, tr):
    """2*ts*tr/(ts+tr); zero when either side is zero."""
    if ts < 0 or tr < 0:
        raise ValueError("accuracies must be non-negative")
    if ts + tr == 0:
        return 0.0
    return 2.0 * ts * tr / (ts + tr)


def gzsl_report(net, bundle, spec):
    """Full evaluation: GZSL accuracies over S∪T plus the ZSL accuracy.

    Pure given (net, bundle): prototypes are embedded in eval mode.
    """
    z = embed_prototypes(net, bundle.V)
    searched = all_set(bundle.n_source, bundle.n_target)
    tgt = make_target_set(bundle.n_source, bundle.n_target)

    x_unseen = bundle.X[bundle.test_unseen_idx]
    y_unseen = bundle.y[bundle.test_unseen_idx]
    x_seen = bundle.X[bundle.test_seen_idx]
    y_seen = bundle.y[bundle.test_seen_idx]

    preds_unseen = predict_batch(x_unseen, z, searched, spec)
    preds_seen = predict_batch(x_seen, z, searched, spec)
    acc_u, ts = per_class_accuracy(preds_unseen, y_unseen, bundle.target_ids)
    acc_s, tr = per_class_accuracy(preds_seen, y_seen, bundle.source_ids)

    preds_zsl = predict_batch(x_unseen, z, tgt, spec)
    _, zsl = per_class_accuracy(preds_zsl, y_unseen, bundle.target_ids)

    per_class = {}
    per_class.update(acc_s)
    per_class.update(acc_u)
    return EvalReport(
        ts=ts, tr=tr, h=harmonic_mean(ts, tr), zsl=zsl,
        micro_ts=float(100.0 * np.mean(preds_unseen == y_unseen)),
        micro_tr=float(100.0 * np.mean(preds_seen == y_seen)),
        per_class=per_class,
    )


def _target_prob_rows(net, points, bundle, spec, z=None):
    if z is None:
        z = embed_prototypes(net, bundle.V)
    tgt = make_target_set(bundle.n_source, bundle.n_target)
    probs, _ = prob_matrix(np.atleast_2d(points), z, tgt, spec)
    return probs


def mi_estimate(net, points, bundle, spec, prob_floor=1e-12, z=None,
                regularized=True):
    """Plug-in mutual information between points and target-class
    assignment: entropy of the mean PV minus the mean per-point entropy.

    Regularized (divided by log2 T) by default so values are comparable
    across target-set sizes; pass regularized=False for raw nats.
    """
    probs = _target_prob_rows(net, points, bundle, spec, z=z)
    if probs.shape[0] == 0:
        raise ValueError("no points given")
    marg = probs.mean(axis=0, keepdims=True)
    h_marg = kernels.entropy_rows(marg, prob_floor)[0]
    h_cond = kernels.entropy_rows(probs, prob_floor).mean()
    mi = float(h_marg - h_cond)
    if regularized:
        mi /= np.log2(probs.shape[1])
    return mi


def entropy_gap_samples(net, points, bundle, spec, prob_floor=1e-12, z=None):
    """Per-point R_target - R_source regularized-entropy gaps.

    Positive gaps mean the point is more uncertain over target prototypes
    than over source prototypes, which is the trained-for regime.
    """
    if z is None:
        z = embed_prototypes(net, bundle.V)
    src = make_source_set(bundle.n_source, bundle.n_target)
    tgt = make_target_set(bundle.n_source, bundle.n_target)
    x = np.atleast_2d(points)
    probs_u, _ = prob_matrix(x, z, tgt, spec)
    probs_s, _ = prob_matrix(x, z, src, spec)
    r_u = kernels.entropy_rows(probs_u, prob_floor) / np.log2(probs_u.shape[1])
    r_s = kernels.entropy_rows(probs_s, prob_floor) / np.log2(probs_s.shape[1])
    return r_u - r_s


def spce_values(net, bundle, spec, cfg=None):
    """Per-target-class regularized cross entropy between attribute-space
    and visual-space source assignments (no hinge)."""
    z = embed_prototypes(net, bundle.V)
    src = make_source_set(bundle.n_source, bundle.n_target)
    tgt = make_target_set(bundle.n_source, bundle.n_target)
    return spce_class_values(bundle.V, z, src, tgt, spec, cfg=cfg)
