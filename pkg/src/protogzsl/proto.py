"""Prototype model: score visual features against embedded class
prototypes, turn scores into soft-assignment probability vectors, and
predict by argmax.

Scores are softmax logits (higher = closer). For the asymmetric dot kind
the logit is max(m * (x . z), 0) with m = m1 for source-class prototypes
and m2 for target-class prototypes, which calibrates source confidence
against target uncertainty. Euclidean uses the squared distance (no root)
so gradients stay smooth; only relative logits matter under softmax.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .ndcore import EmbedNet, net_forward

DISTANCE_KINDS = ("euclidean", "cosine", "dot", "asym_dot")


@dataclass(frozen=True)
class DistanceSpec:
    """Which score is used; m1/m2 only matter for kind='asym_dot'."""

    kind: str = "asym_dot"
    m1: float = 0.5
    m2: float = 1.0

    def __post_init__(self):
        if self.kind not in DISTANCE_KINDS:
            raise ValueError(
                f"unknown distance kind {self.kind!r}; "
                f"expected one of {DISTANCE_KINDS}")
        if self.m1 <= 0 or self.m2 <= 0:
            raise ValueError("m1 and m2 must be positive")


@dataclass(frozen=True)
class ClassSet:
    """An ordered subset of class ids plus which side(s) it spans.

    Ids follow the sources-first convention (1..S are source classes,
    S+1..S+T target), so n_source alone determines each id's side.
    """

    ids: tuple
    side: str
    n_source: int

    def __post_init__(self):
        if len(self.ids) == 0:
            raise ValueError("class set must be non-empty")
        if self.side not in ("source", "target", "all"):
            raise ValueError(f"bad side {self.side!r}")
        if list(self.ids) != sorted(self.ids):
            raise ValueError("class ids must be ascending")
        for c in self.ids:
            src = c <= self.n_source
            if self.side == "source" and not src:
                raise ValueError(f"id {c} is not a source class")
            if self.side == "target" and src:
                raise ValueError(f"id {c} is not a target class")

    def __len__(self):
        return len(self.ids)

    def id_array(self):
        return np.asarray(self.ids, dtype=np.int64)

    def m_factors(self, spec):
        """Per-class multiplier row for asym_dot, else None."""
        if spec.kind != "asym_dot":
            return None
        ids = self.id_array()
        return np.where(ids <= self.n_source, spec.m1, spec.m2)


def source_set(n_source, n_target):
    return ClassSet(tuple(range(1, n_source + 1)), "source", n_source)


def target_set(n_source, n_target):
    return ClassSet(tuple(range(n_source + 1, n_source + n_target + 1)),
                    "target", n_source)


def all_set(n_source, n_target):
    return ClassSet(tuple(range(1, n_source + n_target + 1)), "all", n_source)


@dataclass
class ProbVector:
    """Soft assignment of one point over an ordered prototype set."""

    class_ids: tuple
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if len(self.class_ids) != self.probs.shape[0]:
            raise ValueError("class_ids and probs lengths differ")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities do not sum to 1")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("probabilities outside [0, 1]")


# -- batch score machinery ---------------------------------------------------

@dataclass
class ScoreAux:
    """Everything the score backward pass needs from the forward pass."""

    kind: str
    x: np.ndarray
    z: np.ndarray
    m_row: np.ndarray      # asym_dot only
    gram: np.ndarray       # asym_dot: raw X @ Z.T before clamp
    x_norm: np.ndarray     # cosine only, shape (N, 1)
    z_norm: np.ndarray     # cosine only, shape (K,)
    scores: np.ndarray


def score_matrix(x, z, spec, m_row=None):
    """Score every row of x (N x P) against every row of z (K x P).

    Returns (scores, aux); aux feeds score_matrix_backward. m_row is the
    per-prototype multiplier and is required for kind='asym_dot'.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape[1] != z.shape[1]:
        raise ValueError(
            f"feature dim mismatch: points {x.shape} vs prototypes {z.shape}")
    kind = spec.kind
    gram = x_norm = z_norm = None
    if kind == "euclidean":
        s = 2.0 * (x @ z.T)
        s -= np.sum(x * x, axis=1)[:, None]
        s -= np.sum(z * z, axis=1)[None, :]
    elif kind == "cosine":
        x_norm = np.linalg.norm(x, axis=1, keepdims=True)
        z_norm = np.linalg.norm(z, axis=1)
        if np.any(x_norm == 0) or np.any(z_norm == 0):
            raise ValueError("cosine score undefined for zero-norm vectors")
        s = (x / x_norm) @ (z / z_norm[:, None]).T
    elif kind == "dot":
        s = x @ z.T
    else:  # asym_dot
        if m_row is None:
            raise ValueError("asym_dot needs per-class m factors")
        gram = x @ z.T
        s = np.maximum(gram * m_row[None, :], 0.0)
    return s, ScoreAux(kind, x, z, m_row, gram, x_norm, z_norm, s)


def score_matrix_backward(aux, ds, want_dx=False):
    """Map dL/dscores back to (dL/dx, dL/dz); dx is None unless asked for.

    asym_dot takes subgradient 0 at the clamp kink.
    """
    x, z = aux.x, aux.z
    kind = aux.kind
    if kind == "euclidean":
        col = ds.sum(axis=0)                      # (K,)
        dz = 2.0 * (ds.T @ x - col[:, None] * z)
        dx = None
        if want_dx:
            row = ds.sum(axis=1)                  # (N,)
            dx = 2.0 * (ds @ z - row[:, None] * x)
        return dx, dz
    if kind == "cosine":
        xs = x / aux.x_norm
        zs = z / aux.z_norm[:, None]
        diag_z = np.sum(ds * aux.scores, axis=0)  # (K,)
        dz = (ds.T @ xs - diag_z[:, None] * zs) / aux.z_norm[:, None]
        dx = None
        if want_dx:
            diag_x = np.sum(ds * aux.scores, axis=1)
            dx = (ds @ zs - diag_x[:, None] * xs) / aux.x_norm
        return dx, dz
    if kind == "dot":
        dx = ds @ z if want_dx else None
        return dx, ds.T @ x
    # asym_dot
    eff = ds * (aux.gram > 0.0) * aux.m_row[None, :]
    dx = eff @ z if want_dx else None
    return dx, eff.T @ x


def prob_matrix(x, z_full, classes, spec):
    """Soft-assignment rows for a batch: softmax of scores over classes.ids.

    z_full is the full (S+T) x P prototype matrix with row c-1 holding class
    c; the relevant rows are selected here. Returns (probs, aux) so loss
    code can push gradients back through the same scores.
    """
    z = np.asarray(z_full, dtype=np.float64)[classes.id_array() - 1]
    s, aux = score_matrix(np.atleast_2d(x), z, spec, classes.m_factors(spec))
    return kernels.softmax_rows(s), aux


def pv(x, z_full, classes, spec):
    """Probability vector of a single point over classes.ids."""
    probs, _ = prob_matrix(np.atleast_2d(x), z_full, classes, spec)
    return ProbVector(tuple(classes.ids), probs[0])


def score(x, z, spec, side="source"):
    """Score one point against one prototype; side picks m1 vs m2."""
    if side not in ("source", "target"):
        raise ValueError(f"bad side {side!r}")
    m = np.array([spec.m1 if side == "source" else spec.m2])
    s, _ = score_matrix(np.atleast_2d(x), np.atleast_2d(z), spec,
                        m if spec.kind == "asym_dot" else None)
    return float(s[0, 0])


def predict_batch(x, z_full, classes, spec):
    """Argmax class ids for each row of x; ties go to the lowest id."""
    probs, _ = prob_matrix(x, z_full, classes, spec)
    return classes.id_array()[np.argmax(probs, axis=1)]


def predict(x, z_full, classes, spec):
    return int(predict_batch(np.atleast_2d(x), z_full, classes, spec)[0])


def embed_prototypes(net: EmbedNet, v, train_mode=False, rng=None):
    """Map the attribute table (rows ordered by class id) into visual space."""
    z, _ = net_forward(net, v, train_mode=train_mode, rng=rng)
    return z
