"""Pure-numpy batch kernels.

Reference implementations of the hot per-batch primitives. A compiled twin
lives in ``_ckern.pyx``; ``kernels/__init__`` picks one of the two at import
time. Both lanes take float64 arrays and agree to within summation-order
rounding (~1e-15 relative).
"""

import numpy as np


def softmax_rows(logits):
    """Row-wise softmax with the max-shift trick."""
    s = np.ascontiguousarray(logits, dtype=np.float64)
    shifted = s - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward_rows(probs, dprobs):
    """Given p = softmax(s) and dL/dp, return dL/ds."""
    p = np.ascontiguousarray(probs, dtype=np.float64)
    dp = np.ascontiguousarray(dprobs, dtype=np.float64)
    inner = np.sum(p * dp, axis=1, keepdims=True)
    return p * (dp - inner)


def entropy_rows(probs, floor):
    """Per-row entropy -sum p*log(max(p, floor)), in nats.

    The floor clamp applies inside the log only, so a one-hot row comes out
    exactly 0.0 (0 * log(floor) == 0).
    """
    p = np.ascontiguousarray(probs, dtype=np.float64)
    logp = np.log(np.maximum(p, floor))
    return -np.einsum("ij,ij->i", p, logp)


def entropy_rows_grad(probs, floor):
    """Elementwise d(entropy_rows)/dp: -(log(max(p, floor)) + [p > floor])."""
    p = np.ascontiguousarray(probs, dtype=np.float64)
    clamped = np.maximum(p, floor)
    return -(np.log(clamped) + (p > floor))
