"""Dense float64 math substrate: layer primitives with hand-derived
gradients, the Adam optimizer, and a finite-difference gradient checker.

Everything runs in 64-bit: the losses downstream take logs of small
probabilities and compare entropies against margins of a few hundredths,
which 32-bit drift would blur.
"""

from dataclasses import dataclass, field

import numpy as np


def make_rng(seed):
    """Deterministic generator for a 64-bit seed.

    SeedSequence + PCG64 give a fixed, documented seed-to-stream map that
    does not vary across platforms, so identical seeds yield identical
    streams everywhere.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_rngs(seed, n):
    """n independent child generators, deterministically derived from seed.

    Child i is the same regardless of n, so adding streams later never
    perturbs existing ones.
    """
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


def as_matrix(values, name="matrix"):
    """Coerce to a finite, C-contiguous float64 2-D array."""
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch: cannot multiply {a.shape} by {b.shape}")
    return a @ b


@dataclass
class ParamBlock:
    """A parameter tensor with its gradient and Adam moment buffers."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)
        shapes = {self.value.shape, self.grad.shape,
                  self.adam_m.shape, self.adam_v.shape}
        if len(shapes) != 1:
            raise ValueError(f"param {self.name}: buffer shapes differ")


class EmbedNet:
    """Two fully connected layers mapping attribute vectors into visual
    space: affine -> LeakyReLU -> dropout, then affine -> Tanh.

    The Tanh squashes every output coordinate into [-1, 1]. Dropout is the
    inverted kind and applies to the first layer only.
    """

    def __init__(self, w1, b1, w2, b2, dropout_rate=0.5, leaky_slope=0.01):
        self.w1 = ParamBlock("w1", w1)
        self.b1 = ParamBlock("b1", b1)
        self.w2 = ParamBlock("w2", w2)
        self.b2 = ParamBlock("b2", b2)
        if self.w1.value.shape[1] != self.b1.value.shape[0]:
            raise ValueError("w1/b1 dimension mismatch")
        if self.w2.value.shape[1] != self.b2.value.shape[0]:
            raise ValueError("w2/b2 dimension mismatch")
        if self.w1.value.shape[1] != self.w2.value.shape[0]:
            raise ValueError("layer1/layer2 dimension mismatch")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        self.dropout_rate = float(dropout_rate)
        self.leaky_slope = float(leaky_slope)

    @property
    def q_dim(self):
        return self.w1.value.shape[0]

    @property
    def hidden(self):
        return self.w1.value.shape[1]

    @property
    def p_dim(self):
        return self.w2.value.shape[1]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def zero_grads(self):
        for p in self.params():
            p.grad[:] = 0.0

    def snapshot(self):
        """Copy of the current parameter values."""
        return {p.name: p.value.copy() for p in self.params()}

    def restore(self, snap):
        for p in self.params():
            p.value[:] = snap[p.name]


def init_net(q_dim, p_dim, hidden=2048, rng=None, dropout_rate=0.5,
             leaky_slope=0.01):
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))); biases zero
    except a small positive output bias.

    Keeps the Tanh output layer unsaturated at initialization. The +0.05
    output bias matters for the clamped asymmetric score: it starts every
    prototype with a positive component along positive-sum feature vectors,
    so no class begins with all its scores clamped at zero (a state whose
    gradient vanishes exactly and which no amount of training can leave).
    """
    if rng is None:
        rng = make_rng(0)
    lim1 = np.sqrt(6.0 / (q_dim + hidden))
    lim2 = np.sqrt(6.0 / (hidden + p_dim))
    return EmbedNet(
        rng.uniform(-lim1, lim1, size=(q_dim, hidden)),
        np.zeros(hidden),
        rng.uniform(-lim2, lim2, size=(hidden, p_dim)),
        np.full(p_dim, 0.05),
        dropout_rate=dropout_rate,
        leaky_slope=leaky_slope,
    )


# -- layer primitives ------------------------------------------------------

def affine_forward(x, w, b):
    return x @ w + b


def affine_backward(x, w, dout):
    """Returns (dx, dw, db) for out = x @ w + b."""
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def leaky_relu_forward(x, slope):
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(x, slope, dout):
    return np.where(x > 0, dout, slope * dout)


def tanh_forward(x):
    return np.tanh(x)


def tanh_backward(y, dout):
    """Backward through tanh given the forward output y."""
    return dout * (1.0 - y * y)


def dropout_mask(rng, shape, rate):
    """Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate).

    Multiplying by the mask keeps the expected activation equal to the
    undropped value, so evaluation needs no rescaling.
    """
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


@dataclass
class ForwardCache:
    """Intermediates captured by net_forward for the matching backward."""

    net: EmbedNet
    inputs: np.ndarray
    pre1: np.ndarray
    drop1: np.ndarray
    mask: np.ndarray  # None in eval mode or when dropout_rate == 0
    z: np.ndarray


def net_forward(net, v, train_mode=False, rng=None):
    """Run the two layers over the rows of v (C x Q) -> (Z, cache).

    Dropout fires only when train_mode is set; evaluation passes are pure
    and deterministic.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != net.q_dim:
        raise ValueError(
            f"input is {v.shape}, net expects (*, {net.q_dim})")
    pre1 = affine_forward(v, net.w1.value, net.b1.value)
    act1 = leaky_relu_forward(pre1, net.leaky_slope)
    mask = None
    if train_mode and net.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train_mode forward needs an rng for dropout")
        mask = dropout_mask(rng, act1.shape, net.dropout_rate)
        drop1 = act1 * mask
    else:
        drop1 = act1
    z = tanh_forward(affine_forward(drop1, net.w2.value, net.b2.value))
    return z, ForwardCache(net, v, pre1, drop1, mask, z)


def net_backward(net, cache, dz):
    """Accumulate d(scalar)/d(params) into the grad buffers given dL/dZ."""
    if cache.net is not net:
        raise ValueError("cache does not belong to this net")
    dz = np.asarray(dz, dtype=np.float64)
    if dz.shape != cache.z.shape:
        raise ValueError(
            f"dZ shape {dz.shape} does not match cached output "
            f"{cache.z.shape}")
    dpre2 = tanh_backward(cache.z, dz)
    ddrop1, dw2, db2 = affine_backward(cache.drop1, net.w2.value, dpre2)
    net.w2.grad += dw2
    net.b2.grad += db2
    dact1 = ddrop1 if cache.mask is None else ddrop1 * cache.mask
    dpre1 = leaky_relu_backward(cache.pre1, net.leaky_slope, dact1)
    _, dw1, db1 = affine_backward(cache.inputs, net.w1.value, dpre1)
    net.w1.grad += dw1
    net.b1.grad += db1


# -- optimizer -------------------------------------------------------------

def adam_step(params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """Bias-corrected Adam update; zeroes the grad buffers afterwards."""
    if t < 1:
        raise ValueError("step count t must be >= 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise ValueError(f"non-finite gradient in parameter {p.name!r}")
        p.adam_m += (1.0 - beta1) * (p.grad - p.adam_m)
        p.adam_v += (1.0 - beta2) * (p.grad * p.grad - p.adam_v)
        p.value -= lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + eps)
        p.grad[:] = 0.0


# -- gradient checking -----------------------------------------------------

@dataclass
class GradCheckReport:
    """Max relative error per parameter block, against central differences."""

    max_rel_err: dict
    tol: float

    @property
    def failures(self):
        return sorted(n for n, e in self.max_rel_err.items() if e > self.tol)

    @property
    def passed(self):
        return not self.failures

    def __str__(self):
        lines = [f"grad check (tol={self.tol:g}):"]
        for name in sorted(self.max_rel_err):
            err = self.max_rel_err[name]
            status = "ok" if err <= self.tol else "FAIL"
            lines.append(f"  {name:12s} max rel err {err:.3e}  {status}")
        return "\n".join(lines)


def grad_check(loss_and_grad, params, h=1e-5, tol=1e-4):
    """Compare analytic gradients with central finite differences.

    ``loss_and_grad(want_grad)`` must return the scalar loss at the current
    parameter values and, when want_grad is true, accumulate analytic
    gradients into the grad buffers. The loss must be deterministic
    (dropout disabled). Report-only: nothing raises on mismatch.

    Per-entry relative error uses a 1e-6 denominator floor: central
    differences at h=1e-5 on an O(1) loss carry ~1e-11 of absolute
    roundoff, so entries far below 1e-6 would otherwise measure noise
    rather than gradient correctness.
    """
    for p in params:
        p.grad[:] = 0.0
    loss_and_grad(True)
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.grad[:] = 0.0

    report = {}
    for p in params:
        flat = p.value.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_and_grad(False)
            flat[i] = orig - h
            down = loss_and_grad(False)
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        a = analytic[p.name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
        report[p.name] = float(np.max(np.abs(a - fd) / denom))
    return GradCheckReport(report, tol)
