"""Dense tensor engine with reverse-mode differentiation.

Everything runs in float64. Forward ops build a tape; ``Tensor.backward()``
walks it in reverse topological order and accumulates gradients into the
leaves. Convolution uses the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np


class Tensor:
    """N-d value with an optional backprop record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        # constants carry no tape
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                # interior grads are dead once propagated; keep leaf grads
                node.grad = None

    # operator sugar; scalars are lifted to constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    # reduce a broadcast gradient back to the operand's shape
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def sub(a, b):
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data - b.data, _parents=(a, b))

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def mul(a, b):
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = bw if out.requires_grad else None
    return out


def tsum(a):
    out = Tensor(a.data.sum(), _parents=(a,))

    def bw(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def mean(a):
    n = a.data.size
    out = Tensor(a.data.mean(), _parents=(a,))

    def bw(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), _parents=(a,))

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    out._backward = bw if out.requires_grad else None
    return out


def narrow(a, axis, start, length):
    """Slice `length` entries from `start` along `axis`."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx], _parents=(a,))

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    out._backward = bw if out.requires_grad else None
    return out


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, _parents=(a,))

    def bw(g):
        _accum(a, g * s * (1.0 - s))

    out._backward = bw if out.requires_grad else None
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y, _parents=(a,))

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    out._backward = bw if out.requires_grad else None
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0), _parents=(a,))
    pos = a.data > 0  # subgradient 0 at the kink

    def bw(g):
        _accum(a, g * pos)

    out._backward = bw if out.requires_grad else None
    return out


def _im2col(xp, k):
    # xp: (B, C, Hp, Wp) padded input -> (B, C*k*k, H*W) patch matrix
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    b, c, h, w = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * k * k, h * w)


def conv2d(x, kernels, bias=None):
    """2-D cross-correlation with symmetric zero padding ("same" output).

    `x` is (C_in, H, W) or batched (B, C_in, H, W); `kernels` is
    (C_out, C_in, k, k) with k odd; `bias` is (C_out,) or None.
    """
    single = x.data.ndim == 3
    if kernels.data.ndim != 4:
        raise ValueError("kernels must be (C_out, C_in, k, k)")
    c_out, c_in, k, k2 = kernels.data.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd side, got {k}x{k2}")
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or xd.shape[1] != c_in:
        raise ValueError(f"input shape {x.data.shape} does not match kernels {kernels.data.shape}")
    b, _, h, w = xd.shape
    p = (k - 1) // 2

    def cols_of(arr):
        return _im2col(np.pad(arr, ((0, 0), (0, 0), (p, p), (p, p))), k)

    w2 = kernels.data.reshape(c_out, -1)
    out_d = (w2 @ cols_of(xd)).reshape(b, c_out, h, w)
    if bias is not None:
        out_d = out_d + bias.data[:, None, None]
    if single:
        out_d = out_d[0]
    parents = (x, kernels) if bias is None else (x, kernels, bias)
    out = Tensor(out_d, _parents=parents)

    def bw(g):
        gb = g[None] if single else g
        gf = gb.reshape(b, c_out, h * w)
        if kernels.requires_grad:
            # re-derive the patch matrix instead of caching it: trades a
            # second gather for not holding B*C*k*k*H*W floats per conv
            cols = cols_of(xd)
            gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0)
            _accum(kernels, gw.reshape(kernels.data.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, gb.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            wf = kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, -1)
            gx = (wf @ cols_of(gb)).reshape(b, c_in, h, w)
            _accum(x, gx[0] if single else gx)

    out._backward = bw if out.requires_grad else None
    return out


def dropout(x, p_drop, mode, rng=None):
    """Inverted dropout: scales survivors by 1/(1-p) so inference is identity."""
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if mode == "infer" or p_drop == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(x.data.shape) >= p_drop
    scale = keep / (1.0 - p_drop)
    out = Tensor(x.data * scale, _parents=(x,))

    def bw(g):
        _accum(x, g * scale)

    out._backward = bw if out.requires_grad else None
    return out


PROB_CLAMP = 1e-7


def bce_loss(probs, targets, mask=None):
    """Mean binary cross-entropy over unmasked cells; probs clamped away from {0,1}."""
    y = np.asarray(targets, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("targets must be 0/1")
    pd = probs.data
    if mask is None:
        sel = np.ones(pd.shape, dtype=bool)
    else:
        sel = np.asarray(mask, dtype=bool)
    n = int(sel.sum())
    if n == 0:
        raise ValueError("all cells masked: loss undefined")
    p = np.clip(pd, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    out = Tensor(terms[sel].mean(), _parents=(probs,))

    def bw(g):
        inside = (pd > PROB_CLAMP) & (pd < 1.0 - PROB_CLAMP)  # clamp gate
        gp = np.where(sel & inside, (p - y) / (p * (1.0 - p)), 0.0) * (g / n)
        _accum(probs, gp)

    out._backward = bw if out.requires_grad else None
    return out


def batchnorm_train(x, gamma, beta, eps=1e-5):
    """Per-channel normalization of (B, C, H, W) over (B, H, W).

    Returns (out, batch_mean, batch_var); the caller owns running stats.
    """
    xd = x.data
    if xd.ndim != 4:
        raise ValueError("batchnorm expects (B, C, H, W)")
    bsz, c, h, w = xd.shape
    n = bsz * h * w
    if n < 2:
        raise ValueError("batchnorm training needs at least 2 values per channel")
    mu = xd.mean(axis=(0, 2, 3))
    var = xd.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[:, None, None]) * inv[:, None, None]
    out_d = gamma.data[:, None, None] * xhat + beta.data[:, None, None]
    out = Tensor(out_d, _parents=(x, gamma, beta))

    def bw(g):
        gsum = g.sum(axis=(0, 2, 3))
        gxhat_sum = (g * xhat).sum(axis=(0, 2, 3))
        if gamma.requires_grad:
            _accum(gamma, gxhat_sum)
        if beta.requires_grad:
            _accum(beta, gsum)
        if x.requires_grad:
            coef = (gamma.data * inv / n)[:, None, None]
            gx = coef * (n * g - gsum[:, None, None] - xhat * gxhat_sum[:, None, None])
            _accum(x, gx)

    out._backward = bw if out.requires_grad else None
    return out, mu, var


def batchnorm_infer(x, gamma, beta, running_mean, running_var, eps=1e-5):
    inv = 1.0 / np.sqrt(running_var + eps)
    scale = (gamma.data * inv)[:, None, None]
    shift = (beta.data - gamma.data * running_mean * inv)[:, None, None]
    out = Tensor(x.data * scale + shift, _parents=(x, gamma, beta))
    xn = (x.data - running_mean[:, None, None]) * inv[:, None, None]

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xn).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _accum(x, g * scale)

    out._backward = bw if out.requires_grad else None
    return out


class BatchNorm2d:
    """Stateful batch norm: batch statistics in training, running stats at inference."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.n_updates = 0

    def __call__(self, x, mode):
        if mode == "train":
            out, mu, var = batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * var
            self.n_updates += 1
            return out
        if mode == "infer":
            if self.n_updates == 0:
                raise RuntimeError("batchnorm inference before any training update")
            return batchnorm_infer(x, self.gamma, self.beta,
                                   self.running_mean, self.running_var, self.eps)
        raise ValueError(f"unknown mode {mode!r}")

    def state_arrays(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var,
                "n_updates": np.array([float(self.n_updates)])}

    def load_state_arrays(self, arrays, prefix):
        self.running_mean = arrays[prefix + "running_mean"].copy()
        self.running_var = arrays[prefix + "running_var"].copy()
        self.n_updates = int(arrays[prefix + "n_updates"][0])


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update with bias correction; `params` values are updated in place."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.first_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        else:
            v = state.second_moment[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: tuple = ()

    def passed(self, rel_tol):
        return self.max_rel_error < rel_tol


def grad_check(fn, params, rel_tol=1e-4, h=1e-5, rng=None, probes_per_param=8):
    """Compare reverse-mode gradients of the scalar `fn()` against central differences.

    `fn` must be deterministic and re-evaluable; `params` are the leaf tensors
    probed on a random coordinate subsample.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    def eval_scalar():
        for p in params:
            p.grad = None
        out = fn()
        return out

    out = eval_scalar()
    out.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    worst_at = ()
    n_checked = 0
    for pi, p in enumerate(params):
        k = min(probes_per_param, p.data.size)
        coords = rng.choice(p.data.size, size=k, replace=False)
        for ci in coords:
            idx = np.unravel_index(ci, p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + h
            f_plus = eval_scalar().item()
            p.data[idx] = orig - h
            f_minus = eval_scalar().item()
            p.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            ana = 0.0 if analytic[pi] is None else analytic[pi][idx]
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-7)
            n_checked += 1
            if rel > worst:
                worst = rel
                worst_at = (pi, int(ci), float(ana), float(numeric))
    for p in params:
        p.grad = None
    return GradCheckReport(max_rel_error=worst, n_checked=n_checked, worst=worst_at)


CHECKPOINT_MAGIC = b"GCKP"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_arrays):
    """Write named float64 tensors: magic, version, then (name, shape, LE data) records. Atomic."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(named_arrays)))
        for name in sorted(named_arrays):
            arr = np.asarray(named_arrays[name], dtype="<f8")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64)
        return out
