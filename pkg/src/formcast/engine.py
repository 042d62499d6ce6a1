"""Dense-array engine with reverse-mode differentiation.

Carries exactly the operator set the field-prediction network needs:
conv2d, transposed conv2d, batch norm, relu/sigmoid, channel concat and
slicing, global average pooling, linear, broadcast add/mul, MSE loss,
plus the Adam optimizer. Compute is float32 by default; passing float64
arrays switches the whole graph to a 64-bit reference path (used by the
finite-difference gradient checks).
"""
from __future__ import annotations

import numpy as np
import scipy.fft as _fft
from numpy.lib.stride_tricks import sliding_window_view

# ---------------------------------------------------------------------------
# autodiff core


class Tensor:
    """Dense array with an optional gradient buffer and a backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "name")

    def __init__(self, data, requires_grad=False, parents=(), name=""):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents  # tuple of (Tensor, grad_fn)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        # topological order over the graph
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p, _ in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t._accumulate(g)
            for parent, grad_fn in t._parents:
                if not _needs_grad(parent):
                    continue
                pg = grad_fn(g)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _result(data, *pairs) -> Tensor:
    """Build an op output, keeping only parents that can need gradients."""
    parents = tuple((t, fn) for t, fn in pairs if _needs_grad(t))
    return Tensor(data, parents=parents)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name="") -> Tensor:
    t = Tensor(np.asarray(data), requires_grad=True)
    t.name = name
    return t


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# raw convolution kernels (shared by conv2d / conv_transpose2d and their grads)


def _conv_out_size(n, k, stride, pad):
    out = (n + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(f"conv output size {out} < 1")
    return out


def _im2col(xp, kh, kw, stride):
    # xp: padded input (B, C, Hp, Wp) -> (B*Ho*Wo, C*kh*kw)
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = v.shape[:4]
    cols = v.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


# switch to FFT correlation once the im2col buffer would exceed this
_FFT_THRESHOLD_ELEMENTS = 2_000_000
# frequency-bin contraction runs many tiny matmuls, so the FFT route only
# pays off for big kernels over narrow channel counts
_FFT_MIN_KERNEL = 8
_FFT_MAX_CHANNEL_PRODUCT = 2048
# the two FFT transforms are amortized over the batch; tiny batches are
# cheaper through the single big im2col matmul
_FFT_MIN_BATCH = 4


def _use_fft(work, batch, in_channels, out_channels, kh, kw):
    return (
        work > _FFT_THRESHOLD_ELEMENTS
        and batch >= _FFT_MIN_BATCH
        and min(kh, kw) >= _FFT_MIN_KERNEL
        and in_channels * out_channels <= _FFT_MAX_CHANNEL_PRODUCT
    )


def _freq_contract(fa, fb):
    # (A, C, H, W), (B, C, H, W) -> (A, B, H, W), summing over C per bin
    a, c, h, w = fa.shape
    o = fb.shape[0]
    lhs = fa.transpose(2, 3, 0, 1).reshape(h * w, a, c)
    rhs = fb.transpose(2, 3, 1, 0).reshape(h * w, c, o)
    out = lhs @ rhs
    return out.reshape(h, w, a, o).transpose(2, 3, 0, 1)


def _conv_forward_fft(xp, k, stride, ho, wo):
    b, c, hp, wp = xp.shape
    o, _, kh, kw = k.shape
    fx = _fft.rfft2(xp)
    fk = np.conj(_fft.rfft2(k, s=(hp, wp)))
    full = _fft.irfft2(_freq_contract(fx, fk), s=(hp, wp))
    out = full[:, :, :(ho - 1) * stride + 1:stride,
               :(wo - 1) * stride + 1:stride]
    return np.ascontiguousarray(out, dtype=xp.dtype)


def _conv_forward(x, k, stride, pad):
    b, c, h, w = x.shape
    o, ck, kh, kw = k.shape
    if ck != c:
        raise ShapeError(f"kernel expects {ck} input channels, got {c}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    if _use_fft(b * ho * wo * c * kh * kw, b, c, o, kh, kw):
        return _conv_forward_fft(xp, k, stride, ho, wo)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    out = cols @ k.reshape(o, -1).T
    return out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)


def _conv_grad_kernel(x, go, stride, pad, kh, kw):
    b, o, ho, wo = go.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if _use_fft(b * ho * wo * x.shape[1] * kh * kw, b, x.shape[1], o, kh, kw):
        god = _dilate(go, stride)
        hp, wp = xp.shape[2:]
        fx = _fft.rfft2(xp)
        fg = np.conj(_fft.rfft2(god, s=(hp, wp)))
        # contract over the batch axis per frequency bin: (C, O, H, W)
        prod = _freq_contract(fx.transpose(1, 0, 2, 3), fg.transpose(1, 0, 2, 3))
        full = _fft.irfft2(prod.transpose(1, 0, 2, 3), s=(hp, wp))
        return np.ascontiguousarray(full[:, :, :kh, :kw], dtype=x.dtype)
    cols, ho2, wo2 = _im2col(xp, kh, kw, stride)
    gof = go.transpose(1, 0, 2, 3).reshape(o, b * ho * wo)
    return (gof @ cols).reshape(o, x.shape[1], kh, kw)


def _dilate(x, stride):
    if stride == 1:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, (h - 1) * stride + 1, (w - 1) * stride + 1),
                   dtype=x.dtype)
    out[:, :, ::stride, ::stride] = x
    return out


def _conv_grad_input(go, k, stride, pad, in_hw):
    # adjoint of _conv_forward with respect to its input
    o, c, kh, kw = k.shape
    h, w = in_hw
    god = _dilate(go, stride)
    # zero-extend for input rows/cols past the last window start
    rh = (h + 2 * pad - kh) - (go.shape[2] - 1) * stride
    rw = (w + 2 * pad - kw) - (go.shape[3] - 1) * stride
    if rh < 0 or rw < 0:
        raise ShapeError("gradient spatial size inconsistent with input")
    if rh or rw:
        god = np.pad(god, ((0, 0), (0, 0), (0, rh), (0, rw)))
    kflip = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gi = _conv_forward(god, kflip, 1, kh - 1 - pad)
    if gi.shape[2:] != (h, w):
        raise ShapeError("adjoint convolution produced a mismatched shape")
    return gi


# ---------------------------------------------------------------------------
# operators


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with bias. kernel: (out_c, in_c, kh, kw)."""
    xd, kd = x.data, kernel.data
    out = _conv_forward(xd, kd, stride, pad)
    if bias is not None:
        if bias.data.shape != (kd.shape[0],):
            raise ShapeError("bias must have one entry per output channel")
        out = out + bias.data[None, :, None, None]
    kh, kw = kd.shape[2:]
    pairs = [
        (x, lambda g: _conv_grad_input(g, kd, stride, pad, xd.shape[2:])),
        (kernel, lambda g: _conv_grad_kernel(xd, g, stride, pad, kh, kw)),
    ]
    if bias is not None:
        pairs.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
    return _result(out, *pairs)


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                     stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d. kernel: (in_c, out_c, kh, kw)."""
    xd, kd = x.data, kernel.data
    cin, cout, kh, kw = kd.shape
    if xd.shape[1] != cin:
        raise ShapeError(f"kernel expects {cin} input channels, got {xd.shape[1]}")
    h_out = (xd.shape[2] - 1) * stride - 2 * pad + kh
    w_out = (xd.shape[3] - 1) * stride - 2 * pad + kw
    if h_out < 1 or w_out < 1:
        raise ShapeError("transposed conv output size < 1")
    out = _conv_grad_input(xd, kd, stride, pad, (h_out, w_out))
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError("bias must have one entry per output channel")
        out = out + bias.data[None, :, None, None]
    pairs = [
        (x, lambda g: _conv_forward(g, kd, stride, pad)),
        (kernel, lambda g: _conv_grad_kernel(g, xd, stride, pad, kh, kw)),
    ]
    if bias is not None:
        pairs.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
    return _result(out, *pairs)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel standardization; updates running stats in training mode."""
    xd = x.data
    if training:
        if xd.shape[0] < 2:
            raise ShapeError("batch norm in training mode needs batch >= 2")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def grad_x(g):
        gd = gamma.data[None, :, None, None] * g
        if not training:
            return gd * inv[None, :, None, None]
        n = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mean_g = gd.mean(axis=(0, 2, 3))[None, :, None, None]
        mean_gx = (gd * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
        return inv[None, :, None, None] * (gd - mean_g - xhat * mean_gx)

    return _result(
        out,
        (x, grad_x),
        (gamma, lambda g: (g * xhat).sum(axis=(0, 2, 3))),
        (beta, lambda g: g.sum(axis=(0, 2, 3))),
    )


def relu(x: Tensor) -> Tensor:
    m = x.data > 0
    return _result(np.where(m, x.data, 0.0), (x, lambda g: g * m))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows in float32
    d = x.data
    pos = d >= 0
    e = np.exp(np.where(pos, -d, d))
    s = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _result(s, (x, lambda g: g * s * (1.0 - s)))


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data,
                   (a, lambda g: _unbroadcast(g, a.data.shape)),
                   (b, lambda g: _unbroadcast(g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data,
                   (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                   (b, lambda g: _unbroadcast(g * a.data, b.data.shape)))


def concat_channels(tensors: list[Tensor]) -> Tensor:
    hw = tensors[0].data.shape[2:]
    for t in tensors:
        if t.data.shape[2:] != hw:
            raise ShapeError("channel concat requires equal spatial dims")
    data = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + [t.data.shape[1] for t in tensors])

    def make_fn(lo, hi):
        return lambda g: g[:, lo:hi]

    return _result(data, *[(t, make_fn(offsets[i], offsets[i + 1]))
                           for i, t in enumerate(tensors)])


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def grad_fn(g):
        out = np.zeros_like(x.data)
        out[:, start:stop] = g
        return out
    return _result(x.data[:, start:stop].copy(), (x, grad_fn))


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C, 1, 1) spatial mean."""
    b, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    scale = 1.0 / (h * w)
    return _result(out, (x, lambda g: np.broadcast_to(g * scale, x.data.shape)))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    return _result(x.data.reshape(shape), (x, lambda g: g.reshape(old)))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x: (B, in), weight: (out, in), bias: (out,)."""
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError("linear shape mismatch")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    pairs = [(x, lambda g: g @ weight.data),
             (weight, lambda g: g.T @ x.data)]
    if bias is not None:
        pairs.append((bias, lambda g: g.sum(axis=0)))
    return _result(out, *pairs)


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.data.shape != target.data.shape:
        raise ShapeError("MSE operands must share a shape")
    diff = prediction.data - target.data
    n = diff.size
    out = np.asarray((diff ** 2).sum() / n, dtype=prediction.data.dtype)
    return _result(out,
                   (prediction, lambda g: g * 2.0 * diff / n),
                   (target, lambda g: g * (-2.0) * diff / n))


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """First/second moments and step counter for one parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    if len(params) != len(grads):
        raise ShapeError("parameter/gradient count mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError("gradient shape mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (state.lr * (m / bc1)
                   / (np.sqrt(v / bc2) + state.eps)).astype(p.data.dtype)


class Adam:
    """Optimizer wrapper tying an AdamState to a parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(params, lr, beta1, beta2, eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        adam_step(self.params, grads, self.state)
