"""Differentiable ops: exactly the set the network needs.

All forward and backward arithmetic runs in float64; parameters stored as
float32 are upcast on the fly.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError
from .tensor import Tensor, as_tensor, make_result


def _f64(a):
    return np.asarray(a, dtype=np.float64)


@dataclass
class ConvParams:
    """Weights and geometry of one convolution layer.

    For ``transposed=False`` the weight is ``(out_ch, in_ch, kh, kw)``. For
    ``transposed=True`` it is laid out like the forward convolution whose
    adjoint it computes, ``(in_ch, out_ch, kh, kw)``, so one weight array
    serves both ``conv2d`` and ``conv2d_transposed``.
    """

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    @property
    def in_channels(self):
        return self.weight.shape[0] if self.transposed else self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[1] if self.transposed else self.weight.shape[0]

    @property
    def kernel_size(self):
        return self.weight.shape[2], self.weight.shape[3]

    def output_size(self, h, w):
        kh, kw = self.kernel_size
        s, p = self.stride, self.padding
        if self.transposed:
            return (h - 1) * s - 2 * p + kh, (w - 1) * s - 2 * p + kw
        return (h + 2 * p - kh) // s + 1, (w + 2 * p - kw) // s + 1

    def tensors(self):
        return [self.weight, self.bias]

    def num_parameters(self):
        return self.weight.size + self.bias.size


def _check_rank4(x, what):
    if x.ndim != 4:
        raise DimensionError(f"{what} must be rank 4 (batch, channels, height, width), got shape {x.shape}")


def _conv_forward(x, w, stride, pad):
    b, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"kernel {(kh, kw)} does not fit padded input {(hp, wp)}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _kernels.im2col(xp, kh, kw, stride, ho, wo)
    out = np.matmul(w.reshape(co, -1), cols)
    return out.reshape(b, co, ho, wo), cols, (hp, wp)


def _conv_grad_input(g, w, stride, pad, hp, wp):
    """Adjoint of the padded convolution: scatter ``W^T g`` back onto the input grid."""
    b, co, ho, wo = g.shape
    _, ci, kh, kw = w.shape
    gcols = np.matmul(w.reshape(co, -1).T, g.reshape(b, co, ho * wo))
    gx = _kernels.col2im(gcols, ci, hp, wp, kh, kw, stride, ho, wo)
    if pad:
        gx = gx[:, :, pad : hp - pad, pad : wp - pad]
    return gx


def _conv_grad_weight(g, cols, wshape):
    b, co = g.shape[:2]
    gw = np.matmul(g.reshape(b, co, -1), cols.transpose(0, 2, 1)).sum(axis=0)
    return gw.reshape(wshape)


def conv2d(input, params):
    """Cross-correlation with per-channel bias."""
    if params.transposed:
        raise DimensionError("conv2d called with transposed ConvParams; use conv2d_transposed")
    x_t, w_t, b_t = as_tensor(input), params.weight, params.bias
    _check_rank4(x_t, "conv2d input")
    if x_t.shape[1] != w_t.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input shape {x_t.shape} vs weight shape {w_t.shape}"
        )
    x, w = _f64(x_t.data), _f64(w_t.data)
    s, p = params.stride, params.padding
    out, cols, (hp, wp) = _conv_forward(x, w, s, p)
    out += _f64(b_t.data).reshape(1, -1, 1, 1)

    def backward(g):
        gx = _conv_grad_input(g, w, s, p, hp, wp) if x_t.requires_grad or x_t._backward else None
        gw = _conv_grad_weight(g, cols, w.shape)
        gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return make_result(out, (x_t, w_t, b_t), backward)


def conv2d_transposed(input, params):
    """Transposed convolution (the input-gradient of ``conv2d``) plus bias."""
    if not params.transposed:
        raise DimensionError("conv2d_transposed needs ConvParams with transposed=True")
    y_t, w_t, b_t = as_tensor(input), params.weight, params.bias
    _check_rank4(y_t, "conv2d_transposed input")
    if y_t.shape[1] != w_t.shape[0]:
        raise DimensionError(
            f"conv2d_transposed channel mismatch: input shape {y_t.shape} vs weight shape {w_t.shape}"
        )
    y, w = _f64(y_t.data), _f64(w_t.data)
    s, p = params.stride, params.padding
    b, c, h, wd = y.shape
    kh, kw = w.shape[2:]
    hp, wp = (h - 1) * s + kh, (wd - 1) * s + kw
    if hp - 2 * p < 1 or wp - 2 * p < 1:
        raise DimensionError(f"padding {p} leaves an empty output for input shape {y.shape}")
    out = _conv_grad_input(y, w, s, p, hp, wp)
    out = out + _f64(b_t.data).reshape(1, -1, 1, 1)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        cols = _kernels.im2col(gp, kh, kw, s, h, wd)
        gy = np.matmul(w.reshape(c, -1), cols).reshape(y.shape)
        gw = np.matmul(y.reshape(b, c, -1), cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3))
        return gy, gw, gb

    return make_result(out, (y_t, w_t, b_t), backward)


def leaky_relu(input, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x_t = as_tensor(input)
    x = _f64(x_t.data)
    scale = np.where(x > 0, 1.0, slope)
    return make_result(x * scale, (x_t,), lambda g: (g * scale,))


def concat_channels(inputs):
    ts = [as_tensor(t) for t in inputs]
    if not ts:
        raise DimensionError("concat_channels needs at least one input")
    for t in ts:
        _check_rank4(t, "concat_channels input")
    ref = ts[0].shape
    for t in ts[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise DimensionError(f"concat_channels spatial/batch mismatch: {ref} vs {t.shape}")
    if len(ts) == 1:
        return ts[0]
    out = np.concatenate([_f64(t.data) for t in ts], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(ts)))

    return make_result(out, ts, backward)


def add(a, b):
    a_t, b_t = as_tensor(a), as_tensor(b)
    if a_t.shape != b_t.shape:
        raise DimensionError(f"add shape mismatch: {a_t.shape} vs {b_t.shape}")
    return make_result(_f64(a_t.data) + _f64(b_t.data), (a_t, b_t), lambda g: (g, g))


def shift(a, offset):
    """Add a constant."""
    a_t = as_tensor(a)
    return make_result(_f64(a_t.data) + float(offset), (a_t,), lambda g: (g,))


def scale(a, factor):
    """Multiply by a constant."""
    a_t = as_tensor(a)
    factor = float(factor)
    return make_result(_f64(a_t.data) * factor, (a_t,), lambda g: (g * factor,))


def _check_pair(pred, target, op):
    if pred.shape != target.shape:
        raise DimensionError(f"{op} shape mismatch: pred {pred.shape} vs target {target.shape}")


def l1_loss(pred, target):
    """Mean absolute error; subgradient at ties is 0."""
    p_t, t_t = as_tensor(pred), as_tensor(target)
    _check_pair(p_t, t_t, "l1_loss")
    diff = _f64(p_t.data) - _f64(t_t.data)
    n = diff.size

    def backward(g):
        gd = np.sign(diff) * (g / n)
        return gd, -gd

    return make_result(np.abs(diff).mean(), (p_t, t_t), backward)


def l2_loss(pred, target):
    """Mean squared error."""
    p_t, t_t = as_tensor(pred), as_tensor(target)
    _check_pair(p_t, t_t, "l2_loss")
    diff = _f64(p_t.data) - _f64(t_t.data)
    n = diff.size

    def backward(g):
        gd = diff * (2.0 * g / n)
        return gd, -gd

    return make_result(np.mean(diff * diff), (p_t, t_t), backward)
