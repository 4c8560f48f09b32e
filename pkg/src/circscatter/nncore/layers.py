"""Layer primitives: forward/backward pairs operating on batched tensors.

Tensors are (batch, T, C) before the flatten stage and (batch, d) after.
Each forward returns (output, cache); the matching backward consumes the
cache and the upstream gradient and returns input and parameter
gradients.  Everything works in whatever float dtype the inputs carry;
training uses float32 and gradient verification float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ValidationError

LN_EPS = 1e-5


# ---------------------------------------------------------------- padding


def pad_lengths(kernel_size: int) -> tuple[int, int]:
    """Left/right circular pad lengths: floor((K-1)/2) and the remainder."""
    if kernel_size < 1:
        raise ValidationError("kernel size must be >= 1")
    left = (kernel_size - 1) // 2
    return left, (kernel_size - 1) - left


def circular_pad(x: np.ndarray, kernel_size: int) -> np.ndarray:
    """Wrap a (B, T, C) tensor to length T + K - 1 along axis 1.

    Padded row j holds X[(j - P_left) mod T], which also covers K > T by
    wrapping more than once.
    """
    b, t, c = x.shape
    left, right = pad_lengths(kernel_size)
    idx = (np.arange(-left, t + right)) % t
    return x[:, idx, :]


def circular_pad_backward(d_padded: np.ndarray, t: int) -> np.ndarray:
    """Accumulate padded-row gradients back onto the t source rows."""
    b, t_pad, c = d_padded.shape
    k = t_pad - t + 1
    left, right = pad_lengths(k)
    if k - 1 <= t:
        # each wrapped tail covers distinct rows, so slice adds suffice
        dx = d_padded[:, left:left + t, :].copy()
        if left:
            dx[:, t - left:, :] += d_padded[:, :left, :]
        if right:
            dx[:, :right, :] += d_padded[:, left + t:, :]
        return dx
    idx = (np.arange(-left, t + right)) % t
    dx = np.zeros((b, t, c), dtype=d_padded.dtype)
    np.add.at(dx, (slice(None), idx), d_padded)
    return dx


# ---------------------------------------------------------------- convolution


def conv_output_length(t: int, stride: int) -> int:
    """Circularly padded convolutions keep ceil(T/S) positions."""
    if t < 1 or stride < 1:
        raise ValidationError("t and stride must be >= 1")
    return -(-t // stride)


def circular_conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """Y[i, j] = sum_{k, c} W[j, k, c] * Xpad[i*S + k, c] + b[j].

    x: (B, T, C); w: (N_f, K, C); b: (N_f,).  Returns ((B, T_out, N_f), cache).
    """
    nb, t, c = x.shape
    nf, k, cin = w.shape
    if cin != c:
        raise ValidationError(f"conv expects {cin} input channels, got {c}")
    if b.shape != (nf,):
        raise ValidationError("bias shape must be (filters,)")
    padded = circular_pad(x, k)
    win = sliding_window_view(padded, k, axis=1)[:, ::stride]   # (B, T_out, C, K)
    t_out = win.shape[1]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(nb * t_out, k * c)
    y = cols @ w.reshape(nf, k * c).T + b
    cache = (cols, (nb, t, c), w, stride, k)
    return y.reshape(nb, t_out, nf), cache


def circular_conv_backward(dy: np.ndarray, cache):
    """Returns (dx, dw, db)."""
    cols, (nb, t, c), w, stride, k = cache
    nf = w.shape[0]
    t_out = dy.shape[1]
    dy2 = dy.reshape(nb * t_out, nf)
    db = dy2.sum(axis=0)
    dw = (dy2.T @ cols).reshape(nf, k, c)
    dcols = (dy2 @ w.reshape(nf, k * c)).reshape(nb, t_out, k, c)
    dpad = np.zeros((nb, t + k - 1, c), dtype=dy.dtype)
    if stride == 1:
        for kk in range(k):
            dpad[:, kk:kk + t_out, :] += dcols[:, :, kk, :]
    else:
        pos = np.arange(t_out) * stride
        for kk in range(k):
            # positions are strictly increasing, so fancy += has no clashes
            dpad[:, pos + kk, :] += dcols[:, :, kk, :]
    return circular_pad_backward(dpad, t), dw, db


# ---------------------------------------------------------------- activations


def sigmoid(z: np.ndarray) -> np.ndarray:
    # exp overflow only happens where the limit is exactly 0; silence it
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def swish_forward(z: np.ndarray):
    s = sigmoid(z)
    return z * s, (z, s)


def swish_backward(dy: np.ndarray, cache):
    z, s = cache
    return dy * (s * (1.0 + z * (1.0 - s)))


def softmax(v: np.ndarray) -> np.ndarray:
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy: np.ndarray, probs: np.ndarray) -> np.ndarray:
    inner = (dy * probs).sum(axis=-1, keepdims=True)
    return probs * (dy - inner)


# ---------------------------------------------------------------- layer norm


def layer_norm_forward(h: np.ndarray, gain: np.ndarray, shift: np.ndarray, eps: float = LN_EPS):
    """Normalize over the last axis, then apply the learnable affine map."""
    mu = h.mean(axis=-1, keepdims=True)
    xc = h - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + shift, (xhat, inv, gain)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, gain = cache
    d = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, d).sum(axis=0)
    dshift = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dh = inv * (dxhat - m1 - xhat * m2)
    return dh, dgain, dshift


# ---------------------------------------------------------------- dropout


def dropout_forward(h: np.ndarray, p: float, rng: np.random.Generator | None = None,
                    train: bool = False):
    """Inverted dropout: active only in train mode, identity otherwise."""
    if not 0.0 <= p < 1.0:
        raise ValidationError("dropout rate must be in [0, 1)")
    if not train or p == 0.0:
        return h, None
    if rng is None:
        raise ValidationError("train-mode dropout needs an rng")
    keep = (rng.random(h.shape) >= p).astype(h.dtype)
    keep /= np.asarray(1.0 - p, dtype=h.dtype)
    return h * keep, keep


def dropout_backward(dy: np.ndarray, cache):
    return dy if cache is None else dy * cache


# ---------------------------------------------------------------- bottleneck


def bottleneck_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Pointwise channel-mixing convolution with swish: (B,T,C) @ (C,Nb)."""
    if x.shape[-1] != w.shape[0]:
        raise ValidationError(f"bottleneck expects {w.shape[0]} channels, got {x.shape[-1]}")
    z = x @ w + b
    y, sw = swish_forward(z)
    return y, (x, w, sw)


def bottleneck_backward(dy: np.ndarray, cache):
    x, w, sw = cache
    dz = swish_backward(dy, sw)
    dw = np.tensordot(x, dz, axes=([0, 1], [0, 1]))
    db = dz.sum(axis=(0, 1))
    dx = dz @ w.T
    return dx, dw, db


# ---------------------------------------------------------------- dense


def dense_forward(h: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map: (B, d_in) @ (d_out, d_in).T + b."""
    if h.shape[-1] != w.shape[1]:
        raise ValidationError(f"dense expects {w.shape[1]} inputs, got {h.shape[-1]}")
    return h @ w.T + b, (h, w)


def dense_backward(dy: np.ndarray, cache):
    h, w = cache
    return dy @ w, dy.T @ h, dy.sum(axis=0)


# ---------------------------------------------------------------- attention


def attention_forward(x: np.ndarray, params: dict):
    """Channel attention: mix-conv + swish, per-position layer norm, global
    average pool, two-layer gate, then rescale the normalized tensor.

    params keys: w_mix (C, K_mix, C), b_mix, ln_gain, ln_shift,
    w1 (C/r, C), b1, w2 (C, C/r), b2.  Returns (y, cache); cache["att"]
    holds the (B, C) channel weights.
    """
    t = x.shape[1]
    mixed, conv_cache = circular_conv_forward(x, params["w_mix"], params["b_mix"], stride=1)
    act, sw_cache = swish_forward(mixed)
    norm, ln_cache = layer_norm_forward(act, params["ln_gain"], params["ln_shift"])
    pooled = norm.mean(axis=1)
    z1, d1_cache = dense_forward(pooled, params["w1"], params["b1"])
    a1, sw1_cache = swish_forward(z1)
    z2, d2_cache = dense_forward(a1, params["w2"], params["b2"])
    att = sigmoid(z2)
    y = norm * att[:, None, :]
    cache = {
        "t": t, "att": att, "norm": norm, "conv": conv_cache, "sw": sw_cache,
        "ln": ln_cache, "d1": d1_cache, "sw1": sw1_cache, "d2": d2_cache,
    }
    return y, cache


def attention_backward(dy: np.ndarray, cache):
    """Returns (dx, grads dict with the same keys as params)."""
    att, norm, t = cache["att"], cache["norm"], cache["t"]
    datt = (dy * norm).sum(axis=1)
    dnorm = dy * att[:, None, :]
    dz2 = datt * att * (1.0 - att)
    da1, dw2, db2 = dense_backward(dz2, cache["d2"])
    dz1 = swish_backward(da1, cache["sw1"])
    dpool, dw1, db1 = dense_backward(dz1, cache["d1"])
    dnorm = dnorm + dpool[:, None, :] / t
    dact, dgain, dshift = layer_norm_backward(dnorm, cache["ln"])
    dmixed = swish_backward(dact, cache["sw"])
    dx, dw_mix, db_mix = circular_conv_backward(dmixed, cache["conv"])
    grads = {"w_mix": dw_mix, "b_mix": db_mix, "ln_gain": dgain, "ln_shift": dshift,
             "w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
    return dx, grads
