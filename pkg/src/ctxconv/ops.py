"""Differentiable operations.

Images are laid out ``[N, C, H, W]``. Convolutions are cross-correlations
(no kernel flip) with zero padding. Ties in max-type reductions go to the
first index, which keeps gradients deterministic.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import accumulate, as_var, make
from .errors import ShapeError


def _out_size(n, k, stride, padding=0):
    return (n + 2 * padding - k) // stride + 1


def _windows(xp, kh, kw, stride, ho, wo):
    """``[N, C, ho, wo, kh, kw]`` strided view of a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _im2col(xp, kh, kw, stride, ho, wo):
    """Rows are output positions ``(n, i, j)``, columns are ``(c, p, q)``."""
    n, c = xp.shape[:2]
    win = _windows(xp, kh, kw, stride, ho, wo)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _col2im(cols, shape, kh, kw, stride, ho, wo):
    """Adjoint of ``_im2col``: scatter-add ``[N, ho, wo, C, kh, kw]`` into ``shape``."""
    n, c, h, w = shape
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros(shape)
    for p in range(kh):
        for q in range(kw):
            out[:, :, p : p + stride * (ho - 1) + 1 : stride, q : q + stride * (wo - 1) + 1 : stride] += (
                cols[:, :, :, :, p, q].transpose(0, 3, 1, 2)
            )
    return out


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _unpad(x, padding):
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def conv2d(x, weight, bias=None, padding=0, stride=1):
    x, weight = as_var(x), as_var(weight)
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"input has {c} channels but weight expects {cw}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError("kernel larger than padded input")
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    xp = _pad(x.value, padding)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.value.reshape(k, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, k).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_var(bias)
        if bias.shape != (k,):
            raise ShapeError(f"bias must have shape ({k},), got {bias.shape}")
        out = out + bias.value[None, :, None, None]
        parents.append(bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, k)
        if weight.requires_grad:
            accumulate(weight, (g2.T @ cols).reshape(weight.shape))
        if x.requires_grad:
            dxp = _col2im(g2 @ wmat, xp.shape, kh, kw, stride, ho, wo)
            accumulate(x, _unpad(dxp, padding))
        if bias is not None:
            accumulate(bias, g.sum(axis=(0, 2, 3)))

    return make(np.ascontiguousarray(out), parents, backward, "conv2d")


def conv2d_transposed(x, weight, bias=None, stride=1):
    """Fractionally-strided convolution, the adjoint of ``conv2d`` w.r.t. its input.

    ``weight`` is ``[C_in, C_out, kh, kw]``; output extent is ``(H - 1) * stride + kh``.
    """
    x, weight = as_var(x), as_var(weight)
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ShapeError("conv2d_transposed expects 4-d input and weight")
    n, c, h, w = x.shape
    cw, k, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"input has {c} channels but weight expects {cw}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ho, wo = (h - 1) * stride + kh, (w - 1) * stride + kw
    xflat = x.value.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = weight.value.reshape(c, -1)
    out = _col2im(xflat @ wmat, (n, k, ho, wo), kh, kw, stride, h, w)
    parents = [x, weight]
    if bias is not None:
        bias = as_var(bias)
        if bias.shape != (k,):
            raise ShapeError(f"bias must have shape ({k},), got {bias.shape}")
        out += bias.value[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gcols = _im2col(g, kh, kw, stride, h, w)
        if x.requires_grad:
            accumulate(x, (gcols @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            accumulate(weight, (xflat.T @ gcols).reshape(weight.shape))
        if bias is not None:
            accumulate(bias, g.sum(axis=(0, 2, 3)))

    return make(out, parents, backward, "conv2d_transposed")


def conv2d_per_sample(x, weight, padding=0, stride=1):
    """Bias-free convolution where sample ``n`` uses its own kernel bank ``weight[n]``.

    ``x`` is ``[N, C, H, W]`` and ``weight`` is ``[N, K, C, kh, kw]``.
    """
    x, weight = as_var(x), as_var(weight)
    if x.value.ndim != 4 or weight.value.ndim != 5:
        raise ShapeError(f"expected [N,C,H,W] input and [N,K,C,kh,kw] weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    nw, k, cw, kh, kw = weight.shape
    if n != nw:
        raise ShapeError(f"batch mismatch: {n} images but {nw} filter banks")
    if c != cw:
        raise ShapeError(f"input has {c} channels but filters expect {cw}")
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    xp = _pad(x.value, padding)
    cols = _im2col(xp, kh, kw, stride, ho, wo).reshape(n, ho * wo, -1)
    wmat = weight.value.reshape(n, k, -1)
    out = np.matmul(wmat, cols.transpose(0, 2, 1)).reshape(n, k, ho, wo)

    def backward(g):
        g3 = g.reshape(n, k, ho * wo)
        if weight.requires_grad:
            accumulate(weight, np.matmul(g3, cols).reshape(weight.shape))
        if x.requires_grad:
            dcols = np.matmul(g3.transpose(0, 2, 1), wmat)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride, ho, wo)
            accumulate(x, _unpad(dxp, padding))

    return make(out, [x, weight], backward, "conv2d_per_sample")


def maxpool2d(x, k, stride):
    x = as_var(x)
    if k < 1 or stride < 1:
        raise ValueError(f"pool size and stride must be >= 1, got k={k}, stride={stride}")
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"pool size {k} exceeds input {h}x{w}")
    ho, wo = _out_size(h, k, stride), _out_size(w, k, stride)
    win = _windows(x.value, k, k, stride, ho, wo).reshape(n, c, ho, wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        rows = np.arange(ho)[:, None] * stride + arg // k
        cols = np.arange(wo)[None, :] * stride + arg % k
        plane = np.arange(n * c).reshape(n, c, 1, 1)
        flat = (plane * h + rows) * w + cols
        dx = np.bincount(flat.ravel(), weights=g.ravel(), minlength=x.value.size)
        accumulate(x, dx.reshape(x.shape))

    return make(out, [x], backward, "maxpool2d")


def relu(x):
    x = as_var(x)
    mask = x.value > 0
    out = np.where(mask, x.value, 0.0)

    def backward(g):
        accumulate(x, g * mask)

    return make(out, [x], backward, "relu")


def dense(x, weight, bias):
    x, weight, bias = as_var(x), as_var(weight), as_var(bias)
    if x.value.ndim != 2 or weight.value.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot multiply {x.shape} by {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match {weight.shape[1]} outputs")
    out = x.value @ weight.value + bias.value

    def backward(g):
        if x.requires_grad:
            accumulate(x, g @ weight.value.T)
        if weight.requires_grad:
            accumulate(weight, x.value.T @ g)
        accumulate(bias, g.sum(axis=0))

    return make(out, [x, weight, bias], backward, "dense")


def dropout(x, rate, rng=None, training=True):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""
    x = as_var(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.value * keep

    def backward(g):
        accumulate(x, g * keep)

    return make(out, [x], backward, "dropout")


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = as_var(logits)
    labels = np.asarray(labels)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    labels = labels.astype(np.int64)
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        accumulate(logits, d * (g / n))

    return make(np.asarray(loss), [logits], backward, "softmax_cross_entropy")


def _max_over_first_axis(stacked):
    arg = stacked.argmax(axis=0)
    out = np.take_along_axis(stacked, arg[None], axis=0)[0]
    return out, arg


def branch_max(branches):
    """Elementwise maximum across equally-shaped branches (lowest index wins ties)."""
    branches = [as_var(b) for b in branches]
    if not branches:
        raise ValueError("branch_max needs at least one branch")
    shape = branches[0].shape
    for b in branches[1:]:
        if b.shape != shape:
            raise ShapeError(f"branch shapes differ: {shape} vs {b.shape}")
    if len(branches) == 1:
        return branches[0]
    out, arg = _max_over_first_axis(np.stack([b.value for b in branches]))

    def backward(g):
        for i, b in enumerate(branches):
            accumulate(b, g * (arg == i))

    return make(out, branches, backward, "branch_max")


def stacked_branch_max(x, n_branches):
    """``branch_max`` over ``x`` split into ``n_branches`` equal row blocks."""
    x = as_var(x)
    if x.shape[0] % n_branches:
        raise ShapeError(f"{x.shape[0]} rows do not split into {n_branches} branches")
    stacked = x.value.reshape(n_branches, -1, *x.shape[1:])
    out, arg = _max_over_first_axis(stacked)

    def backward(g):
        onehot = arg[None] == np.arange(n_branches).reshape((-1,) + (1,) * arg.ndim)
        accumulate(x, (onehot * g[None]).reshape(x.shape))

    return make(out, [x], backward, "branch_max")


def reshape(x, shape):
    x = as_var(x)
    shape = tuple(shape)
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc

    def backward(g):
        accumulate(x, g.reshape(x.shape))

    return make(out, [x], backward, "reshape")


def add(a, b):
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return make(a.value + b.value, [a, b], backward, "add")


def mul(a, b):
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")

    def backward(g):
        accumulate(a, g * b.value)
        accumulate(b, g * a.value)

    return make(a.value * b.value, [a, b], backward, "mul")


def total(x):
    """Sum of all elements as a scalar."""
    x = as_var(x)

    def backward(g):
        accumulate(x, np.broadcast_to(g, x.shape).copy())

    return make(np.asarray(x.value.sum()), [x], backward, "sum")


def vdot(x, weights):
    """``sum(x * weights)`` with constant ``weights``; a generic scalar probe."""
    x = as_var(x)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.shape:
        raise ShapeError(f"vdot: {x.shape} vs {weights.shape}")

    def backward(g):
        accumulate(x, g * weights)

    return make(np.asarray(np.vdot(x.value, weights)), [x], backward, "vdot")


def negate_grad(x):
    """Identity forward, sign-flipped backward. Only used as a gradcheck negative control."""
    x = as_var(x)

    def backward(g):
        accumulate(x, -g)

    return make(x.value, [x], backward, "negate_grad")
