"""Layers with hand-written backward passes.

Every forward function returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache. Leading batch dimensions are
allowed wherever the math is per-instance, so the same code serves single
vectors and mini-batches. Functions are dtype-agnostic: training runs in
float32, gradient checks in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _check_dense(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> None:
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: x{x.shape} W{W.shape} b{b.shape}")


def dense(x, W, b):
    """Affine map ``x W^T + b`` over the last axis of ``x``."""
    _check_dense(x, W, b)
    y = x.reshape(-1, x.shape[-1]) @ W.T + b
    return y.reshape(*x.shape[:-1], W.shape[0]), (x, W)


def dense_backward(dy, cache):
    x, W = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = (dy2 @ W).reshape(x.shape)
    return dx, dy2.T @ x2, dy2.sum(axis=0)


def dense_relu(x, W, b):
    """``max(0, x W^T + b)``."""
    z, (x, W) = dense(x, W, b)
    y = np.maximum(z, 0)
    return y, (x, W, y)


def dense_relu_backward(dy, cache):
    x, W, y = cache
    return dense_backward(dy * (y > 0), (x, W))


def conv1d_maxpool(C, K, bias):
    """Convolution over characters followed by max-over-time pooling.

    C has shape ``(..., d_in, width)``, K ``(d_out, d_in, k)`` and bias ``(d_out,)``.
    Returns ``(..., d_out)``: for each output channel the largest ReLU activation
    over all ``width - k + 1`` window positions.
    """
    if C.ndim < 2 or C.shape[-2] != K.shape[1]:
        raise ValueError(f"shape mismatch: C{C.shape} K{K.shape}")
    return conv1d_maxpool_nwc(np.swapaxes(C, -1, -2), K, bias)


def conv1d_maxpool_backward(dy, cache):
    """Gradients w.r.t. (C, K, bias) for :func:`conv1d_maxpool`."""
    dC, dK, dbias = conv1d_maxpool_nwc_backward(dy, cache)
    return np.swapaxes(dC, -1, -2), dK, dbias


def conv1d_maxpool_nwc(X, K, bias):
    """Same as :func:`conv1d_maxpool` with the input laid out ``(..., width, d_in)``.

    Since ReLU is monotone the max is taken on pre-activations and the ReLU
    applied afterwards.
    """
    d_out, d_in, k = K.shape
    if X.shape[-1] != d_in or bias.shape != (d_out,):
        raise ValueError(f"shape mismatch: X{X.shape} K{K.shape} bias{bias.shape}")
    width = X.shape[-2]
    if width < k:
        raise ValueError(f"input width {width} shorter than kernel length {k}")
    lead = X.shape[:-2]
    X3 = X.reshape(-1, width, d_in)
    # (N, P, d_in, k) flattened in the (d_in, k) order of K
    patches = sliding_window_view(X3, k, axis=1).reshape(X3.shape[0], width - k + 1, d_in * k)
    pre = (patches.reshape(-1, d_in * k) @ K.reshape(d_out, d_in * k).T).reshape(
        X3.shape[0], width - k + 1, d_out
    )
    arg = pre.argmax(axis=1)  # first max on ties
    y = np.maximum(pre.max(axis=1) + bias, 0)
    return y.reshape(*lead, d_out), (X3.shape, lead, patches, K, arg, y)


def conv1d_maxpool_nwc_backward(dy, cache):
    """Each channel's gradient goes to its argmax window only."""
    shape3, lead, patches, K, arg, y = cache
    n, width, d_in = shape3
    d_out, _, k = K.shape
    n_pos = width - k + 1
    g = dy.reshape(n, d_out) * (y > 0)
    dbias = g.sum(axis=0)
    dpre = np.zeros((n, n_pos, d_out), dtype=patches.dtype)
    np.put_along_axis(dpre, arg[:, None, :], g[:, None, :], axis=1)
    flat = dpre.reshape(-1, d_out)
    dK = (flat.T @ patches.reshape(-1, d_in * k)).reshape(K.shape)
    dpatch = (flat @ K.reshape(d_out, d_in * k)).reshape(n, n_pos, d_in, k)
    dX = np.zeros((n, width, d_in), dtype=patches.dtype)
    for j in range(k):
        dX[:, j : j + n_pos, :] += dpatch[:, :, :, j]
    return dX.reshape(*lead, width, d_in), dK, dbias


def scatter_add_rows(table, ids, rows):
    """``table[ids[i]] += rows[i]`` with repeated ids accumulated (like ``np.add.at``)."""
    ids = np.asarray(ids).ravel()
    rows = rows.reshape(len(ids), -1)
    if len(ids) == 0:
        return
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    sums = np.add.reduceat(rows[order], starts, axis=0)
    table.reshape(table.shape[0], -1)[sorted_ids[starts]] += sums


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_final(X, lengths, W, b):
    """Run an LSTM over left-aligned padded sequences and return each final state.

    X: ``(N, T, d_in)``, lengths: ``(N,)`` ints >= 1, W: ``(4H, d_in + H)`` with
    gate blocks ordered input, forget, output, candidate; b: ``(4H,)``.
    Positions at or beyond a sequence's length leave its state untouched.
    """
    N, T, d_in = X.shape
    H = W.shape[0] // 4
    if W.shape[1] != d_in + H or b.shape != (4 * H,):
        raise ValueError(f"shape mismatch: X{X.shape} W{W.shape} b{b.shape}")
    lengths = np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > T):
        raise ValueError("every sequence needs a length between 1 and T")
    h = np.zeros((N, H), dtype=X.dtype)
    c = np.zeros((N, H), dtype=X.dtype)
    steps = []
    for t in range(int(lengths.max())):
        m = (t < lengths)[:, None].astype(X.dtype)
        xh = np.concatenate([X[:, t], h], axis=1)
        z = xh @ W.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        o = _sigmoid(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((m, xh, c, i, f, o, g, tc))
        c = m * c_new + (1 - m) * c
        h = m * h_new + (1 - m) * h
    return h, (X.shape, W, steps)


def lstm_final_backward(dh, cache):
    """Gradients w.r.t. (X, W, b) given the gradient of the final hidden states."""
    shape, W, steps = cache
    N, T, d_in = shape
    H = W.shape[0] // 4
    dX = np.zeros(shape, dtype=dh.dtype)
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0], dtype=W.dtype)
    dc = np.zeros_like(dh)
    for t in reversed(range(len(steps))):
        m, xh, c_prev, i, f, o, g, tc = steps[t]
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1 - tc * tc)
        dz = np.concatenate(
            [
                dc_new * g * i * (1 - i),
                dc_new * c_prev * f * (1 - f),
                dh_new * tc * o * (1 - o),
                dc_new * i * (1 - g * g),
            ],
            axis=1,
        )
        dW += dz.T @ xh
        db += dz.sum(axis=0)
        dxh = dz @ W
        dX[:, t] = dxh[:, :d_in]
        dh = (1 - m) * dh + dxh[:, d_in:]
        dc = (1 - m) * dc + dc_new * f
    return dX, dW, db


def reverse_padded(X, lengths):
    """Reverse each left-aligned sequence within its own length."""
    N, T = X.shape[:2]
    t = np.arange(T)[None, :]
    lengths = np.asarray(lengths)[:, None]
    idx = np.where(t < lengths, lengths - 1 - t, t)
    return np.take_along_axis(X, idx.reshape(N, T, *([1] * (X.ndim - 2))), axis=1)


def bilstm_final(X, lengths, W_fw, b_fw, W_bw, b_bw):
    """Concatenated final states of a left-to-right and a right-to-left LSTM."""
    h_fw, c_fw = lstm_final(X, lengths, W_fw, b_fw)
    h_bw, c_bw = lstm_final(reverse_padded(X, lengths), lengths, W_bw, b_bw)
    return np.concatenate([h_fw, h_bw], axis=-1), (lengths, c_fw, c_bw)


def bilstm_final_backward(dy, cache):
    lengths, c_fw, c_bw = cache
    H = dy.shape[-1] // 2
    dX_fw, dW_fw, db_fw = lstm_final_backward(dy[:, :H], c_fw)
    dX_bw, dW_bw, db_bw = lstm_final_backward(dy[:, H:], c_bw)
    return dX_fw + reverse_padded(dX_bw, lengths), dW_fw, db_fw, dW_bw, db_bw


def softmax_xent(logits, gold, mask=None):
    """Masked softmax and cross-entropy for a batch of score vectors.

    logits: ``(B, K)`` (or ``(K,)``), gold: index per row, mask: boolean array of
    legal entries (None means all legal). Returns ``(losses, probs, dlogits)``
    where ``dlogits = probs - onehot(gold)`` per row, zero on masked entries.
    """
    single = logits.ndim == 1
    logits = np.atleast_2d(logits)
    gold = np.atleast_1d(np.asarray(gold))
    rows = np.arange(logits.shape[0])
    if mask is None:
        mask = np.ones(logits.shape, dtype=bool)
    mask = np.atleast_2d(mask)
    if not np.all(mask[rows, gold]):
        raise ValueError("gold entry is masked")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0)
    probs = e / e.sum(axis=1, keepdims=True)
    losses = -np.log(probs[rows, gold])
    grad = probs.copy()
    grad[rows, gold] -= 1
    if single:
        return losses[0], probs[0], grad[0]
    return losses, probs, grad


def dropout(x, rate, training, rng):
    """Inverted dropout; returns ``(output, keep_mask)`` (mask is None when inactive)."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def init_he(shape, fan_in, rng, dtype=np.float32):
    """Zero-mean Gaussian with standard deviation sqrt(2 / fan_in)."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_orthogonal(shape, rng, dtype=np.float32):
    """Matrix with orthonormal rows (or columns, if it has more rows than columns)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q.astype(dtype)
