"""Numpy reference implementation of the kernel set.

Every function here has a compiled twin in ``_fast`` with the same
signature and the same math (formula-for-formula), so the two backends
agree to float64 rounding. All array arguments are C-contiguous float64
unless noted; index arguments are int64.
"""

import numpy as np


def softmax_fwd(x):
    """Rowwise softmax of a 2D array. Rows may contain -inf entries."""
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def softmax_bwd(y, dy):
    dot = np.sum(y * dy, axis=1, keepdims=True)
    return (dy - dot) * y


def layer_norm_fwd(x, gain, bias, eps):
    """Returns (y, xhat, inv_std). x is (n, d); gain/bias are (d,)."""
    mean = np.mean(x, axis=1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gain + bias, xhat, inv_std[:, 0].copy()


def layer_norm_bwd(dy, xhat, inv_std, gain):
    """Returns (dx, dgain, dbias)."""
    d = xhat.shape[1]
    dxhat = dy * gain
    c1 = np.sum(dxhat, axis=1, keepdims=True) / d
    c2 = np.sum(dxhat * xhat, axis=1, keepdims=True) / d
    dx = (dxhat - c1 - xhat * c2) * inv_std[:, None]
    return dx, np.sum(dy * xhat, axis=0), np.sum(dy, axis=0)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu_fwd(x):
    """tanh-form GELU on a flat array."""
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x, dy):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def cross_entropy_fwd(logits, targets, sel):
    """Mean negative log-likelihood over selected rows.

    logits: (n, c); targets: (n,) int64; sel: (n,) uint8 row mask.
    Returns (loss, probs); loss is exactly 0.0 when no row is selected.
    """
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    m = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = np.sum(e, axis=1, keepdims=True)
    probs = e / s
    n_sel = int(np.sum(sel))
    if n_sel == 0:
        return 0.0, probs
    lse = m[:, 0] + np.log(s[:, 0])
    per_row = lse - logits[np.arange(n), targets]
    return float(np.sum(per_row[sel.astype(bool)]) / n_sel), probs


def cross_entropy_bwd(probs, targets, sel, dloss):
    """Gradient wrt logits: (probs - onehot) * dloss / n_sel on selected rows."""
    n = probs.shape[0]
    dlogits = np.zeros_like(probs)
    n_sel = int(np.sum(sel))
    if n_sel == 0:
        return dlogits
    selb = sel.astype(bool)
    scale = dloss / n_sel
    dlogits[selb] = probs[selb] * scale
    rows = np.arange(n)[selb]
    dlogits[rows, targets[selb]] -= scale
    return dlogits


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One fused AdamW update, in place on p, m, v. t is the 1-based step."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p)
