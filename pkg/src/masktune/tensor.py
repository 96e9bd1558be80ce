"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is implicit: a tensor produced by an operation holds
references to its input tensors plus a closure that propagates gradients.
``backward()`` linearizes the reachable graph topologically and runs each
closure exactly once, in reverse order, so shared subexpressions accumulate
correctly.

Gradients on leaf tensors ACCUMULATE across ``backward()`` calls; training
code must reset them between optimizer steps (``grad = None``). Gradients
on intermediate nodes are scratch and are cleared at the start of every
``backward()``.

Storage is row-major (C-contiguous) float64 throughout; operations copy
rather than alias when layout would otherwise go non-contiguous.
"""

import numpy as np

from masktune import kernels


class Tensor:
    """A shape-immutable float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- autograd ----------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient "
                                 "requires a scalar tensor")
            grad = np.ones_like(self.data)
        topo = _toposort(self)
        for node in topo:
            if node._parents:
                node.grad = None  # intermediate grads are per-call scratch
        _accumulate(self, np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _toposort(root):
    """Post-order over the requires_grad subgraph; each node appears once."""
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return topo


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # own the buffer
    else:
        t.grad += g


def _result(data, parents, op, backward):
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the unexpanded shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(a.data + b.data, (a, b), "add", backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(a.data * b.data, (a, b), "mul", backward)


def matmul(a, b):
    """Matrix product; stacked inputs must share identical leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    ok = (len(sa) >= 2 and len(sb) >= 2 and sa[-1] == sb[-2]
          and sa[:-2] == sb[:-2])
    if not ok:
        raise ValueError(f"matmul shape mismatch: {sa} x {sb}")

    def backward(g):
        _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(np.matmul(a.data, b.data), (a, b), "matmul", backward)


def reshape(t, shape):
    t = _as_tensor(t)
    old = t.data.shape

    def backward(g):
        _accumulate(t, g.reshape(old))

    return _result(t.data.reshape(shape), (t,), "reshape", backward)


def transpose(t, axes):
    t = _as_tensor(t)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(t, np.ascontiguousarray(g.transpose(inverse)))

    return _result(t.data.transpose(axes), (t,), "transpose", backward)


def take_rows(t, indices):
    """Gather rows of a 2D tensor; backward scatter-adds (deterministically)."""
    t = _as_tensor(t)
    if t.data.ndim != 2:
        raise ValueError(f"take_rows expects a 2D tensor, got shape {t.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= t.data.shape[0]):
        raise IndexError(f"row index out of range for {t.data.shape[0]} rows")

    def backward(g):
        buf = np.zeros_like(t.data)
        np.add.at(buf, idx, g)
        _accumulate(t, buf)

    return _result(t.data[idx], (t,), "take_rows", backward)


def tensor_sum(t, axis=None):
    t = _as_tensor(t)
    shape = t.data.shape

    def backward(g):
        if axis is None:
            _accumulate(t, np.broadcast_to(g, shape))
        else:
            _accumulate(t, np.broadcast_to(np.expand_dims(g, axis), shape))

    return _result(np.sum(t.data, axis=axis), (t,), "sum", backward)


def mean(t):
    t = _as_tensor(t)
    n = t.data.size

    def backward(g):
        _accumulate(t, np.broadcast_to(g / n, t.data.shape))

    return _result(np.mean(t.data), (t,), "mean", backward)


# -- neural-net primitives (kernel-backed) -----------------------------------


def softmax(t, axis=-1):
    """Softmax along one axis, max-shifted for stability; -inf entries allowed."""
    t = _as_tensor(t)
    nd = t.data.ndim
    axis = axis % nd
    moved = axis != nd - 1

    def to2d(arr):
        if moved:
            arr = np.moveaxis(arr, axis, -1)
        return np.ascontiguousarray(arr.reshape(-1, arr.shape[-1])), arr.shape

    x2, xshape = to2d(t.data)
    y2 = kernels.softmax_fwd(x2)
    y = y2.reshape(xshape)
    if moved:
        y = np.moveaxis(y, -1, axis)

    def backward(g):
        g2, _ = to2d(g)
        dx = kernels.softmax_bwd(y2, g2).reshape(xshape)
        if moved:
            dx = np.moveaxis(dx, -1, axis)
        _accumulate(t, np.ascontiguousarray(dx))

    return _result(y, (t,), "softmax", backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(f"layer_norm gain/bias must have shape ({d},)")
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y2, xhat, inv_std = kernels.layer_norm_fwd(x2, gain.data, bias.data, eps)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = kernels.layer_norm_bwd(g2, xhat, inv_std, gain.data)
        _accumulate(x, dx.reshape(x.data.shape))
        _accumulate(gain, dgain)
        _accumulate(bias, dbias)

    return _result(y2.reshape(x.data.shape), (x, gain, bias), "layer_norm", backward)


def gelu(t):
    """tanh-approximation GELU."""
    t = _as_tensor(t)
    flat = np.ascontiguousarray(t.data.reshape(-1))
    y = kernels.gelu_fwd(flat).reshape(t.data.shape)

    def backward(g):
        dx = kernels.gelu_bwd(flat, np.ascontiguousarray(g.reshape(-1)))
        _accumulate(t, dx.reshape(t.data.shape))

    return _result(y, (t,), "gelu", backward)


def cross_entropy(logits, targets, row_mask=None):
    """Mean of -log softmax(logits)[target] over selected rows.

    ``row_mask`` (boolean per row) limits which rows enter the mean; with
    zero selected rows the result is exactly 0 with zero gradient.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy expects 2D logits, got {logits.data.shape}")
    n, c = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise ValueError(f"cross_entropy got {n} rows but {targets.shape[0]} targets")
    if n and (targets.min() < 0 or targets.max() >= c):
        bad = int(targets[(targets < 0) | (targets >= c)][0])
        raise IndexError(f"target index {bad} out of range for {c} classes")
    if row_mask is None:
        sel = np.ones(n, dtype=np.uint8)
    else:
        sel = np.asarray(row_mask, dtype=bool).astype(np.uint8).reshape(-1)
        if sel.shape[0] != n:
            raise ValueError("row_mask length must equal the number of rows")
    loss, probs = kernels.cross_entropy_fwd(
        np.ascontiguousarray(logits.data), targets, sel)

    def backward(g):
        gs = np.asarray(g, dtype=np.float64).reshape(-1)[0]
        _accumulate(logits, kernels.cross_entropy_bwd(probs, targets, sel, float(gs)))

    return _result(np.float64(loss), (logits,), "cross_entropy", backward)


def dropout(t, rate, rng):
    """Inverted dropout; identity when rate is 0."""
    t = _as_tensor(t)
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return t
    keep = (rng.random(t.data.shape) >= rate) / (1.0 - rate)

    def backward(g):
        _accumulate(t, g * keep)

    return _result(t.data * keep, (t,), "dropout", backward)


# -- verification -------------------------------------------------------------


def grad_check(f, point, eps=1e-6):
    """Compare backward() gradients of f at point against central differences.

    Returns max over coordinates of |analytic - numeric| divided by
    max(1, |analytic|, |numeric|). ``f`` must map the tensor to a scalar
    tensor and must not mutate it; ``point.data`` is perturbed in place
    and restored.
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-8, 1e-4]")
    point.requires_grad = True
    point.grad = None
    out = f(point)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = (point.grad if point.grad is not None
                else np.zeros_like(point.data)).reshape(-1).copy()
    flat = point.data.reshape(-1)
    numeric = np.empty_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(point).item()
        flat[i] = orig - eps
        f_minus = f(point).item()
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    if flat.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
