"""Dense 2-D float64 tensors with a reverse-mode gradient tape.

Every value is a 2-D ``numpy.ndarray`` of float64 ("matrix"). A
:class:`Tensor` wraps one matrix and, when any of its inputs requires a
gradient, remembers how to push an upstream gradient back to those inputs.
:func:`backward` walks the recorded graph once in reverse topological order.

Biases are stored as ``1 x n`` matrices and are the only broadcast the ops
support (see :func:`add_bias` and :func:`linear`).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError

LOG_VAR_MIN = -40.0
LOG_VAR_MAX = 10.0
SOFTPLUS_LINEAR_ABOVE = 30.0


class Tensor:
    """A matrix value plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, value, requires_grad=False, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(value) if requires_grad else None
        self._parents = ()
        self._backward = None
        self._consumed = False
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for tests and small expressions
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward):
    """Create a result tensor, recording the graph edge only if needed."""
    out = Tensor.__new__(Tensor)
    out.value = value
    out.name = None
    out._consumed = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
    return out


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), back)


def linear(x, w, b):
    """``x @ w + b`` with ``b`` a ``1 x n`` row broadcast over rows of ``x``."""
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: cannot multiply {x.shape} by {w.shape}")
    if b.shape != (1, w.shape[1]):
        raise DimensionError(f"linear: bias shape {b.shape} does not match {w.shape}")
    xv, wv = x.value, w.value

    def back(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)

    return _node(xv @ wv + b.value, (x, w, b), back)


def add(a, b):
    _check_same("add", a, b)
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same("sub", a, b)
    return _node(a.value - b.value, (a, b), lambda g: (g, -g))


def add_bias(a, b):
    if b.shape != (1, a.shape[1]):
        raise DimensionError(f"add_bias: bias shape {b.shape} does not match {a.shape}")
    return _node(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def hadamard(a, b):
    _check_same("hadamard", a, b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, s):
    s = float(s)
    return _node(a.value * s, (a,), lambda g: (g * s,))


def add_scalar(a, s):
    return _node(a.value + float(s), (a,), lambda g: (g,))


def sigmoid(a):
    y = _sigmoid(a.value)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a):
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a):
    y = np.exp(a.value)
    return _node(y, (a,), lambda g: (g * y,))


def log(a):
    av = a.value
    bad = np.flatnonzero(~(av > 0))
    if bad.size:
        idx = np.unravel_index(bad[0], av.shape)
        raise DomainError(f"log: non-positive element {av[idx]!r} at index {tuple(int(i) for i in idx)}")
    return _node(np.log(av), (a,), lambda g: (g / av,))


def softplus(a):
    av = a.value
    y = softplus_array(av)
    return _node(y, (a,), lambda g: (g * _sigmoid(av),))


def relu(a):
    av = a.value
    mask = av > 0
    return _node(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def clamp(a, lo, hi):
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def sum_all(a):
    shape = a.shape
    return _node(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a):
    shape = a.shape
    n = a.value.size
    return _node(np.array([[a.value.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


def row_block(a, start, stop):
    """Rows ``start:stop`` of ``a``."""
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _node(a.value[start:stop], (a,), back)


def concat_cols(*parts):
    widths = [p.shape[1] for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    splits = np.cumsum(widths)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=1))

    return _node(np.concatenate([p.value for p in parts], axis=1), tuple(parts), back)


# ---------------------------------------------------------------------------
# fused layers


def sample_gaussian(mu, log_var, rng_seed):
    """Reparameterised draw ``mu + exp(0.5 * log_var) * eps``.

    ``log_var`` is clamped to ``[-40, 10]``; ``rng_seed`` is an integer seed
    or a ``numpy.random.Generator``.
    """
    _check_same("sample_gaussian", mu, log_var)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    eps = rng.standard_normal(mu.shape)
    lv = clamp(log_var, LOG_VAR_MIN, LOG_VAR_MAX)
    sigma = np.exp(0.5 * lv.value)
    noise = sigma * eps

    def back(g):
        return g, g * noise * 0.5

    return _node(mu.value + noise, (mu, lv), back)


def batch_norm_train(x, gamma, beta, eps):
    """Normalise each column of ``x`` by its batch mean and biased variance.

    Returns the output tensor plus the batch mean and unbiased variance so the
    caller can update running statistics.
    """
    xv = x.value
    m = xv.shape[0]
    mean = xv.mean(axis=0, keepdims=True)
    centered = xv - mean
    var = (centered * centered).mean(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gv = gamma.value

    def back(g):
        dxhat = g * gv
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=0, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=0, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    out = _node(xhat * gv + beta.value, (x, gamma, beta), back)
    unbiased = var * (m / (m - 1)) if m > 1 else var
    return out, mean, unbiased


def batch_norm_eval(x, gamma, beta, running_mean, running_var, eps):
    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.value - running_mean) * inv_std
    gv = gamma.value

    def back(g):
        return (g * gv * inv_std, (g * xhat).sum(axis=0, keepdims=True),
                g.sum(axis=0, keepdims=True))

    return _node(xhat * gv + beta.value, (x, gamma, beta), back)


def gru_cell(gi, h, w_h, b_h):
    """One GRU update given the precomputed input projection ``gi``.

    ``gi`` is ``x @ [W_ir|W_iu|W_ic] + [b_ir|b_iu|b_ic]`` (``B x 3H``), ``w_h`` is
    ``[W_hr|W_hu|W_hc]`` (``H x 3H``) and ``b_h`` the matching ``1 x 3H`` bias.
    The hidden bias of the candidate sits inside the reset-gated term.
    """
    hv = h.value
    n_h = hv.shape[1]
    if gi.shape != (hv.shape[0], 3 * n_h) or w_h.shape != (n_h, 3 * n_h) or b_h.shape != (1, 3 * n_h):
        raise DimensionError(
            f"gru_cell: inconsistent shapes gi={gi.shape} h={h.shape} w_h={w_h.shape} b_h={b_h.shape}")
    giv, whv = gi.value, w_h.value
    gh = hv @ whv + b_h.value
    r = _sigmoid(giv[:, :n_h] + gh[:, :n_h])
    u = _sigmoid(giv[:, n_h:2 * n_h] + gh[:, n_h:2 * n_h])
    gh_c = gh[:, 2 * n_h:]
    c = np.tanh(giv[:, 2 * n_h:] + r * gh_c)
    h_new = (1.0 - u) * c + u * hv

    def back(g):
        dc_pre = g * (1.0 - u) * (1.0 - c * c)
        du_pre = g * (hv - c) * u * (1.0 - u)
        dr_pre = dc_pre * gh_c * r * (1.0 - r)
        dgi = np.concatenate([dr_pre, du_pre, dc_pre], axis=1)
        dgh = np.concatenate([dr_pre, du_pre, dc_pre * r], axis=1)
        dh = g * u + dgh @ whv.T
        return dgi, dh, hv.T @ dgh, dgh.sum(axis=0, keepdims=True)

    return _node(h_new, (gi, h, w_h, b_h), back)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Propagate d(loss)/d(node) to every node reachable from ``loss``.

    Leaf gradients accumulate into ``Tensor.grad``; the return value maps each
    reached leaf to its gradient. A graph may be traversed only once.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topological(loss)
    for node in order:
        if node._consumed:
            raise ContractError("backward: graph already traversed; rebuild the forward pass")
    grads = {id(loss): np.ones((1, 1))}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g if node.grad is None else node.grad + g
                leaves[node] = node.grad
            continue
        node._consumed = True
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    return leaves


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


# ---------------------------------------------------------------------------
# plain-array helpers


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus_array(x):
    x = np.asarray(x, dtype=np.float64)
    safe = np.minimum(x, SOFTPLUS_LINEAR_ABOVE)
    return np.where(x > SOFTPLUS_LINEAR_ABOVE, x, np.log1p(np.exp(safe)))


def make_rng(seed, *stream):
    """PCG64 generator for ``seed`` and an optional integer stream key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(stream))))


def numerical_gradient(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad
