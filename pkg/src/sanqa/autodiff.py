"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

Tensors store float64 values by default. Primitives record nodes on a
thread-local tape whenever an input requires gradients; ``backward`` replays
the tape in exact reverse recording order and accumulates gradients
additively into ``Tensor.grad``. Gradients are zeroed explicitly
(``zero_grad``), never implicitly, so parameter sharing (e.g. recurrent
weights reused every time step) is correct by construction.

A tape belongs to one thread. Tensors that are not attached to a tape are
immutable after construction and safe to share across threads.
"""

import threading

import numpy as np

from .errors import ContractError, DimensionError, NumericError, VocabError

# Double precision keeps finite-difference gradient checks meaningful
# (< 1e-4 relative error). Switch to float32 only with relaxed tolerances.
DTYPE = np.float64

# Eager non-finite detection: every primitive output is checked, so
# divergence surfaces at the offending op. Disable for a small speedup.
CHECK_FINITE = True


def set_default_dtype(dtype):
    """Set the element type for newly created tensors (float64/float32)."""
    global DTYPE
    if dtype not in (np.float64, np.float32):
        raise ContractError("dtype must be numpy float64 or float32")
    DTYPE = dtype


class _State(threading.local):
    def __init__(self):
        self.tape = None
        self.grad_enabled = True


_STATE = _State()


class Tensor:
    """Dense multi-dimensional value container, optionally with a gradient."""

    __slots__ = ("values", "requires_grad", "grad", "node")

    def __init__(self, values, requires_grad=False):
        arr = np.asarray(values, dtype=DTYPE)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        g = np.asarray(g, dtype=self.values.dtype)
        if g.shape != self.values.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match value shape {self.values.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def detach(self):
        return Tensor(self.values.copy())

    def backward(self):
        backward(self)

    # reductions / shape ops as methods, mirroring the module functions
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def max(self, axis, keepdims=False):
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(other, scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "out", "bw", "tape")

    def __init__(self, op, inputs, out, bw, tape):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bw = bw
        self.tape = tape


class Tape:
    """Ordered record of primitive applications (a valid topological order).

    Ops append in execution order, so every node's inputs precede it;
    ``backward`` walks the list in exact reverse order. Usable as a context
    manager; otherwise an implicit thread-local tape is opened lazily and
    consumed by ``backward``.
    """

    __slots__ = ("nodes", "released", "_prev")

    def __init__(self):
        self.nodes = []
        self.released = False
        self._prev = None

    def __enter__(self):
        self._prev = _STATE.tape
        _STATE.tape = self
        return self

    def __exit__(self, *exc):
        _STATE.tape = self._prev
        return False

    @staticmethod
    def current():
        return _STATE.tape


class no_grad:
    """Context manager that disables tape recording (inference, oracles)."""

    def __enter__(self):
        self._prev = _STATE.grad_enabled
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(op, inputs, out_values, bw):
    if CHECK_FINITE and not np.all(np.isfinite(out_values)):
        raise NumericError(f"{op}: non-finite values in output")
    out = Tensor(out_values)
    if _STATE.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = _STATE.tape
        if tape is None:
            tape = Tape()
            _STATE.tape = tape
        node = _Node(op, inputs, out, bw, tape)
        out.node = node
        tape.nodes.append(node)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return _finish("add", (a, b), out, bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return [_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)]

    return _finish("mul", (a, b), out, bw)


def scale(x, c):
    x = _as_tensor(x)
    c = float(c)
    out = x.values * c

    def bw(g):
        return [g * c]

    return _finish("scale", (x,), out, bw)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0:
        raise DimensionError("matmul: operands must have rank >= 1")
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv
    if a2.shape[-1] != b2.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {av.shape} @ {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} do not broadcast")

    def bw(g):
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape)
        return [ga.reshape(av.shape), gb.reshape(bv.shape)]

    return _finish("matmul", (a, b), out, bw)


def oplus(mat, vec):
    """Matrix-plus-vector broadcast: add `vec` to every column of `mat`."""
    mat, vec = _as_tensor(mat), _as_tensor(vec)
    if mat.ndim != 2 or vec.ndim != 1:
        raise DimensionError(f"oplus: need matrix and vector, got {mat.shape}, {vec.shape}")
    if mat.shape[0] != vec.shape[0]:
        raise DimensionError(f"oplus: {mat.shape[0]} rows vs vector length {vec.shape[0]}")
    out = mat.values + vec.values[:, None]

    def bw(g):
        return [g, g.sum(axis=1)]

    return _finish("oplus", (mat, vec), out, bw)


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.values)

    def bw(g):
        return [g * (1.0 - out * out)]

    return _finish("tanh", (x,), out, bw)


def sigmoid(x):
    x = _as_tensor(x)
    # computed via tanh for stability on large negative inputs
    out = 0.5 * (1.0 + np.tanh(0.5 * x.values))

    def bw(g):
        return [g * out * (1.0 - out)]

    return _finish("sigmoid", (x,), out, bw)


def softmax(x, axis=-1):
    x = _as_tensor(x)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise DimensionError("softmax: axis extent must be >= 1")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return [out * (g - dot)]

    return _finish("softmax", (x,), out, bw)


def reduce_max(x, axis, keepdims=False):
    x = _as_tensor(x)
    m = x.values.max(axis=axis, keepdims=True)
    mask = x.values == m
    ties = mask.sum(axis=axis, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axis)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return [gk * mask / ties]

    return _finish("max", (x,), out, bw)


def reduce_sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return [np.broadcast_to(np.asarray(g), x.shape).copy()]
        gk = g if keepdims else np.expand_dims(g, axis)
        return [np.broadcast_to(gk, x.shape).copy()]

    return _finish("sum", (x,), out, bw)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in tensors]} do not align on axis {axis}"
        )
    sizes = [t.shape[axis] for t in tensors]

    def bw(g):
        splits = np.cumsum(sizes)[:-1]
        return list(np.split(g, splits, axis=axis))

    return _finish("concat", tuple(tensors), out, bw)


def lookup(table, ids):
    """Row lookup: out[..., :] = table[ids[...], :] (one-hot matmul equivalent)."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise DimensionError(f"lookup: table must be 2-d, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise VocabError(f"lookup: id out of range 0..{table.shape[0] - 1}")
    out = table.values[ids]

    def bw(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids, g)
        return [gt]

    return _finish("lookup", (table,), out, bw)


def reshape(x, shape):
    x = _as_tensor(x)
    try:
        out = x.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape

    def bw(g):
        return [g.reshape(old)]

    return _finish("reshape", (x,), out, bw)


def transpose(x):
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose: need a matrix, got {x.shape}")
    out = x.values.T.copy()

    def bw(g):
        return [g.T.copy()]

    return _finish("transpose", (x,), out, bw)


def cross_entropy_with_logits(logits, targets):
    """Per-sample -log softmax(logits)[target], fused for numerical stability.

    logits: (B, A) or (A,); targets: int array (B,) or scalar. Returns per
    sample losses of shape (B,) (scalar for 1-d logits).
    """
    logits = _as_tensor(logits)
    single = logits.ndim == 1
    lv = logits.values[None, :] if single else logits.values
    if lv.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 1-d or 2-d, got {logits.shape}")
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape != (lv.shape[0],):
        raise ContractError(f"cross_entropy: {lv.shape[0]} rows but {t.shape} targets")
    if t.size and (t.min() < 0 or t.max() >= lv.shape[1]):
        raise ContractError("cross_entropy: target id out of range")
    m = lv.max(axis=1, keepdims=True)
    z = lv - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    loss = lse - lv[np.arange(lv.shape[0]), t]
    out = loss.reshape(()) if single else loss

    def bw(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(lv.shape[0]), t] -= 1.0
        gl = p * np.atleast_1d(g)[:, None]
        return [gl[0] if single else gl]

    return _finish("cross_entropy", (logits,), out, bw)


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "oplus": oplus,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "max": reduce_max,
    "sum": reduce_sum,
    "concat": concat,
    "lookup": lookup,
    "scale": scale,
    "reshape": reshape,
    "transpose": transpose,
    "cross_entropy": cross_entropy_with_logits,
}


def apply_primitive(op, inputs, **kwargs):
    """Apply a primitive by id to a list of inputs (dispatch table entry)."""
    if op not in PRIMITIVES:
        raise ContractError(f"unknown primitive '{op}'")
    if op == "concat":
        return concat(inputs, **kwargs)
    return PRIMITIVES[op](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(out):
    """Propagate d(out)/d(tensor) into .grad of every tensor reachable from out.

    `out` must be a scalar recorded on a live tape. The tape is consumed:
    nodes are visited in exact reverse recording order, then freed.
    """
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("backward expects a scalar tensor")
    node = out.node
    if node is None:
        raise ContractError("backward: output was not recorded on a tape")
    tape = node.tape
    if tape.released:
        raise ContractError("backward: tape already consumed")
    out.accumulate_grad(np.ones_like(out.values))
    for n in reversed(tape.nodes):
        g = n.out.grad
        if g is None:
            continue
        grads = n.bw(g)
        for inp, gi in zip(n.inputs, grads):
            if gi is not None and inp.requires_grad:
                inp.accumulate_grad(gi)
    tape.released = True
    tape.nodes.clear()
    if _STATE.tape is tape:
        _STATE.tape = None


def finite_diff_check(f, x, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f maps the tensor x to a scalar tensor; the error per coordinate is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if step <= 0:
        raise ContractError("finite_diff_check: step must be > 0")
    x.zero_grad()
    out = f(x)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("finite_diff_check: f must return a scalar tensor")
    if out.node is not None:
        backward(out)
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.values)).copy()
    flat = x.values.reshape(-1)
    numeric = np.zeros(flat.size, dtype=DTYPE)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(x).item()
            flat[i] = orig - step
            fm = f(x).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * step)
    a = analytic.reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(np.max(np.abs(a - numeric) / denom))
