"""Dense-tensor reverse-mode automatic differentiation.

Tensors hold float64 numpy arrays. Operations executed while a Tape is
active record backward closures onto it; ``Tape.backward(loss)`` replays
them in reverse. The tape is rebuilt on every forward pass (define-by-run),
which is what lets the search cell change topology between passes.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "AutodiffError",
    "ShapeError",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "unary",
    "reduce_sum",
    "reduce_mean",
    "broadcast_to",
    "concat",
    "reshape",
    "transpose",
    "im2col",
    "linear_combination",
    "softmax_cross_entropy",
    "apply_primitive",
    "SGD",
    "Adam",
    "AdamW",
    "make_optimizer",
    "OptimizerError",
    "finite_difference_grad",
]


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def gradient(self):
        """Gradient buffer, treating an untouched one as zero."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; everything routes through the module-level primitives
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "backward")

    def __init__(self, out, backward):
        self.out = out
        self.backward = backward


_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def _current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Nodes are appended in execution order, which for define-by-run is a
    topological order: every node's inputs were produced earlier. One
    backward sweep therefore visits each node exactly once.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tape stack corrupted"
        return False

    def backward(self, loss):
        if loss.size != 1:
            raise AutodiffError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise AutodiffError("backward on an empty tape")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue  # not on the path from loss
            node.backward(g)


def _record(inputs, out, backward):
    """Attach a backward closure if any input needs a gradient."""
    tape = _current_tape()
    if tape is None:
        return out
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, backward))
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcastable(a, b):
    try:
        np.broadcast_shapes(a, b)
        return True
    except ValueError:
        return False


def _elementwise_binary(op_name, a, b, fwd, da_fn, db_fn):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(op_name, a.shape, b.shape)
    out = Tensor(fwd(a.data, b.data))

    def backward(g):
        _accum(a, _unbroadcast(da_fn(g), a.shape))
        _accum(b, _unbroadcast(db_fn(g), b.shape))

    return _record((a, b), out, backward)


def add(a, b):
    return _elementwise_binary("add", a, b, np.add, lambda g: g, lambda g: g)


def sub(a, b):
    return _elementwise_binary("sub", a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a, b):
    return _elementwise_binary(
        "mul", a, b, np.multiply, lambda g: g * b.data, lambda g: g * a.data
    )


def div(a, b):
    return _elementwise_binary(
        "div", a, b, np.divide,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def neg(a):
    out = Tensor(-a.data)

    def backward(g):
        _accum(a, -g)

    return _record((a,), out, backward)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = Tensor(a.data @ b.data)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record((a, b), out, backward)


def unary(x, fn, dfn, label="unary"):
    """Elementwise y = fn(x) with analytic derivative dfn evaluated at x."""
    out = Tensor(fn(x.data))

    def backward(g):
        _accum(x, g * dfn(x.data))

    return _record((x,), out, backward)


def reduce_sum(x):
    out = Tensor(np.array(x.data.sum()))

    def backward(g):
        _accum(x, np.broadcast_to(g, x.shape).copy() if x.shape else g)

    return _record((x,), out, backward)


def reduce_mean(x):
    n = x.size
    out = Tensor(np.array(x.data.mean()))

    def backward(g):
        _accum(x, np.full(x.shape, float(g) / n))

    return _record((x,), out, backward)


def broadcast_to(x, shape):
    if not _broadcastable(x.shape, tuple(shape)):
        raise ShapeError("broadcast", x.shape, tuple(shape))
    out = Tensor(np.broadcast_to(x.data, shape).copy())

    def backward(g):
        _accum(x, _unbroadcast(g, x.shape))

    return _record((x,), out, backward)


def concat(tensors, axis=0):
    shapes = [t.shape for t in tensors]
    base = [s[:axis] + s[axis + 1:] for s in shapes]
    if len(set(base)) != 1:
        raise ShapeError("concat", *shapes)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _record(tuple(tensors), out, backward)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    orig = x.shape

    def backward(g):
        _accum(x, g.reshape(orig))

    return _record((x,), out, backward)


def transpose(x, axes):
    out = Tensor(np.transpose(x.data, axes))
    inv = np.argsort(axes)

    def backward(g):
        _accum(x, np.transpose(g, inv))

    return _record((x,), out, backward)


def im2col(x, kh, kw, stride=1):
    """Extract sliding 3-D patches from (N, C, H, W) into (N*P, C*kh*kw).

    P = out_h * out_w patches per image, row-major over the output grid.
    Backward scatter-adds each patch gradient back into place.
    """
    if x.data.ndim != 4:
        raise ShapeError("im2col", x.shape)
    n, c, h, w = x.shape
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ShapeError("im2col", x.shape, (kh, kw))
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (n, c, out_h, out_w, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)
    out = Tensor(cols.copy())

    def backward(g):
        gx = np.zeros((n, c, h, w))
        gp = g.reshape(n, out_h, out_w, c, kh, kw)
        for i in range(out_h):
            hi = i * stride
            for j in range(out_w):
                wj = j * stride
                gx[:, :, hi:hi + kh, wj:wj + kw] += gp[:, i, j]
        _accum(x, gx)

    return _record((x,), out, backward)


def linear_combination(weights, items):
    """sum_i weights[i] * items[i] for a 1-D weight tensor and same-shape items."""
    if weights.data.ndim != 1 or len(items) != weights.size:
        raise ShapeError("linear_combination", weights.shape, (len(items),))
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise ShapeError("linear_combination", *sorted(shapes))
    acc = np.zeros(items[0].shape)
    for wi, t in zip(weights.data, items):
        acc += wi * t.data
    out = Tensor(acc)

    def backward(g):
        wg = np.array([float((g * t.data).sum()) for t in items])
        _accum(weights, wg)
        for wi, t in zip(weights.data, items):
            _accum(t, g * wi)

    return _record((weights, *items), out, backward)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels against row-softmax of logits.

    Per-sample averaging keeps k accumulated small-batch gradients equal to
    one big-batch gradient.
    """
    if logits.data.ndim != 2:
        raise ShapeError("softmax-cross-entropy", logits.shape)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError("softmax-cross-entropy", logits.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= c:
        raise AutodiffError(
            f"softmax-cross-entropy: label out of range [0, {c}): "
            f"min={labels.min()}, max={labels.max()}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(n), labels]
    out = Tensor(np.array((lse - picked).mean()))

    def backward(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        _accum(logits, (float(g) / n) * p)

    return _record((logits,), out, backward)


_PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "reduce-mean": lambda x: reduce_mean(x),
    "reduce-sum": lambda x: reduce_sum(x),
    "broadcast": broadcast_to,
    "concat": concat,
    "softmax-cross-entropy": softmax_cross_entropy,
    "elementwise-unary": unary,
}


def apply_primitive(kind, *args, **kwargs):
    """Dispatch a primitive by name; unknown kinds are rejected."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise AutodiffError(f"unknown primitive kind {kind!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# optimizers


class OptimizerError(AutodiffError):
    pass


class _Optimizer:
    """Shared bookkeeping: per-parameter state slots and a step counter."""

    def __init__(self, params):
        self.params = list(params)
        self.step_count = 0
        self._state = {id(p): self._init_state(p) for p in self.params}

    def _init_state(self, p):
        raise NotImplementedError

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def add_param(self, p):
        self.params.append(p)
        self._state[id(p)] = self._init_state(p)

    def remove_param(self, p):
        self.params.remove(p)
        del self._state[id(p)]

    def delete_index(self, p, idx):
        """Drop element idx of a 1-D parameter and its moment slices."""
        p.data = np.delete(p.data, idx)
        if p.grad is not None:
            p.grad = np.delete(p.grad, idx)
        state = self._state[id(p)]
        for key, buf in state.items():
            state[key] = np.delete(buf, idx)

    def _check_grad(self, p, g):
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")

    def step(self):
        self.step_count += 1
        for p in self.params:
            g = p.gradient()
            self._check_grad(p, g)
            self._update(p, g, self._state[id(p)])

    def _update(self, p, g, state):
        raise NotImplementedError


class SGD(_Optimizer):
    """SGD with classical momentum and coupled L2 weight decay."""

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        super().__init__(params)

    def _init_state(self, p):
        return {"velocity": np.zeros_like(p.data)} if self.momentum else {}

    def _update(self, p, g, state):
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        if self.momentum:
            state["velocity"] = self.momentum * state["velocity"] + g
            g = state["velocity"]
        p.data -= self.lr * g


class Adam(_Optimizer):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        super().__init__(params)

    def _init_state(self, p):
        return {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}

    def _update(self, p, g, state):
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        t = self.step_count
        state["m"] = self.beta1 * state["m"] + (1 - self.beta1) * g
        state["v"] = self.beta2 * state["v"] + (1 - self.beta2) * g * g
        m_hat = state["m"] / (1 - self.beta1 ** t)
        v_hat = state["v"] / (1 - self.beta2 ** t)
        p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class AdamW(Adam):
    """Adam with decoupled weight decay (decay applied outside the moments)."""

    def _update(self, p, g, state):
        if self.weight_decay:
            p.data -= self.lr * self.weight_decay * p.data
        wd, self.weight_decay = self.weight_decay, 0.0
        try:
            super()._update(p, g, state)
        finally:
            self.weight_decay = wd


def make_optimizer(kind, params, **kwargs):
    kinds = {"sgd-momentum": SGD, "adam": Adam, "adamw": AdamW}
    if kind not in kinds:
        raise OptimizerError(f"unknown optimizer kind {kind!r}; expected one of {sorted(kinds)}")
    return kinds[kind](params, **kwargs)


def finite_difference_grad(f, params, h=1e-6, coords=None):
    """Central-difference gradient estimate of scalar f() wrt each parameter.

    f is re-evaluated with perturbed parameter data; it must be deterministic.
    `coords` optionally restricts the check to {id(param): [flat indices]}.
    Returns one array per parameter (unchecked coordinates left at 0).
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        idxs = range(flat.size) if coords is None else coords[id(p)]
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f())
            flat[i] = orig - h
            f_minus = float(f())
            flat[i] = orig
            g[i] = (f_plus - f_minus) / (2 * h)
        grads.append(g.reshape(p.shape))
    return grads
