"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every operation records a backward closure on the output node, so calling
``backward()`` on a scalar propagates gradients to all reachable leaves.
The graph is rebuilt on every forward pass (dynamic tape), which is what the
sequential clustering heads need: graph size and step count change per input.

Broadcasting is deliberately restricted: shapes must be equal, or one operand
is a scalar, or one operand's shape is a suffix of the other's (a row vector
against a matrix, for example). Anything else raises ShapeError.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "concat",
    "slice_axis",
    "gather_rows",
    "gather_rows_planned",
    "scatter_sum",
    "ScatterPlan",
    "reduce_sum",
    "reduce_mean",
    "transpose",
    "reshape",
    "broadcast_to",
    "relu",
    "prelu",
    "sigmoid",
    "softmax",
    "log_softmax",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "tensor_op",
    "activation",
    "batchnorm",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "op",
                 "_grad_owned")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bwd = None
        self.op = "leaf"
        self._grad_owned = False

    # fast internal constructor for op outputs, skips asarray/copy
    @classmethod
    def _make(cls, data, parents, bwd, op):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t._parents = parents
        t._bwd = bwd
        t.op = op
        t.requires_grad = True
        t._grad_owned = False
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None
        self._grad_owned = False

    def accum_grad(self, g):
        # copy-on-write: borrow the first contribution, allocate on the second
        cur = self.grad
        if cur is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            cur += g
        else:
            self.grad = cur + g
            self._grad_owned = True

    def backward(self):
        """Reverse-mode pass from a scalar output to all reachable leaves."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar output, got shape {self.data.shape}"
            )
        # topological order, deterministic for a fixed graph
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            nid = id(node)
            if nid in visited:
                continue
            visited.add(nid)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.accum_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._bwd is not None:
                node._bwd(node.grad)
        # free intermediate grads/tape so leaves keep only their own grad
        for node in topo:
            if node._bwd is not None:
                node.grad = None
                node._grad_owned = False
                node._parents = ()
                node._bwd = None

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, rg={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(data, parents, bwd, op):
    """Wrap an op result; records on the tape only when gradients are needed."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor._make(data, parents, bwd, op)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t._parents = ()
    t._bwd = None
    t.op = op
    t.requires_grad = False
    return t


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (undo scalar/suffix broadcasting)."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _check_broadcast(op, a, b):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or sa == () or sb == ():
        return
    # suffix broadcast: shorter shape must equal the trailing dims of the longer
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accum_grad(_unbroadcast(g, b.data.shape))

    return _out(out_data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accum_grad(_unbroadcast(-g, b.data.shape))

    return _out(out_data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accum_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accum_grad(_unbroadcast(g * a.data, b.data.shape))

    return _out(out_data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.accum_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accum_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _out(out_data, (a, b), bwd, "div")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a.accum_grad(-g)

    return _out(-a.data, (a,), bwd, "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul: expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accum_grad(g @ b.data.T)
        if b.requires_grad:
            b.accum_grad(a.data.T @ g)

    return _out(out_data, (a, b), bwd, "matmul")


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t.accum_grad(p)

    return _out(out_data, tuple(tensors), bwd, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out_data = a.data[idx]

    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        a.accum_grad(buf)

    return _out(out_data, (a,), bwd, "slice")


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out_data = a.data[idx]

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a.accum_grad(buf)

    return _out(out_data, (a,), bwd, "gather_rows")


class ScatterPlan:
    """Precomputed sort order for fast segment sums over an index vector."""

    __slots__ = ("idx", "perm", "starts", "uniq", "n_segments")

    def __init__(self, indices, n_segments: int):
        self.idx = np.asarray(indices, dtype=np.intp)
        self.n_segments = n_segments
        self.perm = np.argsort(self.idx, kind="stable")
        sorted_idx = self.idx[self.perm]
        self.uniq, self.starts = np.unique(sorted_idx, return_index=True)

    def sum_rows(self, rows: np.ndarray) -> np.ndarray:
        buf = np.zeros((self.n_segments, rows.shape[1]))
        if self.idx.size:
            buf[self.uniq] = np.add.reduceat(rows[self.perm], self.starts, axis=0)
        return buf


def gather_rows_planned(a: Tensor, plan: ScatterPlan) -> Tensor:
    """gather_rows(a, plan.idx) with a sort-based scatter in the backward."""
    out_data = a.data[plan.idx]

    def bwd(g):
        a.accum_grad(plan.sum_rows(g))

    return _out(out_data, (a,), bwd, "gather_rows")


def scatter_sum(a: Tensor, plan: ScatterPlan) -> Tensor:
    """Segment sum of rows of a grouped by plan.idx; backward is a gather."""
    out_data = plan.sum_rows(a.data)

    def bwd(g):
        a.accum_grad(g[plan.idx])

    return _out(out_data, (a,), bwd, "scatter_sum")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a.accum_grad(np.broadcast_to(g, a.data.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            a.accum_grad(np.broadcast_to(ge, a.data.shape).copy())

    return _out(out_data, (a,), bwd, "reduce_sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if a.data.size == 0:
        raise ShapeError("reduce_mean: empty tensor")
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    denom = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is None:
            a.accum_grad(np.broadcast_to(g / denom, a.data.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            a.accum_grad(np.broadcast_to(ge / denom, a.data.shape).copy())

    return _out(out_data, (a,), bwd, "reduce_mean")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects 2-D, got {a.data.shape}")

    def bwd(g):
        a.accum_grad(g.T)

    return _out(a.data.T.copy(), (a,), bwd, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def bwd(g):
        a.accum_grad(g.reshape(a.data.shape))

    return _out(out_data, (a,), bwd, "reshape")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    sa = a.data.shape
    if sa != () and sa != shape[len(shape) - len(sa):]:
        raise ShapeError(f"broadcast: {sa} is not a suffix of {shape}")
    out_data = np.broadcast_to(a.data, shape).copy()

    def bwd(g):
        a.accum_grad(_unbroadcast(g, sa))

    return _out(out_data, (a,), bwd, "broadcast")


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        a.accum_grad(g * (a.data > 0))

    return _out(out_data, (a,), bwd, "relu")


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with a learned (scalar) negative slope."""
    pos = a.data > 0
    out_data = np.where(pos, a.data, slope.data * a.data)

    def bwd(g):
        if a.requires_grad:
            a.accum_grad(g * np.where(pos, 1.0, slope.data))
        if slope.requires_grad:
            slope.accum_grad(
                _unbroadcast(g * np.where(pos, 0.0, a.data), slope.data.shape)
            )

    return _out(out_data, (a, slope), bwd, "prelu")


def _sigmoid(x):
    # one exp of a non-positive argument; exact and overflow-free
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)

    def bwd(g):
        a.accum_grad(g * out_data * (1.0 - out_data))

    return _out(out_data, (a,), bwd, "sigmoid")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape == () or a.data.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis {axis} of shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a.accum_grad(out_data * (g - dot))

    return _out(out_data, (a,), bwd, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape == () or a.data.shape[axis] == 0:
        raise ShapeError(f"log_softmax: empty axis {axis} of shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def bwd(g):
        soft = np.exp(out_data)
        a.accum_grad(g - soft * g.sum(axis=axis, keepdims=True))

    return _out(out_data, (a,), bwd, "log_softmax")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        a.accum_grad(g * out_data)

    return _out(out_data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    def bwd(g):
        a.accum_grad(g / a.data)

    return _out(np.log(a.data), (a,), bwd, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        a.accum_grad(g * 0.5 / out_data)

    return _out(out_data, (a,), bwd, "sqrt")


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(0.0, a.data)

    def bwd(g):
        a.accum_grad(g * _sigmoid(a.data))

    return _out(out_data, (a,), bwd, "softplus")


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over axis 0, per channel.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, torch convention). Eval mode
    normalizes with the running buffers.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm: expects 2-D input, got {x.data.shape}")
    if not training:
        inv = 1.0 / np.sqrt(running_var + eps)
        xc = sub(x, Tensor(running_mean))
        return add(mul(xc, Tensor(inv * gamma.data)), beta)

    n = x.data.shape[0]
    mu = x.data.mean(axis=0)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gamma.data * xhat + beta.data

    unbiased = var * n / (n - 1) if n > 1 else var
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased

    def bwd(g):
        gxhat_mean = (g * xhat).mean(axis=0)
        if gamma.requires_grad:
            gamma.accum_grad(gxhat_mean * n)
        if beta.requires_grad:
            beta.accum_grad(g.sum(axis=0))
        if x.requires_grad:
            x.accum_grad(
                (gamma.data * inv) * (g - g.mean(axis=0) - xhat * gxhat_mean)
            )

    return _out(out_data, (x, gamma, beta), bwd, "batchnorm")


# ---------------------------------------------------------------------------
# kind-dispatch entry points

_TENSOR_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": concat,
    "slice": slice_axis,
    "gather_rows": gather_rows,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "transpose": transpose,
    "broadcast": broadcast_to,
}

_ACTIVATIONS = {
    "relu": relu,
    "prelu": prelu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "batchnorm": batchnorm,
}


def tensor_op(kind: str, *args, **kwargs) -> Tensor:
    """Dispatch a recorded tensor op by kind name."""
    try:
        fn = _TENSOR_OPS[kind]
    except KeyError:
        raise ValueError(f"unknown tensor op kind: {kind!r}") from None
    return fn(*args, **kwargs)


def activation(kind: str, *args, **kwargs) -> Tensor:
    """Dispatch an activation by kind name."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None
    return fn(*args, **kwargs)
