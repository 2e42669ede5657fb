"""Small reverse-mode autodiff over numpy float64 arrays.

Every model computation in this package runs through the ops defined here.
Each op computes its forward value eagerly and, when any input needs a
gradient, records a closure mapping the output gradient to input gradients.
``backward`` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import MaskAllFalse, NonDeterministicClosure, NonScalarLoss, ShapeMismatch

DTYPE = np.float64
MASK_VALUE = -1e9

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def values(self):
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A named leaf tensor owned by a ParameterSet."""

    __slots__ = ("trainable",)

    def __init__(self, data, name, trainable=True):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=trainable, name=name)
        self.trainable = trainable


def _not_scalar(t):
    raise NonScalarLoss(f"expected a single value, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _result(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A = a.data[None, :] if a.ndim == 1 else a.data
    B = b.data[:, None] if b.ndim == 1 else b.data
    if A.shape[-1] != B.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    full = A @ B
    data = full
    if a.ndim == 1:
        data = data[..., 0, :]
    if b.ndim == 1:
        data = data[..., 0]

    def bw(g):
        G = g.reshape(full.shape)
        ga = _unbroadcast(G @ np.swapaxes(B, -1, -2), A.shape).reshape(a.shape)
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ G, B.shape).reshape(b.shape)
        return ga, gb

    return _result(data, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias with weight stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    data = x.data @ weight.data
    if bias is not None:
        data = data + bias.data

    def bw(g):
        gx = g @ weight.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(data, parents, bw)


# ---------------------------------------------------------------- structure


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _result(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def bw(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _result(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(data, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {[t.shape for t in tensors]}") from exc

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(data, tensors, bw)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding: id outside [0, {table.shape[0]})")

    def bw(g):
        z = np.zeros_like(table.data)
        np.add.at(z, ids, g)
        return (z,)

    return _result(table.data[ids], (table,), bw)


# ---------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(data, (a,), bw)


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over axis -2 of ``x`` restricted to rows where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise ShapeMismatch(f"masked_mean: mask {mask.shape} vs input {x.shape}")
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise MaskAllFalse("mean-pool over a sequence with no real positions")
    w = (mask / counts)[..., None]
    data = (x.data * w).sum(axis=-2)
    return _result(data, (x,), lambda g: (g[..., None, :] * w,))


# ---------------------------------------------------------------- normalisation


def softmax(x: Tensor, mask_add=None) -> Tensor:
    """Softmax over the last axis; ``mask_add`` is a constant added first."""
    z = x.data if mask_add is None else x.data + mask_add
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), bw)


def additive_mask(mask) -> np.ndarray:
    """0 where mask is true, MASK_VALUE where false."""
    return np.where(np.asarray(mask, dtype=bool), 0.0, MASK_VALUE)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def bw(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, g.shape[-1])
        return gx, (g2 * xhat.reshape(g2.shape)).sum(axis=0), g2.sum(axis=0)

    return _result(data, (x, gamma, beta), bw)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood of integer ``targets`` under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(len(targets))
    data = lse - z[rows, targets]

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, targets] -= 1.0
        return (p * g[:, None],)

    return _result(data, (logits,), bw)


def log_softmax_values(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------- reverse pass


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    When ``params`` is given their grads are reset to zero first, so
    parameters the loss does not depend on end with an all-zero gradient.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if params is not None:
        for p in params:
            p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def depends_on(out: Tensor, leaf: Tensor) -> bool:
    """True when ``leaf`` is an ancestor of ``out`` in the recorded graph."""
    if out is leaf:
        return True
    return any(node is leaf for node in _topo(out))


# ---------------------------------------------------------------- parameter sets


class ParameterSet:
    """Ordered, uniquely named collection of Parameters."""

    def __init__(self):
        self._params: OrderedDict[str, Parameter] = OrderedDict()

    def add(self, name: str, data, trainable=True) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(data, name, trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name) -> Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def size(self) -> int:
        return sum(p.data.size for p in self)

    def zero_grad(self):
        for p in self:
            p.grad = np.zeros_like(p.data)

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for n, p in self._params.items():
            arr = np.asarray(state[n], dtype=DTYPE)
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{n}: checkpoint shape {arr.shape} vs {p.shape}")
            p.data = arr.copy()


# ---------------------------------------------------------------- checkpoints

# layout: u32 count; per entry u32 name_len, name utf-8, u32 rank, u32 dims..., f64 values


def save_params(path, params: Mapping[str, np.ndarray] | ParameterSet) -> None:
    state = params.state() if isinstance(params, ParameterSet) else params
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict()
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    (count,) = take("<I")
    for _ in range(count):
        (n,) = take("<I")
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims).astype(DTYPE)
        pos += 8 * size
        out[name] = arr
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    eps: float
    worst: tuple[str, int] | None = None
    n_entries: int = 0
    details: dict[str, dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def summary(self) -> str:
        lines = [f"{name:40s} {err:.3e}" for name, err in self.errors.items()]
        tol = f"{self.tol:g}".replace("e-0", "e-")
        verdict = f"all < {tol}" if self.passed else f"FAIL: max {self.max_error:.3e} >= {tol}"
        lines.append(f"{self.n_entries} entries checked, max relative error {self.max_error:.3e}: {verdict}")
        return "\n".join(lines)


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(
    closure: Callable[[], Tensor],
    params: Sequence[Parameter] | ParameterSet,
    eps: float = 1e-5,
    tol: float = 1e-5,
    precision: str = "adaptive",
) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``closure`` must rebuild the loss from the current parameter values on
    every call. Every entry of every parameter is perturbed.

    At eps=1e-5 float64 rounding in the loss difference puts ~1e-10 of
    absolute noise on each numeric derivative, enough to fail small true
    gradients. ``precision`` picks how the perturbed passes are evaluated:
    "float64", "extended" (np.longdouble throughout), or "adaptive", which
    runs float64 first and repeats in np.longdouble every entry that float64
    cannot settle (|analytic| <= 1e-3 or error >= tol / 10), except entries
    whose float64 analytic and numeric values are both exactly zero. The
    analytic gradients are always float64.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    if precision not in ("adaptive", "float64", "extended"):
        raise ValueError(f"unknown precision {precision!r}")
    params = list(params)
    with no_grad():
        first, second = closure().item(), closure().item()
    if first != second:
        raise NonDeterministicClosure(f"closure returned {first!r} then {second!r}")

    loss = closure()
    backward(loss, params)
    analytic = [p.grad.copy() for p in params]
    numeric = [np.zeros_like(a) for a in analytic]
    saved = [p.data for p in params]

    def central(p, flat_idx, step):
        flat = p.data.reshape(-1)
        for i in flat_idx:
            orig = flat[i]
            flat[i] = orig + step
            up = closure().data
            flat[i] = orig - step
            down = closure().data
            flat[i] = orig
            yield i, float(((up - down) / (2 * step)).reshape(-1)[0])

    try:
        with no_grad():
            if precision != "extended":
                for p, num in zip(params, numeric):
                    for i, v in central(p, range(p.data.size), eps):
                        num.reshape(-1)[i] = v
            if precision != "float64":
                todo = []
                for a, num in zip(analytic, numeric):
                    a, n = a.reshape(-1), num.reshape(-1)
                    if precision == "extended":
                        todo.append(np.arange(a.size))
                        continue
                    settled = (np.abs(a) > 1e-3) & (relative_error(a, n) < tol / 10)
                    todo.append(np.flatnonzero(~(settled | ((a == 0) & (n == 0)))))
                if any(len(t) for t in todo):
                    for p in params:
                        p.data = p.data.astype(np.longdouble)
                    step = np.longdouble(eps)
                    for p, num, idx in zip(params, numeric, todo):
                        for i, v in central(p, idx, step):
                            num.reshape(-1)[i] = v
    finally:
        for p, data in zip(params, saved):
            p.data = data

    report = GradCheckReport(errors={}, tol=tol, eps=eps)
    worst = -1.0
    for p, a, num in zip(params, analytic, numeric):
        err = relative_error(a, num)
        report.errors[p.name] = float(err.max()) if err.size else 0.0
        report.n_entries += err.size
        if err.size and err.max() > worst:
            worst = float(err.max())
            report.worst = (p.name, int(err.argmax()))
        report.details[p.name] = {"analytic": a, "numeric": num}
    return report
