"""Dense tensors with a reverse-mode gradient tape.

Every operation builds a node holding references to its inputs and a
closure that maps the output gradient to input gradients.  ``backward``
orders the nodes reachable from a scalar loss into a :class:`GradTape`
and replays it in reverse.

Only the broadcasts the model needs are supported: a row-vector bias added
to a matrix (:func:`add_bias`) and the per-axis gating product of the
coordinate attention (:func:`gate`).  Everything else requires equal shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NonFiniteError

DTYPE = np.float64

# Distance to a non-differentiable point below which finite differences are
# considered unreliable.
KINK_TOLERANCE = 1e-3


class Tensor:
    """A dense array that may participate in gradient computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "kink")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = "leaf"
        # smallest distance of any recorded pre-image to a relu/max kink
        self.kink = math.inf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _raise_not_scalar(t: Tensor) -> float:
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape: int, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad, name=name)


def ones(*shape: int, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(np.ones(shape, dtype=DTYPE), requires_grad=requires_grad, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str, kink: float = math.inf) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out._op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    out.kink = min([kink] + [p.kink for p in parents])
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# linear algebra and arithmetic
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    src = a.shape
    return _make(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(src),), "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(
        np.ascontiguousarray(np.transpose(a.data, axes)),
        (a,),
        lambda g: (np.transpose(g, inverse),),
        "permute",
    )


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m×n matrix."""
    if x.ndim != 2 or bias.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise DimensionError(f"add_bias shape mismatch: {x.shape} + {bias.shape}")
    return _make(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)), "add_bias")


def gate(x: Tensor, gh: Tensor, gw: Tensor) -> Tensor:
    """x ⊙ gh ⊙ gw for x of shape C×H×W, gh C×H×1 and gw C×1×W."""
    if x.ndim != 3:
        raise DimensionError(f"gate needs a C×H×W tensor, got {x.shape}")
    c, h, w = x.shape
    if gh.shape != (c, h, 1) or gw.shape != (c, 1, w):
        raise DimensionError(f"gate shape mismatch: x {x.shape}, gh {gh.shape}, gw {gw.shape}")
    xd, hd, wd = x.data, gh.data, gw.data

    def backward(g):
        return (
            g * hd * wd,
            (g * xd * wd).sum(axis=2, keepdims=True),
            (g * xd * hd).sum(axis=1, keepdims=True),
        )

    return _make(xd * hd * wd, (x, gh, gw), backward, "gate")


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


def sum_squares(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.array(np.sum(xd * xd)), (x,), lambda g: (2.0 * float(g) * xd,), "sum_squares")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NonFiniteError("log of a non-positive value")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def elementwise(kind: str, x: Tensor) -> Tensor:
    """Pointwise tanh, sigmoid, relu or gelu (tanh approximation)."""
    xd = x.data
    if kind == "tanh":
        y = np.tanh(xd)
        return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")
    if kind == "sigmoid":
        y = _sigmoid(xd)
        return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")
    if kind == "relu":
        mask = xd > 0
        kink = float(np.min(np.abs(xd))) if xd.size else math.inf
        return _make(np.where(mask, xd, 0.0), (x,), lambda g: (g * mask,), "relu", kink=kink)
    if kind == "gelu":
        inner = _GELU_C * (xd + 0.044715 * xd**3)
        t = np.tanh(inner)
        y = 0.5 * xd * (1.0 + t)
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        dy = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        return _make(y, (x,), lambda g: (g * dy,), "gelu")
    raise ConfigError(f"unknown activation kind {kind!r}")


def tanh(x: Tensor) -> Tensor:
    return elementwise("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise("sigmoid", x)


def relu(x: Tensor) -> Tensor:
    return elementwise("relu", x)


def gelu(x: Tensor) -> Tensor:
    return elementwise("gelu", x)


# ---------------------------------------------------------------------------
# normalisation, pooling and structure
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise softmax with max subtraction.

    ``mask`` is an optional boolean array broadcastable to ``x``; entries
    where it is False receive exactly zero probability.
    """
    if x.ndim != 2 or x.shape[1] == 0:
        raise DimensionError(f"softmax_rows needs a non-empty m×n matrix, got {x.shape}")
    xd = x.data
    if mask is None:
        z = xd - xd.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not keep.any(axis=1).all():
            raise DimensionError("softmax_rows mask leaves a row with no entries")
        z = np.where(keep, xd, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        e = np.where(keep, np.exp(z), 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (x,), backward, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise each row of an m×d matrix to zero mean and unit variance."""
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError(f"layer_norm needs an m×d matrix with d >= 2, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape}, {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def reduce_max_cols(x: Tensor) -> Tensor:
    """Column-wise maximum of an m×n matrix; ties route gradient to the first row."""
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"reduce_max_cols needs an m×n matrix with m >= 1, got {x.shape}")
    xd = x.data
    idx = np.argmax(xd, axis=0)
    cols = np.arange(xd.shape[1])
    out = xd[idx, cols]
    if xd.shape[0] > 1:
        top2 = np.sort(xd, axis=0)[-2:]
        kink = float(np.min(top2[1] - top2[0]))
    else:
        kink = math.inf
    shape = xd.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[idx, cols] = g
        return (gx,)

    return _make(out.copy(), (x,), backward, "reduce_max_cols", kink=kink)


def avg_pool_axis(x: Tensor, axis: str) -> Tensor:
    """Mean over the H axis (-> C×1×W) or the W axis (-> C×H×1) of a C×H×W tensor."""
    if x.ndim != 3:
        raise DimensionError(f"avg_pool_axis needs a C×H×W tensor, got {x.shape}")
    ax = {"H": 1, "W": 2}.get(axis)
    if ax is None:
        raise ConfigError(f"avg_pool_axis axis must be 'H' or 'W', got {axis!r}")
    n = x.shape[ax]
    if n == 0:
        raise DimensionError(f"avg_pool_axis over an empty {axis} axis")
    shape = x.shape
    return _make(
        x.data.mean(axis=ax, keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
        f"avg_pool_{axis}",
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    ndim = tensors[0].ndim
    ax = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat extent mismatch off axis {ax}: {ref} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Inverse of :func:`concat`: consecutive slices of the given sizes."""
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis {ax} of {x.shape}")
    out = []
    start = 0
    for n in sizes:
        out.append(take(x, np.arange(start, start + n), axis=ax))
        start += n
    return out


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Select entries along an axis; backward scatters (with accumulation)."""
    idx = np.asarray(indices)
    ax = axis % x.ndim
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        moved = np.moveaxis(gx, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0) if idx.ndim else g)
        return (gx,)

    return _make(np.take(x.data, idx, axis=ax).copy(), (x,), backward, "take")


def row(x: Tensor, i: int) -> Tensor:
    """Row ``i`` of a matrix as a vector."""
    return take(x, i, axis=0)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Look up rows of a V×d table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be V×d, got {table.shape}")
    return take(table, ids, axis=0)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or the rate is zero."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


@dataclass
class GradTape:
    """Operations reachable from an output, in topological (creation) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, output: Tensor) -> "GradTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(output, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack_.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, tape: Optional[GradTape] = None) -> GradTape:
    """Accumulate dLoss/dLeaf into ``.grad`` of every leaf requiring gradients.

    Leaf gradients are *added* to existing buffers, so successive calls sum.
    Call :func:`zero_grad` between independent steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = GradTape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=DTYPE).reshape(parent.shape)
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
