"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value is a numpy array in row-major order wrapped in a :class:`Tensor`
node. Ops build a graph of parent links plus a backward closure per node;
``Tensor.backward()`` runs the closures in reverse topological order. The set
of ops is deliberately small: exactly what the attention model, the encoders
and the classifier need, each paired with a hand-written backward rule that
``check_gradients`` can verify against central finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op's contract."""


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    Tensors are treated as immutable values once created; optimizers rebind
    ``data`` on parameter tensors between steps instead of mutating arrays
    that a live graph might reference.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """A graph-free copy of this tensor's value."""
        return Tensor(self.data.copy())

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a single-element tensor, accumulating into .grad."""
        if self.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"


@dataclass
class Gradient:
    """A gradient paired with the name of the parameter it differentiates."""

    with_respect_to: str
    value: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)


def collect_gradients(params: dict[str, Tensor]) -> list[Gradient]:
    """Snapshot accumulated grads of a parameter dict (zeros where untouched)."""
    out = []
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        out.append(Gradient(name, g.copy()))
    return out


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, parents=(a, b), op="add")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    """Elementwise product. One operand may be a single-element tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"mul: shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, parents=(a, b), op="mul")

    def backward(g):
        ga = g * b.data
        gb = g * a.data
        a._accumulate(ga if a.shape == out.shape else np.full(a.shape, ga.sum()))
        b._accumulate(gb if b.shape == out.shape else np.full(b.shape, gb.sum()))

    out._backward = backward if out.requires_grad else None
    return out


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, parents=(a,), op="scale")

    def backward(g):
        a._accumulate(g * c)

    out._backward = backward if out.requires_grad else None
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0  # gradient at exactly 0 is 0
    out = Tensor(np.where(mask, a.data, 0.0), parents=(a,), op="relu")

    def backward(g):
        a._accumulate(g * mask)

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    base = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(base) or any(
            t.shape[d] != base[d] for d in range(len(base)) if d != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {base} vs {t.shape} on axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors), op="concat")
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            t._accumulate(g[tuple(idx)])
            offset += n

    out._backward = backward if out.requires_grad else None
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), parents=(a,), op="reshape")

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    out._backward = backward if out.requires_grad else None
    return out


def sum_over_axes(a, axes=None) -> Tensor:
    """Sum over the given axes (all axes when None, yielding a scalar)."""
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    else:
        axes = tuple(axes)
    out = Tensor(a.data.sum(axis=axes), parents=(a,), op="sum")

    def backward(g):
        expanded = np.expand_dims(g, axes) if axes else g
        a._accumulate(np.broadcast_to(expanded, a.shape).copy())

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b), op="matmul")

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    out._backward = backward if out.requires_grad else None
    return out


def softmax(a, axis=-1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    s = exps / exps.sum(axis=axis, keepdims=True)
    out = Tensor(s, parents=(a,), op="softmax")

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate(s * (g - inner))

    out._backward = backward if out.requires_grad else None
    return out


def global_avg_pool(a) -> Tensor:
    """Mean over the two spatial dims of an (h, w, C) tensor -> (C,)."""
    a = _as_tensor(a)
    if a.data.ndim != 3:
        raise ShapeError(f"global_avg_pool: expected rank-3 input, got shape {a.shape}")
    h, w, _ = a.shape
    out = Tensor(a.data.mean(axis=(0, 1)), parents=(a,), op="pool")

    def backward(g):
        a._accumulate(np.broadcast_to(g / (h * w), a.shape).copy())

    out._backward = backward if out.requires_grad else None
    return out


def scale_channels(x, weights) -> Tensor:
    """Multiply every channel of an (h, w, C) map by an (h, w) weight map."""
    x, weights = _as_tensor(x), _as_tensor(weights)
    if x.data.ndim != 3 or weights.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: map {weights.shape} does not match {x.shape}")
    out = Tensor(x.data * weights.data[:, :, None], parents=(x, weights), op="scale_channels")

    def backward(g):
        x._accumulate(g * weights.data[:, :, None])
        weights._accumulate((g * x.data).sum(axis=2))

    out._backward = backward if out.requires_grad else None
    return out


def weighted_sum(weights, items) -> Tensor:
    """Sum of same-shaped tensors weighted by a flat coefficient tensor."""
    weights = _as_tensor(weights)
    items = [_as_tensor(t) for t in items]
    if weights.data.ndim != 1 or len(items) != weights.shape[0]:
        raise ShapeError(
            f"weighted_sum: {weights.shape} weights for {len(items)} items")
    base = items[0].shape
    for t in items[1:]:
        if t.shape != base:
            raise ShapeError(f"weighted_sum: item shapes differ: {base} vs {t.shape}")
    acc = np.zeros(base)
    for wgt, t in zip(weights.data, items):
        acc += wgt * t.data
    out = Tensor(acc, parents=(weights, *items), op="weighted_sum")

    def backward(g):
        wg = np.array([float((g * t.data).sum()) for t in items])
        weights._accumulate(wg)
        for wgt, t in zip(weights.data, items):
            t._accumulate(g * wgt)

    out._backward = backward if out.requires_grad else None
    return out


def conv2d(x, w, b, stride=1) -> Tensor:
    """Valid-padding 2-D convolution on channels-last maps.

    x: (h, w, c_in); w: (k, k, c_in, c_out); b: (c_out,).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected rank-3 input and rank-4 kernel, "
                         f"got {x.shape} and {w.shape}")
    h, wid, cin = x.shape
    k, k2, kcin, cout = w.shape
    if k != k2 or kcin != cin or b.shape != (cout,):
        raise ShapeError(f"conv2d: kernel {w.shape} / bias {b.shape} do not fit input {x.shape}")
    if h < k or wid < k:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    s = int(stride)
    oh = (h - k) // s + 1
    ow = (wid - k) // s + 1

    windows = sliding_window_view(x.data, (k, k), axis=(0, 1))[::s, ::s]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(oh * ow, k * k * cin)
    wmat = w.data.reshape(k * k * cin, cout)
    y = (cols @ wmat + b.data).reshape(oh, ow, cout)
    out = Tensor(y, parents=(x, w, b), op="conv2d")

    def backward(g):
        gmat = g.reshape(oh * ow, cout)
        b._accumulate(gmat.sum(axis=0))
        w._accumulate((cols.T @ gmat).reshape(k, k, cin, cout))
        dcols = (gmat @ wmat.T).reshape(oh, ow, k, k, cin)
        dx = np.zeros((h, wid, cin))
        if s == k:
            # non-overlapping patches: scatter is a plain reshape
            block = dcols.transpose(0, 2, 1, 3, 4).reshape(oh * k, ow * k, cin)
            dx[: oh * k, : ow * k] = block
        elif k == 1:
            dx[::s, ::s][:oh, :ow] = dcols[:, :, 0, 0, :]
        else:
            for i in range(oh):
                for j in range(ow):
                    dx[i * s:i * s + k, j * s:j * s + k] += dcols[i, j]
        x._accumulate(dx)

    out._backward = backward if out.requires_grad else None
    return out


def cross_entropy_logits(logits, label: int) -> Tensor:
    """Cross-entropy of a flat logit vector against an integer class label."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy_logits: expected a flat vector, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    z = logits.data - logits.data.max()
    lse = math.log(np.exp(z).sum())
    out = Tensor(lse - z[label], parents=(logits,), op="cross_entropy")

    def backward(g):
        d = np.exp(z - lse)
        d[label] -= 1.0
        logits._accumulate(d * g)

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# binary serialization: u32 rank, u32 extents..., f64 row-major payload
# ---------------------------------------------------------------------------

def tensor_to_bytes(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
    header = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f8").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0):
    """Decode one tensor, returning (array, next_offset)."""
    if len(buf) - offset < 4:
        raise ValueError("truncated tensor: missing rank")
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if len(buf) - offset < 4 * rank:
        raise ValueError("truncated tensor: missing extents")
    shape = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    nbytes = 8 * count
    if len(buf) - offset < nbytes:
        raise ValueError("truncated tensor: missing payload")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape)
    return arr.astype(np.float64).copy(), offset + nbytes


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    passed: bool
    max_rel_error: float
    tolerance: float
    per_input: list[float] = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} (tol {self.tolerance:.1e})"


def _rel_error(a, n):
    denom = max(abs(a), abs(n), 1e-6)
    return abs(a - n) / denom


def check_gradients(op, inputs, tolerance=1e-4, step=1e-5, sample=None, rng=None):
    """Compare the analytic backward of ``sum(op(*inputs))`` with central differences.

    inputs: list of numpy arrays; every element of every input is probed
    unless ``sample`` caps the number of probed elements per input (chosen
    with ``rng``). Raises ValueError if the op produces non-finite values.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    if not np.isfinite(out.data).all():
        raise ValueError(f"check_gradients: non-finite forward output from op {out.op}")
    loss = sum_over_axes(out)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def loss_at(idx, flat_pos, value):
        probe = [a.copy() for a in arrays]
        probe[idx].reshape(-1)[flat_pos] = value
        result = op(*[Tensor(p) for p in probe])
        val = float(result.data.sum())
        if not math.isfinite(val):
            raise ValueError(f"check_gradients: non-finite value while probing op {result.op}")
        return val

    max_err = 0.0
    per_input = []
    for idx, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        positions = range(flat.size)
        if sample is not None and flat.size > sample:
            gen = rng if rng is not None else np.random.default_rng(0)
            positions = gen.choice(flat.size, size=sample, replace=False)
        worst = 0.0
        for pos in positions:
            orig = flat[pos]
            up = loss_at(idx, pos, orig + step)
            down = loss_at(idx, pos, orig - step)
            numeric = (up - down) / (2 * step)
            err = _rel_error(analytic[idx].reshape(-1)[pos], numeric)
            worst = max(worst, err)
        per_input.append(worst)
        max_err = max(max_err, worst)
    return GradCheckReport(max_err < tolerance, max_err, tolerance, per_input)
