"""Dense float64 tensors with a dynamic reverse-mode tape.

Every differentiable operation records a backward closure on a process-wide
tape while gradients are enabled. ``backward`` walks the tape in reverse
execution order (a valid reverse-topological order, since operations always
run after their inputs exist) and accumulates gradients into every tensor
that requires them. The tape is rebuilt on every forward pass and cleared
after each backward.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

_NORM_GUARD = 1e-12


class Tensor:
    """A dense float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return sum_reduce(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return mean_reduce(self, axis)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None, shape=None) -> Tensor:
    """Create a trainable tensor, optionally sampled N(0, scale^2) from rng."""
    if rng is not None:
        data = rng.normal(0.0, scale if scale is not None else 1.0, size=shape)
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def record(self, output: Tensor, backward) -> None:
        self._records.append((output, backward))

    def clear(self) -> None:
        self._records.clear()

    def __len__(self) -> int:
        return len(self._records)


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    _TAPE.clear()


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


def _accum(t: Tensor, g: np.ndarray, fresh: bool = False) -> None:
    """Add g into t's gradient.

    fresh=True promises the caller just allocated g and will not reuse it,
    so the first accumulation can take ownership instead of copying. Views
    are always copied regardless (owndata guards against mistakes).
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        if fresh and isinstance(g, np.ndarray) and g.flags.owndata and g.flags.writeable:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _segment_sum(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Row sums grouped by idx, via sort + reduceat (much faster than add.at)."""
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    if idx.size == 0:
        return out
    if np.all(np.diff(idx) >= 0):
        sv, si = values, idx
    else:
        order = np.argsort(idx, kind="stable")
        sv, si = values[order], idx[order]
    uniq, starts = np.unique(si, return_index=True)
    out[uniq] = np.add.reduceat(sv, starts, axis=0)
    return out


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap a forward result; register the backward closure when tracking."""
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        _TAPE.record(out, backward)
    return out


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad ancestor of a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if len(_TAPE) == 0:
        raise ContractError("backward called with an empty tape")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(_TAPE._records):
        if out.grad is not None:
            fn(out.grad)
    _TAPE.clear()


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def _as_scalar_operand(other):
    """Classify the second operand: returns (array, tensor_or_None)."""
    if isinstance(other, Tensor):
        return other.data, other
    return np.float64(other), None


def _binary_shapes_ok(a: np.ndarray, b: np.ndarray) -> bool:
    # full-shape match, or one side is a single element (scalar broadcast)
    return a.shape == b.shape or a.size == 1 or b.size == 1


def _scalar_side_grad(g: np.ndarray, shape) -> np.ndarray:
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def add(a: Tensor, b) -> Tensor:
    bd, bt = _as_scalar_operand(b)
    if not _binary_shapes_ok(a.data, bd):
        raise DimensionError(f"add: shapes {a.shape} and {bd.shape} do not match")
    inputs = (a,) if bt is None else (a, bt)

    def back(g):
        if a.data.shape == g.shape:
            _accum(a, g)
        else:
            _accum(a, _scalar_side_grad(g, a.data.shape), fresh=True)
        if bt is not None:
            if bt.data.shape == g.shape:
                _accum(bt, g)
            else:
                _accum(bt, _scalar_side_grad(g, bt.data.shape), fresh=True)

    return _make(a.data + bd, inputs, back)


def sub(a: Tensor, b) -> Tensor:
    bd, bt = _as_scalar_operand(b)
    if not _binary_shapes_ok(a.data, bd):
        raise DimensionError(f"sub: shapes {a.shape} and {bd.shape} do not match")
    inputs = (a,) if bt is None else (a, bt)

    def back(g):
        if a.data.shape == g.shape:
            _accum(a, g)
        else:
            _accum(a, _scalar_side_grad(g, a.data.shape), fresh=True)
        if bt is not None:
            if bt.data.shape == g.shape:
                _accum(bt, -g, fresh=True)
            else:
                _accum(bt, _scalar_side_grad(-g, bt.data.shape), fresh=True)

    return _make(a.data - bd, inputs, back)


def mul(a: Tensor, b) -> Tensor:
    bd, bt = _as_scalar_operand(b)
    if not _binary_shapes_ok(a.data, bd):
        raise DimensionError(f"mul: shapes {a.shape} and {bd.shape} do not match")
    inputs = (a,) if bt is None else (a, bt)
    ad = a.data

    def back(g):
        ga = g * bd
        if a.data.shape == ga.shape:
            _accum(a, ga, fresh=True)
        else:
            _accum(a, _scalar_side_grad(ga, a.data.shape), fresh=True)
        if bt is not None:
            gb = g * ad
            if bt.data.shape == gb.shape:
                _accum(bt, gb, fresh=True)
            else:
                _accum(bt, _scalar_side_grad(gb, bt.data.shape), fresh=True)

    return _make(ad * bd, inputs, back)


def scale(t: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)

    def back(g):
        _accum(t, g * c, fresh=True)

    return _make(t.data * c, (t,), back)


def relu(t: Tensor) -> Tensor:
    out_data = np.maximum(t.data, 0.0)

    def back(g):
        _accum(t, g * (out_data > 0.0))

    return _make(out_data, (t,), back)


def exp(t: Tensor) -> Tensor:
    out_data = np.exp(t.data)

    def back(g):
        _accum(t, g * out_data, fresh=True)

    return _make(out_data, (t,), back)


def sum_reduce(t: Tensor, axis: int | None = None) -> Tensor:
    def back(g):
        if axis is None:
            _accum(t, np.broadcast_to(g, t.data.shape))
        else:
            _accum(t, np.broadcast_to(np.expand_dims(g, axis), t.data.shape))

    return _make(t.data.sum(axis=axis), (t,), back)


def mean_reduce(t: Tensor, axis: int | None = None) -> Tensor:
    n = t.data.size if axis is None else t.data.shape[axis]
    if n == 0:
        raise DimensionError("mean over an empty axis")

    def back(g):
        if axis is None:
            _accum(t, np.broadcast_to(g / n, t.data.shape))
        else:
            _accum(t, np.broadcast_to(np.expand_dims(g / n, axis), t.data.shape))

    return _make(t.data.mean(axis=axis), (t,), back)


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src_shape = t.data.shape

    def back(g):
        _accum(t, g.reshape(src_shape))

    return _make(t.data.reshape(shape), (t,), back)


# ---------------------------------------------------------------------------
# linear algebra and structure ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects two rank-2 tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: inner dims {a.shape} x {b.shape} do not match")
    ad, bd = a.data, b.data

    def back(g):
        _accum(a, g @ bd.T, fresh=True)
        _accum(b, ad.T @ g, fresh=True)

    return _make(ad @ bd, (a, b), back)


def linear_combine(parts: list[tuple[Tensor, Tensor]]) -> Tensor:
    """Sum of matrix products: sum_i parts[i][0] @ parts[i][1].

    Equivalent to matmul(concat(inputs, axis=1), stacked weights) but never
    materializes the concatenation, and every backward product is a fresh
    GEMM output, so nothing gets copied during accumulation.
    """
    if not parts:
        raise DimensionError("linear_combine of zero terms")
    out_data = None
    shapes = set()
    for x, w in parts:
        if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
            raise DimensionError(f"linear_combine: {x.shape} @ {w.shape} mismatch")
        shapes.add((x.data.shape[0], w.data.shape[1]))
        term = x.data @ w.data
        if out_data is None:
            out_data = term
        else:
            out_data += term
    if len(shapes) != 1:
        raise DimensionError("linear_combine terms disagree on the output shape")
    inputs = tuple(t for pair in parts for t in pair)
    datas = [(x.data, w.data) for x, w in parts]

    def back(g):
        for (x, w), (xd, wd) in zip(parts, datas):
            _accum(x, g @ wd.T, fresh=True)
            _accum(w, xd.T @ g, fresh=True)

    return _make(out_data, inputs, back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of zero tensors")
    ndim = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ndim:
            raise DimensionError("concat: rank mismatch")
        for ax in range(ndim):
            if ax != axis % ndim and t.data.shape[ax] != tensors[0].data.shape[ax]:
                raise DimensionError("concat: non-axis dimensions differ")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def gather_rows(t: Tensor, idx) -> Tensor:
    """Select rows by integer index; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        if t.requires_grad:
            if t.data.ndim == 2:
                gt = _segment_sum(np.asarray(g), idx, t.data.shape[0])
            else:
                gt = np.zeros_like(t.data)
                np.add.at(gt, idx, g)
            _accum(t, gt, fresh=True)

    return _make(t.data[idx], (t,), back)


def segment_mean(t: Tensor, seg, num_segments: int) -> Tensor:
    """Mean of rows grouped by segment id; empty segments yield zero rows."""
    seg = np.asarray(seg, dtype=np.intp)
    if t.data.ndim != 2 or seg.shape[0] != t.data.shape[0]:
        raise DimensionError("segment_mean expects (rows x d) with one segment id per row")
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    sums = _segment_sum(t.data, seg, num_segments)
    denom = np.maximum(counts, 1.0)
    out_data = sums / denom[:, None]

    def back(g):
        _accum(t, g[seg] / denom[seg][:, None], fresh=True)

    return _make(out_data, (t,), back)


def row_update(base: Tensor, idx, rows: Tensor) -> Tensor:
    """Copy of base with rows[j] written at idx[j]; idx must be unique."""
    idx = np.asarray(idx, dtype=np.intp)
    if rows.data.shape[0] != idx.shape[0] or rows.data.shape[1:] != base.data.shape[1:]:
        raise DimensionError("row_update: replacement rows do not fit the base tensor")
    out_data = base.data.copy()
    out_data[idx] = rows.data

    def back(g):
        if base.requires_grad:
            gb = g.copy()
            gb[idx] = 0.0
            _accum(base, gb, fresh=True)
        _accum(rows, g[idx], fresh=True)

    return _make(out_data, (base, rows), back)


def slice_rows(t: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice [start, stop)."""
    if t.data.ndim < 1 or not (0 <= start <= stop <= t.data.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] outside shape {t.shape}")

    def back(g):
        if t.requires_grad:
            gt = np.zeros_like(t.data)
            gt[start:stop] = g
            _accum(t, gt, fresh=True)

    return _make(t.data[start:stop].copy(), (t,), back)


def pair_add(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs row sums: out[i*q + j] = a[i] + b[j] for a (m,h), b (q,h)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise DimensionError("pair_add expects (m,h) and (q,h)")
    m, h = a.data.shape
    q = b.data.shape[0]
    out_data = (a.data[:, None, :] + b.data[None, :, :]).reshape(m * q, h)

    def back(g):
        g3 = g.reshape(m, q, h)
        _accum(a, g3.sum(axis=1), fresh=True)
        _accum(b, g3.sum(axis=0), fresh=True)

    return _make(out_data, (a, b), back)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Broadcast-add a length-h vector to every row of an (n,h) tensor."""
    if x.data.ndim != 2 or v.data.shape != (x.data.shape[1],):
        raise DimensionError("add_rowvec expects (n,h) plus (h,)")

    def back(g):
        _accum(x, g)
        _accum(v, g.sum(axis=0), fresh=True)

    return _make(x.data + v.data[None, :], (x, v), back)


def expand_cols(v: Tensor, k: int) -> Tensor:
    """Tile a length-n vector into an (n,k) matrix."""
    if v.data.ndim != 1:
        raise DimensionError("expand_cols expects a vector")

    def back(g):
        _accum(v, g.sum(axis=1), fresh=True)

    return _make(np.repeat(v.data[:, None], k, axis=1), (v,), back)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors; 0 (with zero gradient) near zero norm."""
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise DimensionError(f"cosine expects equal-length vectors, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na < _NORM_GUARD or nb < _NORM_GUARD:
        return _make(np.float64(0.0), (a, b), lambda g: None)
    ad, bd = a.data, b.data
    c = float(ad @ bd) / (na * nb)

    def back(g):
        gs = float(g)
        _accum(a, gs * (bd / (na * nb) - c * ad / (na * na)), fresh=True)
        _accum(b, gs * (ad / (na * nb) - c * bd / (nb * nb)), fresh=True)

    return _make(np.float64(c), (a, b), back)


def row_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two (m,d) tensors, with the zero-norm guard."""
    if a.data.ndim != 2 or a.data.shape != b.data.shape:
        raise DimensionError(f"row_cosine expects matching (m,d) tensors, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    na = np.linalg.norm(ad, axis=1)
    nb = np.linalg.norm(bd, axis=1)
    ok = (na >= _NORM_GUARD) & (nb >= _NORM_GUARD)
    sa = np.where(ok, na, 1.0)  # safe norms: guarded rows get zero grad anyway
    sb = np.where(ok, nb, 1.0)
    denom = sa * sb
    c = np.where(ok, np.einsum("ij,ij->i", ad, bd) / denom, 0.0)

    def back(g):
        gm = (g * ok)[:, None]
        _accum(a, gm * (bd / denom[:, None] - c[:, None] * ad / (sa * sa)[:, None]), fresh=True)
        _accum(b, gm * (ad / denom[:, None] - c[:, None] * bd / (sb * sb)[:, None]), fresh=True)

    return _make(c, (a, b), back)
