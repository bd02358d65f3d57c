"""Dense/sparse matrix kernel with tape-based reverse-mode differentiation.

Values are float64 numpy arrays. Operations on tensors that require gradients
are appended to the active :class:`Tape` in execution order, which is already
a topological order; :meth:`Tape.backward` walks the records in reverse once.

    with Tape() as tape:
        loss = ad.sum(ad.matmul(x, w))
    grads = tape.backward(loss)
    grads[w]
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError

__all__ = [
    "Tensor",
    "SparseMatrix",
    "Tape",
    "GradientSet",
    "AdamState",
    "adam_step",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "transpose",
    "spmm",
    "sum",
    "exp",
    "log",
    "log_sigmoid",
    "softmax_rows",
    "logsumexp_rows",
    "l2_normalize_rows",
    "row_dot",
    "gather_rows",
    "slice_rows",
    "concat_rows",
    "scale_rows",
    "segment_softmax",
    "segment_sum",
    "dropout",
    "mean_of",
    "sum_of",
    "squared_norm",
]


class Tensor:
    """A float64 array, optionally tracked for differentiation."""

    __slots__ = ("value", "requires_grad", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        self.value = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def constant(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=False, name=name)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class SparseMatrix:
    """Immutable CSR matrix with sorted, deduplicated column indices per row."""

    __slots__ = ("rows", "cols", "indptr", "indices", "data", "_csr", "_csr_t")

    def __init__(self, rows: int, cols: int, indptr, indices, data):
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        data = np.asarray(data, dtype=np.float64)
        if indptr.shape != (rows + 1,) or indptr[0] != 0 or indptr[-1] != len(indices):
            raise ShapeError("malformed CSR row pointer")
        if len(indices) != len(data):
            raise ShapeError("indices and data lengths differ")
        if len(indices) and (indices.min() < 0 or indices.max() >= cols):
            raise ShapeError("column index out of range")
        if not np.all(np.isfinite(data)):
            raise ValueError("sparse weights must be finite")
        if np.any(np.diff(indptr) < 0):
            raise ShapeError("malformed CSR row pointer")
        if len(indices) > 1:
            step = np.diff(indices)
            same_row = np.ones(len(step), dtype=bool)
            starts = indptr[1:-1]
            starts = starts[(starts > 0) & (starts < len(indices))]
            same_row[starts - 1] = False
            if np.any(step[same_row] <= 0):
                raise ShapeError("CSR rows have unsorted or duplicate columns")
        self.rows, self.cols = int(rows), int(cols)
        self.indptr, self.indices, self.data = indptr, indices, data
        self._csr = sp.csr_matrix((data, indices, indptr), shape=(rows, cols))
        self._csr_t = self._csr.T.tocsr()

    @classmethod
    def from_coo(cls, rows: int, cols: int, r, c, w) -> "SparseMatrix":
        """Build from triplets; duplicate (row, col) weights are summed."""
        m = sp.coo_matrix(
            (np.asarray(w, dtype=np.float64), (np.asarray(r, dtype=np.int64), np.asarray(c, dtype=np.int64))),
            shape=(rows, cols),
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(rows, cols, m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        r, c = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], r, c, dense[r, c])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "SparseMatrix":
        t = self._csr_t
        return SparseMatrix(self.cols, self.rows, t.indptr, t.indices, t.data)

    def row_slice(self, start: int, stop: int) -> "SparseMatrix":
        sub = self._csr[start:stop]
        return SparseMatrix(stop - start, self.cols, sub.indptr, sub.indices, sub.data)

    def col_slice(self, start: int, stop: int) -> "SparseMatrix":
        sub = self._csr[:, start:stop].tocsr()
        sub.sort_indices()
        return SparseMatrix(self.rows, stop - start, sub.indptr, sub.indices, sub.data)

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.rows), np.diff(self.indptr))

    def dot(self, dense: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr @ dense)

    def tdot(self, dense: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr_t @ dense)


# -- tape ----------------------------------------------------------------------

_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradientSet:
    """Mapping from tensor to gradient; tensors never reached map to zeros."""

    def __init__(self, grads: dict[int, np.ndarray], tensors: dict[int, Tensor]):
        self._grads = grads
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.value)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads


class Tape:
    """Ordered record of primitive operations; use as a context manager."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> GradientSet:
        if loss.value.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        tensors: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self.records):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    tensors[key] = inp
        return GradientSet(grads, tensors)


def _emit(value: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        tape.records.append(_Record(out, inputs, vjp))
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "sub")
    return _emit(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.value * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return _emit(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    av = a.value
    return _emit(np.log(av), (a,), lambda g: (g / av,))


def log_sigmoid(a: Tensor) -> Tensor:
    av = a.value
    y = -np.logaddexp(0.0, -av)
    # d/dx log sigma(x) = sigma(-x)
    return _emit(y, (a,), lambda g: (g * np.exp(-np.logaddexp(0.0, av)),))


# -- linear algebra --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _emit(a.value.T.copy(), (a,), lambda g: (g.T,))


def spmm(s: SparseMatrix, d) -> Tensor:
    """Sparse-dense product ``s @ d``; differentiable in ``d`` only."""
    d = _as_tensor(d)
    if d.value.ndim != 2 or s.cols != d.shape[0]:
        raise ShapeError(f"spmm: cannot multiply {s.shape} by {d.shape}")
    return _emit(s.dot(d.value), (d,), lambda g: (s.tdot(g),))


# -- reductions ------------------------------------------------------------------


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _emit(np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def squared_norm(a: Tensor) -> Tensor:
    av = a.value
    return _emit(np.asarray(np.sum(av * av)), (a,), lambda g: (2.0 * float(g) * av,))


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products as an ``(n, 1)`` column."""
    _check_same(a, b, "row_dot")
    av, bv = a.value, b.value
    return _emit(np.sum(av * bv, axis=1, keepdims=True), (a, b), lambda g: (g * bv, g * av))


def softmax_rows(a: Tensor) -> Tensor:
    av = a.value
    if av.size == 0:
        raise ShapeError("softmax_rows: empty matrix")
    if np.isnan(av).any():
        raise ValueError("softmax_rows: NaN input")
    z = np.exp(av - av.max(axis=1, keepdims=True))
    y = z / z.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return _emit(y, (a,), vjp)


def logsumexp_rows(a: Tensor) -> Tensor:
    av = a.value
    mx = av.max(axis=1, keepdims=True)
    z = np.exp(av - mx)
    s = z.sum(axis=1, keepdims=True)
    y = mx + np.log(s)
    p = z / s
    return _emit(y, (a,), lambda g: (g * p,))


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    av = a.value
    norms = np.sqrt(np.sum(av * av, axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    y = av / safe
    live = norms > 0

    def vjp(g):
        gx = (g - y * np.sum(g * y, axis=1, keepdims=True)) / safe
        return (np.where(live, gx, 0.0),)

    return _emit(y, (a,), vjp)


# -- row plumbing ----------------------------------------------------------------


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(a.value[idx], (a,), vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _emit(a.value[start:stop].copy(), (a,), vjp)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ShapeError("concat_rows: nothing to concatenate")
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[bounds[k] : bounds[k + 1]] for k in range(len(parts)))

    return _emit(np.concatenate([p.value for p in parts], axis=0), parts, vjp)


def scale_rows(a: Tensor, w: Tensor) -> Tensor:
    """Multiply row ``r`` of ``a`` by the scalar ``w[r, 0]``."""
    if w.shape != (a.shape[0], 1):
        raise ShapeError(f"scale_rows: weights {w.shape} do not match {a.shape}")
    av, wv = a.value, w.value
    return _emit(av * wv, (a, w), lambda g: (g * wv, np.sum(g * av, axis=1, keepdims=True)))


def segment_softmax(scores: Tensor, segments, n_segments: int) -> Tensor:
    """Softmax of an ``(nnz, 1)`` score column within each segment id group."""
    seg = np.asarray(segments, dtype=np.int64)
    sv = scores.value[:, 0]
    mx = np.full(n_segments, -np.inf)
    np.maximum.at(mx, seg, sv)
    z = np.exp(sv - mx[seg])
    tot = np.zeros(n_segments)
    np.add.at(tot, seg, z)
    y = (z / tot[seg])[:, None]

    def vjp(g):
        gy = g * y
        acc = np.zeros(n_segments)
        np.add.at(acc, seg, gy[:, 0])
        return (gy - y * acc[seg][:, None],)

    return _emit(y, (scores,), vjp)


def segment_sum(values: Tensor, segments, n_segments: int) -> Tensor:
    """Sum rows of ``values`` into ``n_segments`` buckets given per-row ids."""
    seg = np.asarray(segments, dtype=np.int64)
    agg = sp.csr_matrix(
        (np.ones(len(seg)), (seg, np.arange(len(seg)))), shape=(n_segments, len(seg))
    )
    return _emit(np.asarray(agg @ values.value), (values,), lambda g: (g[seg],))


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``p`` is 0."""
    if rng is None or p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError("dropout probability must be < 1")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, Tensor(mask))


def sum_of(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("sum_of: empty sequence")
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out


def mean_of(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("mean_of: empty sequence")
    return scale(sum_of(parts), 1.0 / len(parts))


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    """Bias-corrected Adam update applied to every named parameter."""
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam: grad {g.shape} vs param {p.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name], state.v[name] = m, v
