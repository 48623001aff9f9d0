"""Reverse-mode automatic differentiation over dense float64 tensors.

Everything the tagger computes (LSTM gates, attention scores, CRF
recursions, losses) is expressed through the operations in this module.
Forward values live in row-major numpy arrays; when a :class:`Tape` is
active, each operation appends a node holding its operands and a backward
rule, and :func:`backward` replays the tape in reverse to accumulate
gradients.

Design notes:

* float64 only. Gradient checks against central finite differences at
  1e-4 relative error are part of the contract and rule out float32.
* No implicit broadcasting. The only shape-mixing operations are the
  explicit row/column vector additions below.
* Gradients accumulate across backward calls until ``zero_grad``.
* With no active tape, operations compute values only, so evaluation-mode
  inference carries no graph overhead.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DomainError,
    IndexingError,
    NonFiniteError,
    ShapeError,
)

__all__ = [
    "Rng",
    "Tensor",
    "Tape",
    "backward",
    "grad_check",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_row",
    "add_col",
    "apply_unary",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softmax_rows",
    "logsumexp",
    "logsumexp_cols",
    "concat_cols",
    "slice_cols",
    "reshape",
    "gather_rows",
    "gather2d",
    "scatter_rows",
    "sum_all",
]


# ---------------------------------------------------------------------------
# Deterministic random numbers
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _fnv1a(label: str) -> int:
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class Rng:
    """splitmix64 generator with labeled substreams.

    The state advances by the 64-bit golden-ratio constant per draw and the
    output is the splitmix64 finalizer of the state, so the k-th draw after
    seeding equals ``mix(seed + k * GOLDEN)`` and block draws can be
    vectorized without changing the sequence. The same seed yields the same
    draws on every platform.

    ``split(label)`` derives an independent child stream from the original
    seed and the label only, so consumers (init, dropout, shuffling) cannot
    perturb each other's streams no matter in which order they draw.
    """

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._state = self._seed

    def split(self, label: str) -> "Rng":
        return Rng(_mix64(self._seed ^ _fnv1a(label)))

    def next_uint64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix64(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_uint64() >> 11) * 2.0**-53
        return lo + (hi - lo) * u

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
            states = np.uint64(self._state) + steps
            z = (states ^ (states >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GOLDEN) & _MASK64
        u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(shape)

    def next_below(self, n: int) -> int:
        """Draw an integer in [0, n). Modulo bias is negligible for n << 2^64."""
        return self.next_uint64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------


class Tensor:
    """Dense float64 array with a gradient slot and optional tape linkage."""

    __slots__ = ("values", "_grad", "tape", "node_id")

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.values = arr
        self._grad: np.ndarray | None = None
        self.tape: "Tape | None" = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def grad(self) -> np.ndarray:
        """Gradient buffer, allocated as zeros on first access."""
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        self._grad += g

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad.fill(0.0)

    def assert_finite(self, what: str = "tensor") -> None:
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError(f"{what} contains NaN or Inf")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class _TapeNode:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Append-only record of operations for one forward pass.

    Operand nodes always precede their consumers, so a single reverse sweep
    over the insertion order visits every node exactly once with its full
    adjoint available. Use as a context manager::

        with Tape() as tape:
            loss = ...
        backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[_TapeNode] = []

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        out.tape = self
        out.node_id = len(self.nodes)
        self.nodes.append(_TapeNode(out, parents, backward_fn))

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a tape is already active; nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPE


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, parents, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every tensor on the tape.

    The sweep uses fresh adjoint buffers and adds them into the persistent
    ``.grad`` slots at the end, so calling backward twice without zeroing
    doubles every gradient exactly. Tensors the loss does not reach are left
    with zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    adjoints: list[np.ndarray | None] = [None] * len(tape.nodes)
    leaf_adjoints: dict[int, tuple[Tensor, np.ndarray]] = {}

    def deposit(t: Tensor, g: np.ndarray) -> None:
        if g.shape != t.values.shape:
            g = g.reshape(t.values.shape)
        if t.tape is tape and t.node_id is not None:
            if adjoints[t.node_id] is None:
                adjoints[t.node_id] = np.zeros_like(t.values)
            adjoints[t.node_id] += g
        else:
            entry = leaf_adjoints.get(id(t))
            if entry is None:
                leaf_adjoints[id(t)] = (t, g.astype(np.float64, copy=True))
            else:
                np.add(entry[1], g, out=entry[1])

    deposit(loss, np.ones_like(loss.values))
    for i in range(len(tape.nodes) - 1, -1, -1):
        a = adjoints[i]
        if a is None:
            continue
        node = tape.nodes[i]
        parent_grads = node.backward_fn(a)
        for parent, g in zip(node.parents, parent_grads):
            if g is not None:
                deposit(parent, g)

    for i, a in enumerate(adjoints):
        if a is not None:
            tape.nodes[i].out.accumulate_grad(a)
    for t, g in leaf_adjoints.values():
        t.accumulate_grad(g)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m x k) and b (k x p)."""
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.values @ b.values)
    av, bv = a.values, b.values
    return _record(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {x.shape}")
    out = Tensor(x.values.T)
    return _record(out, (x,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values + b.values)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values - b.values)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values * b.values)
    av, bv = a.values, b.values
    return _record(out, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or constant ndarray (no gradient into c)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(x.values * c)
    if out.shape != x.shape:
        raise ShapeError(f"scale constant {c.shape} does not preserve shape {x.shape}")
    return _record(out, (x,), lambda g: (g * c,))


def add_row(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-m vector to every row of an (n x m) matrix."""
    if x.values.ndim != 2 or v.values.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(f"add_row: {x.shape} + row {v.shape}")
    out = Tensor(x.values + v.values)
    return _record(out, (x, v), lambda g: (g, g.sum(axis=0)))


def add_col(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every column of an (n x m) matrix."""
    if x.values.ndim != 2 or v.values.ndim != 1 or x.shape[0] != v.shape[0]:
        raise ShapeError(f"add_col: {x.shape} + col {v.shape}")
    out = Tensor(x.values + v.values[:, None])
    return _record(out, (x, v), lambda g: (g, g.sum(axis=1)))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # exp overflow saturates through 1/(1+inf) to exactly 0, the right limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def apply_unary(kind: str, x: Tensor) -> Tensor:
    """Elementwise sigmoid, tanh, exp, or log with the matching backward rule."""
    if kind == "sigmoid":
        s = _sigmoid_values(x.values)
        out = Tensor(s)
        return _record(out, (x,), lambda g: (g * s * (1.0 - s),))
    if kind == "tanh":
        t = np.tanh(x.values)
        out = Tensor(t)
        return _record(out, (x,), lambda g: (g * (1.0 - t * t),))
    if kind == "exp":
        e = np.exp(x.values)
        out = Tensor(e)
        return _record(out, (x,), lambda g: (g * e,))
    if kind == "log":
        if np.any(x.values <= 0.0):
            raise DomainError("log requires strictly positive inputs")
        xv = x.values
        out = Tensor(np.log(xv))
        return _record(out, (x,), lambda g: (g / xv,))
    raise ContractError(f"unknown unary kind {kind!r}")


def sigmoid(x: Tensor) -> Tensor:
    return apply_unary("sigmoid", x)


def tanh(x: Tensor) -> Tensor:
    return apply_unary("tanh", x)


def exp(x: Tensor) -> Tensor:
    return apply_unary("exp", x)


def log(x: Tensor) -> Tensor:
    return apply_unary("log", x)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of an (n x m) matrix, max-shifted for stability."""
    if x.values.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got {x.shape}")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return ((g - dot) * p,)

    return _record(out, (x,), bwd)


def logsumexp(x: Tensor) -> Tensor:
    """log(sum(exp(x))) of a non-empty vector, computed max-shifted."""
    if x.values.ndim != 1 or x.size == 0:
        raise ShapeError(f"logsumexp needs a non-empty vector, got {x.shape}")
    m = x.values.max()
    e = np.exp(x.values - m)
    s = e.sum()
    out = Tensor(m + math.log(s))
    soft = e / s
    return _record(out, (x,), lambda g: (g * soft,))


def logsumexp_cols(x: Tensor) -> Tensor:
    """Per-column log(sum(exp)) of an (n x m) matrix, yielding a length-m vector."""
    if x.values.ndim != 2:
        raise ShapeError(f"logsumexp_cols needs a matrix, got {x.shape}")
    m = x.values.max(axis=0, keepdims=True)
    e = np.exp(x.values - m)
    s = e.sum(axis=0, keepdims=True)
    out = Tensor((m + np.log(s)).reshape(-1))
    soft = e / s
    return _record(out, (x,), lambda g: (g[None, :] * soft,))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Columns of a followed by columns of b; rows must agree."""
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.values, b.values], axis=1))
    p = a.shape[1]
    return _record(out, (a, b), lambda g: (g[:, :p], g[:, p:]))


def slice_cols(x: Tensor, c0: int, c1: int) -> Tensor:
    """Columns [c0, c1) of a matrix."""
    if x.values.ndim != 2 or not (0 <= c0 <= c1 <= x.shape[1]):
        raise ShapeError(f"slice_cols [{c0}:{c1}] of {x.shape}")
    out = Tensor(x.values[:, c0:c1].copy())
    n, m = x.shape

    def bwd(g):
        full = np.zeros((n, m))
        full[:, c0:c1] = g
        return (full,)

    return _record(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.values.reshape(shape))
    orig = x.values.shape
    return _record(out, (x,), lambda g: (g.reshape(orig),))


def gather_rows(x: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of x selected by ids; backward scatter-adds into the used rows."""
    if x.values.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got {x.shape}")
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows ids must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexingError(f"row id out of range [0, {x.shape[0]})")
    out = Tensor(x.values[idx])
    n, m = x.shape

    def bwd(g):
        full = np.zeros((n, m))
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (x,), bwd)


def gather2d(x: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
    """Vector of entries x[rows[i], cols[i]]; backward scatter-adds."""
    if x.values.ndim != 2:
        raise ShapeError(f"gather2d needs a matrix, got {x.shape}")
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if r.shape != c.shape or r.ndim != 1:
        raise ShapeError("gather2d rows/cols must be flat sequences of equal length")
    if r.size and (r.min() < 0 or r.max() >= x.shape[0] or c.min() < 0 or c.max() >= x.shape[1]):
        raise IndexingError(f"entry index out of range for shape {x.shape}")
    out = Tensor(x.values[r, c])
    n, m = x.shape

    def bwd(g):
        full = np.zeros((n, m))
        np.add.at(full, (r, c), g)
        return (full,)

    return _record(out, (x,), bwd)


def scatter_rows(x: Tensor, ids: Sequence[int], n_rows: int) -> Tensor:
    """Place row j of x at row ids[j] of an otherwise-zero (n_rows x m) matrix.

    ids must be distinct; backward gathers the corresponding rows.
    """
    if x.values.ndim != 2:
        raise ShapeError(f"scatter_rows needs a matrix, got {x.shape}")
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size != x.shape[0]:
        raise ShapeError("scatter_rows needs one id per row")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexingError(f"row id out of range [0, {n_rows})")
    if idx.size != np.unique(idx).size:
        raise ContractError("scatter_rows ids must be distinct")
    full = np.zeros((n_rows, x.shape[1]))
    full[idx] = x.values
    out = Tensor(full)
    return _record(out, (x,), lambda g: (g[idx],))


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out = Tensor(x.values.sum())
    shape = x.values.shape
    return _record(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` must rebuild its forward pass from the current parameter values on
    every call and be deterministic (dropout off). Returns the maximum over
    all parameter coordinates of

        |analytic - numeric| / max(1, |analytic| + |numeric|)

    Raises ContractError when two evaluations of ``f`` disagree, which flags
    hidden nondeterminism that would invalidate the finite differences.
    """
    if eps <= 0:
        raise ContractError("grad_check needs eps > 0")
    params = list(params)

    def value() -> float:
        out = f()
        if out.size != 1:
            raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
        return float(out.values.reshape(()))

    v0 = value()
    if value() != v0:
        raise ContractError("function is not deterministic: two evaluations differ")

    saved_grads = [p._grad.copy() if p._grad is not None else None for p in params]
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved_grads):
        p._grad = g

    max_rel = 0.0
    for p, ana in zip(params, analytic):
        flat = p.values.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            a = ana_flat[i]
            rel = abs(a - num) / max(1.0, abs(a) + abs(num))
            if rel > max_rel:
                max_rel = rel
    return max_rel
