"""Dense float64 tensors with a define-by-run gradient tape.

Deliberately small: row-major numpy storage, one tape of backward closures
per forward pass, and a finite-difference checker kept independent of the
tape so the two routes can cross-validate each other.

Shape rules are strict: binary elementwise ops need equal shapes, the only
broadcasting allowed is scalar-with-tensor, and every other alignment
(tiling, stacking, slicing) is an explicit op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    DeterminismError,
    DimensionError,
    NumericDomainError,
    StateError,
)

_FINITE_CHECKS = False


def set_finite_checks(enabled):
    """Toggle NaN/Inf validation of every op output (debug mode, off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """Dense float64 array, optionally tracked for gradients.

    Values are immutable by convention once created; the two sanctioned
    writers are the optimizer (between tapes) and the finite-difference
    checker (which restores what it perturbs).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def sum(self):
        return sum_all(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad)


class Tape:
    """Recording of one forward pass; replayable backward exactly once.

    Use as a context manager around the forward computation. Ops record a
    backward closure only while a tape is active and some input requires a
    gradient, so inference outside a tape pays no tracking cost.
    """

    def __init__(self):
        self._records = []  # (output tensor, backward closure), in execution order
        self._spent = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, root):
        backward(self, root)


_TAPE_STACK = []


def _recording(*inputs):
    """True when an active tape should track an op over these inputs."""
    if not _TAPE_STACK:
        return False
    return any(t.requires_grad for t in inputs)


def _out(data, *inputs):
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericDomainError("non-finite value in op output")
    out = Tensor(data)
    out.requires_grad = _recording(*inputs)
    return out


def _rec(out, back):
    _TAPE_STACK[-1]._records.append((out, back))


def _accum(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _accum_at(t, index, g):
    """Accumulate into one row/element without materializing a full-shape array."""
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad[index] += g


def _fit(g, shape):
    """Reduce a gradient to an operand's shape; only scalar operands ever differ."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _binary_shapes(name, a, b):
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(
            f"{name}: shapes {a.data.shape} and {b.data.shape} do not match"
        )


def backward(tape, root):
    """Run the tape backward from a scalar root, accumulating leaf gradients.

    One backward per recording: replaying a spent tape raises StateError.
    Gradients sum in reverse execution order, so repeated runs of the same
    forward pass produce bitwise-identical gradients.
    """
    if tape._spent:
        raise StateError(
            "tape already replayed; rebuild the forward pass before calling backward again"
        )
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    if not any(out is root for out, _ in tape._records):
        raise ContractError("backward root was not produced while this tape was recording")
    tape._spent = True
    root.grad = np.ones_like(root.data)
    for out, back in reversed(tape._records):
        if out.grad is not None:
            back()


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)
    out = _out(a.data + b.data, a, b)
    if out.requires_grad:
        def back():
            g = out.grad
            if a.requires_grad:
                _accum(a, _fit(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _fit(g, b.data.shape))
        _rec(out, back)
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)
    out = _out(a.data - b.data, a, b)
    if out.requires_grad:
        def back():
            g = out.grad
            if a.requires_grad:
                _accum(a, _fit(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _fit(-g, b.data.shape))
        _rec(out, back)
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    out = _out(a.data * b.data, a, b)
    if out.requires_grad:
        def back():
            g = out.grad
            if a.requires_grad:
                _accum(a, _fit(g * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _fit(g * a.data, b.data.shape))
        _rec(out, back)
    return out


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("div", a, b)
    if np.any(b.data == 0.0):
        raise NumericDomainError("div: division by zero")
    out = _out(a.data / b.data, a, b)
    if out.requires_grad:
        def back():
            g = out.grad
            if a.requires_grad:
                _accum(a, _fit(g / b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _fit(-g * a.data / (b.data * b.data), b.data.shape))
        _rec(out, back)
    return out


def neg(a):
    a = _as_tensor(a)
    out = _out(-a.data, a)
    if out.requires_grad:
        def back():
            _accum(a, -out.grad)
        _rec(out, back)
    return out


def sigmoid(a):
    a = _as_tensor(a)
    # exp(-|x|) <= 1 on both branches, so no overflow in either tail
    e = np.exp(-np.abs(a.data))
    vals = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _out(vals, a)
    if out.requires_grad:
        y = out.data
        def back():
            _accum(a, out.grad * y * (1.0 - y))
        _rec(out, back)
    return out


def tanh(a):
    a = _as_tensor(a)
    out = _out(np.tanh(a.data), a)
    if out.requires_grad:
        y = out.data
        def back():
            _accum(a, out.grad * (1.0 - y * y))
        _rec(out, back)
    return out


def relu(a):
    a = _as_tensor(a)
    out = _out(np.maximum(a.data, 0.0), a)
    if out.requires_grad:
        mask = a.data > 0  # subgradient 0 at the kink
        def back():
            _accum(a, out.grad * mask)
        _rec(out, back)
    return out


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericDomainError("log: input must be strictly positive")
    out = _out(np.log(a.data), a)
    if out.requires_grad:
        def back():
            _accum(a, out.grad / a.data)
        _rec(out, back)
    return out


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="raise"):
        try:
            vals = np.exp(a.data)
        except FloatingPointError:
            raise NumericDomainError("exp: overflow") from None
    out = _out(vals, a)
    if out.requires_grad:
        def back():
            _accum(a, out.grad * out.data)
        _rec(out, back)
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul: needs two matrices, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.data.shape} x {b.data.shape}"
        )
    out = _out(a.data @ b.data, a, b)
    if out.requires_grad:
        def back():
            g = out.grad
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)
        _rec(out, back)
    return out


def vecmat(x, m):
    """Row-vector times matrix: (p,) @ (p, q) -> (q,)."""
    x, m = _as_tensor(x), _as_tensor(m)
    if x.data.ndim != 1 or m.data.ndim != 2:
        raise DimensionError(
            f"vecmat: needs vector and matrix, got shapes {x.data.shape} and {m.data.shape}"
        )
    if x.data.shape[0] != m.data.shape[0]:
        raise DimensionError(
            f"vecmat: inner dimensions differ, {x.data.shape} x {m.data.shape}"
        )
    out = _out(x.data @ m.data, x, m)
    if out.requires_grad:
        def back():
            g = out.grad
            if x.requires_grad:
                _accum(x, m.data @ g)
            if m.requires_grad:
                _accum(m, np.outer(x.data, g))
        _rec(out, back)
    return out


def softmax(a, axis=-1):
    """Max-subtracted exponential normalization along one axis."""
    a = _as_tensor(a)
    if a.data.ndim == 0:
        raise DimensionError("softmax: input must have at least one axis")
    if a.data.shape[axis] == 0:
        raise DimensionError("softmax: empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    vals = e / e.sum(axis=axis, keepdims=True)
    out = _out(vals, a)
    if out.requires_grad:
        y = out.data
        def back():
            g = out.grad
            _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))
        _rec(out, back)
    return out


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    if a.data.ndim == 0:
        raise DimensionError("log_softmax: input must have at least one axis")
    if a.data.shape[axis] == 0:
        raise DimensionError("log_softmax: empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    vals = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _out(vals, a)
    if out.requires_grad:
        y = out.data
        def back():
            g = out.grad
            _accum(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))
        _rec(out, back)
    return out


def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat: needs at least one tensor")
    ndim = ts[0].data.ndim
    if ndim == 0:
        raise DimensionError("concat: scalars cannot be concatenated")
    for t in ts:
        if t.data.ndim != ndim:
            raise DimensionError("concat: mixed ranks")
    axis = axis % ndim
    base = list(ts[0].data.shape)
    for t in ts:
        other = list(t.data.shape)
        if [d for i, d in enumerate(other) if i != axis] != [
            d for i, d in enumerate(base) if i != axis
        ]:
            raise DimensionError(
                f"concat: off-axis extents differ, {ts[0].data.shape} vs {t.data.shape}"
            )
    out = _out(np.concatenate([t.data for t in ts], axis=axis), *ts)
    if out.requires_grad:
        widths = [t.data.shape[axis] for t in ts]
        def back():
            g = out.grad
            start = 0
            for t, w in zip(ts, widths):
                if t.requires_grad:
                    sl = [slice(None)] * ndim
                    sl[axis] = slice(start, start + w)
                    _accum(t, g[tuple(sl)])
                start += w
        _rec(out, back)
    return out


def stack_rows(vectors):
    """Stack 1-D tensors of equal length into a matrix, one per row."""
    vs = [_as_tensor(v) for v in vectors]
    if not vs:
        raise ContractError("stack_rows: needs at least one vector")
    width = vs[0].data.shape
    for v in vs:
        if v.data.ndim != 1 or v.data.shape != width:
            raise DimensionError("stack_rows: inputs must be 1-D and equally sized")
    out = _out(np.stack([v.data for v in vs]), *vs)
    if out.requires_grad:
        def back():
            g = out.grad
            for i, v in enumerate(vs):
                if v.requires_grad:
                    _accum(v, g[i])
        _rec(out, back)
    return out


def tile_rows(v, n):
    """Repeat a 1-D tensor as n identical rows."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise DimensionError(f"tile_rows: needs a vector, got shape {v.data.shape}")
    if n < 1:
        raise ContractError("tile_rows: n must be positive")
    out = _out(np.tile(v.data, (n, 1)), v)
    if out.requires_grad:
        def back():
            _accum(v, out.grad.sum(axis=0))
        _rec(out, back)
    return out


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(
            f"reshape: cannot view shape {a.data.shape} as {shape}"
        ) from None
    out = _out(np.ascontiguousarray(data), a)
    if out.requires_grad:
        def back():
            _accum(a, out.grad.reshape(a.data.shape))
        _rec(out, back)
    return out


def narrow(a, start, length):
    """Contiguous 1-D slice [start, start+length)."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise DimensionError(f"narrow: needs a vector, got shape {a.data.shape}")
    if start < 0 or length < 1 or start + length > a.data.shape[0]:
        raise DimensionError(
            f"narrow: window [{start}, {start + length}) out of range for {a.data.shape}"
        )
    out = _out(a.data[start : start + length].copy(), a)
    if out.requires_grad:
        def back():
            _accum_at(a, slice(start, start + length), out.grad)
        _rec(out, back)
    return out


def row(m, i):
    """Select one matrix row; the gradient scatters back into that row."""
    m = _as_tensor(m)
    if m.data.ndim != 2:
        raise DimensionError(f"row: needs a matrix, got shape {m.data.shape}")
    if not isinstance(i, (int, np.integer)) or not 0 <= i < m.data.shape[0]:
        raise IndexError(f"row index {i} out of range for shape {m.data.shape}")
    i = int(i)
    out = _out(m.data[i].copy(), m)
    if out.requires_grad:
        def back():
            _accum_at(m, i, out.grad)
        _rec(out, back)
    return out


def pick(v, i):
    """Select one element of a vector as a scalar tensor."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise DimensionError(f"pick: needs a vector, got shape {v.data.shape}")
    if not isinstance(i, (int, np.integer)) or not 0 <= i < v.data.shape[0]:
        raise IndexError(f"pick index {i} out of range for shape {v.data.shape}")
    i = int(i)
    out = _out(np.asarray(v.data[i]), v)
    if out.requires_grad:
        def back():
            _accum_at(v, i, out.grad)
        _rec(out, back)
    return out


def sum_all(a):
    a = _as_tensor(a)
    out = _out(np.asarray(a.data.sum()), a)
    if out.requires_grad:
        def back():
            _accum(a, np.broadcast_to(out.grad, a.data.shape))
        _rec(out, back)
    return out


# ---------------------------------------------------------------------------
# randomness and initialization


@dataclass
class Rng:
    """Deterministic random source: equal seeds give bit-identical streams."""

    seed: int
    _g: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._g = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape=()):
        if not low < high:
            raise ContractError(f"uniform: needs low < high, got [{low}, {high})")
        return self._g.uniform(low, high, shape)

    def normal(self, sigma=1.0, shape=()):
        return self._g.normal(0.0, sigma, shape)

    def integers(self, low, high):
        """One integer drawn uniformly from [low, high)."""
        if not low < high:
            raise ContractError(f"integers: needs low < high, got [{low}, {high})")
        return int(self._g.integers(low, high))

    def permutation(self, n):
        return [int(i) for i in self._g.permutation(n)]

    def sample_distinct(self, n, count):
        """`count` distinct integers from range(n), sorted ascending."""
        if count > n:
            raise ContractError(f"sample_distinct: cannot draw {count} from {n}")
        return sorted(int(i) for i in self._g.choice(n, size=count, replace=False))

    def shuffled(self, seq):
        return [seq[i] for i in self.permutation(len(seq))]


def seeded_init(rng, shape, scheme="xavier", low=None, high=None, requires_grad=True):
    """Draw an initial weight tensor.

    schemes: "uniform" over [low, high); "xavier" uniform within
    +/- sqrt(6 / (fan_in + fan_out)) where a matrix contributes
    (rows, cols) and a vector uses its length for both fans.
    """
    shape = tuple(int(d) for d in (shape if hasattr(shape, "__len__") else (shape,)))
    if not shape or any(d < 1 for d in shape):
        raise ContractError(f"seeded_init: invalid shape {shape}")
    if scheme == "uniform":
        if low is None or high is None:
            raise ContractError("seeded_init: uniform scheme needs low and high")
        vals = rng.uniform(low, high, shape)
    elif scheme == "xavier":
        fan_in = shape[0]
        fan_out = shape[-1] if len(shape) > 1 else shape[0]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        vals = rng.uniform(-bound, bound, shape)
    else:
        raise ContractError(f"seeded_init: unknown scheme {scheme!r}")
    return Tensor(vals, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_param: dict


def numeric_gradient(f, params, step=1e-5):
    """Central differences of a scalar function, coordinate by coordinate.

    Perturbed values are restored exactly (saved, not re-derived), so the
    caller's tensors come back bit-identical.
    """
    if step <= 0:
        raise ContractError("numeric_gradient: step must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = float(f(*params).data)
            flat[j] = orig - step
            lo = float(f(*params).data)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def grad_check(f, params, step=1e-5, tol=1e-5, names=None):
    """Compare tape gradients of scalar-valued f against central differences.

    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|); the
    report carries the maximum overall and per parameter. f must be pure:
    a value change between two probe evaluations raises DeterminismError.
    """
    if isinstance(params, Tensor):
        params = [params]
    params = list(params)
    if step <= 0 or tol <= 0:
        raise ContractError("grad_check: step and tol must be positive")
    v1 = float(f(*params).data)
    v2 = float(f(*params).data)
    if v1 != v2:
        raise DeterminismError(
            f"grad_check: function is not deterministic ({v1!r} vs {v2!r})"
        )
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f(*params)
        if out.data.size != 1:
            raise ContractError("grad_check: function must return a scalar")
        backward(tape, out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    numeric = numeric_gradient(f, params, step)
    if names is None:
        names = [f"param{i}" for i in range(len(params))]
    per_param = {}
    worst = 0.0
    for name, a, n in zip(names, analytic, numeric):
        denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
        rel = np.abs(a - n) / denom
        err = float(rel.max()) if rel.size else 0.0
        per_param[name] = err
        worst = max(worst, err)
    return GradCheckReport(max_rel_err=worst, passed=worst <= tol, per_param=per_param)
