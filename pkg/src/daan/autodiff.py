"""Define-by-run reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose inputs require gradients.
Parameters enter the graph through :meth:`Tape.param`; :func:`backward`
walks the tape in reverse and returns a gradient for every registered
parameter (exact zeros for parameters the loss does not reach).
"""
from __future__ import annotations

from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

PROB_FLOOR = 1e-12

_KEEP_DTYPES = (np.dtype(np.float64), np.dtype(np.longdouble))

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense array node. Leaves carry no parents; op outputs carry a backward rule."""

    __slots__ = ("values", "requires_grad", "parents", "backward_fn", "tape", "name")

    def __init__(self, values, requires_grad=False, tape=None, name=None):
        # float64 unless a wider float is supplied (extended-precision oracles)
        if type(values) is not np.ndarray or values.dtype not in _KEEP_DTYPES:
            values = np.asarray(values)
            if values.dtype != np.longdouble:
                values = values.astype(np.float64, copy=False)
        self.values = values
        self.requires_grad = requires_grad
        self.parents: Tuple["Tensor", ...] = ()
        self.backward_fn: Optional[BackwardFn] = None
        self.tape: Optional[Tape] = tape
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


class Tape:
    """Ordered record of op nodes; append order is a topological order."""

    def __init__(self):
        self.nodes: list = []
        self.params: Dict[str, Tensor] = {}

    def param(self, values, name: str) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        t = Tensor(values, requires_grad=True, tape=self, name=name)
        self.params[name] = t
        return t

    def __len__(self):
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(values: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(values)
    tape = None
    for p in parents:
        if p.requires_grad and p.tape is not None:
            tape = p.tape
            break
    if tape is not None:
        out.requires_grad = True
        out.tape = tape
        out.parents = parents
        out.backward_fn = backward_fn
        tape.nodes.append(out)
    return out


# ---------------------------------------------------------------- primitives


def affine(x, W, b) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (batch, in), ``W`` (in, out), ``b`` (out,)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    xv, Wv, bv = x.values, W.values, b.values
    if xv.ndim != 2 or Wv.ndim != 2 or bv.ndim != 1:
        raise ValueError(
            f"affine expects x[batch, in], W[in, out], b[out]; got {x.shape}, {W.shape}, {b.shape}"
        )
    if xv.shape[1] != Wv.shape[0]:
        raise ValueError(f"affine: x has {xv.shape[1]} columns but W has {Wv.shape[0]} rows")
    if Wv.shape[1] != bv.shape[0]:
        raise ValueError(f"affine: W has {Wv.shape[1]} columns but b has length {bv.shape[0]}")

    def back(g):
        return (
            g @ Wv.T if x.requires_grad else None,
            xv.T @ g if W.requires_grad else None,
            g.sum(axis=0) if b.requires_grad else None,
        )

    return _record(xv @ Wv + bv, (x, W, b), back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.values > 0
    return _record(np.maximum(x.values, 0.0), (x,), lambda g: (g * mask,))


def softmax(z) -> Tensor:
    """Row-wise softmax over the last axis, stabilised by max subtraction."""
    z = as_tensor(z)
    if z.values.shape[-1] < 2:
        raise ValueError(f"softmax needs at least 2 classes, got shape {z.shape}")
    shifted = z.values - z.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record(p, (z,), back)


def cross_entropy(p, true_index) -> Tensor:
    """``-log(max(p[t], 1e-12))``.

    ``p`` may be a single probability row (returns a scalar) or a
    (batch, K) matrix with one index per row (returns per-row losses).
    """
    p = as_tensor(p)
    single = p.values.ndim == 1
    pv = p.values[None, :] if single else p.values
    idx = np.atleast_1d(np.asarray(true_index))
    if pv.ndim != 2:
        raise ValueError(f"cross_entropy expects a row or a matrix, got shape {p.shape}")
    if idx.dtype.kind not in "iu":
        raise ValueError(f"class indices must be integers, got dtype {idx.dtype}")
    if idx.shape != (pv.shape[0],):
        raise ValueError(f"need {pv.shape[0]} class indices, got {idx.shape[0]}")
    K = pv.shape[1]
    if idx.min() < 0 or idx.max() >= K:
        raise ValueError(f"class index out of range [0, {K}): {idx.tolist()}")
    rows = np.arange(pv.shape[0])
    picked = pv[rows, idx]
    clipped = np.maximum(picked, PROB_FLOOR)
    losses = -np.log(clipped)

    def back(g):
        g = np.atleast_1d(g)
        gp = np.zeros_like(pv)
        gp[rows, idx] = np.where(picked > PROB_FLOOR, -g / clipped, 0.0)
        return (gp[0] if single else gp,)

    return _record(losses[0] if single else losses, (p,), back)


def grad_reverse(x, coeff: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by ``-coeff``."""
    x = as_tensor(x)
    if not np.isfinite(coeff):
        raise ValueError(f"reversal coefficient must be finite, got {coeff}")
    c = -float(coeff)
    return _record(x.values, (x,), lambda g: (c * g,))


def scale_rows(x, w) -> Tensor:
    """Multiply row ``i`` of ``x`` (batch, k) by the scalar ``w[i]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.values.ndim != 2 or w.values.shape != (x.shape[0],):
        raise ValueError(f"scale_rows: need x[batch, k] and w[batch]; got {x.shape}, {w.shape}")
    xv, wv = x.values, w.values

    def back(g):
        return (
            g * wv[:, None] if x.requires_grad else None,
            (g * xv).sum(axis=1) if w.requires_grad else None,
        )

    return _record(xv * wv[:, None], (x, w), back)


def column(x, j: int) -> Tensor:
    x = as_tensor(x)
    if x.values.ndim != 2 or not 0 <= j < x.shape[1]:
        raise ValueError(f"column {j} out of range for shape {x.shape}")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[:, j] = g
        return (out,)

    return _record(x.values[:, j].copy(), (x,), back)


def take_rows(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _record(x.values[start:stop], (x,), back)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.values.ndim and b.values.ndim:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} differ")

    def back(g):
        return (_fit_shape(g, a.shape), _fit_shape(g, b.shape))

    return _record(a.values + b.values, (a, b), back)


def mul(a, b) -> Tensor:
    """Element-wise product; either side may be a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.values.ndim and b.values.ndim:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.values, b.values

    def back(g):
        return (
            _fit_shape(g * bv, a.shape) if a.requires_grad else None,
            _fit_shape(g * av, b.shape) if b.requires_grad else None,
        )

    return _record(av * bv, (a, b), back)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _record(-x.values, (x,), lambda g: (-g,))


def total(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _record(np.asarray(x.values.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.values.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    return _record(np.asarray(x.values.sum() / n), (x,), lambda g: (np.full(shape, float(g) / n),))


def _fit_shape(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum())


# ---------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape) -> Dict[str, np.ndarray]:
    """Gradient of scalar ``loss`` for every parameter registered on ``tape``."""
    if loss.values.size != 1 or loss.values.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.values)
        for node in reversed(tape.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    return {
        name: np.array(grads.get(id(t), np.zeros_like(t.values)), dtype=np.float64).reshape(t.shape)
        for name, t in tape.params.items()
    }


# ---------------------------------------------------------------- gradient checks

LossFn = Callable[[Tape, Mapping[str, Tensor]], Tensor]


def analytic_gradients(loss_fn: LossFn, params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    tape = Tape()
    bound = {k: tape.param(v, k) for k, v in params.items()}
    return backward(loss_fn(tape, bound), tape)


def numerical_gradients(
    loss_fn: LossFn, params: Mapping[str, np.ndarray], h: float = 1e-5, dtype=np.longdouble
) -> Dict[str, np.ndarray]:
    """Central differences, one coordinate at a time.

    Evaluated in extended precision by default: with ``h = 1e-5`` a float64
    loss near 1 carries ~1e-11 of rounding noise per difference, which is
    comparable to gradients of order 1e-7.
    """
    work = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    # leaves wrap the work arrays without copying, so in-place nudges show through
    leaves = {k: Tensor(v) for k, v in work.items()}
    assert all(leaves[k].values is work[k] for k in work)

    def value():
        return loss_fn(None, dict(leaves)).values

    out = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out[name] = g.astype(np.float64)
    return out


def relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray]) -> float:
    """Worst ``|a - n| / max(|a|, |n|, 1e-8)`` over all coordinates."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        if a.size:
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_gradients(
    builder: Callable[[int], Tuple[Dict[str, np.ndarray], LossFn]], seed: int, h: float = 1e-5
) -> float:
    """Compare :func:`backward` against central differences for ``builder(seed)``.

    ``builder`` returns ``(params, loss_fn)`` where ``loss_fn(tape, tensors)``
    builds the scalar loss from a name -> Tensor mapping. ``tape`` is None
    during the finite-difference evaluations.
    """
    params, loss_fn = builder(seed)
    return relative_error(
        analytic_gradients(loss_fn, params), numerical_gradients(loss_fn, params, h)
    )
