"""Dense rank-<=2 tensors with tape-based reverse-mode differentiation.

Everything above this module (the LSTM encoders, both attention blocks, the
output heads, the losses) is composed from the primitive kinds registered
here. Values are double-precision numpy arrays; a :class:`Tape` records every
primitive application of one forward pass so that a single backward sweep
yields one gradient per named leaf. Recording never changes forward values:
with ``tape=None`` every primitive returns bit-identical results.

Double precision is deliberate: the project's main oracle is central
finite differences, which is unreliable in float32.
"""
from __future__ import annotations

import logging
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import DimensionError, NumericalError, UsageError

log = logging.getLogger(__name__)

Array = np.ndarray


class Tensor:
    """Immutable dense value of rank <= 2, optionally tracked on a tape.

    ``name`` marks a trainable leaf; :func:`backward` reports exactly one
    gradient per named leaf. The ``_tape``/``_node`` pair is bookkeeping
    owned by whichever tape last touched this tensor.
    """

    __slots__ = ("data", "name", "_tape", "_node")

    def __init__(self, values, name: str | None = None):
        data = np.array(values, dtype=np.float64)
        if data.ndim > 2:
            raise DimensionError(f"rank {data.ndim} unsupported (max 2): shape {data.shape}")
        data.setflags(write=False)
        self.data = data
        self.name = name
        self._tape: Tape | None = None
        self._node = -1

    @classmethod
    def _wrap(cls, data: Array) -> "Tensor":
        # Internal: take ownership of a freshly computed array (no copy).
        t = cls.__new__(cls)
        t.data = data
        t.name = None
        t._tape = None
        t._node = -1
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{tag})"


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), name=name)


class Tape:
    """Ordered record of the primitive applications of one forward pass.

    A tape is confined to a single thread for its forward+backward lifetime.
    Leaves (tensors first seen as inputs) are registered on first touch;
    operation outputs are appended afterwards, so record order is already
    topological.
    """

    __slots__ = ("_records", "_count", "_named")

    def __init__(self):
        # each record: (kind, input ids, output id, input arrays, output array, aux)
        self._records: list[tuple] = []
        self._count = 0
        self._named: dict[str, tuple[int, Tensor]] = {}

    def __len__(self) -> int:
        return len(self._records)

    def _touch(self, t: Tensor) -> int:
        if t._tape is self:
            return t._node
        node = self._count
        self._count += 1
        t._tape = self
        t._node = node
        if t.name is not None:
            if t.name in self._named:
                raise UsageError(f"duplicate leaf name on tape: {t.name!r}")
            self._named[t.name] = (node, t)
        return node


# ---------------------------------------------------------------------------
# primitive forward rules
# ---------------------------------------------------------------------------


def _need_same_shape(kind: str, a: Array, b: Array) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _need_vector(kind: str, a: Array) -> None:
    if a.ndim != 1:
        raise DimensionError(f"{kind}: expected rank-1 input, got shape {a.shape}")


def _fwd_add(arrays, aux):
    a, b = arrays
    _need_same_shape("add", a, b)
    return a + b


def _fwd_mul(arrays, aux):
    a, b = arrays
    _need_same_shape("mul", a, b)
    return a * b


def _fwd_matvec(arrays, aux):
    m, v = arrays
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: shapes {m.shape} and {v.shape} do not conform")
    return m @ v


def _fwd_tanh(arrays, aux):
    return np.tanh(arrays[0])


def _fwd_sigmoid(arrays, aux):
    return expit(arrays[0])


def _fwd_relu(arrays, aux):
    return np.maximum(arrays[0], 0.0)


def _fwd_softmax(arrays, aux):
    (x,) = arrays
    _need_vector("softmax", x)
    # max-subtraction for overflow safety; mathematically value-identical
    e = np.exp(x - x.max())
    return e / e.sum()


def _fwd_log(arrays, aux):
    (x,) = arrays
    floor = aux
    if floor is None:
        with np.errstate(divide="ignore"):
            return np.log(x)  # callers detect the -inf (numerical error)
    low = x < floor
    if low.any():
        log.warning("log floor %g triggered on %d value(s)", floor, int(low.sum()))
        return np.log(np.maximum(x, floor))
    return np.log(x)


def _fwd_concat(arrays, aux):
    for a in arrays:
        _need_vector("concat", a)
    return np.concatenate(arrays)


def _fwd_weighted_sum(arrays, aux):
    w = arrays[0]
    vs = arrays[1:]
    _need_vector("weighted_sum", w)
    if not vs or len(vs) != w.shape[0]:
        raise DimensionError(
            f"weighted_sum: {w.shape[0]} weights for {len(vs)} vectors")
    width = vs[0].shape
    for v in vs:
        _need_vector("weighted_sum", v)
        if v.shape != width:
            raise DimensionError(f"weighted_sum: vector shapes {width} and {v.shape} differ")
    return np.stack(vs).T @ w


def _fwd_select_row(arrays, aux):
    (m,) = arrays
    i = aux
    if m.ndim != 2:
        raise DimensionError(f"select_row: expected rank-2 input, got shape {m.shape}")
    if not 0 <= i < m.shape[0]:
        raise DimensionError(f"select_row: row {i} out of range for shape {m.shape}")
    return m[i].copy()


def _fwd_pick(arrays, aux):
    (v,) = arrays
    i = aux
    _need_vector("pick", v)
    if not 0 <= i < v.shape[0]:
        raise DimensionError(f"pick: index {i} out of range for shape {v.shape}")
    return v[i : i + 1].copy()


def _fwd_slice(arrays, aux):
    (v,) = arrays
    start, stop = aux
    _need_vector("slice", v)
    if not 0 <= start < stop <= v.shape[0]:
        raise DimensionError(f"slice: [{start}:{stop}] invalid for shape {v.shape}")
    return v[start:stop].copy()


def _fwd_mean(arrays, aux):
    (v,) = arrays
    _need_vector("mean", v)
    if v.shape[0] == 0:
        raise DimensionError("mean: empty vector")
    return np.array([v.mean()])


def _fwd_sum(arrays, aux):
    (v,) = arrays
    _need_vector("sum", v)
    return np.array([v.sum()])


def _fwd_dot(arrays, aux):
    a, b = arrays
    _need_vector("dot", a)
    _need_same_shape("dot", a, b)
    return np.array([a @ b])


def _fwd_scale(arrays, aux):
    return arrays[0] * aux


# ---------------------------------------------------------------------------
# primitive backward rules
# ---------------------------------------------------------------------------


def _acc(grads: list, node: int, value: Array, fresh: bool) -> None:
    # `fresh` marks arrays this rule just allocated and may hand over;
    # shared/viewed arrays are copied so later in-place += cannot alias.
    cur = grads[node]
    if cur is None:
        grads[node] = value if fresh else value.copy()
    else:
        cur += value


def _acc_at(grads: list, node: int, shape, index, value: Array) -> None:
    # scatter-accumulate into one row/range without densifying per call
    cur = grads[node]
    if cur is None:
        cur = np.zeros(shape)
        grads[node] = cur
    cur[index] += value


def _bwd_add(g, ids, arrays, out, aux, grads):
    _acc(grads, ids[0], g, fresh=False)
    _acc(grads, ids[1], g, fresh=False)


def _bwd_mul(g, ids, arrays, out, aux, grads):
    a, b = arrays
    _acc(grads, ids[0], b * g, fresh=True)
    _acc(grads, ids[1], a * g, fresh=True)


def _bwd_matvec(g, ids, arrays, out, aux, grads):
    m, v = arrays
    _acc(grads, ids[0], np.outer(g, v), fresh=True)
    _acc(grads, ids[1], m.T @ g, fresh=True)


def _bwd_tanh(g, ids, arrays, out, aux, grads):
    _acc(grads, ids[0], (1.0 - out * out) * g, fresh=True)


def _bwd_sigmoid(g, ids, arrays, out, aux, grads):
    _acc(grads, ids[0], out * (1.0 - out) * g, fresh=True)


def _bwd_relu(g, ids, arrays, out, aux, grads):
    _acc(grads, ids[0], (arrays[0] > 0.0) * g, fresh=True)


def _bwd_softmax(g, ids, arrays, out, aux, grads):
    _acc(grads, ids[0], out * (g - g @ out), fresh=True)


def _bwd_log(g, ids, arrays, out, aux, grads):
    x = arrays[0]
    floor = aux
    if floor is None:
        _acc(grads, ids[0], g / x, fresh=True)
    else:
        # flat region below the floor contributes zero gradient
        _acc(grads, ids[0], np.where(x < floor, 0.0, g / np.maximum(x, floor)), fresh=True)


def _bwd_concat(g, ids, arrays, out, aux, grads):
    offset = 0
    for node, a in zip(ids, arrays):
        n = a.shape[0]
        _acc(grads, node, g[offset : offset + n], fresh=False)
        offset += n


def _bwd_weighted_sum(g, ids, arrays, out, aux, grads):
    w = arrays[0]
    stacked = np.stack(arrays[1:])
    _acc(grads, ids[0], stacked @ g, fresh=True)
    for k in range(1, len(ids)):
        _acc(grads, ids[k], w[k - 1] * g, fresh=True)


def _bwd_select_row(g, ids, arrays, out, aux, grads):
    _acc_at(grads, ids[0], arrays[0].shape, aux, g)


def _bwd_pick(g, ids, arrays, out, aux, grads):
    _acc_at(grads, ids[0], arrays[0].shape, aux, g[0])


def _bwd_slice(g, ids, arrays, out, aux, grads):
    start, stop = aux
    _acc_at(grads, ids[0], arrays[0].shape, slice(start, stop), g)


def _bwd_mean(g, ids, arrays, out, aux, grads):
    n = arrays[0].shape[0]
    _acc(grads, ids[0], np.full(n, g[0] / n), fresh=True)


def _bwd_sum(g, ids, arrays, out, aux, grads):
    n = arrays[0].shape[0]
    _acc(grads, ids[0], np.full(n, g[0]), fresh=True)


def _bwd_dot(g, ids, arrays, out, aux, grads):
    a, b = arrays
    _acc(grads, ids[0], g[0] * b, fresh=True)
    _acc(grads, ids[1], g[0] * a, fresh=True)


def _bwd_scale(g, ids, arrays, out, aux, grads):
    _acc(grads, ids[0], aux * g, fresh=True)


_KINDS: dict[str, tuple[Callable, Callable]] = {
    "add": (_fwd_add, _bwd_add),
    "mul": (_fwd_mul, _bwd_mul),
    "matvec": (_fwd_matvec, _bwd_matvec),
    "tanh": (_fwd_tanh, _bwd_tanh),
    "sigmoid": (_fwd_sigmoid, _bwd_sigmoid),
    "relu": (_fwd_relu, _bwd_relu),
    "softmax": (_fwd_softmax, _bwd_softmax),
    "log": (_fwd_log, _bwd_log),
    "concat": (_fwd_concat, _bwd_concat),
    "weighted_sum": (_fwd_weighted_sum, _bwd_weighted_sum),
    "select_row": (_fwd_select_row, _bwd_select_row),
    "pick": (_fwd_pick, _bwd_pick),
    "slice": (_fwd_slice, _bwd_slice),
    "mean": (_fwd_mean, _bwd_mean),
    "sum": (_fwd_sum, _bwd_sum),
    "dot": (_fwd_dot, _bwd_dot),
    "scale": (_fwd_scale, _bwd_scale),
}


def primitive(kind: str, inputs: tuple[Tensor, ...], tape: Tape | None = None, aux=None) -> Tensor:
    """Apply one primitive; append a record when a tape is supplied."""
    try:
        forward, _ = _KINDS[kind]
    except KeyError:
        raise UsageError(f"unknown primitive kind: {kind!r}") from None
    arrays = tuple(t.data for t in inputs)
    out = forward(arrays, aux)
    result = Tensor._wrap(out)
    if tape is not None:
        in_ids = tuple(tape._touch(t) for t in inputs)
        node = tape._count
        tape._count += 1
        result._tape = tape
        result._node = node
        tape._records.append((kind, in_ids, node, arrays, out, aux))
    return result


# thin named wrappers so call sites read like the math they implement


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("add", (a, b), tape)


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("mul", (a, b), tape)


def matvec(m: Tensor, v: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("matvec", (m, v), tape)


def tanh(x: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("tanh", (x,), tape)


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("sigmoid", (x,), tape)


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("relu", (x,), tape)


def softmax(x: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("softmax", (x,), tape)


def log(x: Tensor, tape: Tape | None = None, floor: float | None = None) -> Tensor:
    return primitive("log", (x,), tape, aux=floor)


def concat(xs, tape: Tape | None = None) -> Tensor:
    return primitive("concat", tuple(xs), tape)


def weighted_sum(w: Tensor, vectors, tape: Tape | None = None) -> Tensor:
    return primitive("weighted_sum", (w, *vectors), tape)


def select_row(m: Tensor, i: int, tape: Tape | None = None) -> Tensor:
    return primitive("select_row", (m,), tape, aux=i)


def pick(v: Tensor, i: int, tape: Tape | None = None) -> Tensor:
    return primitive("pick", (v,), tape, aux=i)


def vslice(v: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    return primitive("slice", (v,), tape, aux=(start, stop))


def mean(v: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("mean", (v,), tape)


def vsum(v: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("sum", (v,), tape)


def dot(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    return primitive("dot", (a, b), tape)


def scale(x: Tensor, factor: float, tape: Tape | None = None) -> Tensor:
    return primitive("scale", (x,), tape, aux=factor)


# ---------------------------------------------------------------------------
# backward sweep and gradient checking
# ---------------------------------------------------------------------------

GradientMap = dict[str, Tensor]


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """One reverse sweep: gradient of ``loss`` w.r.t. every named leaf.

    Leaves not reachable from the loss map to zero tensors of the leaf's
    shape. Deterministic: identical tapes yield bit-identical gradients.
    """
    if loss._tape is not tape:
        raise UsageError("loss is not a node on this tape")
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.shape}")
    grads: list[Array | None] = [None] * tape._count
    grads[loss._node] = np.ones_like(loss.data)
    for kind, in_ids, out_id, arrays, out, aux in reversed(tape._records):
        g = grads[out_id]
        if g is None:
            continue
        _KINDS[kind][1](g, in_ids, arrays, out, aux, grads)
    result: GradientMap = {}
    for name, (node, leaf) in tape._named.items():
        g = grads[node]
        result[name] = Tensor._wrap(g if g is not None else np.zeros(leaf.shape))
    return result


def grad_check(
    fn: Callable[[Mapping[str, Tensor], Tape | None], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(params, tape)`` must deterministically return a scalar tensor,
    recording on the tape when one is given. Relative error per entry is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if epsilon <= 0:
        raise UsageError("epsilon must be positive")
    tape = Tape()
    loss = fn(params, tape)
    if not np.isfinite(loss.data).all():
        raise NumericalError("function value is not finite")
    analytic = backward(tape, loss)
    worst = 0.0
    for name, p in params.items():
        grad = analytic.get(name)
        ana = grad.data if grad is not None else np.zeros(p.shape)
        base = p.data
        for k in range(base.size):
            shifted = {}
            values = []
            for step in (epsilon, -epsilon):
                bumped = base.copy()
                bumped.flat[k] += step
                shifted[name] = Tensor(bumped, name=p.name)
                probe = fn({**params, **shifted}, None)
                value = probe.item()
                if not np.isfinite(value):
                    raise NumericalError(f"non-finite probe at {name}[{k}]")
                values.append(value)
            numeric = (values[0] - values[1]) / (2.0 * epsilon)
            a = float(ana.flat[k])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst
