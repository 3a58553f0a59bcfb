"""Reverse-mode automatic differentiation on scalar operation tapes.

A Recording stores one operation graph: every node is a scalar operation
whose value is either a plain float (scalar mode) or a vector holding that
scalar for a block of Monte-Carlo paths evaluated in lockstep (block mode,
same graph for every path). Partial derivatives are computed during the
forward pass; one reverse sweep visits each record exactly once, so the
cost of the full gradient is a small constant multiple of the forward cost
in either mode.

Recordings are single-threaded objects. Constants never become nodes: they
are folded into the partials of the operations that consume them.
"""

import numpy as np
from scipy.special import expit, ndtr

from .errors import NonFiniteError


class Recording:
    """An ordered tape of operation records, topologically sorted by construction."""

    __slots__ = ("_values", "_parents", "_partials", "n_inputs")

    def __init__(self):
        self._values = []
        self._parents = []
        self._partials = []
        self.n_inputs = 0

    def __len__(self):
        return len(self._values)

    def inputs(self, values):
        """Register the state coordinates as the tape's input nodes.

        `values` is a sequence of floats (scalar mode) or of (m,) arrays
        (block mode, one array per coordinate). Must be called on a fresh
        recording, before any arithmetic.
        """
        if len(self._values) != 0:
            raise ValueError("inputs must be registered on an empty recording")
        duals = []
        for v in values:
            nid = self._push(v, (), ())
            duals.append(DualScalar(self, nid, self._values[nid]))
        self.n_inputs = len(duals)
        return duals

    def input_matrix(self, x):
        """Register an (m, n) state matrix: one input node per coordinate."""
        x = np.asarray(x, dtype=float)
        return self.inputs([np.ascontiguousarray(x[:, j]) for j in range(x.shape[1])])

    def _push(self, value, parents, partials):
        self._values.append(value)
        self._parents.append(parents)
        self._partials.append(partials)
        return len(self._values) - 1

    def _node(self, value, parents, partials):
        return DualScalar(self, self._push(value, parents, partials), value)

    def gradient(self, output):
        """Adjoints of the inputs: one reverse sweep from `output`.

        Returns a (n_inputs,) vector in scalar mode or an (m, n_inputs)
        matrix in block mode.
        """
        if output.recording is not self:
            raise ValueError("output does not belong to this recording")
        values, parents, partials = self._values, self._parents, self._partials
        adj = [None] * len(values)
        adj[output.node_id] = 1.0
        for nid in range(len(values) - 1, self.n_inputs - 1, -1):
            a = adj[nid]
            if a is None:
                continue
            for pid, p in zip(parents[nid], partials[nid]):
                contrib = a * p
                adj[pid] = contrib if adj[pid] is None else adj[pid] + contrib
        width = np.shape(output.value)
        cols = []
        for i in range(self.n_inputs):
            a = adj[i]
            if a is None:
                a = 0.0
            w = np.shape(values[i]) or width
            cols.append(np.broadcast_to(np.asarray(a, dtype=float), w or ()).copy() if w else float(a))
        if width or any(np.shape(v) for v in values[: self.n_inputs]):
            return np.column_stack([np.atleast_1d(c) for c in cols])
        return np.array(cols, dtype=float)

    def find_nonfinite(self):
        """Id of the first node with a non-finite value, or None."""
        for nid, v in enumerate(self._values):
            if not np.all(np.isfinite(v)):
                return nid
        return None


class DualScalar:
    """A scalar tracked on a recording; arithmetic matches plain reals bit for bit."""

    __slots__ = ("recording", "node_id", "value")

    def __init__(self, recording, node_id, value):
        self.recording = recording
        self.node_id = node_id
        self.value = value

    def __repr__(self):
        return f"DualScalar(node={self.node_id}, value={self.value!r})"

    # Implicit conversions would silently drop the tape: fail at construction.
    def __float__(self):
        raise TypeError("DualScalar cannot be converted to float; unsupported primitive?")

    def __bool__(self):
        raise TypeError("DualScalar has no truth value; compare .value instead")

    # Comparisons read the forward values only. Decisions made from them are
    # constants of the differentiation (frozen-indicator semantics).
    def __lt__(self, other):
        return self.value < _raw(other)

    def __le__(self, other):
        return self.value <= _raw(other)

    def __gt__(self, other):
        return self.value > _raw(other)

    def __ge__(self, other):
        return self.value >= _raw(other)

    def __add__(self, other):
        if isinstance(other, DualScalar):
            return self.recording._node(self.value + other.value,
                                        (self.node_id, other.node_id), (1.0, 1.0))
        return self.recording._node(self.value + other, (self.node_id,), (1.0,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DualScalar):
            return self.recording._node(self.value - other.value,
                                        (self.node_id, other.node_id), (1.0, -1.0))
        return self.recording._node(self.value - other, (self.node_id,), (1.0,))

    def __rsub__(self, other):
        return self.recording._node(other - self.value, (self.node_id,), (-1.0,))

    def __mul__(self, other):
        if isinstance(other, DualScalar):
            return self.recording._node(self.value * other.value,
                                        (self.node_id, other.node_id),
                                        (other.value, self.value))
        return self.recording._node(self.value * other, (self.node_id,), (other,))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualScalar):
            v = self.value / other.value
            return self.recording._node(v, (self.node_id, other.node_id),
                                        (1.0 / other.value, -v / other.value))
        return self.recording._node(self.value / other, (self.node_id,), (1.0 / other,))

    def __rtruediv__(self, other):
        v = other / self.value
        return self.recording._node(v, (self.node_id,), (-v / self.value,))

    def __neg__(self):
        return self.recording._node(-self.value, (self.node_id,), (-1.0,))

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise TypeError("DualScalar power must be a plain number")
        return self.recording._node(self.value ** k, (self.node_id,),
                                    (k * self.value ** (k - 1),))


def _raw(x):
    return x.value if isinstance(x, DualScalar) else x


def _unary(x, value_fn, partial_fn):
    if isinstance(x, DualScalar):
        v = value_fn(x.value)
        return x.recording._node(v, (x.node_id,), (partial_fn(x.value, v),))
    return value_fn(x)


def exp(x):
    return _unary(x, np.exp, lambda _, v: v)


def log(x):
    return _unary(x, np.log, lambda u, _: 1.0 / u)


def sqrt(x):
    return _unary(x, np.sqrt, lambda _, v: 0.5 / v)


def sin(x):
    return _unary(x, np.sin, lambda u, _: np.cos(u))


def cos(x):
    return _unary(x, np.cos, lambda u, _: -np.sin(u))


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def norm_cdf(x):
    return _unary(x, ndtr, lambda u, _: np.exp(-0.5 * u * u) * _INV_SQRT_2PI)


def smooth_max(a, b, width):
    """C-infinity softening of max(a, b): width * logaddexp(a/width, b/width).

    Value lies in [max(a,b), max(a,b) + width]; symmetric in (a, b);
    converges pointwise to the hard max as width -> 0+. The partial with
    respect to a is sigmoid((a-b)/width), in (0, 1).
    """
    if not width > 0.0:
        raise ValueError(f"smooth_max width must be > 0, got {width}")
    av, bv = _raw(a), _raw(b)
    v = width * np.logaddexp(av / width, bv / width)
    pa = expit((av - bv) / width)
    a_dual, b_dual = isinstance(a, DualScalar), isinstance(b, DualScalar)
    if a_dual and b_dual:
        return a.recording._node(v, (a.node_id, b.node_id), (pa, 1.0 - pa))
    if a_dual:
        return a.recording._node(v, (a.node_id,), (pa,))
    if b_dual:
        return b.recording._node(v, (b.node_id,), (1.0 - pa,))
    return v


def lincomb(coeffs, duals, const=0.0):
    """Linear combination const + sum_i coeffs[i] * duals[i] as one record.

    Coefficients are constants (floats or per-path arrays); duals may also
    contain plain numbers, which are folded into the constant term.
    """
    ids, parts = [], []
    value = const
    for c, d in zip(coeffs, duals, strict=True):
        if isinstance(d, DualScalar):
            value = value + c * d.value
            ids.append(d.node_id)
            parts.append(c)
        else:
            value = value + c * d
    if not ids:
        return value
    rec = None
    for d in duals:
        if isinstance(d, DualScalar):
            rec = d.recording
            break
    return rec._node(value, tuple(ids), tuple(parts))


def dual_sum(duals):
    return lincomb([1.0] * len(duals), duals)


def select(mask, a, b):
    """Per-path choice between a and b with a constant boolean mask.

    The mask is a constant of the differentiation: the derivative is the
    masked blend of the branch derivatives (frozen-indicator semantics).
    """
    av, bv = _raw(a), _raw(b)
    v = np.where(mask, av, bv)
    w = np.asarray(mask, dtype=float)
    a_dual, b_dual = isinstance(a, DualScalar), isinstance(b, DualScalar)
    if a_dual and b_dual:
        return a.recording._node(v, (a.node_id, b.node_id), (w, 1.0 - w))
    if a_dual:
        return a.recording._node(v, (a.node_id,), (w,))
    if b_dual:
        return b.recording._node(v, (b.node_id,), (1.0 - w,))
    return v


def record_and_differentiate(f, x):
    """Evaluate y = f(x) under a fresh recording and return (y, grad f(x)).

    `f` receives a list of n DualScalars and must return a DualScalar built
    from supported primitives; `x` is a vector of n finite reals. The value
    y equals plain forward evaluation exactly; the gradient comes from one
    reverse sweep.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    rec = Recording()
    out = f(rec.inputs([float(v) for v in x]))
    if not isinstance(out, DualScalar):
        if np.ndim(out) == 0 and np.isfinite(out):
            # f ignored its inputs entirely; a constant has zero gradient
            return float(out), np.zeros(len(x))
        raise TypeError("f must return a DualScalar or a finite constant")
    bad = rec.find_nonfinite()
    if bad is not None:
        raise NonFiniteError(f"non-finite value at node {bad}", node_id=bad)
    return float(out.value), rec.gradient(out)
