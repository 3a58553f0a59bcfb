"""Training-set assembly.

`generate` produces the cheap dataset: one state draw X per row, one
simulated path conditional on it, payoff Y and its full pathwise
differential Z from a single reverse sweep, so the whole set costs about
as much as one Monte-Carlo pricing. `nested_risk_reports` is the expensive
validation oracle: per outer state it averages a full inner simulation to
estimate the true conditional value V = E[Y|X] and risk report D = E[Z|X].

Both are deterministic functions of (model, instrument, T, sizes, seed),
independent of block scheduling. Datasets round-trip exactly through CSV
(17 significant digits) with a JSON metadata sidecar.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import instruments as ins
from . import models, rng
from .errors import BudgetError, ConfigError, NonFiniteError

DEFAULT_BUDGET = 1 << 26


def dict_hash(d):
    """Stable 16-hex-digit digest of a JSON-serializable dict."""
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _metadata(config, instrument, T, seed, extra):
    mdl = config.to_dict()
    info = ins.instrument_to_dict(instrument)
    out = {"model": mdl, "model_hash": dict_hash(mdl),
           "instrument": info, "instrument_hash": dict_hash(info),
           "T": float(T), "seed": int(seed)}
    out.update(extra)
    return out


def _check_finite_rows(arrays, lo, what):
    """Reject non-finite examples, reporting the first offending row."""
    bad = None
    for a in arrays:
        a = np.asarray(a)
        flat = a.reshape(a.shape[0], -1)
        b = ~np.all(np.isfinite(flat), axis=1)
        bad = b if bad is None else (bad | b)
    if bad.any():
        rows = lo + np.where(bad)[0]
        raise NonFiniteError(
            f"non-finite {what} at rows {rows[:8].tolist()}"
            + ("..." if rows.size > 8 else ""), row=int(rows[0]))


# ------------------------------------------------------------------ datasets

@dataclass(frozen=True)
class Dataset:
    """m training examples: states X, payoffs Y, pathwise differentials Z."""

    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    T: float
    metadata: dict

    def __post_init__(self):
        if self.X.ndim != 2 or self.Y.shape != (self.X.shape[0],) \
                or self.Z.shape != self.X.shape:
            raise ConfigError("X (m,n), Y (m,), Z (m,n) shapes disagree")

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    def save_csv(self, path):
        path = str(path)
        n = self.n
        header = ",".join([f"x_{j}" for j in range(n)] + ["y"]
                          + [f"z_{j}" for j in range(n)])
        table = np.column_stack([self.X, self.Y, self.Z])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header,
                   comments="")
        with open(path + ".json", "w") as f:
            json.dump({"type": "dataset", "m": self.m, "n": n, "T": self.T,
                       "metadata": self.metadata}, f, indent=2)

    @classmethod
    def load_csv(cls, path):
        path = str(path)
        with open(path + ".json") as f:
            side = json.load(f)
        if side.get("type") != "dataset":
            raise ConfigError(f"{path}.json does not describe a dataset")
        n = int(side["n"])
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.shape[1] != 2 * n + 1:
            raise ConfigError(f"expected {2 * n + 1} columns, got {table.shape[1]}")
        return cls(X=table[:, :n], Y=table[:, n], Z=table[:, n + 1:],
                   T=float(side["T"]), metadata=side["metadata"])


@dataclass(frozen=True)
class RiskReportSet:
    """Nested-MC oracle: per outer state, inner-mean value and risk report."""

    X: np.ndarray
    v: np.ndarray
    delta: np.ndarray
    stderr_v: np.ndarray
    m_inner: int
    T: float
    metadata: dict

    def __post_init__(self):
        m = self.X.shape[0]
        if self.v.shape != (m,) or self.delta.shape != self.X.shape \
                or self.stderr_v.shape != (m,):
            raise ConfigError("X, v, delta, stderr_v shapes disagree")

    @property
    def m_outer(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    def save_csv(self, path):
        path = str(path)
        n = self.n
        header = ",".join([f"x_{j}" for j in range(n)] + ["v"]
                          + [f"delta_{j}" for j in range(n)] + ["stderr_v"])
        table = np.column_stack([self.X, self.v, self.delta, self.stderr_v])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header,
                   comments="")
        with open(path + ".json", "w") as f:
            json.dump({"type": "risk_reports", "m_outer": self.m_outer, "n": n,
                       "m_inner": self.m_inner, "T": self.T,
                       "metadata": self.metadata}, f, indent=2)

    @classmethod
    def load_csv(cls, path):
        path = str(path)
        with open(path + ".json") as f:
            side = json.load(f)
        if side.get("type") != "risk_reports":
            raise ConfigError(f"{path}.json does not describe risk reports")
        n = int(side["n"])
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.shape[1] != 2 * n + 2:
            raise ConfigError(f"expected {2 * n + 2} columns, got {table.shape[1]}")
        return cls(X=table[:, :n], v=table[:, n], delta=table[:, n + 1:2 * n + 1],
                   stderr_v=table[:, 2 * n + 1], m_inner=int(side["m_inner"]),
                   T=float(side["T"]), metadata=side["metadata"])


# ---------------------------------------------------------------- generation

def generate(config, instrument, T, m, seed, smooth=True, policy=None, key=()):
    """The (X, Y, Z) training set: m examples, one path and one reverse
    sweep each, assembled block by block.

    `key` extends the stream identity, so several datasets for one seed
    (one per call date, say) stay independent.
    """
    ins.check_compatible(instrument, config)
    if m < 1:
        raise ConfigError("m must be >= 1")
    n = models.state_dim(config, T)
    X = np.empty((m, n))
    Y = np.empty(m)
    Z = np.empty((m, n))
    for lo in range(0, m, rng.BLOCK):
        hi = min(m, lo + rng.BLOCK)
        x = models.simulate_states(config, T, hi - lo, seed, key=key, offset=lo)
        _check_finite_rows([x], lo, "state")
        rec = ad.Recording()
        duals = rec.input_matrix(x)
        shocks = models.PhiloxShocks(seed, rng.PAYOFF, lo, hi - lo, key=key)
        out = ins.simulate_payoff(config, instrument, T, duals, shocks,
                                  policy=policy, smooth=smooth)
        y = np.asarray(out.value, dtype=float)
        if y.ndim == 0:
            y = np.full(hi - lo, float(y))
        z = rec.gradient(out)
        _check_finite_rows([y, z], lo, "example")
        X[lo:hi], Y[lo:hi], Z[lo:hi] = x, y, z
    meta = _metadata(config, instrument, T, seed,
                     {"m": int(m), "n": int(n), "smooth": bool(smooth)})
    return Dataset(X=X, Y=Y, Z=Z, T=float(T), metadata=meta)


def nested_risk_reports(config, instrument, T, m_outer, m_inner, seed,
                        budget=DEFAULT_BUDGET, smooth=True, policy=None):
    """The expensive oracle: inner-mean (V, D, stderr) per outer state.

    Refuses up front when m_outer * m_inner exceeds the path budget, quoting
    the budget the request would need. Outer state i uses its own inner
    shock stream, independent across states.
    """
    ins.check_compatible(instrument, config)
    if m_outer < 1 or m_inner < 1:
        raise ConfigError("m_outer and m_inner must be >= 1")
    required = int(m_outer) * int(m_inner)
    if required > budget:
        raise BudgetError(
            f"nested oracle needs {required} paths, budget is {budget}",
            required=required)
    X = models.simulate_states(config, T, m_outer, seed)
    _check_finite_rows([X], 0, "state")
    n = X.shape[1]
    v = np.empty(m_outer)
    delta = np.empty((m_outer, n))
    stderr = np.empty(m_outer)
    for i in range(m_outer):
        rec = ad.Recording()
        duals = rec.inputs([np.full(m_inner, X[i, j]) for j in range(n)])
        shocks = models.PhiloxShocks(seed, rng.INNER, 0, m_inner, key=(i,))
        out = ins.simulate_payoff(config, instrument, T, duals, shocks,
                                  policy=policy, smooth=smooth)
        y = np.asarray(out.value, dtype=float)
        if y.ndim == 0:
            y = np.full(m_inner, float(y))
        z = rec.gradient(out)
        _check_finite_rows([y, z], 0, f"inner path (outer state {i})")
        v[i] = y.mean()
        delta[i] = z.mean(axis=0)
        stderr[i] = y.std(ddof=1) / math.sqrt(m_inner) if m_inner > 1 else 0.0
    meta = _metadata(config, instrument, T, seed,
                     {"m_outer": int(m_outer), "m_inner": int(m_inner),
                      "smooth": bool(smooth)})
    return RiskReportSet(X=X, v=v, delta=delta, stderr_v=stderr,
                         m_inner=int(m_inner), T=float(T), metadata=meta)
