"""Linear dimension reduction on states, risk reports, or pathwise differentials.

Three flavours share one mechanism: estimate a covariance matrix, eigen-
decompose it, keep the leading axes. What the covariance is taken OF is the
whole difference:

  classic       covariance of the states X; ranks axes by state variation
  risk          covariance of risk reports (price gradients); ranks axes by
                how much value actually moves along them
  differential  covariance of pathwise differentials Z; same ranking in
                expectation, computable from a cheap single-pass dataset,
                and conservative for truncation error by Jensen's inequality

Non-central covariance is the default: centering zeroes out constant
gradient components, which silently discards linear (first-order hedge)
risk directions. Central mode is exposed for exactly that effect.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap

MODES = ("classic", "risk", "differential")

# off-diagonal Frobenius mass below this fraction of the total counts as
# diagonalized; cyclic Jacobi converges quadratically so the margin is wide
_JACOBI_TOL = 1e-14
_MAX_SWEEPS = 64


def covariance(rows, central=False):
    """Covariance of the rows, divisor m, symmetric by construction.

    Non-central: (1/m) sum of outer products. Central: the same after
    subtracting the sample row mean.
    """
    a = np.asarray(rows, dtype=float)
    if a.ndim != 2:
        raise ConfigError(f"rows must be a 2-d matrix, got ndim={a.ndim}")
    m = a.shape[0]
    if m < 1 or (central and m < 2):
        raise ConfigError(f"covariance needs m >= {2 if central else 1} rows, got {m}")
    c = a.T @ a
    c /= m
    if central:
        mu = a.mean(axis=0)
        c -= np.outer(mu, mu)
    return (c + c.T) * 0.5


@njit(cache=True)
def _jacobi_sweeps(a, v):
    """In-place cyclic Jacobi diagonalization of symmetric a, rotations
    accumulated into v. Returns final squared off-diagonal mass."""
    n = a.shape[0]
    off2 = 0.0
    for sweep in range(_MAX_SWEEPS):
        off2 = 0.0
        nrm2 = 0.0
        for i in range(n):
            nrm2 += a[i, i] * a[i, i]
            for j in range(i + 1, n):
                off2 += 2.0 * a[i, j] * a[i, j]
        nrm2 += off2
        if off2 <= (_JACOBI_TOL * _JACOBI_TOL) * nrm2 or nrm2 == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                app = a[p, p]
                aqq = a[q, q]
                tau = 0.5 * (aqq - app) / apq
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp - s * akq
                        a[p, k] = a[k, p]
                        a[k, q] = c * akq + s * akp
                        a[q, k] = a[k, q]
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = c * vkq + s * vkp
    return off2


@dataclass(frozen=True)
class EigenDecomposition:
    """Full spectrum of a symmetric matrix: columns of `eigenvectors` are
    orthonormal, `eigenvalues` sorted descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source: str = "state"
    central: bool = False

    @property
    def n(self):
        return self.eigenvalues.shape[0]


def eigen_sym(c, source="state", central=False):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    O(n^3) per sweep; adequate to n of a couple thousand. Deterministic:
    fixed rotation order, and each eigenvector's largest-magnitude component
    is made positive (lowest index on ties).
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ConfigError(f"matrix must be square, got shape {c.shape}")
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    if c.size and float(np.max(np.abs(c - c.T))) > 1e-10 * scale:
        raise ConfigError("matrix is not symmetric to 1e-10")
    n = c.shape[0]
    a = np.ascontiguousarray((c + c.T) * 0.5)
    v = np.eye(n)
    off2 = _jacobi_sweeps(a, v)
    nrm2 = float(np.sum(np.asarray(c) ** 2))
    if nrm2 > 0.0 and off2 > 1e-20 * nrm2:
        raise NumericalError(f"Jacobi rotations did not converge in {_MAX_SWEEPS} sweeps")
    d = np.diag(a).copy()
    order = np.argsort(-d, kind="stable")
    d = d[order]
    v = v[:, order]
    for j in range(n):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0.0:
            v[:, j] = -v[:, j]
    return EigenDecomposition(eigenvalues=d, eigenvectors=v, source=source, central=central)


@dataclass(frozen=True)
class Encoder:
    """Fitted linear dimension reducer.

    Encode maps a state to p features, L = G x; decode maps back, HL.
    The composition Pi = HG is the projection onto the kept axes and
    Sigma = I - Pi measures what truncation throws away. In classic mode
    with normalization, G = D^(-1/2) P^T and H = P D^(1/2) so that encoded
    features have unit variance; risk and differential encoders keep the
    raw eigenbasis, G = P^T and H = P.
    """

    G: np.ndarray
    H: np.ndarray
    eigenvalues: np.ndarray
    eps_actual: float
    mode: str
    central: bool
    normalization: bool
    total_mass: float
    shift: np.ndarray
    scale: np.ndarray
    flags: tuple = field(default_factory=tuple)

    @property
    def n(self):
        return self.G.shape[1]

    @property
    def p(self):
        return self.G.shape[0]

    def encode(self, x):
        """Features L = G x for one state vector or a stack of rows."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ConfigError(f"state dimension {x.shape[-1]} != encoder n {self.n}")
        return ((x - self.shift) / self.scale) @ self.G.T

    def decode(self, l):
        """Reconstruction H L back in state space."""
        l = np.asarray(l, dtype=float)
        if l.shape[-1] != self.p:
            raise ConfigError(f"feature dimension {l.shape[-1]} != encoder p {self.p}")
        return self.shift + self.scale * (l @ self.H.T)

    def feature_sensitivities(self, rows):
        """S = H^T z per row: derivatives of value wrt the encoded features.

        Rows are pathwise differentials (or risk reports) in original state
        coordinates; chain rule through any stored standardization.
        """
        rows = np.asarray(rows, dtype=float)
        if rows.shape[-1] != self.n:
            raise ConfigError(f"row dimension {rows.shape[-1]} != encoder n {self.n}")
        return (rows * self.scale) @ self.H

    def truncation_error(self, rows):
        """Mean squared truncated mass, E |Sigma z|^2 over the rows."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float)) * self.scale
        if rows.shape[1] != self.n:
            raise ConfigError(f"row dimension {rows.shape[1]} != encoder n {self.n}")
        resid = rows - (rows @ self.pi().T)
        return float(np.mean(np.sum(resid * resid, axis=1)))

    def pi(self):
        """Projection onto the kept subspace, Pi = H G."""
        return self.H @ self.G

    def scaled_loadings(self):
        """Kept eigenvectors scaled by root eigenvalue, for loading reports."""
        if self.normalization:
            return self.H.copy()
        return self.H * np.sqrt(np.maximum(self.eigenvalues, 0.0))

    def to_dict(self):
        return {
            "mode": self.mode,
            "central": self.central,
            "normalization": self.normalization,
            "n": self.n,
            "p": self.p,
            "G": self.G.tolist(),
            "H": self.H.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eps_actual": self.eps_actual,
            "total_mass": self.total_mass,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        n, p = int(d["n"]), int(d["p"])
        enc = cls(
            G=np.asarray(d["G"], dtype=float).reshape(p, n),
            H=np.asarray(d["H"], dtype=float).reshape(n, p),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            eps_actual=float(d["eps_actual"]),
            mode=str(d["mode"]),
            central=bool(d["central"]),
            normalization=bool(d["normalization"]),
            total_mass=float(d["total_mass"]),
            shift=np.asarray(d["shift"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            flags=tuple(d.get("flags", ())),
        )
        return enc

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _extract_rows(mode, data):
    """Pick the matrix the chosen mode decomposes: X, delta, or Z."""
    if isinstance(data, np.ndarray) or (not hasattr(data, "X") and not hasattr(data, "delta")):
        return np.asarray(data, dtype=float)
    if mode == "classic":
        return np.asarray(data.X, dtype=float)
    if mode == "risk":
        if hasattr(data, "delta"):
            return np.asarray(data.delta, dtype=float)
        raise ConfigError("risk mode needs risk reports (delta rows)")
    if hasattr(data, "Z"):
        return np.asarray(data.Z, dtype=float)
    raise ConfigError("differential mode needs pathwise differentials (Z rows)")


def fit(mode, data, dim=None, tol=None, rel_tol=None, central=False,
        normalize=None, standardize=False):
    """Fit an Encoder: covariance of the mode's rows, eigen-decomposition,
    truncation by explicit dimension or by tolerance.

    Exactly one of `dim`, `tol`, `rel_tol` chooses the cut. `tol` keeps the
    smallest p whose truncated eigenvalue mass is <= tol (absolute units of
    the covariance trace); `rel_tol` is the same as a fraction of the total
    mass. `normalize` defaults to True for classic mode, and is invalid
    elsewhere (orthonormal feature risks need the raw eigenbasis).
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if sum(arg is not None for arg in (dim, tol, rel_tol)) != 1:
        raise ConfigError("exactly one of dim, tol, rel_tol must be given")
    if normalize is None:
        normalize = mode == "classic"
    elif normalize and mode != "classic":
        raise ConfigError("normalization applies to classic mode only")

    rows = _extract_rows(mode, data)
    if rows.ndim != 2:
        raise ConfigError("data must reduce to an (m, n) matrix")
    n = rows.shape[1]

    shift = np.zeros(n)
    scale = np.ones(n)
    flags = []
    if standardize:
        shift = rows.mean(axis=0) if mode == "classic" else np.zeros(n)
        sd = rows.std(axis=0) if mode == "classic" else np.sqrt(np.mean(rows * rows, axis=0))
        scale = np.where(sd > 0.0, sd, 1.0)
        if np.any(sd == 0.0):
            flags.append("degenerate-coordinate-scale")
        rows = (rows - shift) / scale if mode == "classic" else rows / scale

    dec = eigen_sym(covariance(rows, central=central),
                    source={"classic": "state", "risk": "risk", "differential": "differential"}[mode],
                    central=central)
    d = np.maximum(dec.eigenvalues, 0.0)
    total = float(np.sum(d))

    if dim is not None:
        if dim > n:
            raise ConfigError(f"requested dim {dim} exceeds state dimension {n}")
        if dim < 0:
            raise ConfigError(f"requested dim must be >= 0, got {dim}")
        p = int(dim)
    else:
        budget = float(rel_tol) * total if rel_tol is not None else float(tol)
        if budget < 0.0:
            raise ConfigError("tolerance must be >= 0")
        # smallest p with truncated mass <= budget: walk the suffix sums
        suffix = np.concatenate([np.cumsum(d[::-1])[::-1], [0.0]])
        p = n
        for k in range(n + 1):
            if suffix[k] <= budget:
                p = k
                break
        if p == 0:
            flags.append("tolerance-exceeds-total-mass")

    kept = dec.eigenvalues[:p].copy()
    eps_actual = float(np.sum(d[p:]))
    pt = dec.eigenvectors[:, :p]
    if normalize:
        s = np.where(d[:p] > 0.0, np.sqrt(d[:p]), 1.0)
        if np.any(d[:p] <= 0.0):
            flags.append("zero-eigenvalue-axis-unnormalized")
        g = pt.T / s[:, None]
        h = pt * s[None, :]
    else:
        g = pt.T.copy()
        h = pt.copy()
    return Encoder(G=g, H=h, eigenvalues=kept, eps_actual=eps_actual, mode=mode,
                   central=central, normalization=normalize, total_mass=total,
                   shift=shift, scale=scale, flags=tuple(flags))


def principal_angles(basis_a, basis_b):
    """Principal angles (radians, ascending) between the column spans."""
    qa, _ = np.linalg.qr(np.asarray(basis_a, dtype=float))
    qb, _ = np.linalg.qr(np.asarray(basis_b, dtype=float))
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(sv, -1.0, 1.0))
