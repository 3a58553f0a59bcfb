"""Linear regression on monomial bases, with and without derivative labels.

The differential fit solves the modified normal equation

    (C_phi + sum_i lam_i C_phi'_i) beta = C_phiY + sum_i lam_i C_phi'_i,Z_i

where C_phi'_i is the Gram matrix of the basis derivatives with respect to
input i and Z_i the matching derivative labels. With all lam_i = 0 this is
ordinary least squares; the value-only path adds classic Tikhonov lam*I
instead. Both are solved through an SVD with a fixed relative cutoff, so
rank-deficient problems return the minimum-norm solution.

Basis inputs are affinely rescaled per coordinate to [-1, 1] over the
training range (monomials condition badly on raw market states); the model
stores the transform, chain-rules derivative labels through it, and can
express its coefficients in either space.
"""

import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigError, NumericalError

_SVD_CUTOFF = 1e-12


def _monomial_exponents(dim, degree):
    out = []
    for total in range(degree + 1):
        for comb in combinations_with_replacement(range(dim), total):
            e = [0] * dim
            for i in comb:
                e[i] += 1
            out.append(tuple(e))
    return tuple(out)


@dataclass(frozen=True)
class BasisSpec:
    """Monomial basis of all terms up to a max total degree.

    k = C(dim + degree, degree) functions, graded ordering, constant first;
    every derivative of a member is again a linear combination of members.
    """

    dim: int
    degree: int
    exponents: tuple = field(default=None)
    kind: str = "monomials"

    def __post_init__(self):
        if self.dim < 1 or self.degree < 0:
            raise ConfigError(f"basis needs dim >= 1 and degree >= 0, "
                              f"got dim={self.dim}, degree={self.degree}")
        if self.exponents is None:
            object.__setattr__(self, "exponents", _monomial_exponents(self.dim, self.degree))

    @property
    def k(self):
        return len(self.exponents)


def expand(basis, x):
    """Basis values phi(x): (k,) for a single point, (m, k) for rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != basis.dim:
        raise ConfigError(f"input dim {pts.shape[1]} != basis dim {basis.dim}")
    # powers[i][j] = x_i^j, shared across all basis columns
    powers = [np.vander(pts[:, i], basis.degree + 1, increasing=True)
              for i in range(basis.dim)]
    phi = np.empty((pts.shape[0], basis.k))
    for col, e in enumerate(basis.exponents):
        acc = powers[0][:, e[0]].copy()
        for i in range(1, basis.dim):
            if e[i]:
                acc *= powers[i][:, e[i]]
        phi[:, col] = acc
    return phi[0] if single else phi


def expand_derivs(basis, x):
    """All partial derivatives d(phi)/d(x_i): (k, d) single, (m, k, d) rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != basis.dim:
        raise ConfigError(f"input dim {pts.shape[1]} != basis dim {basis.dim}")
    powers = [np.vander(pts[:, i], basis.degree + 1, increasing=True)
              for i in range(basis.dim)]
    out = np.zeros((pts.shape[0], basis.k, basis.dim))
    for col, e in enumerate(basis.exponents):
        for i in range(basis.dim):
            if e[i] == 0:
                continue
            acc = np.full(pts.shape[0], float(e[i]))
            for j in range(basis.dim):
                p = e[j] - 1 if j == i else e[j]
                if p:
                    acc = acc * powers[j][:, p]
            out[:, col, i] = acc
    return out[0] if single else out


@dataclass(frozen=True)
class RegressionModel:
    """Fitted basis regression; beta lives in the rescaled input space."""

    basis: BasisSpec
    beta: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    regularization: str
    lam: float = 0.0
    lams: np.ndarray = None
    train_mse: float = float("nan")
    condition: float = float("nan")
    flags: tuple = field(default_factory=tuple)

    def _to_unit(self, x):
        a, b = _affine_coeffs(self.lo, self.hi)
        return np.asarray(x, dtype=float) * a + b

    def predict(self, x):
        """Value beta . phi(u(x)); scalar for a vector input, (m,) for rows."""
        phi = expand(self.basis, self._to_unit(x))
        out = phi @ self.beta
        return float(out) if np.ndim(out) == 0 else out

    def predict_grad(self, x):
        """Gradient of predict in original input coordinates."""
        a, _ = _affine_coeffs(self.lo, self.hi)
        dphi = expand_derivs(self.basis, self._to_unit(x))
        return (np.tensordot(dphi, self.beta, axes=([-2], [0]))) * a

    def coefficients(self):
        """beta expressed on raw input-space monomials (exact basis change)."""
        a, b = _affine_coeffs(self.lo, self.hi)
        exps = self.basis.exponents
        index = {e: i for i, e in enumerate(exps)}
        out = np.zeros(self.basis.k)
        for row, alpha in enumerate(exps):
            if self.beta[row] == 0.0:
                continue
            # (a x + b)^alpha expanded one coordinate at a time
            terms = {(): 1.0}
            for i, ai in enumerate(alpha):
                new = {}
                for gamma, coef in terms.items():
                    for gi in range(ai + 1):
                        c = coef * math.comb(ai, gi) * a[i] ** gi * b[i] ** (ai - gi)
                        if c != 0.0:
                            key = gamma + (gi,)
                            new[key] = new.get(key, 0.0) + c
                terms = new
            for gamma, coef in terms.items():
                out[index[gamma]] += self.beta[row] * coef
        return out

    def to_dict(self):
        return {
            "kind": self.basis.kind,
            "dim": self.basis.dim,
            "degree": self.basis.degree,
            "beta": self.beta.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "regularization": self.regularization,
            "lam": self.lam,
            "lams": None if self.lams is None else np.asarray(self.lams).tolist(),
            "train_mse": self.train_mse,
            "condition": self.condition,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            basis=BasisSpec(dim=int(d["dim"]), degree=int(d["degree"])),
            beta=np.asarray(d["beta"], dtype=float),
            lo=np.asarray(d["lo"], dtype=float),
            hi=np.asarray(d["hi"], dtype=float),
            regularization=str(d["regularization"]),
            lam=float(d["lam"]),
            lams=None if d.get("lams") is None else np.asarray(d["lams"], dtype=float),
            train_mse=float(d["train_mse"]),
            condition=float(d["condition"]),
            flags=tuple(d.get("flags", ())),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _affine_coeffs(lo, hi):
    """u = a x + b mapping [lo, hi] onto [-1, 1]; identity-width guard."""
    span = hi - lo
    a = np.where(span > 0.0, 2.0 / np.where(span > 0.0, span, 1.0), 1.0)
    b = np.where(span > 0.0, -(hi + lo) / np.where(span > 0.0, span, 1.0), -lo)
    return a, b


def _prepare(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ConfigError("x must be (m, d) and y (m,) with matching m")
    if x.shape[0] < 1:
        raise ConfigError("regression needs at least one example")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NumericalError("non-finite training data")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    a, b = _affine_coeffs(lo, hi)
    return x, y, lo, hi, a, b


def _solve_psd(a_mat, rhs):
    """SVD solve with relative cutoff; returns (beta, condition, cut_flag)."""
    u, s, vt = np.linalg.svd(a_mat, hermitian=True)
    keep = s > _SVD_CUTOFF * s[0] if s[0] > 0.0 else np.zeros_like(s, dtype=bool)
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    beta = vt.T @ (inv * (u.T @ rhs))
    cond = float(s[0] / s[keep][-1]) if keep.any() else float("inf")
    return beta, cond, bool((~keep).any())


def fit_value(x, y, basis, lam=0.0):
    """Least squares of y on phi(x), Tikhonov-regularized by lam >= 0."""
    if lam < 0.0:
        raise ConfigError(f"tikhonov lam must be >= 0, got {lam}")
    x, y, lo, hi, a, b = _prepare(x, y)
    if basis.dim != x.shape[1]:
        raise ConfigError(f"basis dim {basis.dim} != data dim {x.shape[1]}")
    m = x.shape[0]
    phi = expand(basis, x * a + b)
    c_phi = phi.T @ phi / m
    c_phiy = phi.T @ y / m
    beta, cond, cut = _solve_psd(c_phi + lam * np.eye(basis.k), c_phiy)
    flags = ("rank-deficient-pseudo-inverse",) if cut and lam == 0.0 else ()
    mse = float(np.mean((phi @ beta - y) ** 2))
    return RegressionModel(basis=basis, beta=beta, lo=lo, hi=hi,
                           regularization="tikhonov" if lam > 0.0 else "none",
                           lam=float(lam), train_mse=mse, condition=cond, flags=flags)


def fit_differential(x, y, z, basis, lams="auto"):
    """Regression on values and derivative labels jointly.

    Minimizes E[(phi beta - y)^2] + sum_i lam_i E[(phi'_i beta - z_i)^2].
    lams: "auto" balances the terms as E[y^2]/E[z_i^2] per coordinate
    (zero-risk coordinates get lam_i = 0, flagged), or an explicit vector.
    """
    x, y, lo, hi, a, b = _prepare(x, y)
    if basis.dim != x.shape[1]:
        raise ConfigError(f"basis dim {basis.dim} != data dim {x.shape[1]}")
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape != x.shape:
        raise ConfigError(f"derivative labels shape {z.shape} != states shape {x.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite derivative labels")
    m, d = x.shape
    zu = z / a  # labels in rescaled coordinates

    flags = []
    if isinstance(lams, str):
        if lams != "auto":
            raise ConfigError(f"lams must be 'auto' or a vector, got {lams!r}")
        ey2 = float(np.mean(y * y))
        ez2 = np.mean(zu * zu, axis=0)
        lam_vec = np.where(ez2 > 0.0, ey2 / np.where(ez2 > 0.0, ez2, 1.0), 0.0)
        if np.any(ez2 == 0.0):
            flags.append("zero-risk-coordinate")
    else:
        lam_vec = np.asarray(lams, dtype=float)
        if lam_vec.shape != (d,):
            raise ConfigError(f"lams must have shape ({d},), got {lam_vec.shape}")
        if np.any(lam_vec < 0.0):
            raise ConfigError("lams must be >= 0")

    phi = expand(basis, x * a + b)
    dphi = expand_derivs(basis, x * a + b)
    a_mat = phi.T @ phi / m
    rhs = phi.T @ y / m
    for i in range(d):
        if lam_vec[i] == 0.0:
            continue
        di = dphi[:, :, i]
        a_mat += lam_vec[i] * (di.T @ di) / m
        rhs += lam_vec[i] * (di.T @ zu[:, i]) / m
    beta, cond, cut = _solve_psd(a_mat, rhs)
    if cut:
        flags.append("rank-deficient-pseudo-inverse")
    mse = float(np.mean((phi @ beta - y) ** 2))
    return RegressionModel(basis=basis, beta=beta, lo=lo, hi=hi,
                           regularization="differential", lams=lam_vec,
                           train_mse=mse, condition=cond, flags=tuple(flags))
