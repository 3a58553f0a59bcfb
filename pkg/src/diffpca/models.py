"""Risk-neutral market simulators.

Two simulation segments per example share one model but differ in purpose:
the pre-exposure segment draws the state X at the exposure date T with plain
vectorized numpy (nothing to differentiate), and the post-exposure segment
evolves X to the cash-flow dates ON a differentiation tape, so the payoff's
gradient with respect to X is one reverse sweep away.

Equity models use exact Gaussian transitions (lognormal or normal dynamics
with Cholesky-correlated shocks). The rate model is a Gaussian (normal-vol)
discrete-forward model under the spot measure: forward j accrues over
[t_j, t_(j+1)], fixes at t_j, and drifts by

    mu_j(t) = sum_(i alive, i <= j) delta_i (lam_j . lam_i) / (1 + delta_i F_i)

which makes deflated bond prices martingales; stepping is Euler with
substeps capped at 0.25y and aligned to tenor dates. The same discretization
runs on and off tape, so both segments draw from exactly the same law.

Randomness comes from ShockSource objects; the default PhiloxShocks keys
every panel by (seed, lane, tags, step, block) so path i's numbers never
depend on batch size or scheduling. ReplayShocks and TeeShocks support
bump-and-replay checks against finite differences.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng
from .errors import ConfigError

_DATE_TOL = 1e-9
_MAX_STEP = 0.25

DYNAMICS = ("lognormal", "normal")


# ------------------------------------------------------------- shock sources

class PhiloxShocks:
    """Draws (count, width) standard-normal panels for path rows
    [offset, offset + count); an internal step counter advances per call so
    successive requests are independent."""

    def __init__(self, seed, lane, offset, count, key=()):
        self.seed = int(seed)
        self.lane = int(lane)
        self.offset = int(offset)
        self.count = int(count)
        self.key = tuple(int(k) for k in key)
        self._step = 0

    def normals(self, width):
        z = rng.draw_normals(self.seed, self.lane, (*self.key, self._step),
                             self.offset, self.count, width)
        self._step += 1
        return z


class ReplayShocks:
    """Feeds back previously captured panels, in order."""

    def __init__(self, panels):
        self._panels = list(panels)
        self._i = 0

    def normals(self, width):
        if self._i >= len(self._panels):
            raise ConfigError("replay exhausted: more shocks requested than captured")
        z = self._panels[self._i]
        if z.shape[1] != width:
            raise ConfigError(f"replayed panel width {z.shape[1]} != requested {width}")
        self._i += 1
        return z


class TeeShocks:
    """Passes panels through from another source while keeping copies."""

    def __init__(self, inner):
        self.inner = inner
        self.captured = []

    def normals(self, width):
        z = self.inner.normals(width)
        self.captured.append(z.copy())
        return z


# ------------------------------------------------------------- equity models

@dataclass(frozen=True)
class EquityModelConfig:
    """Correlated single-step Gaussian assets, lognormal or normal dynamics."""

    spots: np.ndarray
    vols: np.ndarray
    correlation: np.ndarray
    dynamics: str = "lognormal"
    rate: float = 0.0

    def __post_init__(self):
        spots = np.atleast_1d(np.asarray(self.spots, dtype=float))
        vols = np.atleast_1d(np.asarray(self.vols, dtype=float))
        corr = np.atleast_2d(np.asarray(self.correlation, dtype=float))
        object.__setattr__(self, "spots", spots)
        object.__setattr__(self, "vols", vols)
        object.__setattr__(self, "correlation", corr)
        object.__setattr__(self, "rate", float(self.rate))
        n = spots.shape[0]
        if vols.shape != (n,) or corr.shape != (n, n):
            raise ConfigError("spots, vols, correlation dimensions disagree")
        if self.dynamics not in DYNAMICS:
            raise ConfigError(f"dynamics must be one of {DYNAMICS}, got {self.dynamics!r}")
        if not np.all(np.isfinite(spots)) or not np.all(np.isfinite(vols)):
            raise ConfigError("spots and vols must be finite")
        if np.any(vols < 0.0):
            raise ConfigError("vols must be >= 0")
        if self.dynamics == "lognormal" and np.any(spots <= 0.0):
            raise ConfigError("lognormal dynamics needs spots > 0")
        if np.max(np.abs(corr - corr.T)) > 1e-12:
            raise ConfigError("correlation must be symmetric")
        if np.max(np.abs(np.diag(corr) - 1.0)) > 1e-12:
            raise ConfigError("correlation must have unit diagonal")
        try:
            chol = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            try:
                chol = np.linalg.cholesky(corr + 1e-12 * np.eye(n))
            except np.linalg.LinAlgError:
                raise ConfigError("correlation is not positive semi-definite") from None
        object.__setattr__(self, "_chol", chol)

    @property
    def n_assets(self):
        return self.spots.shape[0]

    def chol(self):
        return self._chol

    def to_dict(self):
        return {"kind": "equity", "spots": self.spots.tolist(),
                "vols": self.vols.tolist(), "correlation": self.correlation.tolist(),
                "dynamics": self.dynamics, "rate": self.rate}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.pop("kind", "equity") != "equity":
            raise ConfigError("not an equity model config")
        known = {"spots", "vols", "correlation", "dynamics", "rate"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown equity model fields: {sorted(unknown)}")
        missing = {"spots", "vols", "correlation"} - set(d)
        if missing:
            raise ConfigError(f"missing equity model fields: {sorted(missing)}")
        return cls(spots=d["spots"], vols=d["vols"], correlation=d["correlation"],
                   dynamics=d.get("dynamics", "lognormal"), rate=d.get("rate", 0.0))


def _normal_step_scale(r, dt):
    """Stdev multiplier for dS = r S dt + sigma dW over dt (exact transition)."""
    if abs(r) < 1e-12:
        return math.sqrt(dt)
    return math.sqrt((math.exp(2.0 * r * dt) - 1.0) / (2.0 * r))


# ---------------------------------------------------------------- rate model

@dataclass(frozen=True)
class RateModelConfig:
    """Gaussian discrete-forward curve under the spot measure.

    tenor_grid t_0 < ... < t_N defines N forwards; forward i accrues over
    [t_i, t_(i+1)] and fixes at t_i. The numeraire is the discrete bank
    account rolling over tenor dates at the fixed forwards. loadings row i
    is forward i's normal-vol factor exposure (units per sqrt-year).
    """

    tenor_grid: np.ndarray
    initial_forwards: np.ndarray
    n_factors: int
    loadings: np.ndarray
    measure: str = "spot"

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.tenor_grid, dtype=float))
        fwd = np.atleast_1d(np.asarray(self.initial_forwards, dtype=float))
        lam = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        object.__setattr__(self, "tenor_grid", grid)
        object.__setattr__(self, "initial_forwards", fwd)
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "n_factors", int(self.n_factors))
        if grid.shape[0] < 2 or np.any(np.diff(grid) <= 0.0) or grid[0] < 0.0:
            raise ConfigError("tenor_grid must be >= 0 and strictly increasing, len >= 2")
        n = grid.shape[0] - 1
        if fwd.shape != (n,):
            raise ConfigError(f"initial_forwards must have {n} entries, got {fwd.shape}")
        if lam.shape != (n, self.n_factors):
            raise ConfigError(f"loadings must be ({n}, {self.n_factors}), got {lam.shape}")
        if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(fwd)):
            raise ConfigError("loadings and initial_forwards must be finite")
        if np.any(np.sum(lam * lam, axis=1) <= 0.0):
            raise ConfigError("each forward needs positive total variance")
        if self.measure != "spot":
            raise ConfigError(f"only the spot measure is supported, got {self.measure!r}")
        object.__setattr__(self, "_cross", lam @ lam.T)
        object.__setattr__(self, "_deltas", np.diff(grid))

    @property
    def n_forwards(self):
        return self.tenor_grid.shape[0] - 1

    def deltas(self):
        return self._deltas

    def cross(self):
        return self._cross

    def live(self, t):
        """Indices of forwards not yet fixed strictly before t (a forward
        fixing exactly at t is part of the t-state)."""
        return [i for i in range(self.n_forwards)
                if self.tenor_grid[i] >= t - _DATE_TOL]

    def date_index(self, t):
        hits = np.where(np.abs(self.tenor_grid - t) <= _DATE_TOL)[0]
        if hits.size != 1:
            raise ConfigError(f"{t} is not a tenor date")
        return int(hits[0])

    def zero_coupon(self, k):
        """P(0, t_k) off the initial curve (unit discount before t_0)."""
        return float(np.prod(1.0 / (1.0 + self._deltas[:k] * self.initial_forwards[:k])))

    def to_dict(self):
        return {"kind": "rate", "tenor_grid": self.tenor_grid.tolist(),
                "initial_forwards": self.initial_forwards.tolist(),
                "n_factors": self.n_factors, "loadings": self.loadings.tolist(),
                "measure": self.measure}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.pop("kind", "rate") != "rate":
            raise ConfigError("not a rate model config")
        known = {"tenor_grid", "initial_forwards", "n_factors", "loadings", "measure"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown rate model fields: {sorted(unknown)}")
        missing = {"tenor_grid", "initial_forwards", "n_factors", "loadings"} - set(d)
        if missing:
            raise ConfigError(f"missing rate model fields: {sorted(missing)}")
        return cls(tenor_grid=d["tenor_grid"], initial_forwards=d["initial_forwards"],
                   n_factors=d["n_factors"], loadings=d["loadings"],
                   measure=d.get("measure", "spot"))


def five_factor_loadings(tenor_grid, n_factors=5, scale=0.01):
    """Parametric factor loadings over the curve's fixing times: level,
    slope, curvature, and two short-end humps, with decaying factor sizes."""
    grid = np.asarray(tenor_grid, dtype=float)
    if n_factors < 1 or n_factors > 5:
        raise ConfigError("five_factor_loadings supports 1 to 5 factors")
    if grid.ndim != 1 or grid.shape[0] < 2:
        raise ConfigError("tenor_grid needs at least 2 dates")
    t = grid[:-1]
    span = t[-1] - t[0] if t[-1] > t[0] else 1.0
    x = (t - t[0]) / span
    hump1 = x * np.exp(-3.0 * x)
    hump2 = x * np.exp(-8.0 * x)
    cols = [np.ones_like(x),
            2.0 * x - 1.0,
            2.0 * (2.0 * x - 1.0) ** 2 - 1.0,
            hump1 / max(hump1.max(), 1e-12),
            hump2 / max(hump2.max(), 1e-12)]
    weights = np.array([1.0, 0.5, 0.25, 0.2, 0.15]) * scale
    lam = np.column_stack(cols[:n_factors]) * weights[:n_factors]
    return lam


# ------------------------------------------------------------- off-tape sims

def _refined_steps(a, b, interior_dates):
    """Step endpoints from a to b: every interior date hit exactly, every
    piece split so steps never exceed the cap."""
    bounds = [a] + [float(t) for t in interior_dates if a + _DATE_TOL < t < b - _DATE_TOL] + [b]
    out = []
    for s, e in zip(bounds[:-1], bounds[1:]):
        k = max(1, math.ceil((e - s) / _MAX_STEP - 1e-12))
        out.extend(s + (e - s) * (j + 1) / k for j in range(k))
    return out


def simulate_states(config, T, m, seed, lane=rng.STATE, key=(), offset=0):
    """m independent draws of the exposure-date state, shape (m, n).

    Equity state: the asset vector at T. Rate state: the live forwards at T
    (a forward fixing exactly at T included). Not recorded on any tape.
    Row r is draw offset + r of the (seed, lane, key) stream, so batches
    can be produced block by block.
    """
    if T < 0.0:
        raise ConfigError("exposure date must be >= 0")
    if m < 1:
        raise ConfigError("m must be >= 1")
    if isinstance(config, EquityModelConfig):
        n = config.n_assets
        if T == 0.0:
            return np.tile(config.spots, (m, 1))
        z = rng.draw_normals(seed, lane, (*key, 0), offset, m, n)
        shock = z @ config.chol().T
        if config.dynamics == "lognormal":
            drift = (config.rate - 0.5 * config.vols ** 2) * T
            return config.spots * np.exp(drift + config.vols * math.sqrt(T) * shock)
        sc = _normal_step_scale(config.rate, T)
        return config.spots * math.exp(config.rate * T) + config.vols * sc * shock
    if isinstance(config, RateModelConfig):
        return _rate_states(config, T, m, seed, lane, key, offset)
    raise ConfigError(f"unknown model config type {type(config).__name__}")


def simulate_to_exposure(config, T, seed, row=0):
    """One state draw: row `row` of the deterministic batch."""
    return simulate_states(config, T, row + 1, seed)[row]


def _rate_drift_matrix(config, alive):
    """W with drift = u @ W.T restricted to alive forwards: W[j, i] =
    delta_i (lam_j . lam_i) for alive i <= j, else 0."""
    n = config.n_forwards
    w = np.zeros((n, n))
    alive_idx = np.asarray(alive, dtype=int)
    for j in alive_idx:
        cols = alive_idx[alive_idx <= j]
        w[j, cols] = config.deltas()[cols] * config.cross()[j, cols]
    return w


def _rate_states(config, T, m, seed, lane, key, offset=0):
    grid = config.tenor_grid
    deltas = config.deltas()
    lam = config.loadings
    f = np.tile(config.initial_forwards, (m, 1))
    if T > 0.0:
        s = 0.0
        sub = 0
        for e in _refined_steps(0.0, T, grid):
            alive = [i for i in range(config.n_forwards) if grid[i] > s + _DATE_TOL]
            if not alive:
                break
            dt = e - s
            w = _rate_drift_matrix(config, alive)
            u = 1.0 / (1.0 + deltas * f)
            drift = u @ w.T
            z = rng.draw_normals(seed, lane, (*key, sub), offset, m, config.n_factors)
            f[:, alive] += drift[:, alive] * dt + math.sqrt(dt) * (z @ lam[alive].T)
            s = e
            sub += 1
    return f[:, config.live(T)]


# -------------------------------------------------------------- on-tape sims

class EquityPath:
    """Post-exposure asset evolution on a tape; dates requested ascending."""

    def __init__(self, config, recording, x_duals, T, shocks):
        if len(x_duals) != config.n_assets:
            raise ConfigError(f"expected {config.n_assets} state duals, got {len(x_duals)}")
        self.config = config
        self.recording = recording
        self.t0 = float(T)
        self.t = float(T)
        self.assets = list(x_duals)
        self._shocks = shocks

    def assets_at(self, t):
        if t < self.t - _DATE_TOL:
            raise ConfigError("path dates must be requested in ascending order")
        if t > self.t + _DATE_TOL:
            cfg = self.config
            dt = t - self.t
            shock = self._shocks.normals(cfg.n_assets) @ cfg.chol().T
            if cfg.dynamics == "lognormal":
                sq = math.sqrt(dt)
                for i in range(cfg.n_assets):
                    growth = np.exp((cfg.rate - 0.5 * cfg.vols[i] ** 2) * dt
                                    + cfg.vols[i] * sq * shock[:, i])
                    self.assets[i] = self.assets[i] * growth
            else:
                g = math.exp(cfg.rate * dt)
                sc = _normal_step_scale(cfg.rate, dt)
                for i in range(cfg.n_assets):
                    self.assets[i] = ad.lincomb([g], [self.assets[i]],
                                                const=cfg.vols[i] * sc * shock[:, i])
            self.t = t
        return self.assets

    def discount(self, t):
        """Deterministic-rate discount factor from t back to the path start."""
        return math.exp(-self.config.rate * (t - self.t0))


class RatePath:
    """Post-exposure forward-curve evolution on a tape.

    Evolves the live curve from T through every tenor date up to `horizon`,
    recording each forward's fixing as it happens. Curve snapshots (duals
    for every then-live forward) are kept at the requested dates. Discount
    factors back to T come from the rolling numeraire, so they are duals of
    the fixings they roll over.
    """

    def __init__(self, config, recording, x_duals, T, horizon, shocks,
                 snapshot_dates=()):
        grid = config.tenor_grid
        live = config.live(T)
        if len(x_duals) != len(live):
            raise ConfigError(f"expected {len(live)} state duals, got {len(x_duals)}")
        if T > grid[0] + _DATE_TOL:
            config.date_index(T)  # exposure inside the grid must sit on it
        self.config = config
        self.recording = recording
        self.t0 = float(T)
        self._cur = dict(zip(live, x_duals))
        self._fixings = {}
        self._u = {}
        self._disc = {}
        self._snapshots = {}
        want = sorted(float(t) for t in snapshot_dates)
        for t in want:
            if t < T - _DATE_TOL or t > horizon + _DATE_TOL:
                raise ConfigError(f"snapshot date {t} outside [T, horizon]")
            config.date_index(t)

        def _on_date(d):
            for i in live:
                if abs(grid[i] - d) <= _DATE_TOL:
                    self._fixings[i] = self._cur[i]
            for t in want:
                if abs(t - d) <= _DATE_TOL:
                    alive_now = [i for i in live if grid[i] >= d - _DATE_TOL]
                    self._snapshots[round(t, 9)] = (alive_now,
                                                    [self._cur[i] for i in alive_now])

        _on_date(T)
        s = T
        sub = 0
        for d in grid:
            if d <= T + _DATE_TOL or d > horizon + _DATE_TOL:
                continue
            sub = self._evolve_segment(s, float(d), shocks, sub)
            s = float(d)
            _on_date(s)

    def _evolve_segment(self, a, b, shocks, sub):
        cfg = self.config
        grid = cfg.tenor_grid
        deltas = cfg.deltas()
        cross = cfg.cross()
        lam = cfg.loadings
        alive = sorted(i for i in self._cur if grid[i] > a + _DATE_TOL)
        if not alive:
            return sub
        s = a
        for e in _refined_steps(a, b, ()):
            dt = e - s
            noise = math.sqrt(dt) * (shocks.normals(cfg.n_factors) @ lam[alive].T)
            u = {i: 1.0 / ad.lincomb([deltas[i]], [self._cur[i]], const=1.0)
                 for i in alive}
            for col, j in enumerate(alive):
                lower = [i for i in alive if i <= j]
                drift = ad.lincomb([deltas[i] * cross[j, i] for i in lower],
                                   [u[i] for i in lower])
                self._cur[j] = ad.lincomb([1.0, dt], [self._cur[j], drift],
                                          const=noise[:, col])
            s = e
            sub += 1
        return sub

    def fixing(self, j):
        """F_j(t_j) as recorded when the forward fixed (t_j >= T)."""
        if j not in self._fixings:
            raise ConfigError(f"forward {j} has no recorded fixing on this path")
        return self._fixings[j]

    def _u_at_fixing(self, j):
        if j not in self._u:
            w = ad.lincomb([self.config.deltas()[j]], [self.fixing(j)], const=1.0)
            self._u[j] = 1.0 / w
        return self._u[j]

    def discount_to(self, k):
        """D(T -> t_k): the inverse numeraire ratio, rolling every fixed
        period between T and t_k."""
        grid = self.config.tenor_grid
        if grid[k] < self.t0 - _DATE_TOL:
            raise ConfigError("cannot discount to a date before the path start")
        if k not in self._disc:
            d = 1.0
            for j in range(k):
                if grid[j] >= self.t0 - _DATE_TOL:
                    d = self._u_at_fixing(j) * d
            self._disc[k] = d
        return self._disc[k]

    def curve_at(self, t):
        """(live indices, duals) of the curve at a snapshot date."""
        key = round(float(t), 9)
        if key not in self._snapshots:
            raise ConfigError(f"no snapshot was requested at {t}")
        return self._snapshots[key]


def tape_path(config, recording, x_duals, T, shocks, horizon=None,
              snapshot_dates=()):
    """Start the post-exposure tape simulation from registered state duals."""
    if isinstance(config, EquityModelConfig):
        return EquityPath(config, recording, x_duals, T, shocks)
    if isinstance(config, RateModelConfig):
        if horizon is None:
            raise ConfigError("rate paths need an explicit horizon")
        return RatePath(config, recording, x_duals, T, horizon, shocks,
                        snapshot_dates=snapshot_dates)
    raise ConfigError(f"unknown model config type {type(config).__name__}")


def state_dim(config, T):
    if isinstance(config, EquityModelConfig):
        return config.n_assets
    if isinstance(config, RateModelConfig):
        return len(config.live(T))
    raise ConfigError(f"unknown model config type {type(config).__name__}")


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "equity":
        return EquityModelConfig.from_dict(d)
    if kind == "rate":
        return RateModelConfig.from_dict(d)
    raise ConfigError(f"model config kind must be 'equity' or 'rate', got {kind!r}")


# ------------------------------------------------- curve arithmetic (values)

def curve_discounts(config, curve, alive, at_idx):
    """Plain-value discount factors P(t, t_k)/P(t, t_at) for k > at_idx,
    straight off a curve snapshot. curve: (m, n_alive) values aligned with
    `alive`. Returns dict k -> (m,) for k = at_idx+1 .. last+1."""
    curve = np.atleast_2d(np.asarray(curve, dtype=float))
    pos = {i: c for c, i in enumerate(alive)}
    deltas = config.deltas()
    out = {}
    acc = np.ones(curve.shape[0])
    k = at_idx
    while k in pos:
        acc = acc / (1.0 + deltas[k] * curve[:, pos[k]])
        out[k + 1] = acc.copy()
        k += 1
    return out


def swap_value(config, curve, alive, start_idx, end_idx, fixed_rate):
    """Receiver-swap PV per unit notional at t_(start_idx), plain values:
    sum of delta_j (K - F_j) P(t_start, t_(j+1)) over j in [start, end)."""
    curve = np.atleast_2d(np.asarray(curve, dtype=float))
    pos = {i: c for c, i in enumerate(alive)}
    deltas = config.deltas()
    disc = curve_discounts(config, curve, alive, start_idx)
    pv = np.zeros(curve.shape[0])
    for j in range(start_idx, end_idx):
        if j not in pos:
            raise ConfigError(f"forward {j} is not live in the snapshot")
        pv += deltas[j] * (fixed_rate - curve[:, pos[j]]) * disc[j + 1]
    return pv


def swap_rate(config, curve, alive, start_idx, end_idx):
    """Par swap rate over [t_start, t_end) off a curve snapshot (values)."""
    curve = np.atleast_2d(np.asarray(curve, dtype=float))
    pos = {i: c for c, i in enumerate(alive)}
    deltas = config.deltas()
    disc = curve_discounts(config, curve, alive, start_idx)
    annuity = np.zeros(curve.shape[0])
    floating = np.zeros(curve.shape[0])
    for j in range(start_idx, end_idx):
        annuity += deltas[j] * disc[j + 1]
        floating += deltas[j] * curve[:, pos[j]] * disc[j + 1]
    return floating / annuity
