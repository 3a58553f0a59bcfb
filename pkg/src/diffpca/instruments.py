"""Payoff definitions: cash-flow schedules evaluated on tape-simulated paths.

Every instrument turns a path into one DualScalar, the sum of its post-
exposure cash flows discounted back to the path start. Option kinks go
through smooth_max with a per-instrument width so pathwise differentials
have well-defined conditional expectations (hard payoffs are available for
pricing via smooth=False). Callable instruments take an exercise policy;
the exercise decision is computed from plain forward values and enters the
tape as a constant per-path indicator, so differentiation holds the policy
fixed (the standard pathwise argument, first-order exact at an optimal
boundary).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InstrumentModelMismatch
from .models import (EquityModelConfig, RateModelConfig, swap_value,
                     tape_path)

_DATE_TOL = 1e-9


def _default_width(scale):
    return max(0.05 * abs(scale), 0.05)


# ----------------------------------------------------------------- contracts

@dataclass(frozen=True)
class ForwardContract:
    """Pays S_maturity - strike on one asset; the simplest linear payoff."""

    maturity: float
    asset: int = 0
    strike: float = 0.0

    def __post_init__(self):
        if self.maturity <= 0.0:
            raise ConfigError("maturity must be > 0")


@dataclass(frozen=True)
class BasketCall:
    """Call on a fixed-weight basket: max(w . S - K, 0) at maturity."""

    weights: np.ndarray
    strike: float
    maturity: float
    width: float = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", w)
        if not np.all(np.isfinite(w)) or np.all(w == 0.0):
            raise ConfigError("weights must be finite and not all zero")
        if self.maturity <= 0.0:
            raise ConfigError("maturity must be > 0")
        if self.width is None:
            object.__setattr__(self, "width", _default_width(self.strike))
        if not self.width > 0.0:
            raise ConfigError("smoothing width must be > 0")


@dataclass(frozen=True)
class SpreadCall:
    """Call on the spread of two assets: max(S_2 - S_1 - K, 0) at maturity."""

    strike: float
    maturity: float
    width: float = None

    def __post_init__(self):
        if self.maturity <= 0.0:
            raise ConfigError("maturity must be > 0")
        if self.width is None:
            object.__setattr__(self, "width", _default_width(self.strike))
        if not self.width > 0.0:
            raise ConfigError("smoothing width must be > 0")


@dataclass(frozen=True)
class DeltaHedgedCall:
    """Basket call minus a static forward hedge fixed at inception.

    hedge_ratio: units of basket forward (scalar), or per-asset forward
    units (vector). The hedge's pathwise gradient is the same for every
    path under normal dynamics, which is exactly what central PCA removes.
    """

    strike: float
    maturity: float
    hedge_ratio: object = 0.0
    weights: np.ndarray = None
    width: float = None

    def __post_init__(self):
        if self.maturity <= 0.0:
            raise ConfigError("maturity must be > 0")
        if self.width is None:
            object.__setattr__(self, "width", _default_width(self.strike))
        if not self.width > 0.0:
            raise ConfigError("smoothing width must be > 0")

    def hedge_vector(self, n_assets):
        w = self.basket_weights(n_assets)
        h = np.asarray(self.hedge_ratio, dtype=float)
        if h.ndim == 0:
            return float(h) * w
        if h.shape != (n_assets,):
            raise ConfigError(f"hedge_ratio must be scalar or length {n_assets}")
        return h

    def basket_weights(self, n_assets):
        if self.weights is None:
            w = np.zeros(n_assets)
            w[0] = 1.0
            return w
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.shape != (n_assets,):
            raise ConfigError(f"weights must have length {n_assets}")
        return w


@dataclass(frozen=True)
class BermudanPut:
    """Equity put exercisable at a fixed set of call dates (single asset)."""

    strike: float
    call_dates: tuple
    asset: int = 0

    def __post_init__(self):
        dates = tuple(float(t) for t in self.call_dates)
        object.__setattr__(self, "call_dates", dates)
        if len(dates) < 1 or any(b - a <= 0.0 for a, b in zip(dates, dates[1:])):
            raise ConfigError("call dates must be non-empty and strictly increasing")
        if self.strike <= 0.0:
            raise ConfigError("put strike must be > 0")


@dataclass(frozen=True)
class BermudanReceiver:
    """Receiver swaption exercisable into the remaining swap at call dates.

    Exercising at call date t_c receives fixed_rate and pays the floating
    fixings over [t_c, final_maturity]; all dates must be tenor dates.
    """

    call_dates: tuple
    fixed_rate: float
    final_maturity: float

    def __post_init__(self):
        dates = tuple(float(t) for t in self.call_dates)
        object.__setattr__(self, "call_dates", dates)
        if len(dates) < 1 or any(b - a <= 0.0 for a, b in zip(dates, dates[1:])):
            raise ConfigError("call dates must be non-empty and strictly increasing")
        if dates[-1] >= self.final_maturity:
            raise ConfigError("call dates must precede final maturity")


@dataclass(frozen=True)
class EuropeanSwaption:
    """Receiver swaption: max(swap PV, 0) at expiry on [expiry, expiry+tenor]."""

    expiry: float
    tenor: float
    strike: float
    width: float = None

    def __post_init__(self):
        if self.expiry < 0.0 or self.tenor <= 0.0:
            raise ConfigError("expiry must be >= 0 and tenor > 0")
        if self.width is None:
            object.__setattr__(self, "width", max(0.05 * abs(self.strike), 1e-4))
        if not self.width > 0.0:
            raise ConfigError("smoothing width must be > 0")

    @property
    def maturity(self):
        return self.expiry + self.tenor


EQUITY_INSTRUMENTS = (ForwardContract, BasketCall, SpreadCall, DeltaHedgedCall,
                      BermudanPut)
RATE_INSTRUMENTS = (BermudanReceiver, EuropeanSwaption)


def instrument_from_dict(d):
    d = dict(d)
    kinds = {"forward": ForwardContract, "basket_call": BasketCall,
             "spread_call": SpreadCall, "delta_hedged_call": DeltaHedgedCall,
             "bermudan_put": BermudanPut, "bermudan_receiver": BermudanReceiver,
             "european_swaption": EuropeanSwaption}
    kind = d.pop("kind", None)
    if kind not in kinds:
        raise ConfigError(f"instrument kind must be one of {sorted(kinds)}, got {kind!r}")
    cls = kinds[kind]
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(f"unknown {kind} fields: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} config: {exc}") from None


def instrument_to_dict(instr):
    names = {ForwardContract: "forward", BasketCall: "basket_call",
             SpreadCall: "spread_call", DeltaHedgedCall: "delta_hedged_call",
             BermudanPut: "bermudan_put", BermudanReceiver: "bermudan_receiver",
             EuropeanSwaption: "european_swaption"}
    out = {"kind": names[type(instr)]}
    for f in instr.__dataclass_fields__:
        v = getattr(instr, f)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[f] = v
    return out


# -------------------------------------------------------------- compatibility

def check_compatible(instrument, config):
    """Typed failure when an instrument is priced on the wrong model kind."""
    if isinstance(instrument, EQUITY_INSTRUMENTS):
        if not isinstance(config, EquityModelConfig):
            raise InstrumentModelMismatch(
                f"{type(instrument).__name__} needs an equity model, "
                f"got {type(config).__name__}")
        if isinstance(instrument, SpreadCall) and config.n_assets != 2:
            raise InstrumentModelMismatch("SpreadCall needs exactly 2 assets")
        if isinstance(instrument, BasketCall) and \
                instrument.weights.shape != (config.n_assets,):
            raise InstrumentModelMismatch(
                f"basket weights {instrument.weights.shape} != "
                f"n_assets {config.n_assets}")
        if isinstance(instrument, (ForwardContract, BermudanPut)) and \
                not 0 <= instrument.asset < config.n_assets:
            raise InstrumentModelMismatch("asset index out of range")
        if isinstance(instrument, DeltaHedgedCall):
            instrument.basket_weights(config.n_assets)
            instrument.hedge_vector(config.n_assets)
    elif isinstance(instrument, RATE_INSTRUMENTS):
        if not isinstance(config, RateModelConfig):
            raise InstrumentModelMismatch(
                f"{type(instrument).__name__} needs a rate model, "
                f"got {type(config).__name__}")
        if isinstance(instrument, BermudanReceiver):
            for t in (*instrument.call_dates, instrument.final_maturity):
                config.date_index(t)
        else:
            config.date_index(instrument.expiry)
            config.date_index(instrument.maturity)
    else:
        raise ConfigError(f"unknown instrument type {type(instrument).__name__}")


def maturity_of(instrument):
    """Last cash-flow date."""
    if isinstance(instrument, BermudanPut):
        return instrument.call_dates[-1]
    if isinstance(instrument, BermudanReceiver):
        return instrument.final_maturity
    return instrument.maturity


def horizon_of(instrument, config):
    """Last date the path simulation must reach: the final fixing needed.

    Swap PVs at a decision date come from the curve snapshot there, so the
    simulation never has to run past the last exercise opportunity for a
    European, or past the final coupon fixing for a Bermudan.
    """
    if isinstance(instrument, BermudanReceiver):
        return config.tenor_grid[config.date_index(instrument.final_maturity) - 1]
    if isinstance(instrument, EuropeanSwaption):
        return instrument.expiry
    return maturity_of(instrument)


def snapshot_dates_of(instrument, T):
    """Dates where callable decisions (hence curve snapshots) are needed."""
    if isinstance(instrument, BermudanReceiver):
        return tuple(t for t in instrument.call_dates if t > T + _DATE_TOL)
    if isinstance(instrument, EuropeanSwaption):
        return (instrument.expiry,) if instrument.expiry >= T - _DATE_TOL else ()
    return ()


# ------------------------------------------------------------------ payoffs

def _soft_plus(x_dual, width, smooth):
    """max(x, 0) with the chosen kink treatment."""
    if smooth:
        return ad.smooth_max(x_dual, 0.0, width)
    return ad.select(x_dual.value > 0.0, x_dual, 0.0)


def cashflows(instrument, path, policy=None, smooth=True, decisions=None,
              record_decisions=None):
    """Discounted-to-start payoff of the instrument on one simulated path.

    `decisions` replays previously captured exercise masks (for bump-and-
    replay derivative checks); `record_decisions`, a list, captures
    (date, mask) pairs as they are made.
    """
    if isinstance(instrument, ForwardContract):
        s = path.assets_at(instrument.maturity)[instrument.asset]
        return (s - instrument.strike) * path.discount(instrument.maturity)

    if isinstance(instrument, BasketCall):
        assets = path.assets_at(instrument.maturity)
        basket = ad.lincomb(list(instrument.weights), assets)
        return _soft_plus(basket - instrument.strike, instrument.width, smooth) \
            * path.discount(instrument.maturity)

    if isinstance(instrument, SpreadCall):
        assets = path.assets_at(instrument.maturity)
        spread = ad.lincomb([-1.0, 1.0], assets)
        return _soft_plus(spread - instrument.strike, instrument.width, smooth) \
            * path.discount(instrument.maturity)

    if isinstance(instrument, DeltaHedgedCall):
        cfg = path.config
        assets = path.assets_at(instrument.maturity)
        w = instrument.basket_weights(cfg.n_assets)
        h = instrument.hedge_vector(cfg.n_assets)
        basket = ad.lincomb(list(w), assets)
        opt = _soft_plus(basket - instrument.strike, instrument.width, smooth)
        # forward struck at the inception forward price: zero initial value
        f0 = cfg.spots * math.exp(cfg.rate * instrument.maturity)
        hedge = ad.lincomb(list(h), assets, const=-float(h @ f0))
        return (opt - hedge) * path.discount(instrument.maturity)

    if isinstance(instrument, BermudanPut):
        return _bermudan_put_flows(instrument, path, policy, decisions,
                                   record_decisions)

    if isinstance(instrument, BermudanReceiver):
        return _bermudan_receiver_flows(instrument, path, policy, decisions,
                                        record_decisions)

    if isinstance(instrument, EuropeanSwaption):
        return _european_swaption_flow(instrument, path, smooth)

    raise ConfigError(f"unknown instrument type {type(instrument).__name__}")


def intrinsic_value(instrument, config, t, states):
    """Exercise payoff at call date t, per state row, plain values.

    `states` is the (m, n) state matrix at t: asset prices for equity
    instruments, the live forward curve for rate instruments.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if isinstance(instrument, BermudanPut):
        return instrument.strike - states[:, instrument.asset]
    if isinstance(instrument, BermudanReceiver):
        start = config.date_index(t)
        end = config.date_index(instrument.final_maturity)
        return swap_value(config, states, config.live(t), start, end,
                          instrument.fixed_rate)
    raise ConfigError(f"{type(instrument).__name__} has no exercise right")


def _decide(intrinsic, continuation):
    """Exercise iff in the money and intrinsic beats predicted continuation."""
    if continuation is None:
        return intrinsic > 0.0
    return (intrinsic > 0.0) & (intrinsic >= continuation)


def _lookup_decision(decisions, date):
    for d, mask in decisions:
        if abs(d - date) <= _DATE_TOL:
            return mask
    raise ConfigError(f"no replayed decision for call date {date}")


def _bermudan_put_flows(instr, path, policy, decisions, record_decisions):
    dates = [t for t in instr.call_dates if t > path.t0 + _DATE_TOL]
    zero = path.assets[instr.asset] * 0.0
    if not dates:
        return zero
    if policy is None and decisions is None and len(dates) > 1:
        raise ConfigError("multiple open call dates need an exercise policy")
    cfg = path.config
    alive = None
    total = zero
    for t in dates:
        assets = path.assets_at(t)
        s = assets[instr.asset]
        states = np.column_stack([np.atleast_1d(a.value) for a in assets])
        if alive is None:
            alive = np.ones(states.shape[0], dtype=bool)
        if decisions is not None:
            decide = _lookup_decision(decisions, t)
        else:
            intrinsic = intrinsic_value(instr, cfg, t, states)
            cont = None if abs(t - dates[-1]) <= _DATE_TOL \
                else policy.continuation(t, states)
            decide = _decide(intrinsic, cont)
        ex_now = alive & decide
        if record_decisions is not None:
            record_decisions.append((t, ex_now.copy()))
        flow = ad.select(ex_now, (instr.strike - s) * path.discount(t), 0.0)
        total = total + flow
        alive = alive & ~decide
    return total


def _bermudan_receiver_flows(instr, path, policy, decisions, record_decisions):
    cfg = path.config
    grid = cfg.tenor_grid
    call_idx = [cfg.date_index(t) for t in instr.call_dates
                if t > path.t0 + _DATE_TOL]
    end_idx = cfg.date_index(instr.final_maturity)
    zero = next(iter(path._cur.values())) * 0.0
    if not call_idx:
        return zero
    if policy is None and decisions is None and len(call_idx) > 1:
        raise ConfigError("multiple open call dates need an exercise policy")
    alive = None
    masks = []  # (call index, exercised-now mask)
    for k in call_idx:
        t = float(grid[k])
        alive_ind, duals = path.curve_at(t)
        curve_vals = np.column_stack([np.atleast_1d(d.value) for d in duals])
        if alive is None:
            alive = np.ones(curve_vals.shape[0], dtype=bool)
        if decisions is not None:
            decide = _lookup_decision(decisions, t)
        else:
            intrinsic = intrinsic_value(instr, cfg, t, curve_vals)
            cont = None if k == call_idx[-1] else policy.continuation(t, curve_vals)
            decide = _decide(intrinsic, cont)
        ex_now = alive & decide
        if record_decisions is not None:
            record_decisions.append((t, ex_now.copy()))
        masks.append((k, ex_now))
        alive = alive & ~decide
    total = zero
    deltas = cfg.deltas()
    for j in range(call_idx[0], end_idx):
        received = np.zeros(masks[0][1].shape, dtype=bool)
        for k, mask in masks:
            if k <= j:
                received |= mask
        if not received.any():
            continue
        coupon = ad.lincomb([-deltas[j]], [path.fixing(j)],
                            const=deltas[j] * instr.fixed_rate)
        flow = ad.select(received, coupon * path.discount_to(j + 1), 0.0)
        total = total + flow
    return total


def _european_swaption_flow(instr, path, smooth):
    cfg = path.config
    if instr.expiry < path.t0 - _DATE_TOL:
        return next(iter(path._cur.values())) * 0.0
    e_idx = cfg.date_index(instr.expiry)
    end_idx = cfg.date_index(instr.maturity)
    alive_ind, duals = path.curve_at(instr.expiry)
    pos = {i: c for c, i in enumerate(alive_ind)}
    deltas = cfg.deltas()
    # on-tape curve discounts within the swap, then the PV of the fixed-for-
    # floating exchange, then the optionality kink, then discount to start
    acc = None
    pv = None
    for j in range(e_idx, end_idx):
        f_j = duals[pos[j]]
        u_j = 1.0 / ad.lincomb([deltas[j]], [f_j], const=1.0)
        acc = u_j if acc is None else acc * u_j
        coupon = ad.lincomb([-deltas[j]], [f_j], const=deltas[j] * instr.strike)
        term = coupon * acc
        pv = term if pv is None else pv + term
    payoff = _soft_plus(pv, instr.width, smooth)
    return payoff * path.discount_to(e_idx)


def simulate_payoff(config, instrument, T, x_duals, shocks, policy=None,
                    smooth=True, decisions=None, record_decisions=None):
    """Evolve registered state duals through the instrument's dates and
    return the discounted payoff dual; gradient wrt the state is then one
    reverse sweep on the recording."""
    check_compatible(instrument, config)
    rec = x_duals[0].recording
    path = tape_path(config, rec, x_duals, T, shocks,
                     horizon=horizon_of(instrument, config),
                     snapshot_dates=snapshot_dates_of(instrument, T))
    return cashflows(instrument, path, policy=policy, smooth=smooth,
                     decisions=decisions, record_decisions=record_decisions)
