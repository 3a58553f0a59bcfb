"""Least-square Monte-Carlo for Bermudan exercise.

Backward induction over the call dates: at each date a fresh training set
(state, discounted-future-cashflows, pathwise differential) is generated
under the policy already fitted for the later dates, the differentials are
compressed by PCA into a handful of features, and the continuation value
is regressed on those features (value and differential labels jointly).
Pricing then runs a plain forward simulation from time zero applying the
frozen policy with hard payoffs, which gives a conservative (lower-bound)
estimate with a reported standard error.

Differentials are taken with the exercise decisions held fixed. At an
optimal boundary continuation and intrinsic values match, so the ignored
boundary-movement term is second order.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import datagen, dimred
from . import instruments as ins
from . import models, regression, rng
from .errors import ConfigError

_DATE_TOL = 1e-9


@dataclass(frozen=True)
class DatePolicy:
    """One call date's fitted continuation estimator.

    The final call date carries no estimator: there the exercise rule is
    intrinsic > 0, because no later exercise opportunity exists.
    """

    date: float
    encoder: object = None
    model: object = None
    fitted_on_itm: bool = False
    flags: tuple = ()


@dataclass(frozen=True)
class ExercisePolicy:
    """Per-call-date continuation estimators; exercise iff in the money and
    intrinsic >= predicted continuation (the payoff code applies the rule)."""

    stages: tuple
    metadata: dict

    def __post_init__(self):
        lookup = {round(s.date, 9): s for s in self.stages}
        object.__setattr__(self, "_by_date", lookup)

    def stage_at(self, date):
        s = self._by_date.get(round(float(date), 9))
        if s is None:
            raise ConfigError(f"policy has no stage at call date {date}")
        return s

    def continuation(self, date, states):
        """Predicted continuation values, or None at the final date."""
        stage = self.stage_at(date)
        if stage.model is None:
            return None
        feats = stage.encoder.encode(np.atleast_2d(states))
        return stage.model.predict(feats)


def _call_dates(bermudan):
    dates = tuple(float(t) for t in bermudan.call_dates)
    if not dates:
        raise ConfigError("bermudan has no call dates")
    return dates


def _truncation_args(dim, tol, rel_tol):
    given = {k: v for k, v in (("dim", dim), ("tol", tol),
                               ("rel_tol", rel_tol)) if v is not None}
    if not given:
        return {"rel_tol": 0.01}
    if len(given) > 1:
        raise ConfigError("give at most one of dim, tol, rel_tol")
    return given


def _lams_for(lams, d):
    """Broadcast a scalar override to the fitted feature count."""
    if isinstance(lams, str) or np.ndim(lams) != 0:
        return lams
    return np.full(d, float(lams))


def _fit_stage(config, bermudan, t, date_index, m_train, seed, degree, mode,
               trunc, central, lams, partial_policy):
    """Training set at one call date, encoder on differentials, regression."""
    if mode not in ("classic", "differential"):
        raise ConfigError("policy features come from classic or differential "
                          f"PCA, got {mode!r}")
    ds = datagen.generate(config, bermudan, t, m_train, seed, smooth=True,
                          policy=partial_policy, key=(date_index,))
    intrinsic = ins.intrinsic_value(bermudan, config, t, ds.X)
    itm = intrinsic > 0.0
    flags = ()
    if itm.mean() >= 0.25:
        sel = itm
        fitted_on_itm = True
    else:
        sel = np.ones(ds.m, dtype=bool)
        fitted_on_itm = False
        flags += ("fit-on-all-paths",)
    x, y, z = ds.X[sel], ds.Y[sel], ds.Z[sel]
    rows = x if mode == "classic" else z
    enc = dimred.fit(mode, rows, central=central, **trunc)
    if enc.p == 0:
        # degenerate differentials (all mass truncated): keep one feature so
        # the regression still has a domain; labels decide what it predicts
        enc = dimred.fit(mode, rows, dim=1, central=central)
        flags += ("degenerate-differentials",)
    feats = enc.encode(x)
    sens = enc.feature_sensitivities(z)
    basis = regression.BasisSpec(dim=feats.shape[1], degree=degree)
    model = regression.fit_differential(feats, y, sens, basis,
                                        lams=_lams_for(lams, feats.shape[1]))
    return DatePolicy(date=t, encoder=enc, model=model,
                      fitted_on_itm=fitted_on_itm,
                      flags=flags + tuple(enc.flags) + tuple(model.flags)), ds


def _backward_stages(config, bermudan, m_train, seed, degree, mode, trunc,
                     central, lams, stop_index):
    """Stages for call dates with index >= stop_index, fitted backward."""
    dates = _call_dates(bermudan)
    stages = [DatePolicy(date=dates[-1])]
    for i in range(len(dates) - 2, stop_index - 1, -1):
        partial = ExercisePolicy(stages=tuple(stages), metadata={})
        stage, _ = _fit_stage(config, bermudan, dates[i], i, m_train, seed,
                              degree, mode, trunc, central, lams, partial)
        stages.append(stage)
    stages.reverse()
    return stages


def fit_policy(config, bermudan, m_train, seed, degree=3, mode="differential",
               dim=None, tol=None, rel_tol=None, central=False, lams="auto"):
    """Backward-induction fit of the exercise policy.

    Every call date except the last gets its own dataset (labels are the
    discounted cash-flows under the policy fitted so far), its own
    differential-PCA encoder, and its own joint value/differential
    regression. Truncation defaults to 1% relative eigenvalue mass.
    """
    ins.check_compatible(bermudan, config)
    if m_train < 1:
        raise ConfigError("m_train must be >= 1")
    trunc = _truncation_args(dim, tol, rel_tol)
    stages = _backward_stages(config, bermudan, m_train, seed, degree, mode,
                              trunc, central, lams, stop_index=0)
    meta = {"m_train": int(m_train), "seed": int(seed), "degree": int(degree),
            "mode": mode, "truncation": {k: float(v) for k, v in trunc.items()},
            "central": bool(central),
            "model_hash": datagen.dict_hash(config.to_dict()),
            "instrument_hash": datagen.dict_hash(ins.instrument_to_dict(bermudan))}
    return ExercisePolicy(stages=tuple(stages), metadata=meta)


def price_lower_bound(config, bermudan, policy, m_price, seed):
    """Forward simulation from time zero under the frozen policy.

    Hard (unsmoothed) payoffs; any suboptimality of the fitted policy can
    only lower the mean, so this estimates a lower bound on the true price.
    Returns (price, stderr). Use a seed disjoint from training.
    """
    ins.check_compatible(bermudan, config)
    if m_price < 1:
        raise ConfigError("m_price must be >= 1")
    x0 = models.simulate_states(config, 0.0, 1, seed)[0]
    y = np.empty(m_price)
    for lo in range(0, m_price, rng.BLOCK):
        hi = min(m_price, lo + rng.BLOCK)
        rec = ad.Recording()
        duals = rec.inputs([np.full(hi - lo, v) for v in x0])
        shocks = models.PhiloxShocks(seed, rng.PRICE, lo, hi - lo)
        out = ins.simulate_payoff(config, bermudan, 0.0, duals, shocks,
                                  policy=policy, smooth=False)
        vals = np.asarray(out.value, dtype=float)
        y[lo:hi] = vals if vals.ndim else np.full(hi - lo, float(vals))
    stderr = y.std(ddof=1) / math.sqrt(m_price) if m_price > 1 else 0.0
    return float(y.mean()), float(stderr)


STUDY_METHODS = ("value_raw", "value_pca", "diff_raw", "diff_pca")


def continuation_study(config, bermudan, date, m_train=8192, m_test=128,
                       seed=0, m_inner=4096, degree=3, dim=None, tol=None,
                       rel_tol=None, central=False, lams="auto",
                       inner_budget=datagen.DEFAULT_BUDGET):
    """Continuation-value fits at one call date, four ways, scored against
    the nested oracle on out-of-sample states.

    Methods: value-only vs joint value/differential regression, each on the
    raw state and on differential-PCA features. Report carries per-method
    RMSE and the scatter data (truth vs predictions).
    """
    ins.check_compatible(bermudan, config)
    dates = _call_dates(bermudan)
    hits = [i for i, t in enumerate(dates) if abs(t - date) <= _DATE_TOL]
    if not hits:
        raise ConfigError(f"{date} is not a call date of this instrument")
    d = hits[0]
    trunc = _truncation_args(dim, tol, rel_tol)
    stages = _backward_stages(config, bermudan, m_train, seed, degree, "differential",
                              trunc, central, lams, stop_index=d + 1)
    partial = ExercisePolicy(stages=tuple(stages), metadata={})

    t = dates[d]
    ds = datagen.generate(config, bermudan, t, m_train, seed, smooth=True,
                          policy=partial, key=(d,))
    enc = dimred.fit("differential", ds.Z, central=central, **trunc)
    if enc.p == 0:
        enc = dimred.fit("differential", ds.Z, dim=1, central=central)
    feats = enc.encode(ds.X)
    sens = enc.feature_sensitivities(ds.Z)
    raw_basis = regression.BasisSpec(dim=ds.n, degree=degree)
    pca_basis = regression.BasisSpec(dim=feats.shape[1], degree=degree)
    fits = {
        "value_raw": (regression.fit_value(ds.X, ds.Y, raw_basis), None),
        "value_pca": (regression.fit_value(feats, ds.Y, pca_basis), enc),
        "diff_raw": (regression.fit_differential(ds.X, ds.Y, ds.Z, raw_basis,
                                                 lams=_lams_for(lams, ds.n)),
                     None),
        "diff_pca": (regression.fit_differential(feats, ds.Y, sens, pca_basis,
                                                 lams=_lams_for(lams, feats.shape[1])),
                     enc),
    }

    oracle = datagen.nested_risk_reports(config, bermudan, t, m_test, m_inner,
                                         seed + 1, budget=inner_budget,
                                         smooth=True, policy=partial)
    preds, rmse = {}, {}
    for name, (model, e) in fits.items():
        xin = e.encode(oracle.X) if e is not None else oracle.X
        p = model.predict(xin)
        preds[name] = p
        rmse[name] = float(np.sqrt(np.mean((p - oracle.v) ** 2)))

    return {"date": float(t), "m_train": int(m_train), "m_test": int(m_test),
            "m_inner": int(m_inner), "degree": int(degree),
            "p": int(enc.p),
            "eigenvalues": enc.eigenvalues.tolist(),
            "encoder_flags": list(enc.flags),
            "rmse": rmse,
            "scatter": {"truth": oracle.v.tolist(),
                        "stderr_truth": oracle.stderr_v.tolist(),
                        "pred": {k: v.tolist() for k, v in preds.items()}}}
