"""Ensemble relaxation experiments and decay-rate estimation.

An ensemble of independent trajectories is started off equilibrium and the
mean of scalar observables is tracked in time.  The distance of each mean to
its equilibrium value is fitted by an exponential (or a sum of two, whose
slower rate is the asymptotic one) on the window where the signal is
resolved above the Monte Carlo noise, and a confidence interval for the rate
comes from resampling whole trajectories.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .dynamics import trajectory
from .errors import ConfigError, InsufficientSignalError, NumericalError
from .streams import as_generator, streams
from .tables import write_table

log = logging.getLogger(__name__)

MIN_MEMBERS = 100


@dataclass
class EnsembleStats:
    """Per-time means and standard errors of observables over ``M`` trajectories.

    ``members`` keeps the raw ``(n_times, M)`` series per observable, which is
    what the bootstrap in :func:`fit_rate` resamples.  ``reference`` holds the
    same series for an ensemble started at equilibrium and driven by identical
    noise increments, when one was run.
    """

    times: np.ndarray
    mean: dict
    stderr: dict
    M: int
    init_descr: str = ""
    members: dict = field(default=None, repr=False)
    reference: dict = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def observables(self):
        return list(self.mean)

    @classmethod
    def from_members(cls, times, members, init_descr="", reference=None):
        members = {k: np.asarray(v, float) for k, v in members.items()}
        m = next(iter(members.values())).shape[1]
        mean = {k: v.mean(axis=1) for k, v in members.items()}
        se = {k: v.std(axis=1, ddof=1) / math.sqrt(m) for k, v in members.items()}
        return cls(np.asarray(times, float), mean, se, m, init_descr, members, reference)

    def offset(self, observable):
        """Per-trajectory ``O(X_t) - O(Y_t)`` against the coupled reference."""
        if self.reference is None:
            raise ValueError("no coupled reference ensemble was run")
        return self.members[observable] - self.reference[observable]

    def rows(self):
        for i, t in enumerate(self.times):
            row = {"t": float(t)}
            for k in self.mean:
                row[k] = float(self.mean[k][i])
                row[f"{k}_stderr"] = float(self.stderr[k][i])
            yield row

    def long_rows(self):
        for k in self.mean:
            for i, t in enumerate(self.times):
                yield {"t": float(t), "observable": k, "mean": float(self.mean[k][i]),
                       "stderr": float(self.stderr[k][i]), "init": self.init_descr, "M": self.M}

    def to_csv(self, target):
        write_table(target, self.rows())

    def to_long_csv(self, target):
        write_table(target, self.long_rows())


def run_ensemble(init_sampler, stepper, cfg, observables, M, rng=None, init_descr="",
                 reference_sampler=None, min_members=MIN_MEMBERS):
    """Run ``M`` independent trajectories as one batch and collect statistics.

    ``init_sampler(rng, M)`` returns an ``(M, 2K+1)`` array of initial
    coefficients; ``stepper`` and ``cfg`` are as for
    :func:`nlsgibbs.dynamics.trajectory`.  The initial draw and the noise use
    separate streams split from ``rng``, so a fixed seed reproduces the
    statistics bit for bit.

    With ``reference_sampler`` (typically a draw from the invariant measure) a
    second ensemble is run with the same noise increments.  Its observables
    are stationary in law, so ``O(X_t) - O(Y_t)`` estimates the distance to
    equilibrium without bias and, because the coupled pairs contract, with a
    much smaller variance than ``O(X_t)`` minus a fixed equilibrium mean.
    """
    if M < min_members:
        raise ConfigError(f"ensemble needs at least {min_members} trajectories, got {M}")
    seed = int(as_generator(rng).integers(2**63))
    init_rng, dyn_rng, ref_rng = streams(seed, 3)
    series = _run(init_sampler(init_rng, M), M, stepper, cfg, observables, dyn_rng)
    reference = None
    if reference_sampler is not None:
        # a fresh copy of the dynamics stream gives identical increments
        _, dyn_again, _ = streams(seed, 3)
        _, reference = _run(reference_sampler(ref_rng, M), M, stepper, cfg, observables, dyn_again)
    times, members = series
    return EnsembleStats.from_members(times, members, init_descr, reference)


def _run(init, M, stepper, cfg, observables, rng):
    init = np.asarray(init)
    if init.ndim != 2 or init.shape[0] != M:
        raise ConfigError(f"initial sampler returned shape {init.shape}, expected ({M}, 2K+1)")
    tr = trajectory(init, stepper, cfg, observables, rng)
    return tr.t, {k: np.asarray(v, float).reshape(len(tr.t), M) for k, v in tr.series.items()}


@dataclass(frozen=True)
class RateFit:
    """Exponential decay fit ``mean(t) - eq ~ A exp(-rate (t - t_min))``.

    With ``model == "double"`` a second, faster exponential with rate
    ``fast_rate`` was fitted alongside; ``rate`` and ``amplitude`` then refer
    to the slow term.
    """

    observable: str
    rate: float
    rate_ci: tuple
    amplitude: float
    r_squared: float
    window: tuple
    n_points: int
    init_descr: str = ""
    model: str = "single"
    fast_rate: float = float("nan")

    def row(self):
        return {"observable": self.observable, "init": self.init_descr, "model": self.model, "rate": self.rate,
                "ci_low": self.rate_ci[0], "ci_high": self.rate_ci[1], "amplitude": self.amplitude,
                "fast_rate": self.fast_rate, "r_squared": self.r_squared, "t_min": self.window[0],
                "t_max": self.window[1], "n_points": self.n_points}


def write_fits(target, fits):
    write_table(target, [f.row() for f in fits])


def _equilibrium(eq):
    eq = np.asarray(eq, float)
    if eq.ndim == 0:
        return float(eq), 0.0, None
    return float(eq.mean()), float(eq.std(ddof=1) / math.sqrt(eq.size)), eq


def select_window(times, signal, noise, start_frac=0.5, min_points=5, start_level=None):
    """Indices ``[i0, i1)`` of the fit window.

    The window opens at the first point after the peak of ``|signal|`` where
    ``|signal| <= start_level`` or, without a level, where it has fallen to
    ``start_frac`` of the peak; this drops the initial far-from-equilibrium
    transient.  It closes at the first later point where
    ``|signal| <= 3 noise``.
    """
    mag = np.abs(signal)
    resolved = mag > 3 * noise
    if not resolved.any():
        raise InsufficientSignalError("signal never exceeds 3 standard errors")
    peak = int(np.argmax(np.where(resolved, mag, -np.inf)))
    level = start_frac * mag[peak] if start_level is None else start_level
    after = np.nonzero(mag[peak:] <= level)[0]
    if not after.size:
        raise InsufficientSignalError("signal never enters the fit window")
    i0 = peak + int(after[0])
    lost = np.nonzero(~resolved[i0:])[0]
    i1 = i0 + int(lost[0]) if lost.size else len(times)
    if i1 - i0 < min_points:
        raise InsufficientSignalError(
            f"only {i1 - i0} resolved points in the fit window (need {min_points})")
    return i0, i1


def _fit_exponential(t, y, sigma, guess=None):
    """Least-squares ``y = A exp(-g t)`` with ``y > 0`` mostly; returns ``(A, g)``."""
    if guess is None:
        pos = y > 0
        if pos.sum() >= 2:
            w = (y[pos] / sigma[pos]) ** 2
            slope, icept = np.polyfit(t[pos], np.log(y[pos]), 1, w=np.sqrt(w))
            guess = (math.exp(icept), max(-slope, 1e-6))
        else:
            guess = (max(float(y[0]), 1e-12), 1.0)
    model = lambda tt, a, g: a * np.exp(-g * tt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", optimize.OptimizeWarning)
        popt, _ = optimize.curve_fit(model, t, y, p0=guess, sigma=sigma, absolute_sigma=True, maxfev=5000)
    return float(popt[0]), float(popt[1])


def _fit_double(t, y, sigma, guess=None):
    """``y = a1 exp(-g1 t) + a2 exp(-g2 t)`` with ``g2 >= g1``; returns ``(a1, g1, a2, g2)``."""
    if guess is None:
        h = len(t) // 2
        a_s, g_s = _fit_exponential(t[h:], y[h:], sigma[h:])
        g_s = max(g_s, 1e-6)
        guess = (a_s, g_s, y[0] - a_s, 3 * g_s)
    a1, g1, a2, g2 = guess
    p0 = (a1, max(g1, 1e-9), a2, max(g2 - g1, 1e-9))
    model = lambda tt, a, g, b, d: a * np.exp(-g * tt) + b * np.exp(-(g + d) * tt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", optimize.OptimizeWarning)
        popt, _ = optimize.curve_fit(model, t, y, p0=p0, sigma=sigma, absolute_sigma=True, maxfev=20000,
                                     bounds=([-np.inf, 0, -np.inf, 0], np.inf))
    a, g, b, d = (float(v) for v in popt)
    return a, g, b, g + d


def _select_model(t, y, sigma, level):
    """``"double"`` when the extra exponential lowers chi-square significantly (F test)."""
    one = _fit_exponential(t, y, sigma)
    try:
        two = _fit_double(t, y, sigma)
    except (RuntimeError, ValueError):
        return "single"
    c1 = float(np.sum(((y - _predict(one, t)) / sigma) ** 2))
    c2 = float(np.sum(((y - _predict(two, t)) / sigma) ** 2))
    dof = len(t) - 4
    if c2 <= 0 or dof < 1:
        return "single"
    F = ((c1 - c2) / 2) / (c2 / dof)
    return "double" if stats.f.sf(F, 2, dof) < level else "single"


def _predict(params, t):
    if len(params) == 2:
        return params[0] * np.exp(-params[1] * t)
    a, g, b, g2 = params
    return a * np.exp(-g * t) + b * np.exp(-g2 * t)


def fit_rate(stats_, observable, equilibrium, n_boot=400, level=0.95, rng=None, start_frac=0.5,
             linear_response=1.0, window=None, min_points=5, model="single", f_level=0.01):
    """Fit the exponential approach of ``observable`` to equilibrium.

    ``equilibrium`` is a number, an array of equilibrium samples, or the
    string ``"coupled"`` to use the coupled reference ensemble.  With samples
    or the reference, the equilibrium spread sets the start of the window:
    it opens once the offset is below ``linear_response`` equilibrium
    standard deviations (the regime where a single exponential is expected).
    With a number it opens at ``start_frac`` of the peak offset.  The window
    closes where the offset is no longer resolved at 3 standard errors.
    ``window`` overrides the automatic choice of ``(i0, i1)``.  The rate
    interval resamples whole trajectories (and equilibrium samples).

    ``model="double"`` fits two exponentials and reports the slower rate,
    which is the asymptotic one.  Use it when the approach is visibly
    multi-exponential, e.g. a fast transient on top of a slow tail; a single
    exponential then reports an effective rate that depends on the window.
    ``model="auto"`` picks between the two with a nested-model F test at
    level ``f_level``.
    """
    if model not in ("single", "double", "auto"):
        raise ValueError(f"model must be 'single', 'double' or 'auto', got {model!r}")
    if stats_.members is None:
        raise ValueError("bootstrap needs the per-trajectory series")
    t = stats_.times
    eq_samples = None
    if isinstance(equilibrium, str):
        if equilibrium != "coupled":
            raise ValueError(f"unknown equilibrium spec {equilibrium!r}")
        X = stats_.offset(observable)
        d = X.mean(axis=1)
        noise = X.std(axis=1, ddof=1) / math.sqrt(X.shape[1])
        eq_sd = float(stats_.reference[observable].std(ddof=1))
        eq_mean = 0.0
    else:
        eq_mean, eq_se, eq_samples = _equilibrium(equilibrium)
        X = stats_.members[observable]
        d = stats_.mean[observable] - eq_mean
        noise = np.sqrt(stats_.stderr[observable] ** 2 + eq_se**2)
        eq_sd = None if eq_samples is None else float(eq_samples.std(ddof=1))
    if window is None:
        start_level = None if eq_sd is None or linear_response is None else linear_response * eq_sd
        window = select_window(t, d, noise, start_frac, min_points, start_level)
    i0, i1 = window
    sign = 1.0 if d[i0] >= 0 else -1.0
    tt = t[i0:i1] - t[i0]
    sig = np.maximum(noise[i0:i1], 1e-15 * np.max(np.abs(d[i0:i1])))
    y = sign * d[i0:i1]
    n = i1 - i0
    if model == "double" and n < min_points + 2:
        raise InsufficientSignalError(f"two-exponential fit needs at least {min_points + 2} points")
    try:
        if model == "auto":
            model = _select_model(tt, y, sig, f_level) if n >= min_points + 2 else "single"
        fitter = _fit_exponential if model == "single" else _fit_double
        best = fitter(tt, y, sig)
    except RuntimeError as e:
        raise NumericalError(f"rate fit failed for {observable}: {e}") from e
    amp, rate = best[0], best[1]
    resid = y - _predict(best, tt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    r2 = min(max(r2, 0.0), 1.0)

    gen = as_generator(rng)
    Xw = X[i0:i1]
    M = Xw.shape[1]
    boot = []
    for _ in range(n_boot):
        idx = gen.integers(0, M, M)
        eq_b = eq_mean if eq_samples is None else float(eq_samples[gen.integers(0, eq_samples.size, eq_samples.size)].mean())
        yb = sign * (Xw[:, idx].mean(axis=1) - eq_b)
        try:
            boot.append(fitter(tt, yb, sig, guess=best)[1])
        except (RuntimeError, ValueError):
            continue
    if len(boot) < 0.9 * n_boot:
        raise NumericalError(f"bootstrap fits failed for {observable}: {n_boot - len(boot)} of {n_boot}")
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    if not lo <= rate <= hi:
        log.warning("%s: point estimate %.4g outside bootstrap interval [%.4g, %.4g]; widening", observable, rate, lo, hi)
        lo, hi = min(lo, rate), max(hi, rate)
    fast = best[3] if model == "double" else float("nan")
    return RateFit(observable, rate, (float(lo), float(hi)), sign * amp, r2,
                   (float(t[i0]), float(t[i1 - 1])), i1 - i0, stats_.init_descr, model, fast)


def cis_overlap(a, b):
    return a.rate_ci[0] <= b.rate_ci[1] and b.rate_ci[0] <= a.rate_ci[1]


def equilibrium_test(samples_a, samples_b, observable=None, min_size=50):
    """Two-sample Kolmogorov-Smirnov test on a scalar observable.

    ``observable`` maps a batch of fields to one number per field; when it is
    None the inputs are already scalar samples.  Returns ``(statistic, p)``.
    """
    a = np.asarray(samples_a if observable is None else observable(np.asarray(samples_a)), float).ravel()
    b = np.asarray(samples_b if observable is None else observable(np.asarray(samples_b)), float).ravel()
    if min(a.size, b.size) < min_size:
        log.warning("KS test with %d vs %d samples has little power", a.size, b.size)
    res = stats.ks_2samp(a, b)
    return float(res.statistic), float(res.pvalue)


def mode_power(k, K):
    """Observable ``|X_k|**2`` for the mode with wavenumber ``k``."""
    j = k + K
    return lambda c: c[..., j].real ** 2 + c[..., j].imag ** 2


def ou_power_rate(params, noise, k):
    """Relaxation rate of ``E|X_k|**2`` for the free flow: ``beta sigma_k**2 omega~_k``."""
    j = k + params.K
    return float(params.beta * noise.sigma2[j] * params.omega_tilde[j])


__all__ = [
    "EnsembleStats",
    "RateFit",
    "run_ensemble",
    "select_window",
    "fit_rate",
    "write_fits",
    "cis_overlap",
    "equilibrium_test",
    "mode_power",
    "ou_power_rate",
]
