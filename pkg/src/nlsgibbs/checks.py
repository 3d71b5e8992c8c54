"""Registry of quick invariant checks, grouped by suite.

Each check returns a statistic that is compared with a threshold; the
comparison direction is part of the registration.  The checks are small
enough to run in seconds and are what ``nlsgibbs verify`` reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dynamics as dyn
from . import field as fld
from . import measures as ms
from . import operators as ops
from .streams import stream

SUITES = ("field", "measures", "dynamics", "operators")


@dataclass(frozen=True)
class Check:
    name: str
    suite: str
    func: Callable
    threshold: float
    upper: bool = True  # pass when statistic <= threshold, else >=
    description: str = ""

    def run(self, seed, threshold=None):
        thr = self.threshold if threshold is None else float(threshold)
        stat = float(self.func(seed))
        ok = stat <= thr if self.upper else stat >= thr
        return {"suite": self.suite, "name": self.name, "statistic": stat, "threshold": thr,
                "comparison": "<=" if self.upper else ">=", "pass": bool(ok)}


REGISTRY: list[Check] = []


def register(suite, threshold, upper=True, description=""):
    def deco(f):
        REGISTRY.append(Check(f.__name__, suite, f, threshold, upper, description))
        return f

    return deco


def _fields(rng, n, K):
    k = np.arange(-K, K + 1)
    amp = rng.uniform(0.2, 3.0, (n, 1)) / (1.0 + np.abs(k)) ** rng.uniform(0.5, 2.0, (n, 1))
    return amp * (rng.standard_normal((n, 2 * K + 1)) + 1j * rng.standard_normal((n, 2 * K + 1)))


# -------------------------------------------------------------------- field


@register("field", 1e-10, description="coefficient norm equals grid quadrature")
def parseval(seed):
    c = _fields(stream(seed, 0), 200, 16)
    L = 1.3
    v = fld.to_grid(c, L, 64)
    quad = np.sum(np.abs(v) ** 2, axis=-1) * L / 64
    return np.max(np.abs(quad / fld.l2_norm_sq(c) - 1))


@register("field", 0, description="sup-norm bound via Holder seminorm, violations over 3x1000 fields")
def sup_norm_bound(seed):
    rng = stream(seed, 1)
    L, M = 1.7, 128
    c = _fields(rng, 1000, 12)
    n2 = np.sqrt(fld.l2_norm_sq(c))
    lhs = fld.sup_norm(c, M, L)
    bad = 0
    for a in (0.25, 0.4, 0.45):
        hol = fld.holder_seminorm(c, a, M, L)
        rhs = n2 / math.sqrt(L) + 2 * n2 ** (2 * a / (2 * a + 1)) * hol ** (1 / (2 * a + 1))
        bad += int(np.sum(lhs > rhs * (1 + 1e-12)))
    return bad


@register("field", 0, description="||phi||_4^4 <= N ||phi||_inf^2, violations over 1000 fields")
def interpolation_bound(seed):
    c = _fields(stream(seed, 2), 1000, 12)
    L, M = 0.8, 64
    lp = fld.lp_norm_p(c, 4, L, M)
    return int(np.sum(lp > fld.l2_norm_sq(c) * fld.sup_norm(c, M, L) ** 2 * (1 + 1e-12)))


@register("field", 1e-12, description="norms scale homogeneously under phi -> a phi")
def homogeneity(seed):
    rng = stream(seed, 3)
    c = _fields(rng, 50, 6)
    a = complex(*rng.uniform(-3, 3, 2))
    s = abs(a)
    errs = [
        fld.l2_norm_sq(a * c) / (s**2 * fld.l2_norm_sq(c)) - 1,
        fld.lp_norm_p(a * c, 4, 1.0) / (s**4 * fld.lp_norm_p(c, 4, 1.0)) - 1,
        fld.sobolev_norm_sq(a * c, 0.3, 1.0, 1.0) / (s**2 * fld.sobolev_norm_sq(c, 0.3, 1.0, 1.0)) - 1,
    ]
    return float(np.max(np.abs(errs)))


@register("field", 1e-6, description="energy gradient against central differences, 20 directions")
def gradient_fd(seed):
    rng = stream(seed, 4)
    p = fld.ModelParams(L=1.3, m=0.9, lam=0.7, kappa=0.3, r=10, p=4, K=8)
    c = 0.5 * _fields(rng, 1, 8)[0]
    g = fld.grad_effective_energy(c, p)
    g = g.coeffs if hasattr(g, "coeffs") else g
    worst, h = 0.0, 1e-5
    for _ in range(20):
        d = rng.standard_normal(17) + 1j * rng.standard_normal(17)
        d /= np.linalg.norm(d)
        fd = (fld.effective_energy(c + h * d, p) - fld.effective_energy(c - h * d, p)) / (2 * h)
        an = float(np.real(np.vdot(g, d)))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-3 * np.linalg.norm(g)))
    return worst


# ----------------------------------------------------------------- measures


@register("measures", 0.01, upper=False, description="chi-square p-value of free mode variances")
def free_mode_variance(seed):
    from scipy import stats

    p = fld.ModelParams(K=8)
    c = ms.sample_free(stream(seed, 10), p, 20_000)
    n = c.shape[0]
    # 2 n |c_k|^2 theta_k is chi-square with 2n degrees of freedom
    s = 2 * n * np.mean(np.abs(c) ** 2, axis=0) * p.theta / 2
    pv = 2 * np.minimum(stats.chi2.cdf(s, 2 * n), stats.chi2.sf(s, 2 * n))
    return float(min(1.0, pv.min() * pv.size))


@register("measures", 4.0, description="characteristic function of N against empirical, max z")
def characteristic_function(seed):
    p = fld.ModelParams(K=8)
    n = fld.l2_norm_sq(ms.sample_free(stream(seed, 11), p, 20_000))
    worst = 0.0
    for xi in (0.5, 1.0, 2.0):
        e = np.exp(1j * xi * n)
        exact = ms.char_product(xi, law=p)
        se = math.sqrt((np.var(e.real) + np.var(e.imag)) / n.size)
        worst = max(worst, abs(e.mean() - exact) / se)
    return worst


@register("measures", 4.0, description="detailed balance of logged pCN proposals, max z")
def pcn_detailed_balance(seed):
    p = fld.ModelParams(K=8, lam=0.5, kappa=1.0, r=10)
    cfg = ms.ChainConfig(n_chains=128, burn_in=600, n_keep=8, thin=20, log_proposals=True)
    res = ms.sample_ggc(stream(seed, 12), p, cfg)
    return ms.balance_check(res.state.proposal_log)


@register("measures", 0.5, description="jackknife error ratio se(1e5)/se(1e4) of the GGC partition estimate")
def integrability_error_shrinks(seed):
    p = fld.ModelParams(K=32, lam=0.5, kappa=1.0, r=10)
    a = ms.estimate_log_partition(p, 10_000, stream(seed, 13))
    b = ms.estimate_log_partition(p, 100_000, stream(seed, 14))
    return b.stderr / a.stderr


# ----------------------------------------------------------------- dynamics


@register("dynamics", 1e-12, description="relative mass drift of split-step NLS over 1000 steps")
def nls_mass(seed):
    p = fld.ModelParams(K=16, lam=1.0, L=2 * np.pi)
    c = ms.sample_free(stream(seed, 20), p, 1)[0]
    n0 = fld.l2_norm_sq(c)
    for _ in range(1000):
        c = dyn.nls_step(c, 1e-3, p)
    return abs(fld.l2_norm_sq(c) / n0 - 1)


@register("dynamics", 0.3, description="|log2(error ratio) - 2| for dt halving")
def strang_order(seed):
    p = fld.ModelParams(K=8, lam=1.0, L=2 * np.pi)
    x = np.arange(-8, 9)
    c0 = 0.8 * np.exp(-0.3 * (x - 2) ** 2).astype(complex)
    T = 0.5

    def run(dt):
        c = c0.copy()
        for _ in range(int(round(T / dt))):
            c = dyn.nls_step(c, dt, p)
        return c

    ref = run(0.05 / 16)
    e1 = np.linalg.norm(run(0.05) - ref)
    e2 = np.linalg.norm(run(0.025) - ref)
    return abs(math.log2(e1 / e2) - 2)


@register("dynamics", 4.0, description="free flow stationary E|X_k|^2 against 2/theta_k, max z")
def ou_stationary(seed):
    p = fld.ModelParams(K=4)
    nz = dyn.make_noise(p)
    rng = stream(seed, 21)
    c = ms.sample_free(rng, p, 4000)
    for _ in range(200):
        c = dyn.ggc_sde_step(c, 1e-2, rng, p, nz)
    m2 = np.abs(c) ** 2
    z = (m2.mean(axis=0) - 2 / p.theta) / (m2.std(axis=0) / math.sqrt(m2.shape[0]))
    return float(np.max(np.abs(z)))


@register("dynamics", 0.01, upper=False, description="KS p-value, GGC endpoints vs fresh draws (min over N, L4)")
def ggc_invariance(seed):
    p = fld.ModelParams(K=8, lam=0.5, kappa=1.0, r=10)
    nz = dyn.make_noise(p)
    cfg = ms.ChainConfig(n_chains=400, burn_in=1000, n_keep=1, thin=20)
    a = ms.sample_ggc(stream(seed, 22), p, cfg).samples
    b = ms.sample_ggc(stream(seed, 23), p, cfg).samples
    rng = stream(seed, 24)
    for _ in range(500):
        a = dyn.ggc_sde_step(a, 2e-3, rng, p, nz)
    pn = ms.ks_2samp(fld.l2_norm_sq(a), fld.l2_norm_sq(b))[1]
    p4 = ms.ks_2samp(fld.lp_norm_p(a, 4, p.L), fld.lp_norm_p(b, 4, p.L))[1]
    return min(pn, p4)


@register("dynamics", 1e-12, description="canonical flow: max relative |N - n| over 1000 steps")
def canonical_sphere(seed):
    p = fld.ModelParams(K=8, lam=0.5)
    nz = dyn.make_noise(p)
    rng = stream(seed, 25)
    c = ms.sample_free(rng, p, 16)
    n = fld.l2_norm_sq(c)
    worst = 0.0
    for _ in range(1000):
        c = dyn.canonical_sde_step(c, 1e-3, rng, p, nz, n)
        worst = max(worst, float(np.max(np.abs(fld.l2_norm_sq(c) / n - 1))))
    return worst


# ---------------------------------------------------------------- operators


@register("operators", 1e-10, description="trace product against occupation-number sum")
def trace_product(seed):
    spec = ops.FreeOperatorSpec([1.0, 0.5], 0.47, paired=False)
    direct = ops.trace_free_bruteforce(1.0, spec.real_rates, 60)
    return abs(ops.trace_free(1.0, spec) / direct - 1)


@register("operators", 0.0, upper=False, description="min over t of (trace bound - trace) / trace")
def golden_thompson(seed):
    m = ops.FdModel(n_modes=1, r=2, s=0.47, hermite_cut=30)
    return min((ops.fd_golden_thompson(m, t) - ops.fd_trace(m, t)) / ops.fd_trace(m, t) for t in (0.5, 1.0, 2.0))


@register("operators", 1e-12, description="max relative excess of entropy over C_LS times Dirichlet energy")
def gaussian_lsi(seed):
    rng = stream(seed, 30)
    m = ops.FdModel(n_modes=1, nu=(0.8, 0.5), s=0.47, r=2)
    worst = -np.inf
    for _ in range(50):
        ent, rhs = ops.gaussian_lsi_check(m, rng.standard_normal(2))
        worst = max(worst, (ent - rhs) / rhs)
    return worst


@register("operators", 1e-5, description="closed-form H0 V against finite differences, max rel. error")
def effective_potential_fd(seed):
    rng = stream(seed, 31)
    p = fld.ModelParams(K=8, lam=1.0, kappa=1e-3, r=10)
    nz = dyn.make_noise(p)
    worst = 0.0
    for _ in range(3):
        c = ms.sample_free(rng, p, 1)[0]
        a = ops.h0_potential(c, p, nz)
        worst = max(worst, abs(ops.h0_finite_difference(c, p, nz) / a - 1))
    return worst


@register("operators", 3.0, description="ground-state transform identity, |mean difference| / stderr")
def unitary_transform(seed):
    m = ops.FdModel(n_modes=1, nu=(1.0, 0.6), s=0.47, r=2, lam=0.5, v_scale=0.3)
    h = np.array([0.8, -0.5])
    diff, se = ops.fd_dirichlet_check(
        m, lambda x: np.sin(x @ h), lambda x: np.cos(x @ h)[:, None] * h, 100_000, stream(seed, 32))
    return abs(diff) / se


def checks_for(suites):
    suites = SUITES if suites in (None, "all") else ([suites] if isinstance(suites, str) else list(suites))
    for s in suites:
        if s not in SUITES:
            raise KeyError(s)
    return [c for c in REGISTRY if c.suite in suites]


def run_checks(suites="all", seed=0, thresholds=None):
    """Run the registered checks and return one report row per check."""
    thresholds = thresholds or {}
    return [c.run(seed, thresholds.get(c.name)) for c in checks_for(suites)]


__all__ = ["Check", "REGISTRY", "SUITES", "checks_for", "run_checks"]
