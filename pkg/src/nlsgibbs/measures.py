"""Gaussian reference measure, conditioned measures and grand-canonical sampling.

The reference measure has independent Fourier modes; the real and imaginary
parts of ``c_k`` are centred Gaussians of variance ``1/theta_k`` with
``theta_k = beta * ((2 pi k / L)**2 + m**2)``.  Everything else here is
built on top of exact draws from it: Metropolis chains with preconditioned
Crank-Nicolson proposals, importance sampling of partition functions, and
numerical inversion of the characteristic function of ``N = ||phi||**2``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError, StuckChainError, ToleranceError
from .field import ModelParams, SpectralField, l2_norm_sq, lp_norm_p
from .streams import as_generator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModeLaw:
    """Per-mode precisions ``theta_k`` of the reference Gaussian, ``nu_k = 1/theta_k``."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.array(self.theta, dtype=float)
        if t.ndim != 1 or not np.all(t > 0):
            raise ValueError("theta must be a 1-D array of positive numbers")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @property
    def nu(self):
        return 1.0 / self.theta

    @property
    def mean_N(self):
        return float(np.sum(2.0 / self.theta))

    @property
    def var_N(self):
        return float(np.sum(4.0 / self.theta**2))


def mode_law(params):
    return ModeLaw(params.theta)


def _law(obj):
    if isinstance(obj, ModeLaw):
        return obj
    if isinstance(obj, ModelParams):
        return mode_law(obj)
    return ModeLaw(obj)


def sample_free(rng, params, size=None):
    """Exact draw(s) from the truncated reference Gaussian.

    Returns a :class:`SpectralField` when ``size`` is None, otherwise an array
    of shape ``(size, 2K+1)``.
    """
    rng = as_generator(rng)
    law = _law(params)
    shape = (law.theta.size,) if size is None else (size, law.theta.size)
    scale = 1.0 / np.sqrt(law.theta)
    c = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    if size is None:
        L = params.L if isinstance(params, ModelParams) else 1.0
        return SpectralField(c, L)
    return c


# ------------------------------------------------------- characteristic product


def log_char_product(xi, eps=0.0, gamma=0.0, law=None):
    """``log F(xi, eps)`` summed mode by mode (principal branches)."""
    law = _law(law)
    th = law.theta
    if gamma >= 0.5:
        raise DomainError(f"gamma must be < 1/2, got {gamma}")
    if eps and 2 * eps >= np.min(th) ** (1 - gamma):
        raise DomainError(f"eps={eps} outside 2 eps < theta_min**(1-gamma)={np.min(th) ** (1 - gamma)}")
    xi = np.asarray(xi, dtype=float)
    z = 1.0 - 2j * xi[..., None] / th - 2 * eps / th ** (1 - gamma)
    return -np.sum(np.log(z), axis=-1)


def char_product(xi, eps=0.0, gamma=0.0, law=None):
    """``F(xi, eps) = E[exp(i xi N + eps sum_k theta_k**gamma |c_k|**2)]`` over the retained modes.

    ``law`` may be a :class:`ModelParams`, a :class:`ModeLaw` or an array of
    precisions.  With ``eps = 0`` this is the characteristic function of N.
    """
    return np.exp(log_char_product(xi, eps, gamma, law))


def density_grid(law, *, width=None, tol=1e-6):
    """Density of N on a fine grid by Fourier inversion of ``F(xi, 0)``.

    The inverse transform is damped by a Gaussian window, which amounts to
    convolving the density with a Gaussian of standard deviation ``width``
    (default ``1e-3`` times the standard deviation of N).  Raises
    :class:`ToleranceError` when mass aliases into the region ``s < -8 width``.
    Returns ``(s, rho)`` sorted in ``s``.
    """
    law = _law(law)
    mu, sd = law.mean_N, math.sqrt(law.var_N)
    w = 1e-3 * sd if width is None else width
    n_hi = mu + 12 * sd + 60.0 / np.min(law.theta)
    period = 2.0 * n_hi
    dxi = 2 * np.pi / period
    J = int(math.ceil(8.0 / w / dxi))
    nfft = 1 << (2 * J + 1).bit_length()
    j = np.arange(-J, J + 1)
    xi = j * dxi
    vals = np.empty(xi.size, complex)
    for lo in range(0, xi.size, 8192):
        vals[lo : lo + 8192] = char_product(xi[lo : lo + 8192], law=law)
    vals *= np.exp(-0.5 * (xi * w) ** 2)
    a = np.zeros(nfft, complex)
    a[j % nfft] = vals
    rho = (dxi / (2 * np.pi)) * np.fft.fft(a).real
    ds = period / nfft
    s = np.arange(nfft) * ds
    s[nfft // 2 :] -= period
    order = np.argsort(s)
    s, rho = s[order], rho[order]
    leak = np.sum(np.abs(rho[s < -8 * w])) * ds
    if leak > tol:
        raise ToleranceError(f"inversion aliasing residual {leak:.3g} exceeds {tol:g}")
    return s, rho


def density_of_N(n, law, **kw):
    """``rho_N(n)``, the density of ``N(phi)`` under the reference measure."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("n must be >= 0")
    s, rho = density_grid(law, **kw)
    return np.interp(n, s, rho)


# ------------------------------------------------------------------ Fejer kernel


def fejer_kernel(ell, t):
    """``K_ell(t) = (1/ell) (1 - cos(ell t)) / (1 - cos t)`` on ``[-pi, pi]``, zero outside.

    Normalized so that ``int K_ell = 2 pi``; ``K_ell(0) = ell``.
    """
    if int(ell) != ell or ell < 1:
        raise ValueError("ell must be a positive integer")
    t = np.asarray(t, dtype=float)
    half = np.sin(0.5 * t)
    small = np.abs(half) < 1e-8
    safe = np.where(small, 1.0, half)
    k = np.where(small, float(ell), np.sin(0.5 * ell * t) ** 2 / (ell * safe**2))
    return np.where(np.abs(t) <= np.pi, k, 0.0)


def log_fejer_kernel(ell, t):
    with np.errstate(divide="ignore"):
        return np.log(fejer_kernel(ell, t))


@dataclass(frozen=True)
class FejerSpec:
    ell: int = 64
    n: float = 1.0

    def __post_init__(self):
        if int(self.ell) != self.ell or self.ell < 1:
            raise ConfigError("Fejer order ell must be an integer >= 1")
        if not np.all(np.asarray(self.n) > 0):
            raise ConfigError("target n must be > 0")


# ------------------------------------------------------------------ pCN chains


@dataclass
class ChainConfig:
    """Settings for a batch of independent preconditioned Crank-Nicolson chains.

    ``n_chains`` chains run side by side; after ``burn_in`` steps each chain
    contributes ``n_keep`` states spaced ``thin`` steps apart.  During burn-in
    the step size ``rho`` is adapted towards ``target_accept``; it is frozen
    afterwards so the kept states come from a fixed reversible kernel.
    """

    n_chains: int = 256
    burn_in: int = 2000
    n_keep: int = 1
    thin: int = 50
    rho: float = 0.3
    target_accept: float = 0.25
    adapt: bool = True
    stuck_window: int = 1000
    log_proposals: bool = False

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ConfigError("rho must lie in (0, 1]")
        if self.n_chains < 1 or self.n_keep < 1 or self.thin < 1 or self.burn_in < 0:
            raise ConfigError("chain sizes must be positive")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown chain settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ChainState:
    """Bookkeeping for a batch of chains (one row per chain)."""

    current: np.ndarray
    log_weight: np.ndarray
    accepted: np.ndarray
    proposed: int = 0
    rho: float = 0.3
    rng_stream: str = ""
    proposal_log: list = field(default_factory=list)

    @property
    def acceptance_rate(self):
        return self.accepted / max(self.proposed, 1)


@dataclass
class ChainResult:
    samples: np.ndarray
    state: ChainState

    @property
    def acceptance(self):
        return float(np.mean(self.state.acceptance_rate))


def run_pcn(rng, params, log_weight, init, cfg, stream_name=""):
    """Metropolis chains with pCN proposals from the reference Gaussian.

    ``log_weight`` maps a coefficient batch ``(B, 2K+1)`` to log-densities
    relative to the reference measure; ``init`` is the starting batch.
    """
    rng = as_generator(rng)
    c = np.array(init, dtype=complex)
    lw = np.asarray(log_weight(c), dtype=float)
    if not np.all(np.isfinite(lw)):
        raise ConfigError("initial states must have finite log-weight")
    B = c.shape[0]
    state = ChainState(c, lw, np.zeros(B, dtype=np.int64), 0, cfg.rho, stream_name)
    last_accept = np.zeros(B, dtype=np.int64)
    rho = cfg.rho
    kept = []
    total = cfg.burn_in + cfg.n_keep * cfg.thin
    for step in range(1, total + 1):
        xi = sample_free(rng, params, B)
        prop = math.sqrt(1 - rho**2) * c + rho * xi
        lw_prop = np.asarray(log_weight(prop), dtype=float)
        log_ratio = lw_prop - lw
        accept = np.log(rng.random(B)) < log_ratio
        if cfg.log_proposals and step > cfg.burn_in:
            state.proposal_log.append((lw.copy(), lw_prop.copy(), accept.copy()))
        c[accept] = prop[accept]
        lw[accept] = lw_prop[accept]
        state.accepted += accept
        state.proposed += 1
        last_accept[accept] = step
        if cfg.adapt and step <= cfg.burn_in:
            rate = accept.mean()
            rho = float(np.clip(rho * math.exp((rate - cfg.target_accept) / math.sqrt(step)), 1e-4, 1.0))
        if step - last_accept.min() >= cfg.stuck_window:
            i = int(np.argmin(last_accept))
            raise StuckChainError(
                f"chain {i} accepted nothing in {cfg.stuck_window} steps",
                {"chain": i, "step": step, "rho": rho, "log_weight": float(lw[i]), "N": float(l2_norm_sq(c[i]))},
            )
        if step > cfg.burn_in and (step - cfg.burn_in) % cfg.thin == 0:
            kept.append(c.copy())
    state.current, state.log_weight, state.rho = c, lw, rho
    log.info("pCN %s: rho=%.4g acceptance=%.3f", stream_name, rho, float(np.mean(state.acceptance_rate)))
    return ChainResult(np.concatenate(kept, axis=0) if kept else np.empty((0, c.shape[1])), state)


def balance_check(proposal_log, edges=(0.0, 0.25, 0.5, 1.0, 2.0)):
    """Detailed-balance test on logged stationary proposals.

    For a reversible chain the increment ``D = lw(prop) - lw(cur)`` of the
    log-weight satisfies ``P(D in -B) = E[1{D in B} exp(D)]`` for every set
    ``B``.  Both sides are estimated per chain on the bins given by
    ``edges`` and compared with errors taken across the independent chains.
    Returns the largest absolute z-score.
    """
    if not proposal_log:
        raise ValueError("no logged proposals (set log_proposals)")
    d = np.stack([prop - cur for cur, prop, _ in proposal_log])  # (steps, chains)
    n_chains = d.shape[1]
    worst = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        # clipping only keeps exp finite outside the bin, where the mask is zero
        fwd = ((d > lo) & (d <= hi)) * np.exp(np.minimum(d, hi))
        back = (d >= -hi) & (d < -lo)
        diff = fwd.mean(axis=0) - back.mean(axis=0)
        se = diff.std(ddof=1) / math.sqrt(n_chains)
        if se > 0:
            worst = max(worst, abs(diff.mean()) / se)
    return float(worst)


def ggc_log_weight(field, params):
    """``beta (lam/p) ||phi||_p**p - beta kappa N**r``: log-density against the reference Gaussian."""
    c = field.coeffs if isinstance(field, SpectralField) else np.asarray(field)
    w = np.zeros(c.shape[:-1])
    if params.lam:
        w = w + params.beta * params.lam / params.p * lp_norm_p(c, params.p, params.L)
    if params.kappa:
        w = w - params.beta * params.kappa * params.kappa_prefactor * l2_norm_sq(c) ** params.r
    return w if c.ndim > 1 else float(w)


def sample_ggc(rng, params, cfg=None):
    """Draws from the generalized grand-canonical measure by pCN-Metropolis.

    The kept states of ``cfg.n_chains`` independent chains are returned as
    ``ChainResult.samples`` of shape ``(n_keep * n_chains, 2K+1)``, ordered by
    keep-index first.
    """
    params.check_ggc()
    cfg = cfg or ChainConfig()
    rng = as_generator(rng)
    init = sample_free(rng, params, cfg.n_chains)
    return run_pcn(rng, params, lambda c: ggc_log_weight(c, params), init, cfg, "ggc")


def sample_conditioned(rng, fejer, params, cfg=None):
    """Draws from ``K_ell(n - N(phi)) d mu`` (normalized), by pCN-Metropolis.

    ``fejer.n`` may be a scalar or one target per chain.  Chains start from
    reference draws rescaled onto ``{N = n}``, where the weight is maximal.
    """
    cfg = cfg or ChainConfig()
    rng = as_generator(rng)
    n = np.broadcast_to(np.asarray(fejer.n, dtype=float), (cfg.n_chains,))
    init = sample_free(rng, params, cfg.n_chains)
    init *= np.sqrt(n / l2_norm_sq(init))[:, None]
    ell = fejer.ell

    def lw(c):
        return log_fejer_kernel(ell, n - l2_norm_sq(c))

    return run_pcn(rng, params, lw, init, cfg, f"fejer{ell}")


# ------------------------------------------------------------ partition functions


@dataclass(frozen=True)
class PartitionEstimate:
    log_z: float
    stderr: float
    ess: float
    n_samples: int
    reliable: bool


def log_mean_exp_jackknife(w):
    """``log mean exp(w)`` with its delete-one jackknife standard error and ESS."""
    w = np.asarray(w, dtype=float)
    n = w.size
    shift = np.max(w)
    e = np.exp(w - shift)
    total = e.sum()
    est = shift + math.log(total / n)
    loo = np.log(np.maximum(total - e, np.finfo(float).tiny) / (n - 1)) + shift
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    ess = total**2 / np.sum(e**2)
    return est, se, ess


def estimate_log_partition(params, n_samples, rng=None, chunk=10_000, min_ess=100):
    """Importance-sampling estimate of ``log E_mu[exp(ggc_log_weight)]``.

    ``reliable`` is False when the effective sample size drops below
    ``min_ess``.
    """
    params.check_ggc()
    rng = as_generator(rng)
    w = np.empty(n_samples)
    for lo in range(0, n_samples, chunk):
        hi = min(lo + chunk, n_samples)
        w[lo:hi] = ggc_log_weight(sample_free(rng, params, hi - lo), params)
    est, se, ess = log_mean_exp_jackknife(w)
    if ess < min_ess:
        log.warning("effective sample size %.1f below %d; estimate unreliable", ess, min_ess)
    return PartitionEstimate(est, se, ess, n_samples, bool(ess >= min_ess))


def log_partition_free(params):
    """Reference value of ``log Z`` at ``lam = 0`` without sampling.

    For ``r = 1`` the weight factorizes over modes; otherwise the one-dimensional
    integral against the inverted density of N is evaluated by quadrature.
    """
    if params.lam:
        raise ValueError("reference value only available at lam = 0")
    a = params.beta * params.kappa * params.kappa_prefactor
    if a == 0:
        return 0.0
    if params.r == 1:
        return float(-np.sum(np.log1p(2 * a / params.theta)))
    s, rho = density_grid(params)
    keep = s >= 0
    s, rho = s[keep], rho[keep]
    return float(math.log(integrate.trapezoid(rho * np.exp(-a * s**params.r), s)))


@dataclass
class SweepTable:
    """``log Z`` on a rectangular ``(lam, kappa)`` grid at fixed ``beta``."""

    lams: np.ndarray
    kappas: np.ndarray
    log_z: np.ndarray
    stderr: np.ndarray
    ess: np.ndarray
    beta: float

    def rows(self):
        for i, lam in enumerate(self.lams):
            for j, kap in enumerate(self.kappas):
                yield {
                    "beta": self.beta,
                    "lambda": float(lam),
                    "kappa": float(kap),
                    "log_z": float(self.log_z[i, j]),
                    "stderr": float(self.stderr[i, j]),
                    "ess": float(self.ess[i, j]),
                }

    def second_differences(self):
        """Interior second differences along each axis with their standard errors."""
        out = []
        for axis in (0, 1):
            z = np.moveaxis(self.log_z, axis, 0)
            e = np.moveaxis(self.stderr, axis, 0)
            d2 = z[2:] - 2 * z[1:-1] + z[:-2]
            err = np.sqrt(e[2:] ** 2 + 4 * e[1:-1] ** 2 + e[:-2] ** 2)
            out.append((d2, err))
        return out

    def max_smoothness_ratio(self):
        return max(float(np.max(np.abs(d) / err)) for d, err in self.second_differences())


def sweep_partition(params, lams, kappas, n_samples, rng=None):
    """``estimate_log_partition`` over a ``(lam, kappa)`` grid with independent samples."""
    rng = as_generator(rng)
    lams, kappas = np.asarray(lams, float), np.asarray(kappas, float)
    shape = (lams.size, kappas.size)
    lz, se, ess = np.empty(shape), np.empty(shape), np.empty(shape)
    for i, lam in enumerate(lams):
        for j, kap in enumerate(kappas):
            est = estimate_log_partition(params.replace(lam=float(lam), kappa=float(kap)), n_samples, rng)
            lz[i, j], se[i, j], ess[i, j] = est.log_z, est.stderr, est.ess
    return SweepTable(lams, kappas, lz, se, ess, params.beta)


def rescaled_params(params):
    """Parameters at ``beta = 1`` with the same partition function (substitution ``psi = sqrt(beta) phi``)."""
    b = params.beta
    return params.replace(beta=1.0, lam=params.lam * b ** (1 - params.p / 2), kappa=params.kappa * b ** (1 - params.r))


def scaling_check(params, n_samples, rng_a=None, rng_b=None):
    """Independent estimates at ``params`` and at their ``beta = 1`` rescaling.

    Returns ``(estimate, rescaled_estimate, z_score)``.
    """
    a = estimate_log_partition(params, n_samples, rng_a)
    b = estimate_log_partition(rescaled_params(params), n_samples, rng_b)
    z = abs(a.log_z - b.log_z) / math.hypot(a.stderr, b.stderr)
    return a, b, z


def ks_2samp(a, b):
    """Thin wrapper so callers need not import scipy.stats directly."""
    from scipy import stats

    return stats.ks_2samp(a, b)


__all__ = [
    "balance_check",
    "ModeLaw",
    "mode_law",
    "sample_free",
    "char_product",
    "log_char_product",
    "density_grid",
    "density_of_N",
    "fejer_kernel",
    "log_fejer_kernel",
    "FejerSpec",
    "ChainConfig",
    "ChainState",
    "ChainResult",
    "run_pcn",
    "ggc_log_weight",
    "sample_ggc",
    "sample_conditioned",
    "PartitionEstimate",
    "log_mean_exp_jackknife",
    "estimate_log_partition",
    "log_partition_free",
    "SweepTable",
    "sweep_partition",
    "rescaled_params",
    "scaling_check",
]
