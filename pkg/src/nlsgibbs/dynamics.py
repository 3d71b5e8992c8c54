"""Time integration: the NLS flow, the grand-canonical Langevin flow and the
sphere-constrained canonical flow.

All steppers act on coefficient arrays of shape ``(..., 2K+1)`` so that whole
ensembles advance together, one trajectory per row.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ConfigError, DegenerateStateError
from .field import (
    SpectralField,
    dealiased_size,
    from_grid,
    hamiltonian,
    l2_norm_sq,
    lp_norm_p,
    nonlinear_grad,
    sobolev_norm_sq,
    to_grid,
)
from .streams import as_generator

log = logging.getLogger(__name__)

S_WINDOW = (7 / 16, 0.5)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-mode noise amplitudes ``sigma_k = scale * nu_k**s``."""

    s: float
    sigma: np.ndarray
    scale: float = 1.0
    override: bool = False

    @property
    def sigma2(self):
        return self.sigma**2

    @property
    def trace(self):
        """``sum_k sigma_k**2`` over complex modes (the real trace is twice this)."""
        return float(np.sum(self.sigma**2))


def make_noise(params, s=0.47, scale=1.0, override=False):
    """Trace-class noise ``sigma = scale * C**s``.

    Outside ``7/16 < s < 1/2`` the noise violates the integrability window;
    this raises :class:`ConfigError` unless ``override`` is set.
    """
    if not (S_WINDOW[0] < s < S_WINDOW[1]) and not override:
        raise ConfigError(f"noise exponent s={s} outside window (7/16, 1/2); pass override to explore")
    if scale < 0:
        raise ConfigError("noise scale must be >= 0")
    sigma = scale * params.nu**s
    log.debug("noise s=%g scale=%g trace=%g", s, scale, float(np.sum(sigma**2)))
    return NoiseSpec(float(s), sigma, float(scale), bool(override))


def window_ok(params, noise, gamma=0.125):
    """Check ``I <= sigma**2 C**-1 <= (m**2 - Laplacian)**gamma`` mode by mode."""
    ratio = noise.sigma2 * params.theta
    return bool(np.all(ratio >= 1 - 1e-12) and np.all(ratio <= params.omega_tilde**gamma * (1 + 1e-12)))


@dataclass(frozen=True)
class IntegratorCfg:
    dt: float = 1e-3
    scheme: str = "strang_ou"
    n_steps: int = 1000
    record_every: int = 10
    max_stiffness: float = 0.2

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.scheme not in ("strang_ou", "euler_maruyama"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.n_steps < 0 or self.record_every < 1:
            raise ConfigError("n_steps must be >= 0 and record_every >= 1")

    def check(self, params, noise=None):
        """Explicit schemes need ``|1 - (i w + a) dt| < 1`` in every mode.

        With noise given, ``a = (beta/2) sigma_k**2 w_k`` and the bound is
        ``dt < max_stiffness * 2a / (a**2 + w**2)``; without it, ``dt * max w``
        must stay below ``max_stiffness``.
        """
        if self.scheme != "euler_maruyama":
            return
        w = params.omega_tilde
        if noise is None:
            stiff = self.dt * float(np.max(w))
            if stiff > self.max_stiffness:
                raise ConfigError(f"euler_maruyama unstable: dt*max(omega)={stiff:.3g} > {self.max_stiffness}")
            return
        a = 0.5 * params.beta * noise.sigma2 * w
        limit = float(np.min(2 * a / (a**2 + w**2)))
        if self.dt > self.max_stiffness * limit:
            raise ConfigError(f"euler_maruyama unstable: dt={self.dt:g} exceeds {self.max_stiffness:g}*{limit:.3g}")


# ------------------------------------------------------------------ helpers


def _colloc(c, L):
    """Values on the ``2K+1``-point grid, which is in bijection with the modes."""
    M = c.shape[-1]
    K = (M - 1) // 2
    buf = np.zeros_like(c)
    buf[..., np.arange(-K, K + 1) % M] = c
    return np.fft.ifft(buf, axis=-1) * (M / math.sqrt(L))


def _uncolloc(v, L):
    M = v.shape[-1]
    K = (M - 1) // 2
    return (np.fft.fft(v, axis=-1) * (math.sqrt(L) / M))[..., np.arange(-K, K + 1) % M]


def _rotate(v, angle):
    return v * (np.cos(angle) + 1j * np.sin(angle))


def _nonlinearity(v, p):
    mod2 = v.real**2 + v.imag**2
    return mod2 if p == 4 else mod2 ** ((p - 2) / 2)


def nonlinear_grid_size(K, p):
    """Smallest grid on which the projected ``|phi|**(p-2) phi`` is alias free (even ``p``)."""
    if float(p).is_integer() and int(p) % 2 == 0:
        return max(int(p) // 2 * (2 * K + 1), 2 * K + 2)
    return dealiased_size(K, p)


def _phase_step(c, params, dt, M=None):
    """``phi -> exp(i lam |phi|**(p-2) dt) phi`` pointwise.

    With ``M=None`` the rotation acts on the ``2K+1`` collocation grid and is
    unitary on the retained modes; otherwise it acts on an ``M``-point grid
    followed by projection.
    """
    if not params.lam:
        return c
    v = _colloc(c, params.L) if M is None else to_grid(c, params.L, M)
    v = _rotate(v, params.lam * dt * _nonlinearity(v, params.p))
    if M is None:
        return _uncolloc(v, params.L)
    return from_grid(v, params.L, (c.shape[-1] - 1) // 2)


def _focusing_substep(c, params, noise, dt, M):
    """Hamiltonian rotation and dissipative Euler update of the ``lam`` term, sharing one grid evaluation."""
    if M is None:
        c = c + dt * 0.5 * params.beta * params.lam * noise.sigma2 * nonlinear_grad(c, params)
        return _phase_step(c, params, dt, None)
    K = (c.shape[-1] - 1) // 2
    v = to_grid(c, params.L, M)
    amp = _nonlinearity(v, params.p)
    both = from_grid(np.stack([_rotate(v, params.lam * dt * amp), amp * v]), params.L, K)
    return both[0] + dt * 0.5 * params.beta * params.lam * noise.sigma2 * both[1]


def _coeffs(field):
    if isinstance(field, SpectralField):
        return field.coeffs, field.L
    return np.asarray(field, dtype=complex), None


def _wrap(out, L):
    return SpectralField(out, L) if L is not None else out


def _check_finite(c, step=None):
    if not np.all(np.isfinite(c)):
        bad = ~np.all(np.isfinite(c), axis=-1)
        raise BlowUpError(f"non-finite field at step {step}", step=step, dump=np.nonzero(np.atleast_1d(bad))[0])


# ---------------------------------------------------------------- NLS flow


def nls_step(field, dt, params, M=None):
    """One Strang step of ``i phi_t = -phi_xx - lam |phi|**(p-2) phi``.

    Half linear rotation, full pointwise nonlinear rotation, half linear
    rotation.  Both substeps are unitary on the retained modes when the
    nonlinear rotation uses the collocation grid (``M=None``), so ``N`` is
    conserved to roundoff.
    """
    c, L = _coeffs(field)
    half = np.exp(-0.5j * params.omega * dt)
    c = half * c
    c = _phase_step(c, params, dt, M)
    return _wrap(half * c, L)


# ------------------------------------------------------- grand-canonical flow


def _kappa_rate(c, params):
    if not params.kappa:
        return None
    n = l2_norm_sq(c)
    return 2 * params.r * params.kappa * params.kappa_prefactor * n ** (params.r - 1)


def _ou_half(c, h, rng, params, noise):
    a = 0.5 * params.beta * noise.sigma2 * params.omega_tilde
    decay = np.exp(-(1j * params.omega_tilde + a) * h)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(a > 0, noise.sigma2 * -np.expm1(-2 * a * h) / (2 * a), noise.sigma2 * h)
    z = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
    return decay * c + np.sqrt(var) * z


def _implicit_tau(mod2, b, h, params, iters=100):
    """Solve ``tau = h R(N(tau))`` with ``N(tau) = sum |c_k|**2 exp(-2 b_k tau)``.

    This is a backward-Euler step for ``dtau/dt = R(N(tau))``.  The left side
    minus the right is increasing in ``tau``, so a bracketed Newton iteration
    converges from ``[0, h R(N(0))]``.
    """
    kp = 2 * params.r * params.kappa * params.kappa_prefactor
    lo = np.zeros(mod2.shape[0])
    hi = h * kp * mod2.sum(axis=-1) ** (params.r - 1)
    tau = 0.5 * hi
    for _ in range(iters):
        e = mod2 * np.exp(-2 * b * tau[:, None])
        n = e.sum(axis=-1)
        g = tau - h * kp * n ** (params.r - 1)
        dn = -2 * (b * e).sum(axis=-1)
        dg = 1 - h * kp * (params.r - 1) * n ** (params.r - 2) * dn
        lo = np.where(g < 0, tau, lo)
        hi = np.where(g > 0, tau, hi)
        new = tau - g / dg
        bad = (new <= lo) | (new >= hi)
        new = np.where(bad, 0.5 * (lo + hi), new)
        if np.all(np.abs(new - tau) <= 1e-14 * np.maximum(tau, 1e-300)):
            return new
        tau = new
    return tau


def _kappa_substep(c, params, noise, dt, max_rate_dt=0.05, n_implicit=10):
    """Update for the confining term ``dc_k = -(i + (beta/2) sigma_k**2) R(N) c_k dt``.

    With ``tau = int R dt`` the solution is ``c_k exp(-(i + b_k) tau)``.  Where
    the damping per step is below ``max_rate_dt``, ``tau = R(N) dt`` is taken
    explicitly; stiffer trajectories (hot starts with large ``N**(r-1)``) use
    ``n_implicit`` backward-Euler substeps in ``tau``, which cannot overshoot.
    """
    if not params.kappa:
        return c
    flat = np.atleast_2d(c).copy()
    b = 0.5 * params.beta * noise.sigma2
    rate = _kappa_rate(flat, params)
    tau = rate * dt
    stiff = np.nonzero(tau * float(np.max(b)) > max_rate_dt)[0]
    if stiff.size:
        sub = flat[stiff]
        h = dt / n_implicit
        total = np.zeros(stiff.size)
        for _ in range(n_implicit):
            mod2 = sub.real**2 + sub.imag**2
            t = _implicit_tau(mod2, b, h, params)
            sub = sub * np.exp(-b * t[:, None])
            total += t
        tau[stiff] = total
        flat[stiff] = flat[stiff] * np.exp(-b * total[:, None])
    easy = np.ones(flat.shape[0], bool)
    easy[stiff] = False
    flat[easy] *= np.exp(-b * tau[easy, None])
    flat *= np.exp(-1j * tau)[:, None]
    return flat.reshape(c.shape)


def ggc_sde_step(field, dt, rng, params, noise, scheme="strang_ou", M=0):
    """One step of the grand-canonical Langevin flow.

    ``dphi = (J - (beta/2) sigma**2) DE(phi) dt + sigma dW`` with ``J = -i``
    and ``DE`` the gradient of the effective energy.  ``strang_ou`` splits off
    the linear part, which is integrated as an exact Ornstein-Uhlenbeck
    process per mode; ``euler_maruyama`` treats everything explicitly.

    ``M`` selects the grid for the nonlinear substep: 0 means the smallest
    alias-free grid, None the collocation grid (as in :func:`nls_step`).
    """
    rng = as_generator(rng)
    c, L = _coeffs(field)
    if M == 0:
        M = nonlinear_grid_size((c.shape[-1] - 1) // 2, params.p)
    if scheme == "euler_maruyama":
        g = params.omega_tilde * c
        if params.lam:
            g = g - params.lam * nonlinear_grad(c, params)
        rate = _kappa_rate(c, params)
        if rate is not None:
            g = g + np.asarray(rate)[..., None] * c
        z = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
        out = c + dt * (-1j - 0.5 * params.beta * noise.sigma2) * g + math.sqrt(dt) * noise.sigma * z
    elif scheme == "strang_ou":
        c = _ou_half(c, 0.5 * dt, rng, params, noise)
        if params.lam:
            c = _focusing_substep(c, params, noise, dt, M)
        c = _kappa_substep(c, params, noise, dt)
        out = _ou_half(c, 0.5 * dt, rng, params, noise)
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")
    _check_finite(out)
    return _wrap(out, L)


# ---------------------------------------------------------- canonical flow


def tangent_project(c, v):
    """Real-orthogonal projection of ``v`` onto the tangent space of ``{N = N(c)}`` at ``c``."""
    n = l2_norm_sq(c)
    if np.any(n == 0):
        raise DegenerateStateError("projection undefined at phi = 0")
    ip = np.sum((np.conj(c) * v).real, axis=-1)
    return v - np.asarray(ip / n)[..., None] * c


def projected_trace(c, noise):
    """``Tr(sigma**2 P_phi)`` over real coordinates: ``2 sum sigma_k**2 - <phi, sigma**2 phi>/N``."""
    n = l2_norm_sq(c)
    return 2 * noise.trace - np.sum(noise.sigma2 * (c.real**2 + c.imag**2), axis=-1) / n


def canonical_sde_step(field, dt, rng, params, noise, n=None, correction=0.5, renormalize=True):
    """One step of the sphere-constrained Langevin flow.

    The linear Hamiltonian part and the confining phase are exact rotations;
    the remaining drift ``-(beta/2) P sigma**2 P DE + J (-lam |phi|**(p-2) phi)``,
    the noise ``P sigma dW`` and the Ito term
    ``-correction * Tr(sigma**2 P) phi / N`` are advanced by Euler-Maruyama.
    The state is then rescaled onto ``N = n`` (default: its initial ``N``).

    With real traces the quadratic variation of ``P sigma dW`` raises ``N`` by
    ``Tr(sigma**2 P) dt``, so ``correction = 1/2`` cancels it to first order.
    """
    rng = as_generator(rng)
    c, L = _coeffs(field)
    n0 = l2_norm_sq(c)
    if np.any(n0 == 0):
        raise DegenerateStateError("canonical flow undefined at phi = 0")
    target = n0 if n is None else np.broadcast_to(np.asarray(n, float), n0.shape)
    rot = params.omega_tilde[None, :] if c.ndim > 1 else params.omega_tilde
    kr = _kappa_rate(c, params)
    phase = rot + (np.asarray(kr)[..., None] if kr is not None else 0.0)
    c = np.exp(-1j * phase * dt) * c

    g = params.omega_tilde * c
    nl = None
    if params.lam:
        nl = params.lam * nonlinear_grad(c, params)
        g = g - nl
    drift = -0.5 * params.beta * tangent_project(c, noise.sigma2 * tangent_project(c, g))
    if nl is not None:
        drift = drift + 1j * nl
    z = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
    dw = tangent_project(c, noise.sigma * z)
    nn = l2_norm_sq(c)
    corr = correction * np.asarray(projected_trace(c, noise) / nn)[..., None] * c
    out = c + dt * (drift - corr) + math.sqrt(dt) * dw
    if renormalize:
        out = out * np.sqrt(np.asarray(target / l2_norm_sq(out)))[..., None]
    _check_finite(out)
    return _wrap(out, L)


def canonical_drift_constant(c0, params, noise, dt, n_steps, rng=None, n_batches=20):
    """Measure ``E[dN]/dt`` against ``Tr(sigma**2 P)`` for the uncorrected step.

    The trajectory itself is renormalized every step; at each step the
    uncorrected, unrenormalized increment of ``N`` is recorded.  Returns
    ``(constant, stderr)`` from a ratio estimator with batch means.
    """
    rng = as_generator(rng)
    c = np.atleast_2d(np.asarray(c0, complex))
    n = l2_norm_sq(c)
    dn = np.empty((n_steps, c.shape[0]))
    tr = np.empty((n_steps, c.shape[0]))
    for i in range(n_steps):
        raw = canonical_sde_step(c, dt, rng, params, noise, correction=0.0, renormalize=False)
        dn[i] = l2_norm_sq(raw) - n
        tr[i] = projected_trace(c, noise)
        c = raw * np.sqrt(n / l2_norm_sq(raw))[..., None]
    b = np.array_split(np.arange(n_steps), n_batches)
    ratios = np.array([dn[idx].sum() / (dt * tr[idx].sum()) for idx in b])
    return float(dn.sum() / (dt * tr.sum())), float(ratios.std(ddof=1) / math.sqrt(n_batches))


# ------------------------------------------------------------- trajectories


def default_observables(params, gamma=0.1):
    """``N``, ``H``, ``||phi||_4**4`` and the ``gamma``-Sobolev norm."""
    return {
        "N": l2_norm_sq,
        "H": lambda c: hamiltonian(c, params),
        "L4": lambda c: lp_norm_p(c, 4, params.L),
        "sobolev": lambda c: sobolev_norm_sq(c, gamma, params.m, params.L),
    }


@dataclass
class Trajectory:
    """Recorded observables; each column has shape ``(n_records,)`` or ``(n_records, batch)``."""

    t: np.ndarray
    series: dict
    final: np.ndarray

    def __getitem__(self, name):
        return self.series[name]

    def to_csv(self, target, member=0):
        cols = list(self.series)
        own = isinstance(target, str) or hasattr(target, "__fspath__")
        fh = open(target, "w", encoding="utf-8", newline="") if own else target
        try:
            fh.write(",".join(["t"] + cols) + "\n")
            for i, t in enumerate(self.t):
                vals = []
                for name in cols:
                    v = self.series[name][i]
                    vals.append(repr(float(v if np.ndim(v) == 0 else v[member])))
                fh.write(",".join([repr(float(t))] + vals) + "\n")
        finally:
            if own:
                fh.close()


def trajectory(init, stepper, cfg, observables=None, rng=None, params=None, snapshots=None):
    """Advance ``init`` for ``cfg.n_steps`` steps, recording every ``cfg.record_every``.

    ``stepper(c, dt, rng)`` returns the next coefficient array.  Observables
    default to :func:`default_observables` (``params`` then required).  When
    ``snapshots`` is a list, the state at each record time is appended to it.
    """
    rng = as_generator(rng)
    c, L = _coeffs(init)
    if observables is None:
        if params is None:
            raise ValueError("params required for default observables")
        observables = default_observables(params)
    times, rec = [], {k: [] for k in observables}

    def record(step):
        times.append(step * cfg.dt)
        for k, f in observables.items():
            rec[k].append(np.asarray(f(c)))
        if snapshots is not None:
            snapshots.append(c.copy())

    record(0)
    for step in range(1, cfg.n_steps + 1):
        try:
            c = stepper(c, cfg.dt, rng)
        except BlowUpError as e:
            raise BlowUpError(f"blow-up at step {step}", step=step, dump=c) from e
        if step % cfg.record_every == 0:
            record(step)
    return Trajectory(np.array(times), {k: np.array(v) for k, v in rec.items()}, _wrap(c, L) if L else c)


def nls_stepper(params, M=None):
    return lambda c, dt, rng: nls_step(c, dt, params, M)


def ggc_stepper(params, noise, scheme="strang_ou", M=0):
    return lambda c, dt, rng: ggc_sde_step(c, dt, rng, params, noise, scheme, M)


def canonical_stepper(params, noise, n=None, correction=0.5):
    return lambda c, dt, rng: canonical_sde_step(c, dt, rng, params, noise, n, correction)


__all__ = [
    "NoiseSpec",
    "make_noise",
    "window_ok",
    "IntegratorCfg",
    "nls_step",
    "nonlinear_grid_size",
    "ggc_sde_step",
    "canonical_sde_step",
    "tangent_project",
    "projected_trace",
    "canonical_drift_constant",
    "default_observables",
    "Trajectory",
    "trajectory",
    "nls_stepper",
    "ggc_stepper",
    "canonical_stepper",
]


