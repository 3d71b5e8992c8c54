"""Truncated Fourier representation of a complex field on the circle.

A field is stored through its coefficients ``c_k`` for ``k = -K, ..., K`` in
the orthonormal basis ``u_k(x) = L**-0.5 * exp(2j*pi*k*x/L)``.  Every
functional below accepts either a :class:`SpectralField` or a raw coefficient
array whose last axis has length ``2K+1``; raw arrays may carry leading batch
axes, which is how the samplers and integrators evaluate many fields at once.

Gradients are Frechet derivatives for the real inner product
``<phi, psi> = Re int conj(phi) psi dx``, so that
``d/dt F(phi + t psi) = Re sum_k conj(DF_k) psi_k``.
"""

from __future__ import annotations

import dataclasses
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DealiasingError, TruncationError

__all__ = [
    "ModelParams",
    "SpectralField",
    "PhysicalField",
    "wavenumbers",
    "dealiased_size",
    "to_grid",
    "from_grid",
    "transform",
    "inverse_transform",
    "l2_norm_sq",
    "lp_norm_p",
    "sobolev_norm_sq",
    "holder_seminorm",
    "sup_norm",
    "hamiltonian",
    "effective_energy",
    "gaussian_energy",
    "grad_effective_energy",
    "nonlinear_grad",
    "write_binary",
    "read_binary",
    "write_csv",
]


@dataclass(frozen=True)
class ModelParams:
    """Physical and ensemble parameters.

    ``lam`` is the coupling (focusing for ``lam > 0``).  The chemical-potential
    term enters energies as ``kappa_prefactor * kappa * N**r``; the default
    prefactor 1 matches the weight of the grand-canonical measure.
    ``K = 0`` keeps only the zero mode, which is convenient for one-mode
    checks against closed forms.
    """

    beta: float = 1.0
    m: float = 1.0
    L: float = 1.0
    lam: float = 0.0
    p: float = 4.0
    kappa: float = 0.0
    r: float = 10.0
    K: int = 32
    kappa_prefactor: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not self.m > 0:
            raise ConfigError(f"m must be > 0, got {self.m}")
        if not self.L > 0:
            raise ConfigError(f"L must be > 0, got {self.L}")
        if not self.p >= 2:
            raise ConfigError(f"p must be >= 2, got {self.p}")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if not self.r > 0:
            raise ConfigError(f"r must be > 0, got {self.r}")
        if int(self.K) != self.K or self.K < 0:
            raise ConfigError(f"K must be a non-negative integer, got {self.K}")
        if not all(np.isfinite([self.beta, self.m, self.L, self.lam, self.p, self.kappa, self.r])):
            raise ConfigError("parameters must be finite")
        object.__setattr__(self, "K", int(self.K))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def check_ggc(self):
        """Raise unless the grand-canonical weight is integrable."""
        if self.lam > 0 and not self.kappa > 0:
            raise ConfigError("kappa > 0 required when lambda > 0")
        if self.lam > 0 and self.p >= 6:
            raise ConfigError(f"p < 6 required for lambda > 0, got p={self.p}")

    @property
    def n_modes(self):
        return 2 * self.K + 1

    @property
    def k(self):
        return np.arange(-self.K, self.K + 1)

    @property
    def omega(self):
        """Laplacian eigenvalues (2 pi k / L)**2."""
        return (2 * np.pi * self.k / self.L) ** 2

    @property
    def omega_tilde(self):
        return self.omega + self.m**2

    @property
    def theta(self):
        return self.beta * self.omega_tilde

    @property
    def nu(self):
        return 1.0 / self.theta

    @property
    def grid_size(self):
        return dealiased_size(self.K, self.p)


def wavenumbers(K):
    return np.arange(-K, K + 1)


def dealiased_size(K, p=4):
    """Smallest power-of-two grid on which ``|phi|**(p-2) phi`` is alias free.

    Even ``p`` uses padding ``p/2``; other exponents are not band-limited and
    get one extra factor of two.
    """
    pad = math.ceil(p / 2)
    if not float(p).is_integer() or int(p) % 2:
        pad *= 2
    need = max(pad * (2 * K + 1), 2 * K + 2)
    return 1 << (need - 1).bit_length()


def _coeffs(field):
    if isinstance(field, SpectralField):
        return field.coeffs
    c = np.asarray(field)
    if c.shape[-1] % 2 != 1:
        raise ValueError("coefficient axis must have odd length 2K+1")
    return c


def _length(field, L):
    if L is not None:
        return float(L)
    if isinstance(field, SpectralField):
        return field.L
    raise ValueError("L required for raw coefficient arrays")


def _wrap(field, coeffs, L):
    if isinstance(field, SpectralField):
        return SpectralField(coeffs, field.L)
    return coeffs


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients ``c_k``, ``k = -K..K``, of a field on a circle of length ``L``."""

    coeffs: np.ndarray
    L: float = 1.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError(f"coefficient array must be 1-D of odd length, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if not self.L > 0:
            raise ValueError("L must be > 0")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "L", float(self.L))

    @property
    def K(self):
        return (self.coeffs.size - 1) // 2

    @classmethod
    def zeros(cls, K, L=1.0):
        return cls(np.zeros(2 * K + 1, complex), L)

    @classmethod
    def from_modes(cls, modes, K, L=1.0):
        """Build from a ``{k: c_k}`` mapping."""
        c = np.zeros(2 * K + 1, complex)
        for k, v in modes.items():
            if abs(k) > K:
                raise ValueError(f"mode {k} outside truncation K={K}")
            c[k + K] = v
        return cls(c, L)

    def mode(self, k):
        return self.coeffs[k + self.K]

    def scaled(self, a):
        return SpectralField(a * self.coeffs, self.L)

    def __add__(self, other):
        return SpectralField(self.coeffs + _coeffs(other), self.L)

    def __sub__(self, other):
        return SpectralField(self.coeffs - _coeffs(other), self.L)

    def __eq__(self, other):
        return isinstance(other, SpectralField) and self.L == other.L and np.array_equal(self.coeffs, other.coeffs)

    def to_grid(self, M=None):
        return transform(self, M)


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Values of a field on ``M`` uniform points ``x_j = j L / M``."""

    values: np.ndarray
    L: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        M = v.shape[-1]
        if M < 2 or M & (M - 1):
            raise ValueError(f"grid size must be a power of two, got {M}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "L", float(self.L))

    @property
    def M(self):
        return self.values.shape[-1]

    @property
    def x(self):
        return np.arange(self.M) * self.L / self.M


def to_grid(c, L, M):
    """Grid values of coefficient array(s) ``c`` on ``M`` points."""
    c = np.asarray(c)
    K = (c.shape[-1] - 1) // 2
    if M < 2 * K + 2:
        raise TruncationError(f"grid size M={M} too small for K={K}; need M >= {2 * K + 2}")
    buf = np.zeros(c.shape[:-1] + (M,), complex)
    buf[..., np.arange(-K, K + 1) % M] = c
    return np.fft.ifft(buf, axis=-1) * (M / math.sqrt(L))


def from_grid(v, L, K):
    """Coefficients ``c_k``, ``|k| <= K``, of grid values ``v`` (L2 projection)."""
    v = np.asarray(v)
    M = v.shape[-1]
    if M < 2 * K + 2:
        raise TruncationError(f"grid size M={M} too small for K={K}; need M >= {2 * K + 2}")
    f = np.fft.fft(v, axis=-1) * (math.sqrt(L) / M)
    return f[..., np.arange(-K, K + 1) % M]


def transform(field, M=None):
    """Spectral field to collocation grid."""
    if M is None:
        M = dealiased_size(field.K)
    return PhysicalField(to_grid(field.coeffs, field.L, M), field.L)


def inverse_transform(phys, K):
    return SpectralField(from_grid(phys.values, phys.L, K), phys.L)


def l2_norm_sq(field):
    """``N(phi) = ||phi||_2**2`` by Parseval."""
    c = _coeffs(field)
    return np.sum(c.real**2 + c.imag**2, axis=-1)


def _check_padding(K, M, p):
    if float(p).is_integer() and int(p) % 2 == 0 and M < (p / 2) * (2 * K + 1):
        raise DealiasingError(f"grid size M={M} below padding p/2={p / 2} for K={K}")


def lp_norm_p(field, p=4, L=None, M=None):
    """``||phi||_p**p`` by quadrature on a dealiased grid."""
    c = _coeffs(field)
    L = _length(field, L)
    K = (c.shape[-1] - 1) // 2
    if M is None:
        M = dealiased_size(K, p)
    _check_padding(K, M, p)
    v = to_grid(c, L, M)
    return (L / M) * np.sum(np.abs(v) ** p, axis=-1)


def sobolev_norm_sq(field, gamma, m, L=None):
    """``||(m**2 - Laplacian)**gamma phi||_2**2``."""
    c = _coeffs(field)
    L = _length(field, L)
    K = (c.shape[-1] - 1) // 2
    w = ((2 * np.pi * wavenumbers(K) / L) ** 2 + m**2) ** (2 * gamma)
    return np.sum(w * (c.real**2 + c.imag**2), axis=-1)


def sup_norm(field, M, L=None):
    """Grid estimate (lower bound) of ``||phi||_inf``."""
    c = _coeffs(field)
    return np.max(np.abs(to_grid(c, _length(field, L), M)), axis=-1)


def holder_seminorm(field, alpha, M, L=None):
    """Grid lower bound of the order-``alpha`` Holder seminorm.

    Maximum of ``|phi(y) - phi(x)| / d(x, y)**alpha`` over grid pairs, with
    ``d`` the distance on the circle (so offsets up to ``M/2`` suffice).
    Nondecreasing under grid refinement by factors of two.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    c = _coeffs(field)
    L = _length(field, L)
    v = to_grid(c, L, M)
    h = L / M
    best = np.zeros(v.shape[:-1])
    for d in range(1, M // 2 + 1):
        diff = np.max(np.abs(np.roll(v, -d, axis=-1) - v), axis=-1)
        np.maximum(best, diff / (d * h) ** alpha, out=best)
    return best


def hamiltonian(field, params):
    """``H = 1/2 ||phi'||**2 - (lam/p) ||phi||_p**p``."""
    c = _coeffs(field)
    kin = 0.5 * np.sum(params.omega * (c.real**2 + c.imag**2), axis=-1)
    if params.lam == 0:
        return kin
    return kin - (params.lam / params.p) * lp_norm_p(c, params.p, params.L)


def gaussian_energy(field, params):
    """``1/2 ||phi'||**2 + (m**2/2) ||phi||**2``: the reference-measure energy."""
    c = _coeffs(field)
    return 0.5 * np.sum(params.omega_tilde * (c.real**2 + c.imag**2), axis=-1)


def effective_energy(field, params):
    """``E = H + (m**2/2) N + kappa N**r``; ``exp(-beta E)`` is the GGC density."""
    c = _coeffs(field)
    e = hamiltonian(c, params) + 0.5 * params.m**2 * l2_norm_sq(c)
    if params.kappa:
        e = e + params.kappa_prefactor * params.kappa * l2_norm_sq(c) ** params.r
    return e


def nonlinear_grad(c, params, M=None):
    """Projected coefficients of ``|phi|**(p-2) phi``."""
    K = (c.shape[-1] - 1) // 2
    if M is None:
        M = dealiased_size(K, params.p)
    _check_padding(K, M, params.p)
    v = to_grid(c, params.L, M)
    if params.p == 4:
        g = (v.real**2 + v.imag**2) * v
    else:
        g = np.abs(v) ** (params.p - 2) * v
    return from_grid(g, params.L, K)


def grad_effective_energy(field, params):
    """``DE = -Laplacian phi + m**2 phi - lam |phi|**(p-2) phi + 2 r kappa N**(r-1) phi``."""
    c = _coeffs(field)
    g = params.omega_tilde * c
    if params.lam:
        g = g - params.lam * nonlinear_grad(c, params)
    if params.kappa:
        n = l2_norm_sq(c)
        a = 2 * params.r * params.kappa_prefactor * params.kappa * n ** (params.r - 1)
        g = g + np.asarray(a)[..., None] * c
    return _wrap(field, g, params.L)


# ---------------------------------------------------------------- serialization

_HEADER = struct.Struct("<qdq")


def _open(target, mode):
    if isinstance(target, (str, Path)):
        return open(target, mode), True
    return target, False


def write_binary(target, fields, M=None):
    """Append flat little-endian records: header ``(K, L, M)`` then re/im pairs."""
    if isinstance(fields, SpectralField):
        fields = [fields]
    fh, close = _open(target, "wb")
    try:
        for f in fields:
            grid = M if M is not None else dealiased_size(f.K)
            fh.write(_HEADER.pack(f.K, f.L, grid))
            body = np.empty(2 * f.coeffs.size, "<f8")
            body[0::2] = f.coeffs.real
            body[1::2] = f.coeffs.imag
            fh.write(body.tobytes())
    finally:
        if close:
            fh.close()


def read_binary(source):
    """Read every record; returns ``(fields, grid_sizes)``."""
    fh, close = _open(source, "rb")
    try:
        data = fh.read()
    finally:
        if close:
            fh.close()
    buf = io.BytesIO(data)
    fields, sizes = [], []
    while True:
        head = buf.read(_HEADER.size)
        if not head:
            break
        if len(head) < _HEADER.size:
            raise ValueError("truncated record header")
        K, L, M = _HEADER.unpack(head)
        n = 2 * (2 * K + 1)
        raw = buf.read(8 * n)
        if len(raw) < 8 * n:
            raise ValueError("truncated record body")
        body = np.frombuffer(raw, "<f8")
        fields.append(SpectralField(body[0::2] + 1j * body[1::2], L))
        sizes.append(M)
    return fields, sizes


def write_csv(target, field):
    """``k,re,im`` rows for inspection."""
    lines = ["k,re,im"]
    for k, c in zip(wavenumbers(field.K), field.coeffs):
        lines.append(f"{k},{float(c.real)!r},{float(c.imag)!r}")
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, Path)):
        Path(target).write_text(text, encoding="utf-8")
    else:
        target.write(text)
