"""
Spectral fields on a circle
===========================

A field is a vector of Fourier coefficients for wavenumbers ``-K..K``.
This script builds one, moves between coefficient and grid views, and
evaluates the norms and energies used everywhere else in the package.
"""

import numpy as np

from nlsgibbs.field import (
    ModelParams,
    SpectralField,
    from_grid,
    hamiltonian,
    l2_norm_sq,
    lp_norm_p,
    read_binary,
    sobolev_norm_sq,
    sup_norm,
    to_grid,
    write_binary,
)

# %%
# A localized wave packet on a circle of length 2*pi, truncated to |k| <= 32.
p = ModelParams(K=32, lam=1.0, L=2 * np.pi)
x = np.arange(512) * p.L / 512
packet = np.exp(-4 * (x - np.pi) ** 2) * np.exp(2j * x)
c = from_grid(packet, p.L, p.K)
print("coefficients:", c.shape)

# %%
# Mass is the same in both views (Parseval).
grid = to_grid(c, p.L, 512)
print("N from coefficients:", l2_norm_sq(c))
print("N from the grid:    ", np.sum(np.abs(grid) ** 2) * p.L / 512)

# %%
# Norms of increasing strength.
print("||phi||_4^4         ", lp_norm_p(c, 4, p.L))
print("H^0.3 norm squared  ", sobolev_norm_sq(c, 0.3, 1.0, p.L))
print("sup norm on 1024 pts", sup_norm(c, 1024, p.L))
print("Hamiltonian         ", hamiltonian(c, p))

# %%
# Fields round-trip through the binary format without loss.
path = "/tmp/demo_fields.bin"
write_binary(path, [SpectralField(c, p.L), SpectralField(2 * c, p.L)])
back, _ = read_binary(path)
print("round trip exact:", np.array_equal(back[1].coeffs, 2 * c))
