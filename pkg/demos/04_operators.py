"""
Generators, traces and the Golden-Thompson bound
================================================

The free generator is a sum of harmonic oscillators, so its heat trace is
a product.  For a few modes the full operator is solved with a Hermite
Galerkin basis, which gives spectra, gaps and exact traces to compare
against Monte Carlo bounds.
"""

import numpy as np

from nlsgibbs.field import ModelParams
from nlsgibbs.operators import (
    FdModel,
    FreeOperatorSpec,
    fd_gap,
    fd_golden_thompson,
    fd_spectrum,
    fd_trace,
    trace_free,
    trace_free_bruteforce,
)

# %%
# Closed-form free trace against an explicit sum over occupation numbers.
p = ModelParams(K=1)
spec = FreeOperatorSpec(p.nu[p.k >= 0], 0.47)
print("free trace, product:", trace_free(1.0, spec))
print("free trace, brute:  ", trace_free_bruteforce(1.0, spec.real_rates, 60))

# %%
# One complex mode with a quartic-plus-confining potential.
m = FdModel(n_modes=1, r=2, s=0.47, hermite_cut=30)
print("lowest eigenvalues:", np.round(fd_spectrum(m, 5), 5))
e0, e1, gap = fd_gap(m)
print(f"spectral gap {gap:.5f}")

# %%
# The Golden-Thompson bound sits above the trace at every time.
for t in (0.5, 1.0, 2.0):
    print(f"t={t}: trace {fd_trace(m, t):.4e}  bound {fd_golden_thompson(m, t):.4e}")
