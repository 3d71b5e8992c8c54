"""
Deterministic and stochastic evolution
======================================

Split-step NLS conserves mass to rounding.  Adding Ornstein-Uhlenbeck noise
and the mass penalty gives a stochastic flow that leaves the weighted
measure invariant; the canonical flow stays on a fixed mass sphere.
"""

import numpy as np

from nlsgibbs.dynamics import (
    IntegratorCfg,
    canonical_sde_step,
    ggc_stepper,
    make_noise,
    nls_stepper,
    trajectory,
)
from nlsgibbs.field import ModelParams, l2_norm_sq
from nlsgibbs.measures import sample_free
from nlsgibbs.streams import stream

# %%
# Deterministic NLS: mass and energy along the flow.
p = ModelParams(K=32, lam=1.0, L=2 * np.pi)
c0 = sample_free(stream(1, 0), p)
tr = trajectory(c0, nls_stepper(p), IntegratorCfg(dt=1e-3, n_steps=2000, record_every=200), params=p)
print("relative mass drift:", np.max(np.abs(tr["N"] / tr["N"][0] - 1)))
print("relative energy drift:", np.max(np.abs(tr["H"] / tr["H"][0] - 1)))

# %%
# Stochastic flow from zero: the mean mass climbs towards its equilibrium value.
q = ModelParams(K=16, lam=0.1, kappa=1.0, r=10)
nz = make_noise(q)
batch = np.zeros((256, 2 * q.K + 1), complex)
sde = trajectory(batch, ggc_stepper(q, nz), IntegratorCfg(dt=1e-3, n_steps=2000, record_every=250),
                 {"N": l2_norm_sq}, stream(1, 1))
for t, n in zip(sde.t, sde["N"].mean(axis=1)):
    print(f"t={t:4.2f}  mean N={n:.3f}")

# %%
# Canonical flow: every member keeps its own mass.
c = sample_free(stream(1, 2), q, 4)
n = l2_norm_sq(c)
rng = stream(1, 3)
for _ in range(1000):
    c = canonical_sde_step(c, 1e-3, rng, q, nz, n)
print("max |N/n - 1| after 1000 steps:", np.max(np.abs(l2_norm_sq(c) / n - 1)))
