import io
import math

import numpy as np
import pytest
from scipy import stats

from nlsgibbs.dynamics import (
    IntegratorCfg,
    canonical_drift_constant,
    canonical_sde_step,
    canonical_stepper,
    ggc_sde_step,
    ggc_stepper,
    make_noise,
    nls_step,
    nls_stepper,
    projected_trace,
    tangent_project,
    trajectory,
    window_ok,
)
from nlsgibbs.errors import BlowUpError, ConfigError, DegenerateStateError
from nlsgibbs.field import ModelParams, from_grid, hamiltonian, l2_norm_sq, lp_norm_p
from nlsgibbs.measures import ChainConfig, sample_free, sample_ggc


def wave_packet(K, L=2 * np.pi, k0=3):
    x = np.arange(512) * L / 512
    return from_grid(np.exp(-((x - L / 2) ** 2)) * np.exp(1j * k0 * x), L, K)


# ---------------------------------------------------------------- noise


def test_noise_examples():
    p = ModelParams(L=2 * np.pi, K=8)
    nz = make_noise(p, 0.47)
    assert math.isclose(nz.sigma[8], 1.0)
    half = make_noise(p, 0.5, override=True)
    np.testing.assert_allclose(half.sigma2, p.nu)
    assert make_noise(p, 0.49).trace < make_noise(p, 0.45).trace
    assert np.all(nz.sigma == nz.sigma[::-1])


def test_noise_window_fault():
    p = ModelParams(K=4)
    with pytest.raises(ConfigError):
        make_noise(p, 0.3)
    assert make_noise(p, 0.3, override=True).override


def test_window_check():
    p = ModelParams(K=16)
    assert window_ok(p, make_noise(p, 0.47))
    assert not window_ok(p, make_noise(p, 0.3, override=True))
    assert not window_ok(p.replace(m=0.5), make_noise(p.replace(m=0.5), 0.47))


def test_integrator_cfg():
    with pytest.raises(ConfigError):
        IntegratorCfg(dt=0)
    with pytest.raises(ConfigError):
        IntegratorCfg(scheme="rk4")
    with pytest.raises(ConfigError):
        IntegratorCfg(dt=1e-3, scheme="euler_maruyama").check(ModelParams(K=64))
    IntegratorCfg(dt=1e-5, scheme="euler_maruyama").check(ModelParams(K=8))


# ----------------------------------------------------------------- NLS


def test_nls_free_moduli():
    p = ModelParams(K=16)
    c = sample_free(0, p, 4)
    out = c
    for _ in range(100):
        out = nls_step(out, 1e-2, p)
    np.testing.assert_allclose(np.abs(out), np.abs(c), atol=1e-14)


def test_nls_single_mode_closed_form():
    p = ModelParams(K=0, lam=1.0, L=1.0)
    c0 = np.array([0.8 + 0.3j])
    c = c0
    for _ in range(1000):
        c = nls_step(c, 1e-3, p)
    # |phi|**2 = |c|**2 / L for the constant mode
    exact = np.exp(1j * p.lam * abs(c0[0]) ** 2 / p.L * 1.0) * c0
    assert abs(c[0] - exact[0]) < 1e-12


def test_nls_mass_conservation_random():
    p = ModelParams(K=32, lam=1.0)
    c = sample_free(1, p, 3)
    n0 = l2_norm_sq(c)
    out = c
    for _ in range(1000):
        out = nls_step(out, 1e-3, p)
    assert np.max(np.abs(l2_norm_sq(out) - n0) / n0) < 1e-12


def test_nls_strang_order():
    p = ModelParams(K=16, lam=1.0, L=2 * np.pi)
    c = wave_packet(16)
    ref = c
    for _ in range(1600):
        ref = nls_step(ref, 1 / 1600, p)
    errs = []
    for n in (25, 50, 100):
        y = c
        for _ in range(n):
            y = nls_step(y, 1 / n, p)
        errs.append(np.max(np.abs(y - ref)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_nls_energy_smooth_datum():
    p = ModelParams(K=32, lam=1.0, L=2 * np.pi)
    c = wave_packet(32)
    h0 = hamiltonian(c, p)
    tr = trajectory(c, nls_stepper(p), IntegratorCfg(dt=1e-3, n_steps=2000, record_every=100), params=p)
    assert np.max(np.abs(tr["H"] - h0)) / abs(h0) < 1e-6


def test_nls_linear_energy_constant():
    p = ModelParams(K=16, L=2 * np.pi)
    c = sample_free(2, p, 1)[0]
    tr = trajectory(c, nls_stepper(p), IntegratorCfg(dt=1e-3, n_steps=10_000, record_every=1000), params=p)
    assert np.max(np.abs(tr["H"] - tr["H"][0])) < 1e-10 * abs(tr["H"][0])


def test_nls_spectral_field_roundtrip():
    p = ModelParams(K=4, lam=1.0)
    f = sample_free(3, p)
    g = nls_step(f, 1e-3, p)
    assert g.L == f.L and g.K == 4


# ---------------------------------------------------------- GGC flow


def test_ou_stationary_variances():
    p = ModelParams(K=4)
    nz = make_noise(p)
    rng = np.random.default_rng(5)
    c = np.zeros((2000, 9), complex)
    acc = []
    for i in range(600):
        c = ggc_sde_step(c, 2e-2, rng, p, nz)
        if i >= 300 and i % 30 == 0:
            acc.append(np.abs(c) ** 2)
    a = np.concatenate(acc)
    se = a.std(axis=0) / math.sqrt(a.shape[0] / 2)
    assert np.all(np.abs(a.mean(axis=0) - 2 / p.theta) < 4 * se)


def test_ou_exact_in_distribution_large_dt():
    # the linear part is integrated exactly, so a huge step still lands on the invariant law
    p = ModelParams(K=2)
    nz = make_noise(p)
    c = ggc_sde_step(np.zeros((200_000, 5), complex), 50.0, 6, p, nz)
    np.testing.assert_allclose(np.mean(np.abs(c) ** 2, axis=0), 2 / p.theta, rtol=0.02)


def test_sigma_to_zero_recovers_nls():
    p = ModelParams(K=16, lam=1.0, L=2 * np.pi)
    c = wave_packet(16)
    diffs = []
    for scale in (1e-2, 1e-3, 0.0):
        nz = make_noise(p, scale=scale)
        a, b = c, c
        rng = np.random.default_rng(0)
        for _ in range(500):
            a = ggc_sde_step(a, 1e-3, rng, p, nz, M=None)
            b = nls_step(b, 1e-3, p)
        a = a * np.exp(1j * p.m**2 * 0.5)  # the mass term is a global phase
        diffs.append(np.max(np.abs(a - b)))
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-12


def test_ggc_invariance_small():
    p = ModelParams(K=8, lam=0.1, kappa=1.0)
    nz = make_noise(p)
    cfg = ChainConfig(n_chains=400, burn_in=300, thin=10)
    c = sample_ggc(7, p, cfg).samples
    rng = np.random.default_rng(8)
    for _ in range(1000):
        c = ggc_sde_step(c, 2e-3, rng, p, nz)
    ref = sample_ggc(9, p, cfg).samples
    assert stats.ks_2samp(l2_norm_sq(c), l2_norm_sq(ref)).pvalue > 0.01
    assert stats.ks_2samp(lp_norm_p(c, 4, p.L), lp_norm_p(ref, 4, p.L)).pvalue > 0.01


def test_hot_start_resolved():
    # N**9 is huge on a scaled-up free sample; the confining step must not overshoot to zero
    p = ModelParams(K=8, lam=0.1, kappa=1.0)
    nz = make_noise(p)
    c = sample_free(10, p, 16) * 1.5
    n0 = l2_norm_sq(c)
    c = ggc_sde_step(c, 1e-3, 0, p, nz)
    n1 = l2_norm_sq(c)
    big = n0 > 3
    assert np.all(n1[big] > 0.8) and np.all(n1[big] < 1.6)


def test_confining_step_matches_fine_reference():
    from nlsgibbs.dynamics import _kappa_substep

    p = ModelParams(K=8, kappa=1.0)
    nz = make_noise(p)
    c = sample_free(11, p, 4) * 0.8
    coarse = _kappa_substep(c, p, nz, 1e-3)
    fine = c
    for _ in range(1000):
        fine = _kappa_substep(fine, p, nz, 1e-6)
    np.testing.assert_allclose(coarse, fine, rtol=0.05, atol=1e-3)


def test_euler_maruyama_scheme_runs():
    p = ModelParams(K=2, L=2 * np.pi)
    nz = make_noise(p)
    with pytest.raises(ConfigError):
        IntegratorCfg(dt=2e-2, scheme="euler_maruyama").check(p, nz)
    IntegratorCfg(dt=2e-3, scheme="euler_maruyama").check(p, nz)
    rng = np.random.default_rng(11)
    c = sample_free(12, p, 4000)
    for _ in range(2000):
        c = ggc_sde_step(c, 2e-3, rng, p, nz, scheme="euler_maruyama")
    np.testing.assert_allclose(np.mean(np.abs(c) ** 2, axis=0), 2 / p.theta, rtol=0.1)


def test_blow_up_fault():
    p = ModelParams(K=2)
    nz = make_noise(p)
    c = np.zeros((3, 5), complex)
    c[1, 0] = np.nan
    with pytest.raises(BlowUpError) as e:
        ggc_sde_step(c, 1e-3, 0, p, nz)
    assert list(e.value.dump) == [1]

    def bad(c, dt, rng):
        return c * np.nan

    with pytest.raises(BlowUpError) as e:
        trajectory(np.ones(5, complex), lambda c, dt, rng: ggc_sde_step(bad(c, dt, rng), dt, rng, p, nz),
                   IntegratorCfg(n_steps=3), params=p)
    assert e.value.step == 1


def test_unknown_scheme():
    p = ModelParams(K=2)
    with pytest.raises(ConfigError):
        ggc_sde_step(np.zeros(5, complex), 1e-3, 0, p, make_noise(p), scheme="rk4")


# --------------------------------------------------------- canonical flow


def test_tangent_projection():
    p = ModelParams(K=4)
    c = sample_free(12, p, 5)
    v = sample_free(13, p, 5)
    t = tangent_project(c, v)
    np.testing.assert_allclose(np.sum((np.conj(c) * t).real, axis=-1), 0, atol=1e-13)
    np.testing.assert_allclose(tangent_project(c, t), t, atol=1e-13)


def test_projected_trace_formula():
    p = ModelParams(K=3)
    nz = make_noise(p)
    c = sample_free(14, p)
    c = c.coeffs
    # explicit real matrices
    n = c.size
    s2 = np.concatenate([nz.sigma2, nz.sigma2])
    x = np.concatenate([c.real, c.imag])
    P = np.eye(2 * n) - np.outer(x, x) / (x @ x)
    assert math.isclose(np.trace(np.diag(s2) @ P), projected_trace(c, nz), rel_tol=1e-12)


def test_canonical_sphere_exact():
    p = ModelParams(K=8, lam=0.5, kappa=1.0)
    nz = make_noise(p)
    c = sample_free(15, p, 4)
    rng = np.random.default_rng(16)
    target = np.array([0.5, 1.0, 1.5, 2.0])
    for _ in range(500):
        c = canonical_sde_step(c, 1e-3, rng, p, nz, n=target)
        assert np.max(np.abs(l2_norm_sq(c) - target) / target) < 1e-13


def test_canonical_drift_constant_is_one():
    p = ModelParams(K=8, lam=0.5)
    nz = make_noise(p)
    c = sample_free(17, p, 8)
    c *= np.sqrt(1 / l2_norm_sq(c))[:, None]
    const, se = canonical_drift_constant(c, p, nz, 1e-3, 2000, 18)
    assert abs(const - 1) < max(4 * se, 0.02)


def test_canonical_correction_cancels_drift():
    # at lam = kappa = 0 the step is affine in the noise, so E[dN] = dt**2 E|b - corr|**2 exactly
    p = ModelParams(K=8)
    nz = make_noise(p)
    dt = 1e-3
    c = sample_free(19, p, 20_000)
    c *= np.sqrt(1 / l2_norm_sq(c))[:, None]
    rot = np.exp(-1j * p.omega_tilde * dt) * c
    drift = -0.5 * tangent_project(rot, nz.sigma2 * tangent_project(rot, p.omega_tilde * rot))
    corr = 0.5 * projected_trace(rot, nz)[:, None] * rot
    expected = dt**2 * np.mean(l2_norm_sq(drift - corr))
    raw = canonical_sde_step(c, dt, 20, p, nz, correction=0.5, renormalize=False)
    dn = l2_norm_sq(raw) - 1
    assert abs(dn.mean() - expected) < 4 * dn.std() / math.sqrt(dn.size)


def test_canonical_noiseless_rotation():
    p = ModelParams(K=8)
    nz = make_noise(p, scale=0.0)
    c = sample_free(21, p, 3)
    out = c
    for _ in range(200):
        out = canonical_sde_step(out, 1e-3, 0, p, nz)
    np.testing.assert_allclose(np.abs(out), np.abs(c), atol=1e-13)


def test_canonical_degenerate():
    p = ModelParams(K=2)
    with pytest.raises(DegenerateStateError):
        canonical_sde_step(np.zeros(5, complex), 1e-3, 0, p, make_noise(p))


# ----------------------------------------------------------- trajectories


def test_trajectory_deterministic_replay():
    p = ModelParams(K=8, lam=0.1, kappa=1.0)
    nz = make_noise(p)
    cfg = IntegratorCfg(dt=1e-3, n_steps=200, record_every=20)
    c0 = sample_free(22, p, 3)
    a = trajectory(c0, ggc_stepper(p, nz), cfg, rng=5, params=p)
    b = trajectory(c0, ggc_stepper(p, nz), cfg, rng=5, params=p)
    for k in a.series:
        assert np.array_equal(a[k], b[k])
    assert np.all(np.isfinite(a["L4"]))
    assert a.t.shape == (11,) and a["N"].shape == (11, 3)


def test_trajectory_csv_and_snapshots():
    p = ModelParams(K=4)
    nz = make_noise(p)
    snaps = []
    tr = trajectory(sample_free(23, p), canonical_stepper(p, nz), IntegratorCfg(n_steps=30, record_every=10),
                    rng=1, params=p, snapshots=snaps)
    buf = io.StringIO()
    tr.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,N,H,L4,sobolev"
    assert len(lines) == 5 and len(snaps) == 4
    n = [float(line.split(",")[1]) for line in lines[1:]]
    assert max(n) - min(n) < 1e-13 * n[0]
