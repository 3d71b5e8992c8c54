import logging
import math

import numpy as np
import pytest
from scipy import stats

from nlsgibbs.dynamics import IntegratorCfg, ggc_stepper, make_noise
from nlsgibbs.errors import ConfigError, InsufficientSignalError
from nlsgibbs.field import ModelParams, l2_norm_sq, lp_norm_p
from nlsgibbs.measures import ChainConfig, sample_free, sample_ggc
from nlsgibbs.relaxation import (
    EnsembleStats,
    RateFit,
    cis_overlap,
    equilibrium_test,
    fit_rate,
    mode_power,
    ou_power_rate,
    run_ensemble,
    select_window,
    write_fits,
)
from nlsgibbs.tables import read_table

FREE = ModelParams(K=4)


def _synthetic(rate, M=400, amp=1.0, noise=0.05, seed=0, n=120, dt=0.05):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * dt
    members = amp * np.exp(-rate * t)[:, None] + noise * rng.standard_normal((n, M))
    return EnsembleStats.from_members(t, {"x": members}, "synthetic")


def _free_ensemble(init, M, seed, n_steps=300, dt=0.01, observables=None, params=FREE):
    nz = make_noise(params)
    cfg = IntegratorCfg(dt=dt, n_steps=n_steps, record_every=5)
    obs = observables or {"N": l2_norm_sq, "L4": lambda c: lp_norm_p(c, 4, params.L)}
    return run_ensemble(init, ggc_stepper(params, nz), cfg, obs, M, seed)


def _cold(params):
    return lambda rng, M: np.zeros((M, 2 * params.K + 1), complex)


def _equilibrium(params):
    return lambda rng, M: sample_free(rng, params, M)


# --------------------------------------------------------------- fit_rate


def test_synthetic_rate_recovered():
    st = _synthetic(0.7)
    f = fit_rate(st, "x", 0.0, n_boot=200, rng=1)
    assert 0.6 <= f.rate <= 0.8
    assert f.rate_ci[0] <= f.rate <= f.rate_ci[1]
    assert 0 <= f.r_squared <= 1 and f.r_squared > 0.95


@pytest.mark.parametrize("rate", [0.3, 1.5, 4.0])
def test_synthetic_ci_covers_truth(rate):
    st = _synthetic(rate, noise=0.02, seed=int(10 * rate))
    f = fit_rate(st, "x", 0.0, n_boot=300, rng=2)
    assert f.rate_ci[0] <= rate <= f.rate_ci[1]


def test_negative_offset_and_equilibrium_samples():
    rng = np.random.default_rng(3)
    t = np.arange(100) * 0.05
    eq = 2.0 + 0.3 * rng.standard_normal(5000)
    members = 2.0 - 1.5 * np.exp(-1.1 * t)[:, None] + 0.3 * rng.standard_normal((100, 500))
    st = EnsembleStats.from_members(t, {"x": members})
    f = fit_rate(st, "x", eq, n_boot=200, rng=4)
    assert f.amplitude < 0
    assert f.rate_ci[0] <= 1.1 <= f.rate_ci[1]


def test_pure_noise_is_insufficient_signal():
    st = _synthetic(1.0, amp=0.0)
    with pytest.raises(InsufficientSignalError):
        fit_rate(st, "x", 0.0)


def test_window_too_short():
    t = np.linspace(0, 1, 20)
    d = np.where(t < 0.1, 1.0, 0.0)
    with pytest.raises(InsufficientSignalError):
        select_window(t, d, np.full(20, 0.01))


def test_window_ends_at_noise_floor():
    t = np.linspace(0, 5, 101)
    d = np.exp(-t)
    noise = np.full_like(t, 0.01)
    i0, i1 = select_window(t, d, noise, start_frac=0.5)
    assert d[i0] <= 0.5 and d[i0 - 1] > 0.5
    assert d[i1 - 1] > 0.03 >= d[i1]


def test_rate_fit_invariants_and_csv(tmp_path):
    f = fit_rate(_synthetic(0.7), "x", 0.0, n_boot=100, rng=0)
    write_fits(tmp_path / "fits.csv", [f, f])
    rows = read_table(tmp_path / "fits.csv")
    assert len(rows) == 2
    assert float(rows[0]["rate"]) == pytest.approx(f.rate)
    assert set(rows[0]) >= {"rate", "ci_low", "ci_high", "r_squared", "t_min", "t_max"}
    other = RateFit("x", 1.0, (f.rate_ci[1], f.rate_ci[1] + 1), 1.0, 1.0, (0, 1), 5)
    assert cis_overlap(f, other)
    assert not cis_overlap(f, RateFit("x", 9.0, (f.rate_ci[1] + 1, f.rate_ci[1] + 2), 1.0, 1.0, (0, 1), 5))


# ------------------------------------------------------------ run_ensemble


def test_minimum_ensemble_size():
    with pytest.raises(ConfigError):
        _free_ensemble(_cold(FREE), 50, 0, n_steps=5)


def test_bitwise_reproducible():
    a = _free_ensemble(_equilibrium(FREE), 128, 11, n_steps=40)
    b = _free_ensemble(_equilibrium(FREE), 128, 11, n_steps=40)
    c = _free_ensemble(_equilibrium(FREE), 128, 12, n_steps=40)
    for k in a.members:
        assert np.array_equal(a.members[k], b.members[k])
        assert np.array_equal(a.mean[k], b.mean[k]) and np.array_equal(a.stderr[k], b.stderr[k])
    assert not np.array_equal(a.members["N"], c.members["N"])


def test_times_strictly_increasing():
    with pytest.raises(ValueError):
        EnsembleStats.from_members([0.0, 0.0, 1.0], {"x": np.ones((3, 4))})


def test_stationary_from_equilibrium():
    st = _free_ensemble(_equilibrium(FREE), 1000, 5)
    exact = {"N": float(np.sum(2 / FREE.theta))}
    z = (st.mean["N"] - exact["N"]) / st.stderr["N"]
    assert np.max(np.abs(z)) < 3
    # the quartic observable has no closed form here: compare with the time average
    m = st.mean["L4"]
    assert np.max(np.abs(m - m.mean()) / st.stderr["L4"]) < 3


def test_cold_start_rises_to_plateau():
    st = _free_ensemble(_cold(FREE), 1000, 6, n_steps=500)
    n = st.mean["N"]
    exact = float(np.sum(2 / FREE.theta))
    assert n[0] == 0
    # early growth is monotone while it is well resolved
    early = n[: np.argmax(n > 0.8 * exact)]
    assert np.all(np.diff(early) > 0)
    assert abs(n[-1] - exact) < 3 * st.stderr["N"][-1]


def test_stderr_shrinks_by_root_two_when_doubling():
    sd = math.sqrt(np.sum(4 / FREE.theta**2))
    se = {}
    for M, seed in ((256, 7), (512, 8)):
        st = _free_ensemble(_equilibrium(FREE), M, seed, n_steps=600)
        # average over a long stationary run; nearby times are correlated
        se[M] = float(np.mean(st.stderr["N"]))
        assert se[M] * math.sqrt(M) == pytest.approx(sd, rel=0.1)
    assert se[256] / se[512] == pytest.approx(math.sqrt(2), rel=0.15)


def test_long_table(tmp_path):
    st = _free_ensemble(_equilibrium(FREE), 100, 9, n_steps=20)
    st.to_long_csv(tmp_path / "long.csv")
    rows = read_table(tmp_path / "long.csv")
    assert len(rows) == 2 * st.times.size
    assert set(rows[0]) == {"t", "observable", "mean", "stderr", "init", "M"}
    st.to_csv(tmp_path / "wide.csv")
    assert len(read_table(tmp_path / "wide.csv")) == st.times.size


def test_coupled_reference_shares_noise():
    p = FREE
    nz = make_noise(p)
    cfg = IntegratorCfg(dt=0.01, n_steps=200, record_every=10)
    obs = {"N": l2_norm_sq}
    st = run_ensemble(_cold(p), ggc_stepper(p, nz), cfg, obs, 200, 3, reference_sampler=_equilibrium(p))
    d = st.offset("N")
    assert d.shape == (st.times.size, 200)
    assert np.array_equal(d[0], -st.reference["N"][0])
    # shared increments make the pair contract; independent copies would not
    independent = np.hypot(np.std(st.members["N"][-1]), np.std(st.reference["N"][-1]))
    assert np.std(d[-1]) < 0.6 * independent


# ------------------------------------------------------------ OU closed form


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_free_mode_power_rate(k):
    p = ModelParams(K=4)
    nz = make_noise(p)
    cfg = IntegratorCfg(dt=0.01, n_steps=400, record_every=4)
    st = run_ensemble(_cold(p), ggc_stepper(p, nz), cfg, {"P": mode_power(k, p.K)}, 2000, 20 + k)
    exact_eq = 2 / p.theta[k + p.K]
    f = fit_rate(st, "P", exact_eq, n_boot=300, rng=k)
    target = ou_power_rate(p, nz, k)
    assert f.rate_ci[0] <= target <= f.rate_ci[1]
    assert f.r_squared > 0.9


def test_ou_rate_formula():
    p = ModelParams(K=3, beta=2.0, m=0.5, L=3.0)
    nz = make_noise(p, s=0.45)
    k = np.arange(-3, 4)
    omega_t = (2 * np.pi * k / p.L) ** 2 + p.m**2
    expect = p.beta * (1 / (p.beta * omega_t)) ** 0.9 * omega_t
    assert np.allclose([ou_power_rate(p, nz, int(j)) for j in k], expect)


# ------------------------------------------------------ equilibrium_test


GGC = ModelParams(K=8, lam=0.5, kappa=1.0, r=10)


@pytest.fixture(scope="module")
def ggc_pool():
    cfg = ChainConfig(n_chains=10_000, burn_in=500, n_keep=1, thin=1)
    return l2_norm_sq(sample_ggc(np.random.default_rng(0), GGC, cfg).samples)


def test_null_calibration(ggc_pool):
    groups = ggc_pool.reshape(100, 2, 50)
    pv = np.array([equilibrium_test(a, b)[1] for a, b in groups])
    assert np.sum(pv < 0.01) <= 4
    # discrete KS p-values are conservative, so only check against gross skew
    assert stats.kstest(pv, "uniform").pvalue > 1e-3 or np.mean(pv) > 0.5


def test_power_against_wrong_kappa(ggc_pool):
    cfg = ChainConfig(n_chains=500, burn_in=500, n_keep=1, thin=1)
    other = sample_ggc(np.random.default_rng(1), GGC.replace(kappa=4.0), cfg).samples
    stat, p = equilibrium_test(ggc_pool[:500], l2_norm_sq(other))
    assert p < 0.01 and stat > 0


def test_small_sample_warning(caplog):
    rng = np.random.default_rng(2)
    with caplog.at_level(logging.WARNING, logger="nlsgibbs"):
        equilibrium_test(rng.random(20), rng.random(200))
    assert any("power" in r.message for r in caplog.records)
