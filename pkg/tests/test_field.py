import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from nlsgibbs.errors import DealiasingError, TruncationError
from nlsgibbs.field import (
    ModelParams,
    SpectralField,
    effective_energy,
    from_grid,
    grad_effective_energy,
    hamiltonian,
    holder_seminorm,
    inverse_transform,
    l2_norm_sq,
    lp_norm_p,
    read_binary,
    sobolev_norm_sq,
    sup_norm,
    to_grid,
    transform,
    write_binary,
    write_csv,
)


def random_field(rng, K, L=1.0, decay=1.0):
    k = np.arange(-K, K + 1)
    amp = 1.0 / (1.0 + np.abs(k)) ** decay
    return SpectralField(amp * (rng.standard_normal(2 * K + 1) + 1j * rng.standard_normal(2 * K + 1)), L)


def test_transform_zero_and_constant():
    z = SpectralField.zeros(4, 2.0)
    assert np.all(transform(z, 16).values == 0)
    one = SpectralField.from_modes({0: 1.0}, 4, 2.0)
    assert np.allclose(transform(one, 16).values, 1 / math.sqrt(2.0), atol=1e-15)


def test_transform_round_trip():
    rng = np.random.default_rng(0)
    f = random_field(rng, 8, 3.0)
    back = inverse_transform(transform(f, 64), 8)
    assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-12
    assert np.max(np.abs(back.coeffs - f.coeffs)) <= 100 * np.finfo(float).eps * np.max(np.abs(f.coeffs))


def test_transform_rejects_small_grid():
    with pytest.raises(TruncationError):
        transform(SpectralField.zeros(8), 16)


def test_plane_wave_matches_formula():
    L = 2 * np.pi
    f = SpectralField.from_modes({3: 1.0}, 4, L)
    grid = transform(f, 32)
    expected = np.exp(1j * 3 * grid.x) / math.sqrt(L)
    assert np.allclose(grid.values, expected, atol=1e-14)


def test_l2_norm_examples():
    assert l2_norm_sq(SpectralField.zeros(3)) == 0
    assert l2_norm_sq(SpectralField.from_modes({1: 3 + 4j}, 3)) == pytest.approx(25)


def test_parseval_against_quadrature():
    rng = np.random.default_rng(1)
    f = random_field(rng, 8, 1.7)
    v = transform(f, 64).values
    quad = (f.L / 64) * np.sum(np.abs(v) ** 2)
    assert abs(l2_norm_sq(f) - quad) / quad < 1e-10


def test_lp_norm_examples():
    L = 2 * np.pi
    one = SpectralField.from_modes({0: math.sqrt(L)}, 4, L)
    assert lp_norm_p(one, 4) == pytest.approx(L, rel=1e-13)
    assert lp_norm_p(SpectralField.zeros(4, L), 4) == 0


def test_lp_norm_sine_against_dense_quadrature():
    L = 2 * np.pi
    c = math.sqrt(L) / 2j
    f = SpectralField.from_modes({1: c, -1: -c}, 4, L)
    M = 32
    x = np.arange(10 * M) * L / (10 * M)
    oracle = L / (10 * M) * np.sum(np.sin(x) ** 4)
    assert oracle == pytest.approx(3 * np.pi / 4, rel=1e-12)
    assert abs(lp_norm_p(f, 4, M=M) - oracle) < 1e-10


def test_lp_norm_converges_under_refinement():
    rng = np.random.default_rng(2)
    f = random_field(rng, 8)
    a = lp_norm_p(f, 4, M=64)
    b = lp_norm_p(f, 4, M=128)
    assert abs(a - b) < 1e-10 * max(1, a)


def test_lp_norm_requires_padding():
    with pytest.raises(DealiasingError):
        lp_norm_p(SpectralField.zeros(8), 4, M=32)


def test_sobolev_examples():
    m, L = 1.5, 2.0
    f = SpectralField.from_modes({0: 0.7 - 0.2j}, 3, L)
    for g in (0.0, 0.3, 1.0):
        assert sobolev_norm_sq(f, g, m) == pytest.approx(m ** (4 * g) * l2_norm_sq(f))
    rng = np.random.default_rng(3)
    h = random_field(rng, 6, L)
    assert sobolev_norm_sq(h, 0.0, m) == pytest.approx(l2_norm_sq(h))
    one = SpectralField.from_modes({1: 2 - 1j}, 3, 2 * np.pi)
    assert sobolev_norm_sq(one, 0.25, 1.0) == pytest.approx(math.sqrt(2) * 5)


def test_holder_constant_is_zero():
    f = SpectralField.from_modes({0: 2.0}, 3, 1.0)
    assert holder_seminorm(f, 0.5, 64) == pytest.approx(0, abs=1e-13)


def test_holder_plane_wave_against_closed_form_and_dense_search():
    L = 2 * np.pi
    f = SpectralField.from_modes({1: math.sqrt(L)}, 2, L)
    est = holder_seminorm(f, 0.5, 4096)
    # |e^{iy} - e^{ix}| = 2 sin(d/2): maximize over the circle distance d
    res = optimize.minimize_scalar(lambda d: -2 * np.sin(d / 2) / d**0.5, bounds=(1e-9, np.pi), method="bounded")
    exact = -res.fun
    dense = holder_seminorm(f, 0.5, 16384)
    assert abs(est - dense) / dense < 0.02
    assert est <= exact + 1e-12
    assert abs(est - exact) / exact < 0.02


def test_holder_monotone_in_grid():
    rng = np.random.default_rng(4)
    f = random_field(rng, 6)
    vals = [holder_seminorm(f, 0.4, M) for M in (32, 64, 128, 256)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_homogeneity(re, im, seed):
    a = complex(re, im)
    f = random_field(np.random.default_rng(seed), 5, 1.3)
    g = f.scaled(a)
    s = abs(a)
    assert np.isclose(l2_norm_sq(g), s**2 * l2_norm_sq(f), rtol=1e-12, atol=1e-300)
    assert np.isclose(lp_norm_p(g, 4), s**4 * lp_norm_p(f, 4), rtol=1e-12, atol=1e-300)
    assert np.isclose(sobolev_norm_sq(g, 0.3, 1.0), s**2 * sobolev_norm_sq(f, 0.3, 1.0), rtol=1e-12, atol=1e-300)
    assert np.isclose(holder_seminorm(g, 0.4, 64), s * holder_seminorm(f, 0.4, 64), rtol=1e-12, atol=1e-300)


def test_hamiltonian_examples():
    p = ModelParams(L=2 * np.pi, lam=1.0, K=4)
    assert hamiltonian(SpectralField.zeros(4, p.L), p) == 0
    wave = SpectralField.from_modes({1: math.sqrt(2 * np.pi)}, 4, p.L)
    assert l2_norm_sq(wave) == pytest.approx(2 * np.pi)
    assert hamiltonian(wave, p) == pytest.approx(np.pi / 2, rel=1e-12)
    rng = np.random.default_rng(5)
    free = p.replace(lam=0.0)
    assert all(hamiltonian(random_field(rng, 4, p.L), free) >= 0 for _ in range(20))


def test_effective_energy_examples():
    p = ModelParams(L=1.0, m=1.3, K=4)
    assert effective_energy(SpectralField.zeros(4), p.replace(lam=1.0, kappa=1.0)) == 0
    rng = np.random.default_rng(6)
    f = random_field(rng, 4)
    c = f.coeffs
    expected = 0.5 * np.sum(p.omega * abs(c) ** 2) + 0.5 * p.m**2 * np.sum(abs(c) ** 2)
    assert effective_energy(f, p) == pytest.approx(expected)
    q = ModelParams(m=1.0, kappa=1.0, r=2, K=0)
    c0 = 0.8
    assert effective_energy(SpectralField([c0]), q) == pytest.approx(c0**2 / 2 + c0**4)


def test_gradient_examples():
    p = ModelParams(m=1.7, K=3)
    c = SpectralField.from_modes({0: 0.4 + 0.1j}, 3)
    assert np.allclose(grad_effective_energy(c, p).coeffs, p.m**2 * c.coeffs)
    z = grad_effective_energy(SpectralField.zeros(3), p.replace(lam=1.0, kappa=1.0))
    assert np.all(z.coeffs == 0)


@pytest.mark.parametrize("p_exp,r", [(4, 10), (4, 2), (6, 3), (3, 2)])
def test_gradient_matches_finite_differences(p_exp, r):
    rng = np.random.default_rng(7)
    params = ModelParams(L=1.3, m=0.9, lam=0.7, kappa=0.3, r=r, p=p_exp, K=8)
    f = random_field(rng, 8, params.L, decay=1.5).scaled(0.5)
    g = grad_effective_energy(f, params).coeffs
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        d = rng.standard_normal(17) + 1j * rng.standard_normal(17)
        d /= np.linalg.norm(d)
        plus = effective_energy(f.coeffs + h * d, params)
        minus = effective_energy(f.coeffs - h * d, params)
        fd = (plus - minus) / (2 * h)
        an = np.real(np.vdot(g, d))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-3 * np.linalg.norm(g)))
    assert worst < 1e-6


def _random_fields(rng, n, K, L):
    k = np.arange(-K, K + 1)
    amp = rng.uniform(0.2, 3.0, (n, 1)) / (1.0 + np.abs(k)) ** rng.uniform(0.5, 2.0, (n, 1))
    return amp * (rng.standard_normal((n, 2 * K + 1)) + 1j * rng.standard_normal((n, 2 * K + 1)))


@pytest.mark.parametrize("alpha", [0.25, 0.4, 0.45])
def test_sup_norm_bound(alpha):
    rng = np.random.default_rng(8)
    L, K, M = 1.7, 12, 128
    c = _random_fields(rng, 1000, K, L)
    n2 = np.sqrt(l2_norm_sq(c))
    lhs = sup_norm(c, M, L)
    hol = holder_seminorm(c, alpha, M, L)
    rhs = n2 / math.sqrt(L) + 2 * n2 ** (2 * alpha / (2 * alpha + 1)) * hol ** (1 / (2 * alpha + 1))
    assert np.sum(lhs > rhs * (1 + 1e-12)) == 0


def test_interpolation_bound():
    rng = np.random.default_rng(9)
    L, K = 0.8, 12
    c = _random_fields(rng, 1000, K, L)
    M = 64
    lp = lp_norm_p(c, 4, L, M)
    bound = l2_norm_sq(c) * sup_norm(c, M, L) ** 2
    assert np.all(lp <= bound * (1 + 1e-12))


def test_sobolev_embedding_ratio_does_not_grow():
    rng = np.random.default_rng(10)
    alpha, gamma, L = 0.25, 0.5, 2 * np.pi
    ratios = []
    for K in (32, 256):
        k = np.arange(-K, K + 1)
        theta = k.astype(float) ** 2 + 1.0
        c = (rng.standard_normal((40, 2 * K + 1)) + 1j * rng.standard_normal((40, 2 * K + 1))) / np.sqrt(theta)
        M = 4 * (2 * K + 2)
        M = 1 << (M - 1).bit_length()
        hol = holder_seminorm(c, alpha, M, L)
        lap = np.sum((k**2.0) ** (2 * gamma) * np.abs(c) ** 2, axis=-1)
        ratios.append(np.max(hol / np.sqrt(lap)))
    assert ratios[1] <= 1.1 * ratios[0]


def test_binary_round_trip_and_layout():
    rng = np.random.default_rng(11)
    fields = [random_field(rng, 3, 2.5) for _ in range(4)]
    buf = io.BytesIO()
    write_binary(buf, fields, M=16)
    raw = buf.getvalue()
    assert len(raw) == 4 * (24 + 16 * 7)
    K, L, M = np.frombuffer(raw[:8], "<i8")[0], np.frombuffer(raw[8:16], "<f8")[0], np.frombuffer(raw[16:24], "<i8")[0]
    assert (K, L, M) == (3, 2.5, 16)
    first = np.frombuffer(raw[24 : 24 + 16 * 7], "<f8")
    assert first[0] == fields[0].coeffs[0].real and first[1] == fields[0].coeffs[0].imag
    back, sizes = read_binary(io.BytesIO(raw))
    assert sizes == [16] * 4
    assert all(a == b for a, b in zip(fields, back))


def test_csv_export():
    f = SpectralField.from_modes({-1: 1 + 2j, 1: -0.5}, 1)
    buf = io.StringIO()
    write_csv(buf, f)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "k,re,im"
    assert lines[1] == "-1,1.0,2.0"
    assert lines[3] == "1,-0.5,0.0"


def test_batched_grid_functions_agree_with_single():
    rng = np.random.default_rng(12)
    c = _random_fields(rng, 5, 4, 1.0)
    v = to_grid(c, 1.0, 32)
    for i in range(5):
        assert np.allclose(v[i], transform(SpectralField(c[i]), 32).values)
    assert np.allclose(from_grid(v, 1.0, 4), c)
