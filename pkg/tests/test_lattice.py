import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad, solve_ivp

from kgbutcher.exceptions import ConfigError, ResolutionError, ShapeError
from kgbutcher.initial_data import gaussian_bump, single_mode, zero
from kgbutcher.lattice import (
    CauchyData,
    FieldSnapshot,
    GridSpec,
    TimeSampledField,
    _band_limited,
    dispersion,
    estimate_algebra_constant,
    free_evolve,
    free_field,
    from_spectral,
    klein_gordon_operator,
    physical_l2_norm,
    pointwise_product,
    read_snapshot_binary,
    read_snapshot_csv,
    retarded_kernel,
    snapshot_from_function,
    sobolev_norm,
    sobolev_norms,
    solve_retarded,
    to_spectral,
    triple_norm,
    write_snapshot_binary,
    write_snapshot_csv,
)


def sampled(grid, T, dt, fn):
    """TimeSampledField with values fn(t, x) on the (t_j, x) grid."""
    t = np.arange(int(round(T / dt)) + 1) * dt
    x = grid.coordinates()[0]
    return TimeSampledField(grid, dt, np.array([fn(tj, x) for tj in t]))


# -- grid and dispersion ------------------------------------------------------


def test_grid_validation_lists_every_problem():
    with pytest.raises(ConfigError) as exc:
        GridSpec(4, 7, -1.0, 0.0)
    keys = {p.split(":")[0] for p in exc.value.problems}
    assert keys == {"dims", "grid_n", "box_L", "mass"}


def test_dispersion():
    g = GridSpec(1, 8, 2 * np.pi, 1.0)
    assert dispersion(g, 0.0) == 1.0
    assert dispersion(g, np.sqrt(3.0)) == pytest.approx(2.0)
    ks = np.linspace(0, 5, 11)
    w = dispersion(g, ks[:, None])
    assert np.all(np.diff(w) >= 0) and np.all(w >= g.m)


def test_wavevectors_cover_fft_range():
    g = GridSpec(1, 8, 4.0, 1.0)
    j = g.wavevectors()[0] * g.L / (2 * np.pi)
    assert sorted(np.round(j).astype(int).tolist()) == list(range(-4, 4))


# -- free evolution -------------------------------------------------------------


def test_free_evolve_t0_returns_data(grid64):
    data = CauchyData(gaussian_bump(grid64), single_mode(grid64, 0.3, 2))
    phi, dphi, _ = free_evolve(data, 0.0)
    np.testing.assert_allclose(phi.values, data.phi0.values, atol=1e-14)
    np.testing.assert_allclose(dphi.values, data.phi1.values, atol=1e-14)


def test_free_evolve_single_mode_closed_form():
    g = GridSpec(1, 32, 3.0, 0.7)
    data = CauchyData(zero(g), single_mode(g, 1.0, 1))
    k = 2 * np.pi / g.L
    w = np.sqrt(k**2 + g.m**2)
    x = g.coordinates()[0]
    for t in (0.1, 0.9, 2.5):
        phi, dphi, ddphi = free_evolve(data, t)
        np.testing.assert_allclose(phi.values, np.sin(w * t) / w * np.cos(k * x), atol=1e-13)
        np.testing.assert_allclose(dphi.values, np.cos(w * t) * np.cos(k * x), atol=1e-13)
        np.testing.assert_allclose(ddphi.values, -w * np.sin(w * t) * np.cos(k * x), atol=1e-13)


def test_free_evolve_zero_data():
    g = GridSpec(1, 16)
    phi, dphi, ddphi = free_evolve(CauchyData(zero(g), zero(g)), 1.3)
    assert not phi.values.any() and not dphi.values.any() and not ddphi.values.any()


def test_free_field_residual_second_order():
    g = GridSpec(1, 128, 2 * np.pi, 1.0)
    data = CauchyData(gaussian_bump(g), zero(g))
    r = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        f = free_field(data, 0.5, dt)
        r.append(sobolev_norms(g, klein_gordon_operator(f), 0).max())
    ratios = np.array(r[:-1]) / np.array(r[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.05)


def test_free_field_carried_residual_is_roundoff(grid64, scenario):
    f = free_field(scenario, 0.5, 1e-2)
    assert sobolev_norms(grid64, klein_gordon_operator(f, use_carried=True), 0).max() < 1e-11


# -- Duhamel solve ---------------------------------------------------------------


def test_solve_retarded_zero_source(grid64):
    out = solve_retarded(TimeSampledField.zeros(grid64, 1.0, 0.1, derivatives=False))
    assert not out.values.any()


@pytest.mark.parametrize("m", [1.0, 2.3])
def test_solve_retarded_constant_source(m):
    g = GridSpec(1, 8, 2 * np.pi, m)
    dt, T = 1e-3, 2.0
    out = solve_retarded(sampled(g, T, dt, lambda t, x: np.ones_like(x)))
    t = out.times
    exact = -(1 - np.cos(m * t)) / m**2
    np.testing.assert_allclose(out.values[:, 3], exact, atol=1e-6)
    # independent ODE oracle for u'' + m^2 u = -1
    sol = solve_ivp(lambda s, y: [y[1], -1 - m**2 * y[0]], (0, T), [0, 0], t_eval=t[::100], rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(out.values[::100, 0], sol.y[0], atol=1e-6)
    np.testing.assert_allclose(out.d1[::100, 0], sol.y[1], atol=1e-6)
    assert out.values[0].max() == 0 and out.d1[0].max() == 0


def test_solve_retarded_single_mode_quadrature_oracle():
    g = GridSpec(1, 16, 2 * np.pi, 1.0)
    k = 1.0
    w = np.sqrt(2.0)
    gfun = lambda s: np.sin(3 * s) + s  # noqa: E731
    dt = 1e-3
    out = solve_retarded(sampled(g, 1.0, dt, lambda t, x: gfun(t) * np.cos(k * x)))
    x = g.coordinates()[0]
    for j in (250, 600, 1000):
        t = j * dt
        amp = -quad(lambda s: np.sin(w * (t - s)) / w * gfun(s), 0, t, epsabs=1e-13)[0]
        np.testing.assert_allclose(out.values[j], amp * np.cos(k * x), atol=1e-6)


def test_duhamel_inverse(grid64):
    src = sampled(grid64, 1.0, 2.5e-3, lambda t, x: np.exp(-t) * np.sin(2 * x) + t**2 * np.cos(x))
    u = solve_retarded(src)
    r_carried = klein_gordon_operator(u, use_carried=True) + src.values[1:-1]
    assert np.abs(r_carried).max() < 1e-12
    r_fd = klein_gordon_operator(u) + src.values[1:-1]
    assert np.abs(r_fd).max() < 1e-4


def test_causality(grid64):
    s0 = 0.4
    src = sampled(grid64, 1.0, 1e-2, lambda t, x: (t >= s0) * np.cos(x) * (1 + t))
    u = solve_retarded(src)
    j0 = int(round(s0 / 1e-2))
    assert not u.values[:j0].any()
    assert np.abs(u.values[j0]).max() < 1e-15


def test_solve_retarded_matches_kernel_convolution():
    g = GridSpec(1, 16, 2 * np.pi, 1.0)
    dt = 1e-2
    src = sampled(g, 0.5, dt, lambda t, x: np.cos(t) * np.exp(np.cos(x)))
    u = solve_retarded(src)
    x = g.coordinates()[0]
    w = np.full(src.nt, dt)
    w[0] = w[-1] = dt / 2
    direct = np.zeros(g.n)
    for i in range(g.n):
        for j in range(src.nt):
            K = retarded_kernel(g, 0.5 - j * dt, x[i] - x)
            direct[i] -= w[j] * g.cell_volume * np.sum(K * src.values[j])
    np.testing.assert_allclose(u.values[-1], direct, atol=1e-12)


def test_solve_retarded_shape_error():
    a = TimeSampledField.zeros(GridSpec(1, 8), 1.0, 0.1)
    b = TimeSampledField.zeros(GridSpec(1, 16), 1.0, 0.1)
    with pytest.raises(ShapeError):
        pointwise_product([a, b])


# -- products ---------------------------------------------------------------


def test_product_identity_and_zero(grid64, scenario):
    f = free_field(scenario, 0.2, 0.05)
    one = TimeSampledField(grid64, 0.05, np.ones_like(f.values))
    np.testing.assert_array_equal(pointwise_product([f, one]).values, f.values)
    assert not pointwise_product([f, f * 0.0]).values.any()


def test_product_mode_content():
    g = GridSpec(1, 16, 2 * np.pi, 1.0)
    f = sampled(g, 0.1, 0.1, lambda t, x: np.cos(x))
    sq = pointwise_product([f, f]).values[0]
    spec = np.abs(to_spectral(g, sq)) / g.n
    active = set(np.nonzero(spec > 1e-12)[0].tolist())
    assert active == {0, 2, g.n - 2}
    np.testing.assert_allclose(sq, 0.5 + 0.5 * np.cos(2 * g.coordinates()[0]), atol=1e-14)


def test_dealiasing_removes_aliased_mode():
    g = GridSpec(1, 8, 2 * np.pi, 1.0)
    f = sampled(g, 0.1, 0.1, lambda t, x: np.cos(3 * x))
    plain = pointwise_product([f, f]).values[0]
    clean = pointwise_product([f, f], dealias=True).values[0]
    x = g.coordinates()[0]
    # cos(6x) aliases to cos(2x) on 8 points; the dealiased product drops it
    np.testing.assert_allclose(plain, 0.5 + 0.5 * np.cos(2 * x), atol=1e-14)
    np.testing.assert_allclose(clean, 0.5, atol=1e-14)


def test_dealiasing_exact_for_resolved_products():
    g = GridSpec(1, 32, 2 * np.pi, 1.0)
    f = sampled(g, 0.1, 0.1, lambda t, x: np.cos(2 * x) + 0.3 * np.sin(x))
    np.testing.assert_allclose(
        pointwise_product([f, f, f], dealias=True).values, pointwise_product([f, f, f]).values, atol=1e-13
    )


# -- norms ---------------------------------------------------------------------


def test_sobolev_zero_constant_homogeneity(grid64):
    z = FieldSnapshot(grid64, np.zeros(grid64.shape))
    assert sobolev_norm(z, 2) == 0
    c = FieldSnapshot(grid64, np.full(grid64.shape, -1.7))
    assert sobolev_norm(c, 0) == pytest.approx(1.7 * np.sqrt(grid64.volume), rel=1e-13)
    f = gaussian_bump(grid64)
    assert sobolev_norm(f * 2.0, 1) == pytest.approx(2 * sobolev_norm(f, 1), rel=1e-14)


def test_sobolev_single_mode_weight():
    g = GridSpec(1, 32, 2 * np.pi, 1.0)
    f = single_mode(g, 1.0, 3)
    # ||cos(3x)||_{L2}^2 = pi, weight (1 + 9)^q
    assert sobolev_norm(f, 2) == pytest.approx(np.sqrt(np.pi * 100), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 16, elements=st.floats(-10, 10)))
def test_parseval_and_round_trip(vals):
    g = GridSpec(1, 16, 3.0, 1.0)
    back = from_spectral(g, to_spectral(g, vals))
    np.testing.assert_allclose(back, vals, atol=1e-12)
    snap = FieldSnapshot(g, vals)
    assert sobolev_norm(snap, 0) == pytest.approx(physical_l2_norm(snap), rel=1e-10, abs=1e-12)


def test_parseval_2d():
    g = GridSpec(2, 8, 2.0, 1.0)
    rng = np.random.default_rng(3)
    snap = FieldSnapshot(g, rng.standard_normal(g.shape))
    assert sobolev_norm(snap, 0) == pytest.approx(physical_l2_norm(snap), rel=1e-12)


def test_algebra_inequality_with_published_constant(grid64):
    c_q = estimate_algebra_constant(grid64, 1)
    assert 0 < c_q < 1
    rng = np.random.default_rng(12345)
    for B in range(1, 9):
        for _ in range(8):
            f = _band_limited(grid64, B, rng)
            g = _band_limited(grid64, B, rng)
            lhs = sobolev_norms(grid64, f * g, 1)
            assert lhs <= c_q * sobolev_norms(grid64, f, 1) * sobolev_norms(grid64, g, 1)


def test_algebra_constant_is_deterministic(grid64):
    assert estimate_algebra_constant(grid64, 1) == estimate_algebra_constant(grid64, 1)


def test_triple_norm_free_single_mode():
    g = GridSpec(1, 64, 2 * np.pi, 1.0)
    data = CauchyData(single_mode(g, 0.5, 2), zero(g))
    f = free_field(data, 1.0, 1e-3)
    for q in (1, 2):
        tn = triple_norm(f, q)
        assert 0 < tn <= data.norm(q) * (1 + 1e-12)
        assert triple_norm(f * -3.0, q) == pytest.approx(3 * tn, rel=1e-14)
    assert triple_norm(f * 0.0, 1) == 0


def test_triple_norm_differences_match_carried(grid64, scenario):
    f = free_field(scenario, 0.5, 1e-3)
    bare = TimeSampledField(grid64, f.dt, f.values)
    assert triple_norm(bare, 1) == pytest.approx(triple_norm(f, 1), rel=1e-4)


def test_triple_norm_needs_samples(grid64):
    f = TimeSampledField(grid64, 0.1, np.zeros((2,) + grid64.shape))
    with pytest.raises(ResolutionError):
        triple_norm(f, 1)


# -- containers and serialization --------------------------------------------


def test_snapshot_rejects_nonfinite(grid64):
    with pytest.raises(ConfigError):
        FieldSnapshot(grid64, np.full(grid64.shape, np.nan))


def test_time_sampled_field_shape_checks(grid64):
    with pytest.raises(ShapeError):
        TimeSampledField(grid64, 0.1, np.zeros((3, 10)))
    with pytest.raises(ConfigError):
        TimeSampledField.zeros(grid64, 1.0, 0.3)


def test_serialization_round_trip(tmp_path):
    g = GridSpec(2, 4, 1.5, 0.8)
    snap = snapshot_from_function(g, lambda x, y: np.sin(x) * y + 0.1, t=0.25)
    write_snapshot_csv(tmp_path / "f.csv", snap)
    write_snapshot_binary(tmp_path / "f.bin", snap)
    for back in (read_snapshot_csv(tmp_path / "f.csv"), read_snapshot_binary(tmp_path / "f.bin")):
        assert back.grid == g and back.t == 0.25
        np.testing.assert_array_equal(back.values, snap.values)
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ConfigError):
        read_snapshot_binary(tmp_path / "bad.bin")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "d,n,L,m,t"
