import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgino import autodiff as ad
from mgino.physics import poisson_residual
from mgino.problems import (boundary_points, burgers_spectral_residual, exact_solution,
                            grf_coefficients, grf_eigenvalues, inside_star, instance_rng,
                            make_burgers_instance, make_manufactured_poisson,
                            make_poisson_instance, polar_radius, polyline_distance, rbf_source,
                            sample_grf_u0, signed_distance, solve_burgers,
                            solve_burgers_reference, upsample_periodic)


@pytest.fixture(scope="module")
def grf_samples():
    rng = np.random.default_rng(0)
    return np.stack([sample_grf_u0(64, rng) for _ in range(10_000)])


def test_grf_zero_mode_and_mean(grf_samples):
    c = grf_coefficients(grf_samples)
    assert np.var(c[:, 0].real) == pytest.approx(1.0, rel=0.05)
    assert np.max(np.abs(grf_samples.mean(0))) < 0.05


def test_grf_mode_ratio_and_spectrum(grf_samples):
    c = grf_coefficients(grf_samples)
    power = np.mean(np.abs(c) ** 2, axis=0)
    expect = ((4 * np.pi ** 2 + 25) / (16 * np.pi ** 2 + 25)) ** 2
    assert power[2] / power[1] == pytest.approx(expect, rel=0.10)
    k = np.arange(8)
    assert np.allclose(power[:8], grf_eigenvalues(k), rtol=0.10)


def test_grf_rejects_small_grid():
    with pytest.raises(ValueError):
        sample_grf_u0(4, np.random.default_rng(0))


def test_constant_is_exact_solution():
    out = solve_burgers(np.full(32, 0.7), np.linspace(0, 1, 5))
    assert np.allclose(out, 0.7, rtol=0, atol=1e-13)


def test_mass_conservation():
    u0 = sample_grf_u0(64, np.random.default_rng(1))
    out = solve_burgers(u0, np.linspace(0, 1, 6))
    assert np.max(np.abs(out.mean(0) - u0.mean())) <= 1e-8


def test_step_halving():
    u0 = sample_grf_u0(128, np.random.default_rng(2))
    dt = 0.25 * (1 / 128) ** 2 / 0.01
    a = solve_burgers(u0, np.array([1.0]), dt=dt)[:, 0]
    b = solve_burgers(u0, np.array([1.0]), dt=dt / 2)[:, 0]
    assert np.sqrt(np.mean((a - b) ** 2)) <= 1e-7


def test_reference_residual():
    u0 = upsample_periodic(sample_grf_u0(128, np.random.default_rng(3)), 512)
    # the time difference is fourth order, so tau must resolve the steepest front
    tau = 1e-4
    traj = solve_burgers(u0, 0.5 + tau * np.arange(-2, 3))
    r = burgers_spectral_residual(traj, tau)
    assert np.sqrt(np.mean(r ** 2)) <= 1e-6


def test_reference_shape_and_initial_state():
    u0 = sample_grf_u0(32, np.random.default_rng(4))
    u = solve_burgers_reference(u0, n_t_out=6, n_internal=64)
    assert u.shape == (32, 6)
    assert np.array_equal(u[:, 0], u0)
    with pytest.raises(ValueError):
        solve_burgers_reference(u0, n_internal=48)


def test_upsample_round_trip():
    u = sample_grf_u0(32, np.random.default_rng(5))
    fine = upsample_periodic(u, 128)
    assert np.allclose(fine[::4], u, atol=1e-12)


def test_burgers_instance_grid():
    inst = make_burgers_instance(np.random.default_rng(6), n_x=16, n_t=5, n_internal=64)
    pts = inst.grid_points()
    assert pts.shape == (80, 2)
    assert np.array_equal(inst.u[:, 0], inst.u0)


def test_instance_streams():
    a = instance_rng(7, 3).standard_normal(4)
    b = instance_rng(7, 3).standard_normal(4)
    c = instance_rng(7, 4).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_circle_area():
    inst = make_manufactured_poisson("quadratic", np.random.default_rng(0), r0=0.8)
    assert inst.cloud.weights.sum() == pytest.approx(math.pi * 0.64, rel=0.02)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_instance_invariants(seed):
    inst = make_poisson_instance(np.random.default_rng(seed), n_interior=200, n_boundary=40)
    cloud = inst.cloud
    assert abs(inst.c1) <= 0.2 and abs(inst.c2) <= 0.2
    inner = cloud.coords[cloud.interior_index]
    assert np.all(inside_star(inner, inst.c1, inst.c2))
    bpts = cloud.coords[cloud.boundary_index]
    theta = np.arctan2(bpts[:, 1], bpts[:, 0])
    assert np.allclose(np.hypot(bpts[:, 0], bpts[:, 1]), polar_radius(theta, inst.c1, inst.c2),
                       rtol=0, atol=1e-10)
    assert np.all(cloud.weights > 0)
    assert abs(cloud.weights.sum() - inst.area) <= 0.1 * inst.area
    assert np.all(cloud.sdf[cloud.interior_index] <= 0)
    assert np.all(inst.b[cloud.interior_index] == 0)


def test_sdf_at_boundary_against_dense_polyline():
    c1, c2, r0 = 0.15, -0.1, 1.0
    bpts, _ = boundary_points(97, c1, c2, r0)
    assert np.max(np.abs(signed_distance(bpts, c1, c2, r0))) <= 1e-3 * r0
    theta = np.linspace(0, 2 * np.pi, 20_000, endpoint=False)
    r = polar_radius(theta, c1, c2, r0)
    dense = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    pts = np.random.default_rng(1).uniform(-1.2, 1.2, size=(200, 2))
    sd = signed_distance(pts, c1, c2, r0)
    oracle = polyline_distance(pts, dense)
    assert np.allclose(np.abs(sd), oracle, atol=1e-4)
    assert np.all((sd < 0) == inside_star(pts, c1, c2, r0))


def test_rbf_sign_flag():
    p = np.array([[0.0, 0.0]])
    beta, mu = np.ones(3), np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    assert rbf_source(p, beta, mu)[0] == pytest.approx(math.exp(-1) + 1 + math.exp(-4))
    assert rbf_source(p, beta, mu, True)[0] == pytest.approx(math.exp(1) + 1 + math.exp(4))


def test_manufactured_examples():
    ex = exact_solution("quadratic")
    assert ex.source(np.array([[0.5, 0.5]]))[0] == pytest.approx(4.3, abs=1e-14)
    zero = make_manufactured_poisson("zero", np.random.default_rng(0), n_interior=60, n_boundary=20)
    assert np.all(zero.f == 0) and np.all(zero.b == 0)
    with pytest.raises(ValueError):
        exact_solution("cubic")


@pytest.mark.parametrize("kind", ["quadratic", "sinusoidal"])
def test_manufactured_source_consistent_with_residual(kind):
    inst = make_manufactured_poisson(kind, np.random.default_rng(1), c1=0.1, c2=-0.05,
                                     n_interior=100, n_boundary=30)
    ex = inst.exact
    if kind == "quadratic":
        fn = lambda x: x[:, 0] * x[:, 0] + x[:, 1] * x[:, 1]  # noqa: E731
    else:
        fn = lambda x: ad.sin(math.pi * x[:, 0]) * ad.sin(math.pi * x[:, 1])  # noqa: E731
    pts = inst.cloud.coords
    res = poisson_residual(fn, pts, inst.f, alpha=0.0)
    assert np.max(np.abs(res.residual.data)) <= 1e-12 * max(1, np.max(np.abs(inst.f)))
    bidx = inst.cloud.boundary_index
    assert np.allclose(inst.b[bidx], ex.value(pts[bidx]), rtol=0, atol=0)


def test_small_cloud_rejected():
    with pytest.raises(ValueError):
        make_poisson_instance(np.random.default_rng(0), n_interior=10)


def test_poisson_instance_deterministic():
    a = make_poisson_instance(instance_rng(3, 1), n_interior=80, n_boundary=20)
    b = make_poisson_instance(instance_rng(3, 1), n_interior=80, n_boundary=20)
    assert np.array_equal(a.cloud.coords, b.cloud.coords) and np.array_equal(a.f, b.f)
