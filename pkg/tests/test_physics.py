import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgino import autodiff as ad
from mgino.mollified import BurgersModel, GinoModel, MollifiedLayer, gino_grid
from mgino.neural import Mlp
from mgino.physics import (LossSpec, burgers_residual, hybrid_loss, inject_noise, input_gradient,
                           measure_constant, metrics, poisson_residual)
from oracles import central_diff

pytestmark = pytest.mark.filterwarnings("ignore::mgino.autodiff.UnreachableGradientWarning")


def manufactured_burgers(x):
    return ad.exp(-1.0 * x[:, 1]) * ad.sin(2 * math.pi * x[:, 0])


def test_constant_field_zero_residual():
    res = burgers_residual(lambda x: 0.0 * x[:, 0] + 2.0, np.full(8, 2.0),
                           points=np.random.default_rng(0).uniform(size=(10, 2)))
    assert np.all(res.residual.data == 0.0) and float(res.loss.data) == 0.0


def test_manufactured_burgers_point():
    nu = 0.01
    res = burgers_residual(manufactured_burgers, np.zeros(4), nu=nu,
                           points=np.array([[0.25, 0.5]]), alpha=0.0)
    # v_t + v v_x - nu v_xx with v = e^-t sin(2 pi x): the advection term vanishes at x = 1/4
    t, x = 0.5, 0.25
    s, c = math.sin(2 * math.pi * x), math.cos(2 * math.pi * x)
    expect = (-math.exp(-t) * s + math.exp(-2 * t) * s * 2 * math.pi * c
              + nu * 4 * math.pi ** 2 * math.exp(-t) * s)
    assert res.residual.data[0] == pytest.approx(expect, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(0.05, 1))
def test_manufactured_burgers_anywhere(x, t):
    nu = 0.03
    res = burgers_residual(manufactured_burgers, np.zeros(4), nu=nu,
                           points=np.array([[x, t]]), alpha=0.0)
    s, c = math.sin(2 * math.pi * x), math.cos(2 * math.pi * x)
    expect = (-math.exp(-t) * s + math.exp(-2 * t) * s * 2 * math.pi * c
              + nu * 4 * math.pi ** 2 * math.exp(-t) * s)
    assert res.residual.data[0] == pytest.approx(expect, abs=1e-9)


def test_initial_condition_term():
    u0 = np.cos(2 * np.pi * np.arange(8) / 8)
    res = burgers_residual(lambda x: 0.0 * x[:, 0], u0, points=np.array([[0.5, 0.5]]), alpha=3.0)
    assert float(res.constraint.data) == pytest.approx(np.mean(u0 ** 2))
    assert float(res.loss.data) == pytest.approx(3.0 * np.mean(u0 ** 2))


def test_fd_backend_converges_to_autograd():
    # octic is C2 at the ball edge; half_cos (C1) limits FD second derivatives to first order
    model = BurgersModel(n_x=16, n_t=8, width=6, modes=(4, 3), n_layers=2, radius=0.35,
                         weight="octic", kernel_hidden=(8,), decoder_channels=4, seed=3)
    u0 = np.sin(2 * np.pi * np.arange(16) / 16)
    latent = model.latent(model.grid_input(u0))
    fn = lambda q: model.decode(latent, q)  # noqa: E731
    errs = []
    for n in (64, 128):
        grid = (np.linspace(0, 1, n + 1), np.linspace(0, 1, n // 4 + 1))
        auto = burgers_residual(fn, u0, grid=grid, alpha=0.0, create_graph=False).residual.data
        fd = burgers_residual(fn, u0, backend="fd_regular", grid=grid, alpha=0.0).residual.data
        errs.append(np.sqrt(np.mean((auto - fd) ** 2)))
    assert errs[0] / errs[1] >= 3.0


def test_fourier_backend_on_bandlimited_field():
    def field(x):
        return ad.sin(2 * math.pi * x[:, 0]) * (1 + x[:, 1]) \
            + 0.3 * ad.cos(4 * math.pi * x[:, 0]) * x[:, 1] * x[:, 1]

    grid = (np.arange(32) / 32, np.linspace(0, 1, 11))
    auto = burgers_residual(field, np.zeros(4), grid=grid, alpha=0.0).residual.data
    four = burgers_residual(field, np.zeros(4), backend="fourier", grid=grid, alpha=0.0)
    assert np.max(np.abs(auto - four.residual.data)) <= 1e-6


def test_grid_backend_rejects_scattered_points():
    with pytest.raises(ValueError):
        burgers_residual(manufactured_burgers, np.zeros(4), backend="fourier",
                         points=np.zeros((3, 2)))


def quadratic(x):
    return x[:, 0] * x[:, 0] + x[:, 1] * x[:, 1]


def test_poisson_zero_field():
    pts = np.random.default_rng(0).uniform(size=(5, 2))
    res = poisson_residual(lambda x: 0.0 * x[:, 0], pts, np.zeros(5), pts[:2], np.zeros(2))
    assert float(res.loss.data) == 0.0


def test_poisson_manufactured_quadratic():
    pts = np.random.default_rng(1).uniform(-1, 1, size=(30, 2))
    pts[0] = (0.5, 0.5)
    u = np.sum(pts ** 2, axis=1)
    f = 4 + 1.2 * u ** 2
    assert f[0] == pytest.approx(4.3)
    res = poisson_residual(quadratic, pts, f, pts[:3], u[:3])
    assert np.max(np.abs(res.residual.data)) <= 1e-8
    assert float(res.constraint.data) <= 1e-20
    cloud = poisson_residual(quadratic, pts, f, alpha=0.0, backend="fd_pointcloud")
    assert np.max(np.abs(cloud.residual.data)) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_poisson_forms_agree(seed):
    rng = np.random.default_rng(seed)
    net = Mlp(2, [8, 8], 1, rng=rng)
    pts = rng.uniform(-1, 1, size=(12, 2))
    f = np.zeros(12)
    a = poisson_residual(net, pts, f, alpha=0.0).residual.data
    b = poisson_residual(net, pts, f, alpha=0.0, form="divergence").residual.data
    assert np.allclose(a, b, rtol=0, atol=1e-8 * max(1, np.max(np.abs(a))))


def test_poisson_errors():
    pts = np.zeros((2, 2))
    with pytest.raises(ValueError):
        poisson_residual(quadratic, pts, np.zeros(2), alpha=1.0)
    with pytest.raises(ValueError):
        poisson_residual(quadratic, pts, np.zeros(2), alpha=0.0, backend="fourier")


def test_hybrid_loss_examples():
    total, comps = hybrid_loss(2.0, 3.0, LossSpec(lam=0.0))
    assert float(total.data) == 2.0 and comps["physics"] == 0.0
    total, comps = hybrid_loss(2.0, 3.0, LossSpec(lam=0.5))
    assert float(total.data) == 3.5
    assert abs(comps["data"] + comps["physics"] - comps["total"]) <= 1e-15
    with pytest.raises(ad.NonFiniteError):
        hybrid_loss(np.nan, 1.0, LossSpec())


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 10), st.floats(0.01, 10))
def test_hybrid_components_sum(d, p, lam, dw):
    _, c = hybrid_loss(d, p, LossSpec(lam=lam, data_weight=dw))
    assert c["data"] + c["physics"] == pytest.approx(c["total"], rel=1e-15, abs=1e-15)


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec(lam=-1)
    with pytest.raises(ValueError):
        LossSpec(lam=0, data_weight=0)
    with pytest.raises(ValueError):
        LossSpec(backend="spline")
    assert LossSpec().alpha_for("burgers") == 100.0 and LossSpec(alpha=2).alpha_for("poisson") == 2


def test_noise_examples():
    rng = np.random.default_rng(0)
    u = rng.normal(size=1000)
    assert np.array_equal(inject_noise(u, 0.0, rng), u)
    assert np.array_equal(inject_noise(np.zeros(10), 0.3, rng), np.zeros(10))
    big = rng.normal(size=100_000)
    noisy = inject_noise(big, 0.1, np.random.default_rng(1))
    assert np.std(noisy - big) == pytest.approx(0.1 * np.mean(np.abs(big)), rel=0.02)
    with pytest.raises(ValueError):
        inject_noise(u, -0.1, rng)


def test_metrics_examples():
    y = np.array([1.0, -2.0, 3.0])
    m = metrics(y, y)
    assert m.mse == m.relative_squared_error == m.l2 == m.relative_l2 == 0.0
    assert metrics(2 * y, y).relative_l2 == pytest.approx(1.0)
    assert metrics([1, 2], [1, 1]).relative_squared_error == pytest.approx(0.5)
    assert measure_constant(4.0, 16) == 0.5
    with pytest.raises(ValueError):
        metrics([1, 2], [1, 2, 3])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.floats(0.1, 5))
def test_metrics_nonnegative(vals, c):
    p = np.array(vals)
    m = metrics(p, p[::-1], c)
    assert min(m.as_dict().values()) >= 0.0


def _tiny_gino():
    grid = gino_grid([-1, -1], [1, 1], 10, 0.4)
    return GinoModel(grid, in_features=1, encoder_channels=3, width=4, modes=(3, 3), n_layers=2,
                     encoder_radius=0.5, decoder_radius=0.4, kernel_hidden=(6,),
                     decoder_channels=3, use_sdf=False, seed=1)


def test_input_gradient_independent_parameter():
    g = input_gradient(lambda a, b: ad.sum(a * a) + 0.0 * ad.sum(b), [np.ones(3), np.ones(2)])
    assert np.all(g[1] == 0.0)


def test_input_gradient_domain_shift_matches_fd():
    model = _tiny_gino()
    rng = np.random.default_rng(2)
    pts = rng.uniform(-0.8, 0.8, size=(60, 2))
    feat = np.cos(pts[:, :1])
    delta = np.full(60, 2.56 / 60)
    q = rng.uniform(-0.5, 0.5, size=(10, 2))

    def objective(theta):
        coords = ad.constant(pts) * (1.0 + theta)
        return ad.mean(model(coords, feat, delta, q))

    g = input_gradient(objective, [np.array(0.05)], model)[0]
    fd = central_diff(lambda th: float(objective(ad.constant(th)).data), np.array(0.05), 1e-4)
    assert float(g) == pytest.approx(float(fd), rel=1e-4)


def test_input_gradient_rejects_indicator():
    grid = gino_grid([-1, -1], [1, 1], 8, 0.4)
    model = GinoModel(grid, 1, encoder_weight="indicator", use_sdf=False)
    with pytest.raises(ValueError, match="non-differentiable"):
        input_gradient(lambda a: ad.sum(a), [np.ones(1)], model)


def test_translation_invariance_of_offset_kernel():
    rng = np.random.default_rng(3)
    layer = MollifiedLayer(2, 2, 1, 0.4, kernel_input="offset", hidden=(8,), rng=rng)
    y = rng.uniform(size=(30, 2))
    x = rng.uniform(0.2, 0.8, size=(8, 2))
    v = rng.normal(size=(30, 2))
    delta = np.full(30, 1 / 30)

    def objective(shift):
        s = ad.reshape(shift, (1, 2))
        return ad.sum(layer(v, ad.constant(y) + s, ad.constant(x) + s, delta) ** 2)

    g = input_gradient(objective, [np.array([0.1, -0.2])], layer)[0]
    assert np.max(np.abs(g)) <= 1e-8
