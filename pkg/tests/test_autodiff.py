import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgino import autodiff as ad
from oracles import central_diff, random_composite, rel_err, scalar, second_diff_5pt


def test_elementwise_examples():
    assert np.array_equal((ad.tensor([1.0, 2.0]) + ad.tensor([3.0, 4.0])).data, [4.0, 6.0])
    assert np.array_equal(ad.exp(ad.tensor([0.0])).data, [1.0])
    out = ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((3, 1))))
    assert np.array_equal(out.data, [[3.0], [3.0]])


def test_gelu_values():
    assert ad.gelu(ad.tensor(0.0)).item() == 0.0
    assert ad.gelu(ad.tensor(1.0)).item() == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))),
                                                           abs=1e-15)
    assert ad.gelu(ad.tensor(1.0)).item() == pytest.approx(0.8413447460685429, abs=1e-15)
    assert ad.gelu(ad.tensor(40.0)).item() == pytest.approx(40.0)


def test_grad_examples():
    x = ad.tensor(3.0, requires_grad=True)
    assert ad.grad(x * x, x) == pytest.approx(6.0)
    x = ad.tensor(0.0, requires_grad=True)
    g = ad.grad(ad.sin(x), x, create_graph=True)
    assert ad.grad(g, x) == pytest.approx(0.0, abs=1e-15)
    x = ad.tensor(2.0, requires_grad=True)
    g = ad.grad(x ** 3, x, create_graph=True)
    gg = ad.grad(g, x)
    h = 1e-3
    f = lambda v: v ** 3  # noqa: E731
    oracle = (f(2 + 2 * h) - 2 * f(2.0) + f(2 - 2 * h)) / (4 * h * h)
    assert gg == pytest.approx(12.0, abs=1e-12)
    assert abs(gg - oracle) < 1e-5


def test_third_order_nesting():
    x = ad.tensor(0.7, requires_grad=True)
    g1 = ad.grad(ad.sin(x) * x, x, create_graph=True)
    g2 = ad.grad(g1, x, create_graph=True)
    g3 = ad.grad(g2, x)
    # d^3/dx^3 [x sin x] = -3 sin x - x cos x
    assert g3 == pytest.approx(-3 * math.sin(0.7) - 0.7 * math.cos(0.7), abs=1e-13)


def test_random_composites_first_and_second_order():
    rng = np.random.default_rng(1)
    worst1 = worst2 = 0.0
    for _ in range(200):
        fn = random_composite(rng, depth=int(rng.integers(2, 6)))
        x0 = rng.uniform(-1, 1, 3)
        x = ad.tensor(x0, requires_grad=True)
        g = ad.grad(fn(x), x, create_graph=True)
        fd = central_diff(scalar(fn), x0, 1e-5)
        worst1 = max(worst1, rel_err(g.data, fd, floor=1e-3))
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        hd = ad.grad(ad.sum(g * ad.constant(d)), x)
        second = float(hd @ d)
        oracle = second_diff_5pt(scalar(fn), x0, d, 1e-3)
        worst2 = max(worst2, abs(second - oracle) / max(abs(oracle), 1e-2))
    assert worst1 <= 1e-6
    assert worst2 <= 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 10_000))
def test_linearity_of_grad(a, b, seed):
    rng = np.random.default_rng(seed)
    f, g = random_composite(rng, 3), random_composite(rng, 3)
    x0 = rng.uniform(-1, 1, 3)
    x = ad.tensor(x0, requires_grad=True)
    combo = ad.grad(a * f(x) + b * g(x), x)
    sep = a * ad.grad(f(x), x) + b * ad.grad(g(x), x)
    assert np.allclose(combo, sep, rtol=1e-12, atol=1e-12)


def test_forward_replay_is_bit_identical():
    rng = np.random.default_rng(5)
    fn = random_composite(rng, 5)
    x0 = rng.uniform(-1, 1, 3)
    a = fn(ad.tensor(x0)).data
    b = fn(ad.tensor(x0)).data
    assert a.tobytes() == b.tobytes()


def test_errors_and_unreachable():
    with pytest.raises(ZeroDivisionError):
        ad.tensor([1.0]) / ad.tensor([0.0])
    with pytest.raises(ValueError):
        ad.tensor([-1.0]) ** 0.5
    with pytest.raises(ValueError):
        ad.tensor(np.ones(3)) + ad.tensor(np.ones(4))
    x = ad.tensor(1.0, requires_grad=True)
    y = ad.tensor(2.0, requires_grad=True)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        g = ad.grad(x * 2.0, [x, y])
    assert g[1] == 0.0
    assert any(issubclass(w.category, ad.UnreachableGradientWarning) for w in rec)
    with pytest.raises(ValueError):
        ad.grad(x * 2.0, [x, y], allow_unused=False)
    with pytest.raises(ValueError):
        ad.grad(x * 2.0, ad.tensor(1.0))


def test_check_finite():
    ad.check_finite(np.ones(3))
    with pytest.raises(ad.NonFiniteError):
        ad.check_finite(np.array([1.0, np.nan]), "loss")


def test_seed_shape_checked():
    x = ad.tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.grad(x * 2.0, x, seed=np.ones(2))
    assert np.array_equal(ad.grad(x * 2.0, x, seed=np.array([1.0, 2.0, 3.0])), [2.0, 4.0, 6.0])


def test_structural_ops_gradients():
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(4, 3))

    def f(x):
        a = ad.concat([x, ad.sin(x)], axis=1)
        b = ad.take(a, np.array([0, 2, 2, 3]))
        c = ad.segment_sum(b, np.array([0, 1, 1, 0]), 2)
        d = ad.einsum("ij,kj->ik", c, ad.reshape(x[:2, :], (2, 3)) @ ad.constant(np.ones((3, 6))))
        return ad.mean(d * d) + ad.sum(ad.cos_sqrt(0.2 * x * x))

    x = ad.tensor(x0, requires_grad=True)
    g = ad.grad(f(x), x)
    assert rel_err(g, central_diff(scalar(f), x0)) < 1e-7


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 3.9))
def test_cos_sqrt_matches_closed_form(s):
    val = ad.cos_sqrt(ad.tensor(s)).item()
    assert val == pytest.approx(math.cos(math.pi * math.sqrt(s)), abs=1e-12)
