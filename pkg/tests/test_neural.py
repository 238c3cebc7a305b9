import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgino import autodiff as ad
from mgino.neural import (AdamState, Linear, Mlp, PlateauScheduler, adam_step, mlp_forward,
                          scheduler_step)
from oracles import mlp_value_and_jacobian


def test_zero_mlp_gives_zero():
    net = Mlp(3, [8, 8], 2, rng=np.random.default_rng(0))
    net.zero_()
    assert np.all(mlp_forward(net, np.ones((5, 3))).data == 0.0)


def test_identity_linear():
    lin = Linear(4, 4)
    lin.weight.data = np.eye(4)
    x = np.random.default_rng(1).normal(size=(6, 4))
    assert np.array_equal(lin(x).data, x)


def test_rows_independent_and_match_oracle():
    rng = np.random.default_rng(2)
    net = Mlp(3, [5], 2, rng=rng)
    x = rng.normal(size=(3, 3))
    full = mlp_forward(net, x).data
    rows = np.concatenate([mlp_forward(net, x[i:i + 1]).data for i in range(3)])
    assert np.allclose(full, rows, rtol=0, atol=1e-15)
    ref, _ = mlp_value_and_jacobian(net, x)
    assert np.allclose(full, ref, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000))
def test_mlp_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    net = Mlp(2, [4, 4], 3, rng=rng)
    x = rng.normal(size=(7, 2))
    perm = rng.permutation(7)
    assert np.allclose(mlp_forward(net, x[perm]).data, mlp_forward(net, x).data[perm],
                       rtol=0, atol=1e-14)


def test_mlp_shape_error():
    with pytest.raises(ValueError):
        mlp_forward(Mlp(3, [4], 1), np.ones((2, 2)))


def test_init_bounds():
    lin = Linear(16, 8, np.random.default_rng(0))
    assert np.all(np.abs(lin.weight.data) <= 0.25) and np.all(lin.bias.data == 0.0)


def test_adam_zero_grad_no_change():
    p = ad.tensor(np.array([1.0, -2.0]), requires_grad=True)
    s = AdamState(lr=0.1)
    adam_step(s, [p], [np.zeros(2)])
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step():
    p = ad.tensor(0.0, requires_grad=True)
    s = AdamState(lr=0.1)
    adam_step(s, [p], [np.array(1.0)])
    assert p.data == pytest.approx(-0.1, abs=1e-8)


def _hand_adam(theta, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2.0 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(theta)
    return out


def test_adam_matches_scalar_reference():
    p = ad.tensor(1.0, requires_grad=True)
    s = AdamState(lr=0.1)
    trace = []
    for _ in range(10):
        g = ad.grad(p * p, p)
        adam_step(s, [p], [g])
        trace.append(float(p.data))
    assert np.allclose(trace, _hand_adam(1.0, 0.1, 10), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10).filter(lambda v: abs(v) > 1e-6), min_size=1, max_size=6))
def test_adam_first_step_sign(gs):
    g = np.array(gs)
    p = ad.tensor(np.zeros_like(g), requires_grad=True)
    adam_step(AdamState(lr=0.01), [p], [g])
    assert np.all(np.sign(p.data) == -np.sign(g))


def test_adam_rejects_nonfinite():
    p = ad.tensor(1.0, requires_grad=True)
    with pytest.raises(ad.NonFiniteError):
        adam_step(AdamState(), [p], [np.array(np.nan)])


def test_decoupled_weight_decay():
    p = ad.tensor(2.0, requires_grad=True)
    adam_step(AdamState(lr=0.1, weight_decay=0.5), [p], [np.array(0.0)])
    assert p.data == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_scheduler_examples():
    s = PlateauScheduler(1.0, 0.9, patience=2)
    assert [scheduler_step(s, v) for v in (5, 4, 3, 2, 1)] == [1.0] * 5
    s = PlateauScheduler(1.0, 0.9, patience=2)
    lrs = [scheduler_step(s, 1.0) for _ in range(8)]
    # epochs counted from 0: drops take effect after epochs 3 and 6
    drops = [i for i in range(1, 8) if lrs[i] < lrs[i - 1]]
    assert drops == [3, 6]
    s = PlateauScheduler(1.0, 0.9, patience=2)
    lrs = [scheduler_step(s, v) for v in (1.0, 0.99, 1.0, 1.0, 1.0)]
    assert lrs[:4] == [1.0] * 4 and lrs[4] == pytest.approx(0.9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=60), st.integers(0, 4))
def test_scheduler_monotone_and_floor(losses, patience):
    s = PlateauScheduler(1.0, 0.5, patience=patience, min_lr=0.1)
    prev = 1.0
    for v in losses:
        lr = scheduler_step(s, v)
        assert 0.1 <= lr <= prev
        prev = lr


def test_state_dict_round_trip():
    a = Mlp(2, [3], 1, rng=np.random.default_rng(0))
    b = Mlp(2, [3], 1, rng=np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    x = np.ones((2, 2))
    assert np.array_equal(a(x).data, b(x).data)
    with pytest.raises(KeyError):
        b.load_state_dict({})
