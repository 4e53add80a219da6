import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dockrl import network as nn
from dockrl.quaternion import InvalidInputError

F_MAX = [790.80] * 3
L_MAX = [2534.91] * 3


def fd_gradient_check(params, x, c, n_probe=60, h=1e-5, seed=0):
    """Worst relative error (per array, over probed entries) between backprop and central FD."""
    grads = nn.network_backward(params, x, np.broadcast_to(c, (len(x), len(c))))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for arr, g in zip(params.arrays(), grads.arrays()):
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            keep = flat[i]
            flat[i] = keep + h
            up = np.sum(nn.forward(params, x) @ c)
            flat[i] = keep - h
            down = np.sum(nn.forward(params, x) @ c)
            flat[i] = keep
            num[j] = (up - down) / (2 * h)
        ana = g.reshape(-1)[idx]
        worst = max(worst, np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-12))
    return worst


# -- forward / backward ----------------------------------------------------------

def test_zero_network_outputs_zero():
    p = nn.zeros_like_network((13, 130, 88, 60, 6))
    assert np.array_equal(nn.forward(p, np.random.default_rng(0).normal(size=(4, 13))), np.zeros((4, 6)))


def test_output_shapes():
    rng = np.random.default_rng(0)
    pol, val = nn.init_policy(rng), nn.init_value(rng)
    x = rng.normal(size=13)
    assert pol.mean(x).shape == (6,)
    assert nn.forward(val, x).shape == (1,)
    assert pol.net.sizes == (13, 130, 88, 60, 6)
    assert val.sizes == (13, 130, 25, 5, 1)


def test_wrong_input_width_rejected():
    p = nn.init_value(np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        nn.forward(p, np.zeros(12))
    with pytest.raises(InvalidInputError):
        nn.network_backward(p, np.zeros(13), np.zeros(2))


@pytest.mark.parametrize("hidden,out", [((130, 88, 60), 6), ((130, 25, 5), 1)], ids=["policy", "value"])
def test_backprop_matches_finite_differences(hidden, out):
    rng = np.random.default_rng(1)
    params = nn.init_network((13,) + hidden + (out,), rng)
    x = rng.normal(size=(5, 13))
    c = rng.normal(size=out)
    assert fd_gradient_check(params, x, c) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    params = nn.init_network((13, 9, 7, 6), rng)
    x = rng.normal(size=(1, 13))
    c = rng.normal(size=6)
    out, acts = nn.forward_cache(params, x)
    _, gx = nn.backward(params, acts, c[None, :], want_input_grad=True)
    h = 1e-5
    num = np.array([(nn.forward(params, x + h * e) @ c - nn.forward(params, x - h * e) @ c)[0] / (2 * h)
                    for e in np.eye(13)])
    assert np.linalg.norm(gx[0] - num) / np.linalg.norm(num) < 1e-4


def test_backward_zero_and_linear_in_output_gradient():
    rng = np.random.default_rng(3)
    p = nn.init_network((13, 8, 6), rng)
    x = rng.normal(size=(4, 13))
    zero = nn.network_backward(p, x, np.zeros((4, 6)))
    assert all(not a.any() for a in zero.arrays())
    g1, g2 = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    lhs = nn.network_backward(p, x, 2 * g1 - g2).arrays()
    a, b = nn.network_backward(p, x, g1).arrays(), nn.network_backward(p, x, g2).arrays()
    for l, u, v in zip(lhs, a, b):
        assert np.allclose(l, 2 * u - v, atol=1e-12)


def test_policy_inference_is_fast():
    rng = np.random.default_rng(0)
    pol = nn.init_policy(rng)
    x = rng.normal(size=13)
    pol.mean(x)
    t0 = time.perf_counter()
    for _ in range(200):
        pol.mean(x)
    assert (time.perf_counter() - t0) / 200 < 1e-3


# -- Gaussian head ------------------------------------------------------------------

def test_logprob_at_mean():
    lv = np.array([0.1, -0.2, 0.3, 0.0, -1.0, 2.0])
    mu = np.arange(6.0)
    assert np.isclose(nn.gaussian_logprob(mu, lv, mu), -0.5 * np.sum(np.log(2 * np.pi) + lv), rtol=1e-15)


def test_logprob_symmetric():
    rng = np.random.default_rng(4)
    mu, lv, d = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6)
    assert nn.gaussian_logprob(mu, lv, mu + d) == nn.gaussian_logprob(mu, lv, mu - d)


def test_logprob_matches_density_product():
    rng = np.random.default_rng(5)
    for _ in range(100):
        mu, lv, a = rng.normal(size=6), rng.uniform(-3, 2, 6), rng.normal(size=6)
        var = np.exp(lv)
        dens = np.prod(np.exp(-(a - mu) ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var))
        assert abs(nn.gaussian_logprob(mu, lv, a) - np.log(dens)) < 1e-12


def test_sampling():
    mu = np.arange(6.0)
    assert np.array_equal(nn.sample_action(mu, np.full(6, -np.inf), np.random.default_rng(0)), mu)
    assert np.array_equal(nn.sample_action(mu, np.zeros(6), None, stochastic=False), mu)
    a = nn.sample_action(mu, np.zeros(6), np.random.default_rng(9))
    assert np.array_equal(a, nn.sample_action(mu, np.zeros(6), np.random.default_rng(9)))
    lv = np.array([-2.0, -1.0, 0.0, 0.5, 1.0, 1.5])
    draws = nn.sample_action(np.broadcast_to(mu, (100_000, 6)), lv, np.random.default_rng(10))
    assert np.all(np.abs(draws.var(axis=0) / np.exp(lv) - 1) < 0.05)


def test_gaussian_kl():
    mu, lv = np.zeros(6), np.zeros(6)
    assert nn.gaussian_kl(mu, lv, mu, lv) == 0.0
    # one unit mean shift at unit variance: KL = 1/2
    assert np.isclose(nn.gaussian_kl(mu, lv, mu + np.eye(6)[0], lv), 0.5)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 6, elements=st.floats(-3, 3)), arrays(float, 6, elements=st.floats(-3, 3)),
       arrays(float, 6, elements=st.floats(-3, 3)), arrays(float, 6, elements=st.floats(-3, 3)))
def test_kl_non_negative(m1, l1, m2, l2):
    assert nn.gaussian_kl(m1, l1, m2, l2) >= -1e-12


# -- action scaling ------------------------------------------------------------------

def test_scale_action_examples():
    a = nn.scale_action(np.ones(6), F_MAX, L_MAX)
    assert np.array_equal(a.F, F_MAX) and np.array_equal(a.L, L_MAX)
    z = nn.scale_action(np.zeros(6), F_MAX, L_MAX)
    assert not z.F.any() and not z.L.any()
    assert nn.scale_action([2, 0, 0, 0, 0, 0], F_MAX, L_MAX).F[0] == 790.80


@settings(max_examples=200, deadline=None)
@given(arrays(float, 6, elements=st.floats(-1e6, 1e6)))
def test_scale_action_in_bounds(raw):
    u = nn.scale_action_batch(raw, F_MAX, L_MAX)
    assert np.all(np.abs(u) <= np.r_[F_MAX, L_MAX])


# -- normalizer -------------------------------------------------------------------

def test_fresh_normalizer_passes_through():
    x = np.arange(13.0)
    assert np.array_equal(nn.RunningNormalizer().normalize(x), x)
    assert np.array_equal(nn.RunningNormalizer().update(x[None, :]).normalize(x), x)


def test_normalizer_statistics():
    data = np.random.default_rng(6).normal(5.0, 2.0, size=(10_000, 1))
    n = nn.RunningNormalizer(1).update(data)
    assert abs(n.normalize([5.0])[0]) < 0.05
    assert abs(n.normalize([7.0])[0] - 1.0) < 0.05


def test_normalizer_merge_matches_single_batch():
    data = np.random.default_rng(7).normal(3.0, 4.0, size=(1001, 13))
    whole = nn.RunningNormalizer().update(data)
    split = nn.RunningNormalizer().update(data[:400]).update(data[400:])
    assert split.count == whole.count
    assert np.allclose(split.mean, whole.mean, atol=1e-10)
    assert np.allclose(split.m2, whole.m2, rtol=1e-10)


def test_normalizer_merge_is_associative():
    rng = np.random.default_rng(8)
    a, b, c = (nn.RunningNormalizer.from_batch(rng.normal(size=(k, 13))) for k in (3, 50, 17))
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    assert np.allclose(left.mean, right.mean, atol=1e-10) and np.allclose(left.m2, right.m2, atol=1e-10)


def test_normalizer_std_floor():
    n = nn.RunningNormalizer(2).update(np.ones((10, 2)))
    assert np.array_equal(n.std, [nn.STD_FLOOR] * 2)
    assert np.all(n.m2 >= 0)


# -- Adam -------------------------------------------------------------------------

def test_adam_first_step_is_lr():
    p = [np.array([1.0, -2.0])]
    new, st_ = nn.adam_step(p, [np.array([0.5, -3.0])], nn.AdamState.for_params(p), 0.01)
    assert np.allclose(new[0], [0.99, -1.99], atol=1e-9)
    assert st_.t == 1


def test_adam_constant_gradient_step_tends_to_lr():
    p = [np.zeros(3)]
    state = nn.AdamState.for_params(p)
    g = [np.array([0.1, -7.0, 1e3])]
    for _ in range(2000):
        prev = p[0].copy()
        p, state = nn.adam_step(p, g, state, 1e-3)
    assert np.allclose(prev - p[0], 1e-3 * np.sign(g[0]), rtol=1e-6)


def test_adam_zero_gradient_keeps_parameters():
    p = [np.ones(2)]
    state = nn.AdamState([np.ones(2)], [np.ones(2)], t=3)
    new, st_ = nn.adam_step(p, [np.zeros(2)], state, 0.1)
    assert np.allclose(st_.m[0], 0.9) and np.allclose(st_.v[0], 0.999)
    fresh = nn.AdamState.for_params(p)
    assert np.array_equal(nn.adam_step(p, [np.zeros(2)], fresh, 0.1)[0][0], p[0])


def test_adam_per_array_rates():
    p = [np.zeros(2), np.zeros(3)]
    g = [np.ones(2), np.ones(3)]
    new, _ = nn.adam_step(p, g, nn.AdamState.for_params(p), [0.1, 0.5])
    assert np.allclose(new[0], -0.1) and np.allclose(new[1], -0.5)


def test_adam_state_mismatch():
    with pytest.raises(InvalidInputError):
        nn.adam_step([np.zeros(2)], [np.zeros(2)], nn.AdamState.for_params([np.zeros(2)] * 2), 0.1)
