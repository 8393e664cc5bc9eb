import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhrppg import tensor_core as tc
from mhrppg.errors import InvalidArgument
from mhrppg.gradcheck import max_rel_error, numerical_grad


def naive_conv3d(x, w, b, stride, pad):
    """Direct six-fold loop; x is (C, T, H, W)."""
    x = np.pad(x, [(0, 0)] + [(p, p) for p in pad])
    cout, cin, kt, kh, kw = w.shape
    dims = [(x.shape[i + 1] - k) // s + 1 for i, (k, s) in enumerate(zip((kt, kh, kw), stride))]
    y = np.zeros((cout, *dims))
    for o, t, i, j in itertools.product(range(cout), *(range(d) for d in dims)):
        t0, i0, j0 = t * stride[0], i * stride[1], j * stride[2]
        patch = x[:, t0:t0 + kt, i0:i0 + kh, j0:j0 + kw]
        y[o, t, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return y


def naive_pool(x, kind, k, s):
    C = x.shape[0]
    dims = [(x.shape[i + 1] - k[i]) // s[i] + 1 for i in range(3)]
    y = np.zeros((C, *dims))
    for c, t, i, j in itertools.product(range(C), *(range(d) for d in dims)):
        blk = x[c, t * s[0]:t * s[0] + k[0], i * s[1]:i * s[1] + k[1], j * s[2]:j * s[2] + k[2]]
        y[c, t, i, j] = blk.max() if kind == "max" else blk.mean()
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.mark.parametrize("kernel,stride,pad", [
    ((3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ((1, 5, 5), (1, 1, 1), (0, 2, 2)),
    ((2, 3, 1), (2, 1, 2), (0, 1, 0)),
])
def test_conv3d_matches_loop_oracle(rng, kernel, stride, pad):
    spec = tc.ConvSpec(2, 3, kernel, stride, pad)
    x = rng.normal(size=(2, 5, 6, 7))
    w = rng.normal(size=(3, 2, *kernel))
    b = rng.normal(size=3)
    np.testing.assert_allclose(tc.conv3d(x, w, b, spec), naive_conv3d(x, w, b, stride, pad),
                               atol=1e-12)


def test_conv3d_batched_equals_per_sample(rng):
    spec = tc.ConvSpec.same(2, 2, 3)
    x = rng.normal(size=(3, 2, 4, 5, 5))
    w = rng.normal(size=(2, 2, 3, 3, 3))
    y = tc.conv3d(x, w, None, spec)
    for n in range(3):
        np.testing.assert_allclose(y[n], tc.conv3d(x[n], w, None, spec), atol=1e-13)


def test_conv_output_dims_errors_name_axis():
    spec = tc.ConvSpec(1, 1, (5, 1, 1))
    with pytest.raises(InvalidArgument, match="T"):
        spec.output_dims((3, 8, 8))
    with pytest.raises(InvalidArgument):
        tc.conv3d(np.zeros((2, 4, 4, 4)), np.zeros((1, 1, 5, 1, 1)), None, spec)


@pytest.mark.parametrize("stride,pad", [((1, 1, 1), (1, 1, 1)), ((2, 1, 2), (0, 1, 1))])
def test_conv3d_backward_finite_difference(rng, stride, pad):
    spec = tc.ConvSpec(2, 2, (3, 3, 2), stride, pad)
    x = rng.normal(size=(2, 5, 4, 5))
    w = rng.normal(size=(2, 2, 3, 3, 2))
    b = rng.normal(size=2)
    r = rng.normal(size=tc.conv3d(x, w, b, spec).shape)
    f = lambda: float(np.sum(r * tc.conv3d(x, w, b, spec)))
    gx, gw, gb = tc.conv3d_backward(r, x, w, spec)
    assert max_rel_error(gx, numerical_grad(f, x)) < 1e-6
    assert max_rel_error(gw, numerical_grad(f, w)) < 1e-6
    assert max_rel_error(gb, numerical_grad(f, b)) < 1e-6


def test_transposed_conv_is_adjoint_of_conv(rng):
    # <conv(x), y> == <x, conv^T(y)> with the weight axes swapped
    spec = tc.ConvSpec(3, 2, (4, 1, 1), (2, 1, 1), (1, 0, 0))
    x = rng.normal(size=(3, 8, 2, 2))
    w = rng.normal(size=(2, 3, 4, 1, 1))
    y = rng.normal(size=tc.conv3d(x, w, None, spec).shape)
    tspec = tc.ConvSpec(2, 3, (4, 1, 1), (2, 1, 1), (1, 0, 0))
    lhs = np.sum(tc.conv3d(x, w, None, spec) * y)
    rhs = np.sum(x * tc.transposed_conv3d(y, w, tspec))
    assert abs(lhs - rhs) < 1e-10


def test_transposed_conv_doubles_time():
    spec = tc.ConvSpec(2, 2, (4, 1, 1), (2, 1, 1), (1, 0, 0))
    for n in (1, 2, 5, 19, 38):
        assert spec.transposed_output_dims((n, 3, 3)) == (2 * n, 3, 3)


def test_transposed_conv_backward_finite_difference(rng):
    spec = tc.ConvSpec(2, 3, (4, 1, 1), (2, 1, 1), (1, 0, 0))
    x = rng.normal(size=(2, 3, 2, 2))
    w = rng.normal(size=(2, 3, 4, 1, 1))
    b = rng.normal(size=3)
    r = rng.normal(size=tc.transposed_conv3d(x, w, spec, b).shape)
    f = lambda: float(np.sum(r * tc.transposed_conv3d(x, w, spec, b)))
    gx, gw, gb = tc.transposed_conv3d_backward(r, x, w, spec)
    assert max_rel_error(gx, numerical_grad(f, x)) < 1e-6
    assert max_rel_error(gw, numerical_grad(f, w)) < 1e-6
    assert max_rel_error(gb, numerical_grad(f, b)) < 1e-6


@pytest.mark.parametrize("kind", ["max", "avg"])
@pytest.mark.parametrize("k,s", [((2, 2, 2), (2, 2, 2)), ((1, 2, 2), (1, 2, 2)),
                                 ((2, 3, 2), (1, 2, 1))])
def test_pool_matches_loop_oracle(rng, kind, k, s):
    x = rng.normal(size=(2, 5, 6, 7))
    np.testing.assert_allclose(tc.pool3d(x, kind, k, s), naive_pool(x, kind, k, s), atol=1e-14)


@pytest.mark.parametrize("kind", ["max", "avg"])
def test_pool_backward_finite_difference(rng, kind):
    x = rng.normal(size=(2, 4, 6, 6))
    y, cache = tc.pool3d(x, kind, 2, return_cache=True)
    r = rng.normal(size=y.shape)
    f = lambda: float(np.sum(r * tc.pool3d(x, kind, 2)))
    g = tc.pool3d_backward(r, cache)
    assert max_rel_error(g, numerical_grad(f, x)) < 1e-6


def test_maxpool_tie_routes_to_first_element():
    x = np.ones((1, 2, 2, 2))
    y, cache = tc.pool3d(x, "max", 2, return_cache=True)
    g = tc.pool3d_backward(np.ones_like(y), cache)
    assert g[0, 0, 0, 0] == 1.0 and g.sum() == 1.0


def test_pool_kernel_larger_than_input():
    with pytest.raises(InvalidArgument):
        tc.pool3d(np.zeros((1, 1, 4, 4)), "max", 2)


def test_batchnorm_train_statistics(rng):
    x = rng.normal(3.0, 2.0, size=(4, 3, 2, 3, 3))
    y, _ = tc.batchnorm(x, np.ones(3), np.zeros(3))
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3, 4)), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3, 4)), 1, atol=1e-4)


def test_batchnorm_running_stats_and_eval(rng):
    x = rng.normal(size=(2, 2, 3, 3, 3))
    st_ = tc.BatchNormState.fresh(2)
    tc.batchnorm(x, np.ones(2), np.zeros(2), state=st_)
    n = x.size // 2
    mean = x.mean(axis=(0, 2, 3, 4))
    var = x.var(axis=(0, 2, 3, 4)) * n / (n - 1)
    np.testing.assert_allclose(st_.running_mean, 0.1 * mean, atol=1e-14)
    np.testing.assert_allclose(st_.running_var, 0.9 + 0.1 * var, atol=1e-14)
    y, _ = tc.batchnorm(x, np.ones(2), np.zeros(2), mode="eval", state=st_)
    bc = (None, slice(None), None, None, None)
    expect = (x - st_.running_mean[bc]) / np.sqrt(st_.running_var[bc] + 1e-5)
    np.testing.assert_allclose(y, expect, atol=1e-13)


def test_batchnorm_rejects_nonpositive_eps():
    with pytest.raises(InvalidArgument):
        tc.batchnorm(np.zeros((1, 1, 1, 2, 2)), np.ones(1), np.zeros(1), eps=0.0)


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_backward_finite_difference(rng, mode):
    x = rng.normal(size=(2, 3, 2, 3, 3))
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    state = tc.BatchNormState(rng.normal(size=3), rng.uniform(0.5, 2, size=3))
    r = rng.normal(size=x.shape)

    def f():
        s = tc.BatchNormState(state.running_mean.copy(), state.running_var.copy())
        return float(np.sum(r * tc.batchnorm(x, gamma, beta, mode=mode, state=s)[0]))

    s = tc.BatchNormState(state.running_mean.copy(), state.running_var.copy())
    _, cache = tc.batchnorm(x, gamma, beta, mode=mode, state=s)
    gx, gg, gb = tc.batchnorm_backward(r, cache)
    assert max_rel_error(gx, numerical_grad(f, x), floor=1e-6) < 1e-4
    assert max_rel_error(gg, numerical_grad(f, gamma)) < 1e-6
    assert max_rel_error(gb, numerical_grad(f, beta)) < 1e-6


@pytest.mark.parametrize("fn", ["relu", "sigmoid"])
def test_pointwise_backward_finite_difference(rng, fn):
    x = rng.normal(size=(3, 4, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep relu probes away from the kink
    r = rng.normal(size=x.shape)
    f = lambda: float(np.sum(r * tc.elementwise(x, fn)))
    g = tc.elementwise_backward(r, x, fn)
    assert max_rel_error(g, numerical_grad(f, x)) < 1e-6


def test_sigmoid_is_stable_for_large_inputs():
    y = tc.elementwise(np.array([-1000.0, 0.0, 1000.0]), "sigmoid")
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(y))


def test_softmax_spatial_normalised_and_backward(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    s = tc.softmax_spatial(x)
    np.testing.assert_allclose(s.sum(axis=(-2, -1)), 1.0, atol=1e-14)
    r = rng.normal(size=x.shape)
    f = lambda: float(np.sum(r * tc.softmax_spatial(x)))
    g = tc.softmax_spatial_backward(r, s)
    assert max_rel_error(g, numerical_grad(f, x)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 10_000))
def test_softmax_shift_invariance(c, seed):
    x = np.random.default_rng(seed).normal(size=(2, 3, 3))
    np.testing.assert_allclose(tc.softmax_spatial(x + c), tc.softmax_spatial(x), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_is_linear_in_input(seed, a, b):
    rng = np.random.default_rng(seed)
    spec = tc.ConvSpec.same(2, 2, 3)
    w = rng.normal(size=(2, 2, 3, 3, 3))
    x1, x2 = rng.normal(size=(2, 2, 3, 3, 3))
    lhs = tc.conv3d(a * x1 + b * x2, w, None, spec)
    rhs = a * tc.conv3d(x1, w, None, spec) + b * tc.conv3d(x2, w, None, spec)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_adam_first_step_matches_hand_computation():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -0.1])}
    new, state = tc.adam_step(p, g, tc.AdamState(), lr=0.01)
    # after one bias-corrected step the update is lr * sign(g) (up to eps)
    np.testing.assert_allclose(new["w"], [0.99, -1.99], atol=1e-9)
    assert state.step == 1
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_two_steps_against_reference_formula():
    p0 = np.array([0.3])
    g1, g2 = np.array([0.2]), np.array([-0.4])
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    p1, s = tc.adam_step({"p": p0}, {"p": g1}, tc.AdamState(), lr)
    p2, s = tc.adam_step(p1, {"p": g2}, s, lr)
    m = (1 - b1) * g1
    v = (1 - b2) * g1 ** 2
    ref1 = p0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 ** 2
    ref2 = ref1 - lr * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + eps)
    np.testing.assert_allclose(p2["p"], ref2, atol=1e-15)


def test_adam_rejects_nonpositive_lr():
    with pytest.raises(InvalidArgument):
        tc.adam_step({"a": np.zeros(1)}, {"a": np.zeros(1)}, tc.AdamState(), lr=0.0)
