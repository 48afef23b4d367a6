import math
import warnings

import numpy as np
import pytest

from deeplinear.data import gen_synthetic
from deeplinear.initializers import (
    DimensionPlan,
    InitScheme,
    init_weights,
    log_scaling_alpha,
    sample_haar_orthogonal,
    scaling_alpha,
)
from deeplinear.network import forward_output, log_partial_product, loss, partial_product
from deeplinear.rng import derive_seed, make_rng
from deeplinear.theory import init_loss_bound

ORTH = InitScheme("orthogonal")
GAUSS = InitScheme("gaussian")


def test_haar_m1_sign_frequency():
    rng = np.random.default_rng(0)
    draws = [sample_haar_orthogonal(1, rng)[0, 0] for _ in range(10_000)]
    assert set(draws) == {1.0, -1.0}
    assert abs(np.mean(np.array(draws) > 0) - 0.5) < 0.05


def test_haar_orthogonal_m4():
    Q = sample_haar_orthogonal(4, np.random.default_rng(1))
    assert np.linalg.norm(Q.T @ Q - np.eye(4)) < 1e-12


def test_haar_first_column_uniform_on_sphere():
    m, draws = 5, 10_000
    rng = np.random.default_rng(2)
    sq = np.array([sample_haar_orthogonal(m, rng)[:, 0] ** 2 for _ in range(draws)])
    # a uniform unit vector has coordinate^2 ~ Beta(1/2, (m-1)/2)
    var = (0.5 * (m - 1) / 2) / ((m / 2) ** 2 * (m / 2 + 1))
    se = math.sqrt(var / draws)
    np.testing.assert_allclose(sq.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.abs(sq.mean(axis=0) - 1.0 / m) < 4 * se)


def test_haar_without_sign_fix_would_be_biased():
    # sanity check of the oracle above: raw QR of numpy has diag(R) of a fixed sign pattern,
    # the corrected sampler gives a symmetric distribution for Q[0, 0]
    rng = np.random.default_rng(3)
    vals = np.array([sample_haar_orthogonal(3, rng)[0, 0] for _ in range(4000)])
    assert abs(vals.mean()) < 4 / math.sqrt(4000)


@pytest.mark.parametrize("L", [1, 2, 5])
def test_eq4_identities(L):
    m, d_x, d_y = 8, 3, 2
    net = init_weights(DimensionPlan.uniform(d_x, d_y, m, L), ORTH, seed=4)
    Ws = net.weights
    if L == 1:
        # a single layer is a d_y x d_x slice of a max(d_x, d_y)-dim Haar matrix
        W, k = Ws[0], max(d_x, d_y)
        assert W.shape == (d_y, d_x)
        assert np.max(np.abs(W @ W.T - k * np.eye(d_y))) < 1e-8 * k
        return
    assert np.max(np.abs(Ws[0].T @ Ws[0] - m * np.eye(d_x))) < 1e-8 * m
    assert np.max(np.abs(Ws[-1] @ Ws[-1].T - m * np.eye(d_y))) < 1e-8 * m
    for W in Ws[1:-1]:
        assert np.max(np.abs(W.T @ W - m * np.eye(m))) < 1e-8 * m
        assert np.max(np.abs(W @ W.T - m * np.eye(m))) < 1e-8 * m


def test_first_layer_singular_values():
    net = init_weights(DimensionPlan.uniform(2, 1, 4, 3), ORTH, seed=0)
    np.testing.assert_allclose(np.linalg.svd(net.weights[0], compute_uv=False), [2, 2])


def test_eq9_isometry_pair_of_two():
    net = init_weights(DimensionPlan.uniform(2, 2, 4, 4), ORTH, seed=0)
    s = np.linalg.svd(partial_product(net, 2, 3), compute_uv=False)
    np.testing.assert_allclose(s, 4.0, rtol=1e-12)


def test_eq9_isometries_log_space():
    m, L = 16, 32
    net = init_weights(DimensionPlan.uniform(4, 2, m, L), ORTH, seed=1)
    rng = np.random.default_rng(0)
    for _ in range(10):
        i = int(rng.integers(1, L + 1))
        j = int(rng.integers(i, L + 1))
        if (i, j) == (1, L):
            continue
        M, log_scale = log_partial_product(net, i, j)
        s = np.linalg.svd(M, compute_uv=False)
        expect = 0.5 * (j - i + 1) * math.log(m)
        assert abs(log_scale + math.log(s[0]) - expect) < 1e-6 * expect
        assert abs(log_scale + math.log(s[-1]) - expect) < 1e-6 * expect


def test_orthogonal_rejects_narrow():
    with pytest.raises(ValueError):
        init_weights(DimensionPlan.uniform(8, 2, 4, 3), ORTH, seed=0)


def test_gaussian_allows_narrow():
    net = init_weights(DimensionPlan.uniform(8, 2, 4, 3), GAUSS, seed=0)
    assert net.dims == (8, 4, 4, 2)


def test_gaussian_frobenius_mean():
    plan = DimensionPlan.uniform(64, 64, 64, 2)
    vals = [np.linalg.norm(init_weights(plan, GAUSS, s).weights[0]) ** 2 for s in range(100)]
    assert abs(np.mean(vals) / (64 * 64) - 1) < 0.05


def test_gaussian_sigma_scales_entries():
    plan = DimensionPlan.uniform(30, 30, 30, 2)
    a = init_weights(plan, GAUSS, 3).weights[0]
    b = init_weights(plan, InitScheme("gaussian", sigma=0.5), 3).weights[0]
    np.testing.assert_allclose(b, 0.5 * a)


def test_layers_independent_streams():
    net = init_weights(DimensionPlan.uniform(6, 6, 6, 3), GAUSS, 0)
    assert not np.allclose(net.weights[0], net.weights[1])
    assert len({derive_seed(0, "layer", i) for i in range(1, 1000)}) == 999


def test_deterministic_init():
    plan = DimensionPlan.uniform(3, 2, 5, 4)
    a, b = init_weights(plan, ORTH, 77), init_weights(plan, ORTH, 77)
    for x, y in zip(a.weights, b.weights):
        assert x.tobytes() == y.tobytes()


def test_alpha_orthogonal():
    assert scaling_alpha(DimensionPlan.uniform(2, 2, 4, 3), ORTH) == pytest.approx(1 / math.sqrt(32))


@pytest.mark.parametrize("scheme", [ORTH, GAUSS])
def test_alpha_single_layer(scheme):
    assert scaling_alpha(DimensionPlan.uniform(3, 3, 3, 1), scheme) == pytest.approx(1 / math.sqrt(3))


def test_alpha_gaussian_matches_orthogonal_at_unit_sigma():
    plan = DimensionPlan.uniform(4, 3, 10, 7)
    assert scaling_alpha(plan, GAUSS) == pytest.approx(scaling_alpha(plan, ORTH), rel=1e-14)


def test_alpha_log_space_deep():
    plan = DimensionPlan.uniform(64, 4, 1000, 700)
    la = log_scaling_alpha(plan, ORTH)
    assert la == pytest.approx(-0.5 * (699 * math.log(1000) + math.log(4)))
    assert scaling_alpha(plan, ORTH) == 0.0  # underflows; the network keeps the log


def test_gaussian_norm_preservation():
    plan = DimensionPlan.uniform(64, 10, 64, 10)
    x = make_rng(0, "x").standard_normal((64, 1))
    x /= np.linalg.norm(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        vals = [np.sum(forward_output(init_weights(plan, GAUSS, s), x) ** 2) for s in range(200)]
    assert abs(np.mean(vals) - 1) < 0.1


def test_orthogonal_output_norm_concentrates():
    plan = DimensionPlan.uniform(8, 4, 16, 6)
    X = make_rng(1, "x").standard_normal((8, 5))
    ratios = [
        np.sum(forward_output(init_weights(plan, ORTH, s), X) ** 2) / np.sum(X**2) for s in range(100)
    ]
    assert 0.5 <= np.mean(ratios) <= 2.0


def test_sanity_window_warns():
    plan = DimensionPlan.uniform(4, 4, 4, 4)
    with pytest.warns(RuntimeWarning):
        bad = InitScheme("gaussian", sigma=1e-3).check_sanity(plan)
    assert bad == [1, 2, 3, 4]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert GAUSS.check_sanity(plan) == []


def test_bad_scheme_and_sigma():
    with pytest.raises(ValueError):
        InitScheme("xavier")
    with pytest.raises(ValueError):
        InitScheme("gaussian", sigma=-1.0).sigmas(3)
    with pytest.raises(ValueError):
        InitScheme("gaussian", sigma=[1.0, 1.0]).sigmas(3)


def test_init_loss_bound_holds_at_init():
    ds = gen_synthetic(64, 4, 16, seed=0)
    plan = DimensionPlan.uniform(64, 4, 64, 8)
    bound = init_loss_bound(ds, 4, 0.1)
    misses = sum(loss(init_weights(plan, ORTH, s), ds) > bound for s in range(100))
    assert misses <= 10
