import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeplinear import linalg
from deeplinear.data import (
    Dataset,
    data_stats,
    gen_synthetic,
    load_dataset,
    read_meta,
    reduce_wlog,
    save_dataset,
)
from deeplinear.network import least_squares_opt


def test_large_shapes():
    ds = gen_synthetic(1024, 10, 16, seed=7)
    assert ds.X.shape == (1024, 16)
    assert ds.Wstar.shape == (10, 1024)
    assert ds.Y.shape == (10, 16)
    assert ds.stats.r == 16


def test_same_seed_bit_identical():
    a = gen_synthetic(8, 2, 8, seed=3)
    b = gen_synthetic(8, 2, 8, seed=3)
    for x, y in ((a.X, b.X), (a.Y, b.Y), (a.Wstar, b.Wstar)):
        assert x.tobytes() == y.tobytes()
    c = gen_synthetic(8, 2, 8, seed=4)
    assert not np.array_equal(a.X, c.X)


def test_targets_are_product():
    ds = gen_synthetic(8, 2, 8, seed=1)
    W, X = ds.Wstar.tolist(), ds.X.tolist()
    prod = [[sum(W[i][k] * X[k][j] for k in range(8)) for j in range(8)] for i in range(2)]
    assert np.max(np.abs(np.array(prod) - ds.Y)) < 1e-12
    assert ds.is_realizable


def test_normalize_flag():
    ds = gen_synthetic(64, 4, 16, seed=0, normalize=True)
    assert np.linalg.norm(ds.X) == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.norm(ds.Y) == pytest.approx(1.0, rel=1e-12)
    assert ds.is_realizable


def test_stats_identity():
    s = data_stats(np.eye(4))
    assert (s.r, s.kappa, s.stable_rank, s.sigma_min_X) == (4, 1.0, 4.0, 1.0)


def test_stats_diag():
    s = data_stats(np.diag([2.0, 1.0]))
    assert s.kappa == pytest.approx(4.0)
    assert s.stable_rank == pytest.approx(1.25)


def test_stats_against_full_svd():
    ds = gen_synthetic(1024, 10, 16, seed=11)
    _, sv, _ = np.linalg.svd(ds.X, full_matrices=True)
    assert ds.stats.r == 16
    assert ds.stats.kappa == pytest.approx((sv[0] / sv[-1]) ** 2, rel=1e-8)


def test_stats_reject_zero():
    with pytest.raises(ValueError):
        data_stats(np.zeros((3, 3)))


def test_rank_deficient_stats():
    X = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
    s = data_stats(X)
    assert s.r == 1
    assert s.kappa == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(1, 12), st.integers(0, 2**63 - 1))
def test_stats_invariants(d_x, d_y, n, seed):
    s = gen_synthetic(d_x, d_y, n, seed).stats
    assert 1 - 1e-12 <= s.stable_rank <= s.r + 1e-9
    assert s.r <= min(d_x, n)
    assert s.kappa >= 1 - 1e-12


def test_reduce_wlog_orthogonal_columns(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((5, 3)))
    X = Q * np.array([3.0, 2.0, 1.0])
    W = rng.standard_normal((2, 5))
    ds = Dataset(X, W @ X, W)
    red = reduce_wlog(ds)
    assert red.X.shape == (5, 3)
    np.testing.assert_allclose(linalg.singular_values(red.X), [3, 2, 1], atol=1e-10)


def test_reduce_wlog_wide_shape():
    red = reduce_wlog(gen_synthetic(1024, 10, 16, seed=7))
    assert red.X.shape == (1024, 16)


def test_reduce_wlog_constant_offset(rng):
    ds = gen_synthetic(6, 2, 10, seed=5)
    red = reduce_wlog(ds)
    assert red.X.shape == (6, 6)
    diffs = []
    for _ in range(5):
        W = rng.standard_normal((2, 6))
        full = 0.5 * np.linalg.norm(W @ ds.X - ds.Y) ** 2
        small = 0.5 * np.linalg.norm(W @ red.X - red.Y) ** 2
        diffs.append(small - full)
    assert np.var(diffs) < 1e-16


def test_reduce_wlog_keeps_minimizer():
    ds = gen_synthetic(6, 2, 10, seed=5)
    W1, _ = least_squares_opt(ds)
    W2, _ = least_squares_opt(reduce_wlog(ds))
    np.testing.assert_allclose(W1, W2, atol=1e-8)


def test_reduce_wlog_unrealizable_targets(rng):
    ds = Dataset(rng.standard_normal((3, 5)), rng.standard_normal((1, 5)))
    red = reduce_wlog(ds)
    assert red.Wstar is None and red.X.shape == (3, 3)
    offsets = []
    for _ in range(5):
        W = rng.standard_normal((1, 3))
        offsets.append(np.sum((W @ red.X - red.Y) ** 2) - np.sum((W @ ds.X - ds.Y) ** 2))
    assert np.var(offsets) < 1e-16


def test_reduce_wlog_rejects_zero():
    with pytest.raises(ValueError):
        reduce_wlog(Dataset(np.zeros((2, 2)), np.ones((1, 2))))


def test_dataset_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 4)), np.ones((2, 5)))
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 4)), np.ones((2, 4)), np.ones((3, 2)))


def test_dataset_arrays_frozen():
    ds = gen_synthetic(3, 1, 3, seed=0)
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_save_load_roundtrip(tmp_path):
    ds = gen_synthetic(7, 3, 5, seed=9)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.X.tobytes() == ds.X.tobytes()
    assert back.Y.tobytes() == ds.Y.tobytes()
    assert back.Wstar.tobytes() == ds.Wstar.tobytes()
    meta = read_meta(tmp_path / "d" / "meta")
    assert (meta["d_x"], meta["d_y"], meta["n"], meta["seed"]) == ("7", "3", "5", "9")


def test_save_is_deterministic(tmp_path):
    for name in ("a", "b"):
        save_dataset(gen_synthetic(5, 2, 4, seed=1), tmp_path / name)
    for f in ("X.mat", "Y.mat", "Wstar.mat", "meta"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
