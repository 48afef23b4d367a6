import math

import numpy as np
import pytest

from deeplinear import linalg
from deeplinear.data import Dataset, gen_synthetic
from deeplinear.initializers import DimensionPlan, InitScheme, init_weights, sample_haar_orthogonal
from deeplinear.network import NetworkState, forward_output, loss
from deeplinear.rng import make_rng
from deeplinear.theory import (
    CheckResult,
    TheoryReport,
    build_P,
    check_property_B,
    check_property_C,
    contraction_factor,
    dynamics_residual,
    expected_sqrt_chi2,
    fit_geometric_rate,
    init_loss_bound,
    mc_product_norm,
    p_eig_bounds_from_factors,
    p_eig_window,
    perturbation_stability,
    scaled_weights,
    sqrt_chi2_mean,
    stuck_window_check,
    theorem1_bound_curve,
    width_requirement,
)
from deeplinear.trainer import TrainConfig, gd_step, theorem_lr, train_run

ORTH = InitScheme()
GAUSS = InitScheme("gaussian")


def well_conditioned(d_x, n, d_y, seed):
    """Orthonormal-column X (kappa = 1) with a random realizable target."""
    X = sample_haar_orthogonal(d_x, make_rng(seed, "x"))[:, :n]
    W = make_rng(seed, "w").standard_normal((d_y, d_x))
    W /= np.linalg.norm(W @ X)
    return Dataset(X, W @ X, W)


def test_report_csv_and_summary():
    rep = TheoryReport().add(
        CheckResult("a", 1.0, 0.5, relation="<="),
        CheckResult("b", 1.0, 0.5, relation=">="),
    )
    assert [r.verdict for r in rep.entries] == ["pass", "fail"]
    assert not rep.ok and [r.name for r in rep.failures] == ["b"]
    lines = rep.to_csv().splitlines()
    assert lines[0] == "check_name,bound,observed,tol,verdict"
    assert len(lines) == 3
    assert "b" in rep.summary()


def test_scaled_weights_reconstruct_output(rng):
    net = init_weights(DimensionPlan.uniform(3, 2, 4, 5), GAUSS, 2)
    sw = scaled_weights(net)
    X = rng.standard_normal((3, 4))
    lhs = math.exp(sw.log_beta) * sw.product(1, 5) @ X
    rhs = forward_output(net, X)
    assert np.linalg.norm(lhs - rhs) < 1e-10 * np.linalg.norm(rhs)
    assert sw.log_beta == pytest.approx(0.0, abs=1e-12)  # unit sigma: beta = 1


def test_build_P_shape_and_psd():
    ds = gen_synthetic(4, 2, 3, seed=0)
    net = init_weights(DimensionPlan.uniform(4, 2, 5, 3), GAUSS, 0)
    P = build_P(net, ds.X)
    assert P.shape == (6, 6)
    np.testing.assert_array_equal(P, P.T)
    eig = linalg.sym_eigvals(P)
    assert eig[-1] >= -1e-8 * eig[0]


def test_build_P_cap():
    ds = gen_synthetic(4, 2, 3, seed=0)
    net = init_weights(DimensionPlan.uniform(4, 2, 5, 3), ORTH, 0)
    with pytest.raises(ValueError):
        build_P(net, ds.X, size_cap=5)


def test_build_P_single_layer(rng):
    W = rng.standard_normal((2, 3))
    net = NetworkState.from_alpha([W], 0.5)
    X = rng.standard_normal((3, 4))
    np.testing.assert_allclose(build_P(net, X), 0.25 * np.kron(X.T @ X, np.eye(2)), atol=1e-12)


def test_build_P_is_output_jacobian(rng):
    # P = J J^T with J the Jacobian of vec(U) with respect to all weights
    net = init_weights(DimensionPlan.uniform(3, 2, 3, 3), GAUSS, 4)
    X = rng.standard_normal((3, 2))
    cols = []
    for i, W in enumerate(net.weights):
        for idx in np.ndindex(W.shape):
            E = np.zeros_like(W)
            E[idx] = 1.0
            ws = list(net.weights)
            ws[i] = W + 1e-6 * E
            up = forward_output(net.replace_weights(ws), X)
            ws[i] = W - 1e-6 * E
            down = forward_output(net.replace_weights(ws), X)
            cols.append(linalg.vec((up - down) / 2e-6))
    J = np.array(cols).T
    P = build_P(net, X)
    assert np.linalg.norm(P - J @ J.T) < 1e-7 * np.linalg.norm(P)


def test_P0_spectrum_formula():
    ds = gen_synthetic(6, 2, 6, seed=0)
    L, d_y = 4, 2
    net = init_weights(DimensionPlan.uniform(6, 2, 8, L), ORTH, 0)
    got = linalg.sym_eigvals(build_P(net, ds.X))
    lam = np.linalg.eigvalsh(ds.X.T @ ds.X)
    expected = np.sort(np.repeat(L / d_y * lam, d_y))[::-1]
    np.testing.assert_allclose(got, expected, rtol=1e-8)


def test_p_eig_window_at_init():
    ds = gen_synthetic(6, 2, 6, seed=1)
    net = init_weights(DimensionPlan.uniform(6, 2, 8, 4), ORTH, 1)
    lam_min, lam_max, ok, _ = p_eig_window(net, ds)
    assert ok
    assert lam_max == pytest.approx(4 * ds.stats.norm_X**2 / 2, rel=1e-8)
    assert lam_min == pytest.approx(4 * ds.stats.sigma_min_X**2 / 2, rel=1e-8)


def test_p_eig_window_narrow_net_fails():
    ds = gen_synthetic(6, 2, 6, seed=1)
    net = init_weights(DimensionPlan.uniform(6, 2, 3, 4), GAUSS, 1)
    lam_min, _, ok, report = p_eig_window(net, ds)
    assert not ok
    assert lam_min < 0.6 * 4 * ds.stats.sigma_min_X**2 / 2
    assert "P_lambda_min" in [r.name for r in report.failures]


def test_p_eig_window_after_training():
    ds = well_conditioned(4, 4, 2, 0)
    cfg = TrainConfig(DimensionPlan.uniform(4, 2, 64, 4), steps=3000, seed=0, stop_rel_loss=1e-3)
    rec = train_run(cfg, ds)
    assert rec.rel_losses[-1] <= 1e-3
    assert p_eig_window(rec.final_state, ds)[2]


def test_factor_bounds_enclose_spectrum():
    ds = gen_synthetic(5, 2, 4, seed=3)
    net = init_weights(DimensionPlan.uniform(5, 2, 6, 3), GAUSS, 3)
    lo, hi = p_eig_bounds_from_factors(net, ds.X)
    eig = linalg.sym_eigvals(build_P(net, ds.X))
    assert lo <= eig[-1] * (1 + 1e-10) + 1e-12
    assert eig[0] <= hi * (1 + 1e-10)


def test_bound_curve_t0_and_three_quarters():
    ds = well_conditioned(4, 4, 2, 0)
    eta = theorem_lr(ds, 5)
    assert contraction_factor(ds, 5, 2, eta) == pytest.approx(0.75)
    assert theorem1_bound_curve(ds, 5, 2, eta, 2.0, 0) == 2.0
    assert theorem1_bound_curve(ds, 5, 2, eta, 2.0, 3) == pytest.approx(2.0 * 0.75**3)
    assert theorem1_bound_curve(ds, 5, 2, eta, 2.0, 10**6) == 0.0


def test_bound_curve_rejects_large_eta():
    ds = well_conditioned(4, 4, 2, 0)
    with pytest.raises(ValueError):
        theorem1_bound_curve(ds, 5, 2, 2 * theorem_lr(ds, 5), 1.0, 1)


def test_bound_vs_fitted_rate():
    # with kappa = 1 the theoretical per-step factor is 3/4; the run is faster but not by more than 2x
    for seed in range(3):
        ds = well_conditioned(16, 16, 4, seed)
        rec = train_run(TrainConfig(DimensionPlan.uniform(16, 4, 64, 16), steps=30, seed=seed), ds)
        q = contraction_factor(ds, 16, 4, float(rec.header["eta"]))
        q_fit = fit_geometric_rate(rec)
        assert q / 2 <= q_fit <= q


def test_width_requirement_plugin():
    ds = Dataset(np.array([[1.0]]), np.array([[0.0]]), np.array([[0.0]]))
    assert width_requirement(ds, 1, 0.5) == max(math.ceil(1 + math.log(2)), 1)


def test_width_requirement_monotone_in_kappa(rng):
    vals = []
    for s2 in (1.0, 0.5, 0.1, 0.01):
        X = np.diag([1.0, s2])
        W = np.ones((1, 2))
        vals.append(width_requirement(Dataset(X, W @ X, W), 1, 0.1))
    assert vals == sorted(vals)
    with pytest.raises(ValueError):
        width_requirement(Dataset(np.eye(2), np.ones((1, 2))), 1, 1.5)


def test_init_loss_bound_plugin_and_homogeneity():
    ds = Dataset(np.array([[2.0]]), np.array([[0.0]]), np.array([[0.0]]))
    assert init_loss_bound(ds, 1, 0.999999) == pytest.approx(10 * 4.0, rel=1e-5)
    big = gen_synthetic(6, 2, 4, seed=0)
    assert init_loss_bound(big.scaled(2.0), 2, 0.1) == pytest.approx(4 * init_loss_bound(big, 2, 0.1))


def test_init_loss_bound_coverage_wide_data():
    ds = gen_synthetic(1024, 10, 16, seed=7)
    plan = DimensionPlan.uniform(1024, 10, 1024, 2)
    bound = init_loss_bound(ds, 10, 0.05)
    hits = sum(loss(init_weights(plan, ORTH, s), ds) <= bound for s in range(100))
    assert hits >= 95


def test_property_B_at_init_and_adversarial():
    net = init_weights(DimensionPlan.uniform(2, 2, 4, 6), ORTH, 0)
    rows = check_property_B(net, net)
    assert rows and all(r.verdict == "pass" for r in rows)
    ws = list(net.weights)
    G = make_rng(0, "adv").standard_normal(ws[2].shape)
    ws[2] = ws[2] + 0.5 * math.sqrt(4) * G / np.linalg.norm(G)
    rows = check_property_B(net, net.replace_weights(ws))
    assert any(r.verdict == "fail" for r in rows)


def test_property_B_after_convergence():
    ds = well_conditioned(2, 2, 1, 0)
    cfg = TrainConfig(DimensionPlan.uniform(2, 1, 64, 4), steps=2000, seed=0, stop_rel_loss=1e-6)
    rec = train_run(cfg, ds)
    rows = check_property_B(rec.initial_state, rec.final_state)
    assert all(r.verdict == "pass" for r in rows)


def test_property_C():
    ds = gen_synthetic(4, 2, 4, seed=0)
    net = init_weights(DimensionPlan.uniform(4, 2, 8, 3), ORTH, 0)
    B = init_loss_bound(ds, 2, 0.1)
    assert all(r.verdict == "pass" and r.observed == 0 for r in check_property_C(net, net, ds, B))
    cfg = TrainConfig(DimensionPlan.uniform(4, 2, 8, 3), steps=500, seed=0)
    rec = train_run(cfg, ds)
    assert all(r.verdict == "pass" for r in check_property_C(rec.initial_state, rec.final_state, ds, B))
    g = init_weights(DimensionPlan.uniform(4, 2, 8, 3), GAUSS, 0)
    assert all(r.verdict == "skip" for r in check_property_C(g, g, ds, B))


def test_dynamics_single_layer_exact(rng):
    ds = Dataset(rng.standard_normal((3, 3)), rng.standard_normal((2, 3)))
    net = NetworkState.from_alpha([rng.standard_normal((2, 3))], 0.7)
    nxt = gd_step(net, ds, 0.01)
    err, E, bound, ok = dynamics_residual(net, nxt, ds, 0.01)
    assert err < 1e-8
    assert E < 1e-12
    assert ok


def test_dynamics_identity_and_bound():
    ds = well_conditioned(2, 2, 1, 3)
    net = init_weights(DimensionPlan.uniform(2, 1, 6, 3), ORTH, 3)
    eta = theorem_lr(ds, 3)
    for _ in range(10):
        nxt = gd_step(net, ds, eta)
        err, E, bound, ok = dynamics_residual(net, nxt, ds, eta)
        assert err < 1e-8 and ok
        net = nxt
    big = gd_step(init_weights(DimensionPlan.uniform(2, 1, 6, 3), ORTH, 3), ds, 100 * eta)
    err, E, bound, ok = dynamics_residual(init_weights(DimensionPlan.uniform(2, 1, 6, 3), ORTH, 3),
                                          big, ds, 100 * eta)
    assert err < 1e-8 and not ok


def test_chi2_moments():
    assert expected_sqrt_chi2(1) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert expected_sqrt_chi2(1) < 0.9
    assert abs(sqrt_chi2_mean(1, 10**5, 0) / math.sqrt(2 / math.pi) - 1) < 0.01
    for d in (2, 5, 50):
        assert expected_sqrt_chi2(d) < 1.0
        assert abs(sqrt_chi2_mean(d, 10**5, 1) / expected_sqrt_chi2(d) - 1) < 0.01


def test_mc_decay_narrow():
    st = mc_product_norm([4] * 101, trials=30, seed=0, depths=[10, 25, 50, 100], tail_pairs=False)
    assert st.slope < 0
    assert np.all(np.diff(st.median_log_norm) < 0)


def test_mc_slope_test_depth_multiples():
    w = 4
    st = mc_product_norm([w] * (8 * w + 1), trials=100, seed=1, depths=[2 * w, 4 * w, 8 * w], tail_pairs=False)
    assert np.all(np.diff(st.median_log_norm) < 0)


def test_mc_wide_no_decay():
    L = 64
    st = mc_product_norm([128] * (L + 1), trials=30, seed=0, depths=[16, 32, 64], tail_pairs=False)
    assert np.all(np.abs(st.median_log_norm) < 2 * math.log(L))


def test_mc_tail_and_args():
    st = mc_product_norm([3] * 9, trials=30, seed=0, gamma_probe=1.0)
    assert st.tail_quantiles[0.5] <= st.tail_quantiles[0.9] <= st.tail_quantiles[0.99]
    assert st.gamma_ratio.shape == st.median_log_norm.shape
    with pytest.raises(ValueError):
        mc_product_norm([3] * 5, trials=10)


def test_perturbation_stability():
    A0 = scaled_weights(init_weights(DimensionPlan.uniform(4, 4, 4, 60), GAUSS, 0)).A
    zero = perturbation_stability(A0, 0.0, probes=2, decay_slope=-0.3)
    assert zero[0].observed == 0.0 and zero[0].verdict == "pass"
    small = perturbation_stability(A0, 1e-6, probes=5, decay_slope=-0.3)
    assert small[0].verdict == "pass"
    big = perturbation_stability(A0, 1.0, probes=2, decay_slope=-0.3)
    assert big[0].verdict == "skip"


def test_stuck_window_trivial_and_escape():
    ds = gen_synthetic(8, 2, 4, seed=0, normalize=True)
    plan = DimensionPlan.uniform(8, 2, 4, 2)
    rec = train_run(TrainConfig(plan, GAUSS, steps=0), ds)
    # hand-built zero-output record sits at exactly half of ||Y||^2
    rec.rows = [(0, 0.5 * float(np.sum(ds.Y**2)), 1.0)]
    assert stuck_window_check(rec, ds).verdict == "pass"
    wide = TrainConfig(DimensionPlan.uniform(8, 2, 128, 8), GAUSS, steps=3000, diag_every=1000)
    res = stuck_window_check(train_run(wide, ds), ds)
    assert res.verdict == "fail" and "escaped" in res.note
