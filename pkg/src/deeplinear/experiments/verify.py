"""The invariant suite behind ``deeplinear verify``.

Each family produces :class:`~deeplinear.theory.CheckResult` rows. Families
marked *hard* are exact identities (up to floating point) and decide the
exit code; the others hold with high probability or only up to unknown
constants, so their failures are reported but do not fail the run.
"""

from __future__ import annotations

import math
import os
import warnings
from unittest import mock

import numpy as np

from .. import linalg, network, theory
from ..data import Dataset, gen_synthetic, load_dataset
from ..initializers import DimensionPlan, InitScheme, init_weights, sample_haar_orthogonal
from ..rng import make_rng
from ..theory import CheckResult, TheoryReport
from ..trainer import TrainConfig, gd_step, theorem_lr, train_run

__all__ = ["FAMILIES", "HARD_FAMILIES", "run_verify", "load_run"]

FAMILIES = (
    "orthogonality",
    "isometry",
    "grad-check",
    "p0-spectrum",
    "dynamics",
    "trajectory",
    "mc-slope",
    "stuck-window",
)
HARD_FAMILIES = {"orthogonality", "isometry", "grad-check", "p0-spectrum", "dynamics"}


def _rename(rows, prefix):
    for r in rows:
        r.name = f"{prefix}/{r.name}"
    return rows


def _perturb(net, layer, size, seed):
    ws = list(net.weights)
    G = make_rng(seed, "fault").standard_normal(ws[layer].shape)
    ws[layer] = ws[layer] + size * G / np.linalg.norm(G)
    return net.replace_weights(ws)


def check_orthogonality(seed, fault=False):
    rows = []
    for L, m, d_x, d_y in ((1, 5, 5, 3), (2, 8, 3, 2), (6, 16, 4, 4)):
        net = init_weights(DimensionPlan.uniform(d_x, d_y, m, L), InitScheme(), seed)
        if fault:
            net = _perturb(net, 0, 0.5 * math.sqrt(m), seed)
        k = m if L > 1 else max(d_x, d_y)
        W1, WL = net.weights[0], net.weights[-1]
        if L == 1:  # one layer: only the Gram matrix on its short side is k * I
            G = W1 @ W1.T if W1.shape[0] <= W1.shape[1] else W1.T @ W1
            errs = {"W1_gram": np.abs(G - k * np.eye(G.shape[0])).max()}
        else:
            errs = {"W1tW1": np.abs(W1.T @ W1 - k * np.eye(W1.shape[1])).max(),
                    "WLWLt": np.abs(WL @ WL.T - k * np.eye(WL.shape[0])).max()}
        for i, W in enumerate(net.weights[1:-1], start=2):
            errs[f"W{i}"] = max(np.abs(W.T @ W - m * np.eye(m)).max(), np.abs(W @ W.T - m * np.eye(m)).max())
        for name, err in errs.items():
            rows.append(CheckResult(f"L{L}_m{m}_{name}", 1e-8 * k, float(err)))
    return rows


def check_isometry(seed, fault=False):
    L, m = 32, 16
    net = init_weights(DimensionPlan.uniform(4, 2, m, L), InitScheme(), seed)
    if fault:
        net = _perturb(net, 5, 0.5 * math.sqrt(m), seed)
    rng = make_rng(seed, "isometry-pairs")
    rows = []
    while len(rows) < 20:
        i = int(rng.integers(1, L + 1))
        j = int(rng.integers(i, L + 1))
        if (i, j) == (1, L):
            continue
        M, log_scale = network.log_partial_product(net, i, j)
        s = np.linalg.svd(M, compute_uv=False)
        expect = 0.5 * (j - i + 1) * math.log(m)
        for tag, val in (("max", s[0]), ("min", s[-1])):
            err = abs(log_scale + math.log(val) - expect) / expect
            rows.append(CheckResult(f"log_sigma_{tag}[{i}:{j}]", 1e-6, err))
    return rows


def _fd_grads(net, ds, rel_step=1e-5):
    out = []
    ws = [np.array(w) for w in net.weights]
    for w in ws:
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            h = rel_step * (1.0 + abs(w[idx]))
            orig = w[idx]
            w[idx] = orig + h
            up = network.loss(net.replace_weights([x.copy() for x in ws]), ds)
            w[idx] = orig - h
            down = network.loss(net.replace_weights([x.copy() for x in ws]), ds)
            w[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def check_grad(seed, fault=False, configs=20):
    rng = make_rng(seed, "grad-check")
    rows = []
    for c in range(configs):
        kind = ("orthogonal", "gaussian")[c % 2]
        L = int(rng.integers(1, 6))
        d_x, d_y = (int(v) for v in rng.integers(1, 6, size=2))
        m = int(rng.integers(max(d_x, d_y), 6)) if kind == "orthogonal" else int(rng.integers(1, 6))
        n = int(rng.integers(1, 6))
        ds = Dataset(rng.standard_normal((d_x, n)), rng.standard_normal((d_y, n)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            net = init_weights(DimensionPlan.uniform(d_x, d_y, m, L), InitScheme(kind), c)
        grads = network.gradients(net, ds)
        if fault:
            grads[0] = grads[0] * 1.01
        fd = _fd_grads(net, ds)
        err = max(
            float(np.linalg.norm(g - f) / max(np.linalg.norm(g), np.linalg.norm(f), 1e-300))
            for g, f in zip(grads, fd)
        )
        rows.append(CheckResult(f"cfg{c}_{kind}_L{L}_dims{d_x}x{m}x{d_y}", 1e-6, err))
    return rows


def check_p0_spectrum(seed, fault=False):
    L, d_y = 4, 2
    ds = gen_synthetic(6, d_y, 6, seed)
    net = init_weights(DimensionPlan.uniform(6, d_y, 8, L), InitScheme(), seed)
    if fault:
        net = _perturb(net, 1, 1.0, seed)
    got = linalg.sym_eigvals(theory.build_P(net, ds.X))
    lam = np.linalg.eigvalsh(ds.X.T @ ds.X)
    expect = np.sort(np.repeat(L / d_y * lam, d_y))[::-1]
    err = float(np.max(np.abs(got - expect) / expect))
    rows = [CheckResult("eig_rel_err", 1e-8, err)]
    lam_min, lam_max, ok, rep = theory.p_eig_window(net, ds)
    rows.extend(rep.entries)
    return rows


def _unit_conditioned(d_x, n, d_y, seed):
    X = sample_haar_orthogonal(d_x, make_rng(seed, "x"))[:, :n]
    W = make_rng(seed, "w").standard_normal((d_y, d_x))
    W /= np.linalg.norm(W @ X)
    return Dataset(X, W @ X, W)


def check_dynamics(seed, fault=False, steps=10):
    """Identity error (hard) and the E-bound (reported) on a tiny orthogonal net."""
    ds = _unit_conditioned(2, 2, 1, seed)
    plan = DimensionPlan.uniform(2, 1, 6, 3)
    net = init_weights(plan, InitScheme(), seed)
    eta = theorem_lr(ds, 3)
    rows = []
    real_build_P = theory.build_P
    for t in range(steps):
        nxt = gd_step(net, ds, eta)
        if fault:  # a P that is off by 0.1% must break the identity
            with mock.patch.object(theory, "build_P", lambda *a: 1.001 * real_build_P(*a)):
                err, E, bound, ok = theory.dynamics_residual(net, nxt, ds, eta)
        else:
            err, E, bound, ok = theory.dynamics_residual(net, nxt, ds, eta)
        rows.append(CheckResult(f"identity_err[t={t}]", 1e-8, err))
        rows.append(CheckResult(f"E_bound[t={t}]", bound, E, note="soft: regime-dependent"))
        net = nxt
    return rows


def load_run(directory):
    """``(record_losses, t, ds, net0, net_final, header)`` from a ``train --save-states`` directory."""
    from ..data import read_meta

    ds = load_dataset(os.path.join(directory, "data"))
    net0 = network.load_checkpoint(os.path.join(directory, "init"))
    net1 = network.load_checkpoint(os.path.join(directory, "final"))
    header = read_meta(os.path.join(directory, "meta"))
    t, losses = [], []
    with open(os.path.join(directory, "record.csv"), encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.strip().split(",")
            t.append(int(parts[0]))
            losses.append(float(parts[1]))
    return np.array(losses), np.array(t), ds, net0, net1, header


def check_trajectory(seed, fault=False, run_dir=None):
    """Bound curve on every recorded step, then properties B and C at the end."""
    if run_dir is not None:
        losses, t, ds, net0, net1, header = load_run(run_dir)
        eta, L = float(header["eta"]), net0.L
    else:
        ds = _unit_conditioned(4, 4, 1, seed)
        cfg = TrainConfig(DimensionPlan.uniform(4, 1, 128, 8), steps=200, seed=seed)
        rec = train_run(cfg, ds)
        losses, t, net0, net1 = rec.losses, rec.t, rec.initial_state, rec.final_state
        eta, L = float(rec.header["eta"]), 8
    if fault:
        losses = losses.copy()
        losses[-1] = losses[0] * 2
    _, loss_star = network.least_squares_opt(ds)
    bound = theory.theorem1_bound_curve(ds, L, ds.d_y, eta, losses[0], t, loss_star)
    excess = losses - bound
    k = int(np.argmax(excess))
    rows = [CheckResult("loss_le_bound_curve", float(bound[k]), float(losses[k]), tol=1e-12 * losses[0],
                        note=f"worst step t={t[k]}")]
    rows.extend(theory.check_property_B(net0, net1))
    B = theory.init_loss_bound(ds, ds.d_y, 0.1)
    rows.extend(theory.check_property_C(net0, net1, ds, B))
    return rows


def check_mc_slope(seed, fault=False, width=4, depths=(8, 16, 32, 64), trials=100):
    st = theory.mc_product_norm([width] * (max(depths) + 1), trials=trials, seed=seed, depths=depths,
                                tail_pairs=False)
    med = st.median_log_norm
    if fault:
        med = med[::-1]
    rows = [
        CheckResult(f"median_log_norm[{a}->{b}]", med[k], med[k + 1], relation="<=",
                    verdict="pass" if med[k + 1] < med[k] else "fail")
        for k, (a, b) in enumerate(zip(depths, depths[1:]))
    ]
    rows.append(CheckResult("slope", 0.0, st.slope, relation="<="))
    d1 = theory.sqrt_chi2_mean(1, 10**5, seed)
    exact = theory.expected_sqrt_chi2(1)
    rows.append(CheckResult("E_sqrt_chi2_1_rel_err", 0.01, abs(d1 / exact - 1)))
    return rows


def check_stuck_window(seed, fault=False, depth=100, width=10, steps=5000, seeds=10):
    """Deep narrow Gaussian nets on normalized data; reported per seed and as a tally."""
    ds = gen_synthetic(64, 4, 16, seed, normalize=True)
    plan = DimensionPlan.uniform(64, 4, width, depth)
    rows = []
    stuck = 0
    for k in range(seeds):
        cfg = TrainConfig(plan, InitScheme("gaussian"), steps=steps, record_every=10, diag_every=steps,
                          seed=seed * 1000 + k)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rec = train_run(cfg, ds, keep_states=False)
        res = theory.stuck_window_check(rec, ds)
        res.name = f"seed{k}"
        rows.append(res)
        stuck += res.verdict == "pass"
    rows.append(CheckResult("stuck_fraction", 0.8, stuck / seeds, relation=">=",
                            note=f"depth {depth}, width {width}, {steps} steps"))
    return rows


CHECKS = {
    "orthogonality": check_orthogonality,
    "isometry": check_isometry,
    "grad-check": check_grad,
    "p0-spectrum": check_p0_spectrum,
    "dynamics": check_dynamics,
    "trajectory": check_trajectory,
    "mc-slope": check_mc_slope,
    "stuck-window": check_stuck_window,
}


def run_verify(only=None, seed=0, run_dir=None, inject=(), stuck_kwargs=None, log=None):
    """Run the selected families; returns ``(report, hard_failures)``.

    ``inject`` names families whose inputs are deliberately corrupted, which
    must then fail (used to test the suite itself).
    """
    families = FAMILIES if not only else tuple(only)
    unknown = [f for f in families if f not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check families {unknown}; choose from {', '.join(FAMILIES)}")
    report = TheoryReport()
    hard_failures = []
    for fam in families:
        kwargs = {"fault": fam in inject}
        if fam == "trajectory":
            kwargs["run_dir"] = run_dir
        if fam == "stuck-window" and stuck_kwargs:
            kwargs.update(stuck_kwargs)
        rows = _rename(CHECKS[fam](seed, **kwargs), fam)
        hard = fam in HARD_FAMILIES
        for r in rows:
            if not hard or "soft" in r.note:
                r.note = ("probabilistic; " + r.note) if r.note else "probabilistic"
            elif r.verdict == "fail":
                hard_failures.append(r)
        report.add(rows)
        if log is not None:
            bad = sum(r.verdict == "fail" for r in rows)
            log(f"{fam}: {len(rows)} checks, {bad} failed{'' if hard else ' (soft)'}")
    return report, hard_failures
