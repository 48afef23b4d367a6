"""Executable versions of the convergence bounds and their empirical checks.

Every check returns :class:`CheckResult` rows carrying both the bound and
the observed value. Asymptotic statements whose constants are unknown are
tested as trends (slope signs, monotonicity), and the constants that do
enter a numeric bound (``C`` in the width condition, ``c_B`` in the
initial-loss bound) are explicit keyword arguments.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import linalg, network
from .data import reduce_wlog
from .rng import make_rng
from .trainer import diagnostic_pairs, theorem_lr

__all__ = [
    "P_SIZE_CAP",
    "CheckResult",
    "TheoryReport",
    "ScaledWeights",
    "scaled_weights",
    "build_P",
    "p_eig_window",
    "p_eig_bounds_from_factors",
    "theorem1_bound_curve",
    "contraction_factor",
    "width_requirement",
    "check_property_B",
    "check_property_C",
    "drift_radius",
    "init_loss_bound",
    "dynamics_residual",
    "expected_sqrt_chi2",
    "sqrt_chi2_mean",
    "mc_product_norm",
    "perturbation_stability",
    "gradient_scale",
    "stuck_window_check",
    "fit_geometric_rate",
]

P_SIZE_CAP = 4096

PASS = "pass"
FAIL = "fail"
SKIP = "skip"


@dataclass
class CheckResult:
    """One verdict. ``relation`` is ``"<="`` (observed must not exceed bound) or ``">="``."""

    name: str
    bound: float
    observed: float
    tol: float = 0.0
    relation: str = "<="
    verdict: str = ""
    note: str = ""

    def __post_init__(self):
        if not self.verdict:
            self.verdict = PASS if self.holds() else FAIL

    def holds(self):
        if self.relation == "<=":
            return self.observed <= self.bound + self.tol
        return self.observed >= self.bound - self.tol

    @property
    def passed(self):
        return self.verdict == PASS


@dataclass
class TheoryReport:
    entries: list = field(default_factory=list)

    def add(self, *results):
        for r in results:
            if isinstance(r, CheckResult):
                self.entries.append(r)
            else:
                self.entries.extend(r)
        return self

    @property
    def failures(self):
        return [e for e in self.entries if e.verdict == FAIL]

    @property
    def ok(self):
        return not self.failures

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check_name", "bound", "observed", "tol", "verdict"])
        for e in self.entries:
            w.writerow([e.name, "%.10g" % e.bound, "%.10g" % e.observed, "%.3g" % e.tol, e.verdict])
        return buf.getvalue()

    def summary(self):
        buf = io.StringIO()
        for e in self.entries:
            extra = f"  ({e.note})" if e.note else ""
            buf.write(
                f"[{e.verdict.upper():4}] {e.name}: observed {e.observed:.6g} {e.relation} "
                f"bound {e.bound:.6g}{extra}\n"
            )
        n_fail = len(self.failures)
        n_skip = sum(e.verdict == SKIP for e in self.entries)
        buf.write(f"{len(self.entries)} checks, {n_fail} failed, {n_skip} skipped\n")
        return buf.getvalue()


# -- Gaussian scaled weights ------------------------------------------------------


@dataclass(frozen=True)
class ScaledWeights:
    """``A_i = W_i / (sqrt(d_i) sigma_i)`` and ``log beta`` with ``beta A_{L:1} = alpha W_{L:1}``."""

    A: tuple
    log_beta: float

    @property
    def L(self):
        return len(self.A)

    def product(self, i, j):
        """``A_j ... A_i`` (1-based); identity for ``j = i - 1``."""
        if j == i - 1:
            return np.eye(self.A[i - 1].shape[1])
        M = self.A[i - 1]
        for k in range(i, j):
            M = self.A[k] @ M
        return M


def scaled_weights(net, sigmas=None):
    """Scaled layers of ``net``; ``sigmas`` defaults to the scales the net was built with."""
    if sigmas is None:
        scales = net.scales
    else:
        scales = [math.sqrt(d) * s for d, s in zip(net.dims[1:], sigmas)]
    A = tuple(w / s for w, s in zip(net.weights, scales))
    log_beta = net.log_alpha + sum(math.log(s) for s in scales)
    return ScaledWeights(A, log_beta)


# -- the P(t) operator --------------------------------------------------------------


def build_P(net, X, size_cap=P_SIZE_CAP):
    """Explicit ``P = alpha^2 sum_i (W_{i-1:1}X)^T (W_{i-1:1}X) kron W_{L:i+1} W_{L:i+1}^T``.

    ``vec(U(t+1) - U(t))`` is ``-eta P vec(U - Y)`` up to the higher-order
    remainder. Only formed when ``n * d_y <= size_cap``.
    """
    X = linalg.as_matrix(X, "X")
    n, d_y = X.shape[1], net.dims[-1]
    if n * d_y > size_cap:
        raise ValueError(f"P would be {n * d_y}x{n * d_y}, above the cap of {size_cap}")
    cache = network.product_cache(net, X)
    beta2 = math.exp(2.0 * cache.log_beta)
    P = np.zeros((n * d_y, n * d_y))
    for i in range(1, net.L + 1):
        pre = cache.prefixes[i - 1]
        suf = cache.suffixes[i + 1]
        P += (beta2 / net.scales[i - 1] ** 2) * np.kron(pre.T @ pre, suf @ suf.T)
    return 0.5 * (P + P.T)


def _isometry_extremes(net, pairs=None):
    """Worst ``log sigma`` excess over the natural scale across sampled pairs."""
    pairs = diagnostic_pairs(net.L) if pairs is None else pairs
    hi, lo = -math.inf, math.inf
    for i, j in pairs:
        M, _ = network.log_partial_product(net, i, j)
        s = np.linalg.svd(M, compute_uv=False)
        hi = max(hi, math.log(s[0]))
        lo = min(lo, math.log(s[-1]) if s[-1] > 0 else -math.inf)
    return hi, lo


def p_eig_window(net, ds, size_cap=P_SIZE_CAP):
    """Extreme eigenvalues of ``P`` against ``[0.6 L sigma_min^2 / d_y, 2 L sigma_max^2 / d_y]``.

    Data with ``n > rank(X)`` is first reduced to ``r`` columns. The verdict
    additionally requires the sampled partial products to sit in the
    0.9/1.1 isometry window, which is what the eigenvalue window rests on.
    Returns ``(lam_min, lam_max, passed, report)``.
    """
    if ds.n > ds.stats.r:
        ds = reduce_wlog(ds)
    P = build_P(net, ds.X, size_cap)
    eig = linalg.sym_eigvals(P)
    lam_max, lam_min = float(eig[0]), float(eig[-1])
    L, d_y, st = net.L, ds.d_y, ds.stats
    upper = 2.0 * L * st.norm_X**2 / d_y
    lower = 0.6 * L * st.sigma_min_X**2 / d_y
    hi, lo = _isometry_extremes(net) if L > 1 else (0.0, 0.0)
    report = TheoryReport().add(
        CheckResult("B_isometry_max", math.log(1.1), hi, relation="<="),
        CheckResult("B_isometry_min", math.log(0.9), lo, relation=">="),
        CheckResult("P_lambda_max", upper, lam_max, tol=1e-12 * upper, relation="<="),
        CheckResult("P_lambda_min", lower, lam_min, tol=1e-12 * upper, relation=">="),
    )
    return lam_min, lam_max, report.ok, report


def p_eig_bounds_from_factors(net, X):
    """Bounds on ``lambda_min(P)``, ``lambda_max(P)`` from the Kronecker factors alone.

    Each term's extreme eigenvalues are products of the factors' extreme
    eigenvalues, so summing them bounds the spectrum of ``P`` without
    forming it. Useful when ``n * d_y`` is too large for :func:`build_P`.
    """
    cache = network.product_cache(net, X)
    beta2 = math.exp(2.0 * cache.log_beta)
    lo = hi = 0.0
    n, d_y = X.shape[1], net.dims[-1]
    for i in range(1, net.L + 1):
        a = np.linalg.svd(cache.prefixes[i - 1], compute_uv=False)
        b = np.linalg.svd(cache.suffixes[i + 1], compute_uv=False)
        a_min = a[-1] if len(a) >= n else 0.0
        b_min = b[-1] if len(b) >= d_y else 0.0
        w = beta2 / net.scales[i - 1] ** 2
        hi += w * (a[0] * b[0]) ** 2
        lo += w * (a_min * b_min) ** 2
    return lo, hi


# -- convergence curve and width condition -------------------------------------------


def contraction_factor(ds, L, d_y, eta):
    """Per-step factor ``1 - eta L lambda_r(X^T X) / (2 d_y)``."""
    return 1.0 - 0.5 * eta * L * ds.stats.lambda_r / d_y


def theorem1_bound_curve(ds, L, d_y, eta, loss0, t, loss_star=0.0):
    """Guaranteed upper envelope ``l* + q^t (l(0) - l*)`` of the orthogonal-init loss.

    ``t`` may be an array. Raises ``ValueError`` when ``eta`` exceeds
    :func:`~deeplinear.trainer.theorem_lr` or the factor leaves ``(0, 1]``.
    """
    limit = theorem_lr(ds, L, d_y)
    if eta > limit * (1.0 + 1e-12):
        raise ValueError(f"eta={eta:.6g} exceeds the admissible {limit:.6g}")
    q = contraction_factor(ds, L, d_y, eta)
    if not 0.0 < q <= 1.0:
        raise ValueError(f"contraction factor {q} outside (0, 1]")
    t = np.asarray(t, dtype=np.float64)
    out = loss_star + np.exp(t * math.log(q)) * (loss0 - loss_star)
    return float(out) if out.ndim == 0 else out


def width_requirement(ds, d_y, delta, C=1.0):
    """``max(ceil(C r~ kappa^2 (d_y (1 + ||W*||^2) + log(r / delta))), d_x)``."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not C > 0:
        raise ValueError("C must be positive")
    st = ds.stats
    w_norm = st.norm_Wstar
    if w_norm is None:
        w_norm = linalg.spectral_norm(network.least_squares_opt(ds)[0])
    need = C * st.stable_rank * st.kappa**2 * (d_y * (1.0 + w_norm**2) + math.log(st.r / delta))
    return max(math.ceil(need), ds.d_x)


def init_loss_bound(ds, d_y, delta, c_B=10.0):
    """``c_B (1 + log(r/delta)/d_y + ||W*||^2) ||X||_F^2``, the high-probability cap on l(0)."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    st = ds.stats
    w_norm = st.norm_Wstar
    if w_norm is None:
        w_norm = linalg.spectral_norm(network.least_squares_opt(ds)[0])
    return c_B * (1.0 + math.log(st.r / delta) / d_y + w_norm**2) * st.frob_X**2


# -- trajectory properties -------------------------------------------------------------


def check_property_B(net0, net_t, pairs=None, lo=0.9, hi=1.1):
    """Near-isometry of sampled partial products, compared in log space.

    Pass when ``log sigma_max(W_{j:i}(t)) <= log(hi) + (j-i+1)/2 log m`` and
    ``log sigma_min(W_{j:i}(t)) >= log(lo) + (j-i+1)/2 log m``; ``(1, L)`` is
    excluded. The natural scale is taken from ``net0`` (``sqrt(m)`` per layer).
    """
    if pairs is None:
        pairs = diagnostic_pairs(net_t.L)
    log_s = [math.log(s) for s in net0.scales]
    out = []
    for i, j in pairs:
        if (i, j) == (1, net_t.L):
            continue
        M, log_scale = network.log_partial_product(net_t, i, j)
        s = np.linalg.svd(M, compute_uv=False)
        ref = sum(log_s[i - 1 : j])
        log_max = math.log(s[0]) + log_scale
        log_min = (math.log(s[-1]) if s[-1] > 0 else -math.inf) + log_scale
        out.append(CheckResult(f"B_max[{i}:{j}]", math.log(hi) + ref, log_max, relation="<="))
        out.append(CheckResult(f"B_min[{i}:{j}]", math.log(lo) + ref, log_min, relation=">="))
    return out


def drift_radius(ds, L, d_y, B_value):
    """``8 sqrt(B d_y) ||X|| / (L sigma_min(X)^2)``."""
    st = ds.stats
    return 8.0 * math.sqrt(B_value * d_y) * st.norm_X / (L * st.sigma_min_X**2)


def check_property_C(net0, net_t, ds, B_value):
    """Per-layer drift ``||W_i(t) - W_i(0)||_F`` against the radius from :func:`drift_radius`.

    Only asserted for orthogonal initializations; other schemes get a
    skipped row.
    """
    radius = drift_radius(ds, net_t.L, ds.d_y, B_value)
    scheme = net0.meta.get("scheme", "orthogonal")
    out = []
    for i, (w0, wt) in enumerate(zip(net0.weights, net_t.weights), start=1):
        drift = float(np.linalg.norm(wt - w0))
        if scheme != "orthogonal":
            out.append(CheckResult(f"C_drift[{i}]", radius, drift, verdict=SKIP,
                                   note=f"radius derived for orthogonal init, scheme is {scheme}"))
        else:
            out.append(CheckResult(f"C_drift[{i}]", radius, drift, relation="<="))
    return out


# -- output dynamics ------------------------------------------------------------------


def dynamics_residual(net_t, net_t1, ds, eta, size_cap=P_SIZE_CAP):
    """Split ``U(t+1) - U(t)`` into the ``-eta P vec(U - Y)`` part and the remainder.

    The scaled remainder ``alpha E(t) X`` is computed twice: once as
    ``U(t+1) - U(t) + eta P vec(U(t) - Y)`` and once from the expansion of
    ``W_{L:1}(t+1) - W_{L:1}(t)`` minus its first-order gradient terms. Their
    relative disagreement is ``identity_err``. The remainder is then compared
    with ``(1/6) eta lambda_min(P) ||U(t) - Y||_F``.

    Returns ``(identity_err, E_norm, E_bound, passed)``.
    """
    if ds.n > ds.stats.r:
        ds = reduce_wlog(ds)
    X, Y = ds.X, ds.Y
    U0 = network.forward_output(net_t, X)
    U1 = network.forward_output(net_t1, X)
    R = U0 - Y
    P = build_P(net_t, X, size_cap)
    first = linalg.unvec(P @ linalg.vec(R), *R.shape)
    remainder_p = (U1 - U0) + eta * first

    # gradient route: alpha sum_i W_{L:i+1} G_i W_{i-1:1} X, no Kronecker products
    cache = network.product_cache(net_t, X)
    beta = math.exp(cache.log_beta)
    grads = network.gradients(net_t, ds)
    first_grad = np.zeros_like(U0)
    for i in range(1, net_t.L + 1):
        suf, pre = cache.suffixes[i + 1], cache.prefixes[i - 1]
        first_grad += (beta / net_t.scales[i - 1]) * (suf @ grads[i - 1] @ pre)
    remainder_g = (U1 - U0) + eta * first_grad

    scale = max(np.linalg.norm(U1 - U0), eta * np.linalg.norm(first), 1e-300)
    identity_err = float(np.linalg.norm(remainder_p - remainder_g) / scale)
    E_norm = float(np.linalg.norm(remainder_p))
    lam_min = float(linalg.sym_eigvals(P)[-1])
    E_bound = eta * max(lam_min, 0.0) * float(np.linalg.norm(R)) / 6.0
    return identity_err, E_norm, E_bound, E_norm <= E_bound


# -- Gaussian products -------------------------------------------------------------------


def expected_sqrt_chi2(d):
    """``E sqrt(Z)`` for ``d Z ~ chi^2_d``: ``sqrt(2/d) Gamma((d+1)/2) / Gamma(d/2)``."""
    return math.sqrt(2.0 / d) * math.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0))


def sqrt_chi2_mean(d, draws, seed):
    """Monte-Carlo mean of ``||A v|| / ||v||`` for one ``d x d`` Gaussian layer ``A ~ N(0, 1/d)``."""
    rng = make_rng(seed, "sqrt-chi2", d)
    g = rng.standard_normal((draws, d)) / math.sqrt(d)
    return float(np.mean(np.linalg.norm(g, axis=1)))


def _gaussian_stack(dims, rng):
    return [rng.standard_normal((dims[k], dims[k - 1])) / math.sqrt(dims[k]) for k in range(1, len(dims))]


@dataclass
class ProductNormStats:
    depths: np.ndarray
    median_log_norm: np.ndarray
    slope: float
    intercept: float
    tail_quantiles: dict
    log_norms: np.ndarray
    gamma_probe: float | None = None
    gamma_ratio: np.ndarray | None = None


def mc_product_norm(dims, gamma_probe=None, trials=100, seed=0, depths=None, tail_pairs=True):
    """Monte-Carlo law of ``log ||A_{j:1}(0)||`` for scaled Gaussian stacks of widths ``dims``.

    ``depths`` selects which prefix lengths ``j`` enter the slope fit
    (default: all). The tail statistic is ``max_{i<=j} ||A_{j:i}(0)||`` per trial,
    summarized by its 50/90/99% quantiles. When ``gamma_probe`` is given,
    ``median_log_norm / depth^gamma_probe`` is also returned; a roughly
    constant ratio is consistent with ``e^{-Omega(L^gamma)}`` decay.
    """
    if trials < 30:
        raise ValueError("use at least 30 trials")
    dims = [int(d) for d in dims]
    L = len(dims) - 1
    depths = np.arange(1, L + 1) if depths is None else np.asarray(sorted(depths), dtype=int)
    if depths.min() < 1 or depths.max() > L:
        raise ValueError("depths must lie in 1..L")
    log_norms = np.empty((trials, len(depths)))
    tail = np.empty(trials)
    for t in range(trials):
        A = _gaussian_stack(dims, make_rng(seed, "mc-product", t))
        M = None
        k = 0
        for j in range(1, L + 1):
            M = A[0] if M is None else A[j - 1] @ M
            if k < len(depths) and depths[k] == j:
                log_norms[t, k] = math.log(np.linalg.norm(M, 2))
                k += 1
        if tail_pairs:
            best = 0.0
            for i in range(1, L + 1):
                M = A[i - 1]
                best = max(best, np.linalg.norm(M, 2))
                for j in range(i + 1, L + 1):
                    M = A[j - 1] @ M
                    best = max(best, np.linalg.norm(M, 2))
            tail[t] = best
    med = np.median(log_norms, axis=0)
    if len(depths) > 1:
        slope, intercept = np.polyfit(depths.astype(float), med, 1)
    else:
        slope, intercept = float("nan"), float(med[0])
    quant = {q: float(np.quantile(tail, q)) for q in (0.5, 0.9, 0.99)} if tail_pairs else {}
    ratio = None if gamma_probe is None else med / depths.astype(float) ** gamma_probe
    return ProductNormStats(depths, med, float(slope), float(intercept), quant, log_norms,
                            gamma_probe, ratio)


def _long_pairs(L):
    k = math.ceil(L / 4)
    return [(i, j) for i in range(1, L + 1) for j in range(i + k, L + 1)]


def perturbation_stability(A0, epsilon, probes=10, seed=0, decay_slope=None):
    """Perturb every scaled layer by spectral norm ``epsilon`` and track long products.

    ``A0`` is a :class:`ScaledWeights` or a list of matrices. For each probe
    and each pair with ``j - i >= L/4`` the check is
    ``log ||A_{j:i}|| <= log ||A_{j:i}(0)|| + log 2``. The premise is
    ``epsilon <= exp(0.6 * decay_slope * L)`` with ``decay_slope`` the measured
    (negative) slope of the median log-norm; when it is violated the rows are
    marked skipped.
    """
    A = list(A0.A if isinstance(A0, ScaledWeights) else A0)
    L = len(A)
    pairs = _long_pairs(L)
    if decay_slope is None:
        dims = [A[0].shape[1]] + [a.shape[0] for a in A]
        decay_slope = mc_product_norm(dims, trials=30, seed=seed, tail_pairs=False).slope
    premise = math.exp(0.6 * decay_slope * L) if decay_slope < 0 else 0.0
    premise_ok = epsilon <= premise

    def long_logs(layers):
        out = {}
        for i in range(1, L + 1):
            M = layers[i - 1]
            for j in range(i + 1, L + 1):
                M = layers[j - 1] @ M
                if j - i >= math.ceil(L / 4):
                    out[(i, j)] = math.log(np.linalg.norm(M, 2))
        return out

    base = long_logs(A)
    rng = make_rng(seed, "perturb")
    worst = -math.inf
    worst_pair = None
    for _ in range(probes):
        pert = []
        for a in A:
            G = rng.standard_normal(a.shape)
            pert.append(a + epsilon * G / np.linalg.norm(G, 2))
        logs = long_logs(pert)
        for p in pairs:
            excess = logs[p] - base[p]
            if excess > worst:
                worst, worst_pair = excess, p
    note = f"premise eps <= {premise:.3g}; worst pair {worst_pair}"
    if premise_ok:
        return [CheckResult("perturbed_long_product", math.log(2.0), worst, note=note)]
    return [CheckResult("perturbed_long_product", math.log(2.0), worst, verdict=SKIP,
                        note="premise violated: " + note)]


def gradient_scale(net, ds):
    """Per-layer ``sqrt(d_i) sigma_i ||grad_{W_i} l||``: the scale-free gradient size."""
    grads = network.gradients(net, ds)
    return np.array([s * np.linalg.norm(g, 2) for s, g in zip(net.scales, grads)])


def stuck_window_check(record, ds, horizon=None, lo=0.4, hi=0.6):
    """Is the loss confined to ``(lo, hi) * ||Y||_F^2`` for every recorded step up to ``horizon``?

    Returns a :class:`CheckResult` with ``verdict`` ``"pass"`` (stuck) or
    ``"fail"`` (escaped). The note reports the mean drift per step at the
    last diagnostic, when available.
    """
    y2 = float(np.sum(ds.Y * ds.Y))
    t = record.t
    losses = record.losses
    if horizon is not None:
        keep = t <= horizon
        t, losses = t[keep], losses[keep]
    below = float(np.min(losses) / y2)
    above = float(np.max(losses) / y2)
    stuck = bool(lo < below and above < hi) and record.status != "diverged"
    note = f"loss/||Y||^2 in [{below:.4g}, {above:.4g}]"
    if record.diagnostics:
        last = record.diagnostics[-1]
        if last["t"] > 0:
            note += f"; drift/step {last['drift'] / last['t']:.3g}"
    return CheckResult("stuck_window", hi, above, relation="<=", verdict=PASS if stuck else FAIL,
                       note=("stuck; " if stuck else "escaped; ") + note)


def fit_geometric_rate(record, floor=1e-12):
    """Least-squares per-step factor ``q`` with ``l(t) ~ l(0) q^t`` over the recorded trajectory."""
    t = record.t.astype(float)
    rel = np.maximum(record.rel_losses, floor)
    keep = rel > floor
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(t[keep], np.log(rel[keep]), 1)[0]
    return float(math.exp(slope))
