"""Full-batch gradient descent with trajectory recording."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas

from . import network
from .data import write_meta
from .initializers import DimensionPlan, InitScheme, init_weights

__all__ = [
    "DIVERGENCE_FACTOR",
    "DivergenceError",
    "TrainConfig",
    "RunRecord",
    "theorem_lr",
    "gd_step",
    "diagnostic_pairs",
    "train_run",
]

# A run counts as diverged once the loss exceeds this multiple of l(0).
DIVERGENCE_FACTOR = 1e12

COMPLETED = "completed"
DIVERGED = "diverged"
STOPPED = "stopped"


class DivergenceError(FloatingPointError):
    """Raised when a gradient step produces non-finite weights or gradients."""


def theorem_lr(ds, L, d_y=None):
    """Largest step size covered by the orthogonal convergence guarantee: ``d_y / (2 L ||X||^2)``."""
    d_y = ds.d_y if d_y is None else d_y
    return d_y / (2.0 * L * ds.stats.norm_X**2)


@dataclass
class TrainConfig:
    plan: DimensionPlan
    scheme: InitScheme = field(default_factory=InitScheme)
    steps: int = 1000
    eta: object = "auto"
    record_every: int = 1
    diag_every: int = 0
    seed: int = 0
    stop_rel_loss: float = 0.0
    record_steps: tuple = ()  # extra steps recorded regardless of record_every

    def __post_init__(self):
        self.record_steps = tuple(sorted({int(t) for t in self.record_steps}))
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.diag_every < 0:
            raise ValueError("diag_every must be >= 0")
        if self.eta != "auto" and not float(self.eta) > 0:
            raise ValueError(f"eta must be positive or 'auto', got {self.eta!r}")

    def resolve_eta(self, ds):
        if self.eta == "auto":
            return theorem_lr(ds, self.plan.L, ds.d_y)
        return float(self.eta)


@dataclass
class RunRecord:
    """Trajectory of one run.

    ``rows`` holds ``(t, loss, rel_loss)`` per recorded step. ``diagnostics``
    holds, per diagnosed step, the largest layer drift ``max_i ||W_i(t) - W_i(0)||_F``
    (and its running maximum) and the extreme log singular values of the
    sampled partial products measured relative to their scale at
    initialization (``log sigma - sum_k log s_k``; zero at an orthogonal init).
    """

    header: dict
    rows: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    status: str = COMPLETED
    initial_state: object = None
    final_state: object = None

    @property
    def t(self):
        return np.array([r[0] for r in self.rows], dtype=int)

    @property
    def losses(self):
        return np.array([r[1] for r in self.rows])

    @property
    def rel_losses(self):
        return np.array([r[2] for r in self.rows])

    @property
    def loss0(self):
        return self.rows[0][1]

    def loss_at(self, t):
        for row in self.rows:
            if row[0] == t:
                return row[1]
        raise KeyError(t)

    def to_csv(self):
        diag = {d["t"]: d for d in self.diagnostics}
        cols = ["t", "loss", "rel_loss", "drift", "drift_running_max", "log_sigma_max_excess",
                "log_sigma_min_excess"]
        lines = [",".join(cols)]
        for t, loss, rel in self.rows:
            vals = [str(t), "%.10g" % loss, "%.10g" % rel]
            d = diag.get(t)
            if d is None:
                vals += [""] * 4
            else:
                vals += ["%.10g" % d[k] for k in cols[3:]]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "record.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())
        meta = dict(self.header)
        meta["status"] = self.status
        write_meta(os.path.join(directory, "meta"), meta)


def diagnostic_pairs(L):
    """Sampled ``(i, j)`` pairs: ``(1, i)``, ``(i, L)`` and ``(i, i + ceil(L/4))``, never ``(1, L)``."""
    k = math.ceil(L / 4)
    pairs = set()
    for i in range(1, L + 1):
        pairs.add((1, i))
        pairs.add((i, L))
        if i + k <= L:
            pairs.add((i, i + k))
    pairs.discard((1, L))
    return sorted(pairs)


def _pair_log_extremes(layers, pairs):
    """Extreme log singular values of normalized products ``V_j ... V_i`` for each pair."""
    by_start = {}
    for i, j in pairs:
        by_start.setdefault(i, []).append(j)
    out = {}
    for i, ends in by_start.items():
        ends = sorted(ends)
        M = layers[i - 1]
        k = i
        for j in ends:
            while k < j:
                k += 1
                M = layers[k - 1] @ M
            s = np.linalg.svd(M, compute_uv=False)
            with np.errstate(divide="ignore"):
                out[(i, j)] = (float(np.log(s[0])), float(np.log(s[-1])))
    return out


def _step_inplace(layers, scales, log_beta, X, Y, eta):
    """Loss at ``layers``, then one gradient step applied to ``layers`` in place.

    ``layers`` are normalized weights ``V_i = W_i / s_i`` stored in Fortran
    order. The true gradient is ``G_i = (beta / s_i) D_i`` with
    ``D_i = Shat_{i+1}^T (U - Y) Phat_{i-1}^T``, so ``W <- W - eta G`` reads
    ``V <- V - eta beta / s^2 D``. The backward sweep extends the suffix
    product with the old ``V_i`` before overwriting it, so every layer sees
    time-t gradients.
    """
    prefixes = [X]
    for V in layers:
        prefixes.append(V @ prefixes[-1])
    beta = math.exp(log_beta)
    R = beta * prefixes[-1] - Y
    loss = 0.5 * float(np.sum(R * R))
    Rt = R.T
    S = None  # Shat_{i+1}; None stands for the identity
    for i in range(len(layers), 0, -1):
        V = layers[i - 1]
        left = Rt if S is None else Rt @ S
        if i > 1:
            S = V.copy() if S is None else S @ V
        c = eta * beta / (scales[i - 1] ** 2)
        # V <- V - c * left^T prefix^T, without materializing D_i
        out = blas.dgemm(-c, left, prefixes[i - 1], beta=1.0, c=V, trans_a=1, trans_b=1, overwrite_c=1)
        if out is not V:
            V[...] = out
    return loss


def gd_step(net, ds, eta):
    """One simultaneous gradient step on every layer; returns the new state."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    grads = network.gradients(net, ds)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError("non-finite gradient")
    new = [W - eta * G for W, G in zip(net.weights, grads)]
    if not all(np.all(np.isfinite(W)) for W in new):
        raise DivergenceError("non-finite weights after step")
    return net.replace_weights(new)


def train_run(cfg, ds, callback=None, keep_states=True):
    """Initialize from ``cfg`` and run gradient descent on ``ds``.

    ``callback(t, net)``, if given, is called at every diagnostic step with
    the current :class:`~deeplinear.network.NetworkState`.
    """
    net0 = init_weights(cfg.plan, cfg.scheme, cfg.seed)
    eta = cfg.resolve_eta(ds)
    _, loss_star = network.least_squares_opt(ds)
    st = ds.stats
    header = {
        "scheme": cfg.scheme.kind,
        "dims": ",".join(str(d) for d in cfg.plan.d),
        "depth": cfg.plan.L,
        "width": cfg.plan.m if cfg.plan.m is not None else "",
        "steps": cfg.steps,
        "eta": "%.17g" % eta,
        "eta_policy": "auto" if cfg.eta == "auto" else "fixed",
        "seed": cfg.seed,
        "record_every": cfg.record_every,
        "diag_every": cfg.diag_every,
        "alpha": "%.17g" % net0.alpha,
        "log_alpha": "%.17g" % net0.log_alpha,
        "loss_star": "%.17g" % loss_star,
        "data_r": st.r,
        "data_kappa": "%.17g" % st.kappa,
        "data_stable_rank": "%.17g" % st.stable_rank,
        "data_sigma_min": "%.17g" % st.sigma_min_X,
        "data_norm": "%.17g" % st.norm_X,
        "data_frob": "%.17g" % st.frob_X,
    }
    if cfg.scheme.kind == "gaussian":
        header["sigma"] = net0.meta.get("sigma", "")
    rec = RunRecord(header=header)
    if keep_states:
        rec.initial_state = net0

    scales = net0.scales
    log_beta = net0.log_beta
    layers0 = [net0.normalized(i) for i in range(1, net0.L + 1)]
    layers = [np.asfortranarray(v.copy()) for v in layers0]
    X, Y = ds.X, ds.Y
    pairs = diagnostic_pairs(net0.L) if cfg.diag_every else []
    extra = set(cfg.record_steps)
    running_drift = 0.0
    loss0 = None

    def state_of(vs):
        return net0.replace_weights([s * v for s, v in zip(scales, vs)])

    def diagnose(t, vs):
        nonlocal running_drift
        drift = max(s * float(np.linalg.norm(v - v0)) for s, v, v0 in zip(scales, vs, layers0))
        running_drift = max(running_drift, drift)
        ext = _pair_log_extremes(vs, pairs)
        rec.diagnostics.append({
            "t": t,
            "drift": drift,
            "drift_running_max": running_drift,
            "log_sigma_max_excess": max((v[0] for v in ext.values()), default=0.0),
            "log_sigma_min_excess": min((v[1] for v in ext.values()), default=0.0),
            "pairs": ext,
        })
        if callback is not None:
            callback(t, state_of(vs))

    t = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            final = t == cfg.steps
            if cfg.diag_every and (t % cfg.diag_every == 0 or final) and all(
                np.all(np.isfinite(V)) for V in layers
            ):
                diagnose(t, layers)
            if final:
                prefix = X
                for V in layers:
                    prefix = V @ prefix
                R = math.exp(log_beta) * prefix - Y
                loss = 0.5 * float(np.sum(R * R))
            else:
                # records the loss at step t, leaves layers at step t + 1
                loss = _step_inplace(layers, scales, log_beta, X, Y, eta)
            if loss0 is None:
                loss0 = loss
            if not math.isfinite(loss) or loss > DIVERGENCE_FACTOR * loss0:
                rec.status = DIVERGED
                break
            rel = loss / loss0 if loss0 > 0 else 0.0
            if t % cfg.record_every == 0 or final or t in extra:
                rec.rows.append((t, loss, rel))
            if final:
                break
            if cfg.stop_rel_loss > 0 and rel <= cfg.stop_rel_loss:
                if rec.rows[-1][0] != t:
                    rec.rows.append((t, loss, rel))
                rec.status = STOPPED
                break
            t += 1
    if keep_states and rec.status != DIVERGED:
        rec.final_state = state_of(layers)
    rec.header["final_step"] = rec.rows[-1][0] if rec.rows else 0
    return rec
