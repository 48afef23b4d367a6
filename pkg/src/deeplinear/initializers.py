"""Orthogonal (Haar) and Gaussian weight initialization with the output scaling alpha."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .network import NetworkState
from .rng import make_rng

__all__ = [
    "ORTHOGONAL",
    "GAUSSIAN",
    "InitScheme",
    "DimensionPlan",
    "sample_haar_orthogonal",
    "init_weights",
    "scaling_alpha",
    "log_scaling_alpha",
    "layer_scales",
]

ORTHOGONAL = "orthogonal"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class DimensionPlan:
    """Layer widths ``d = (d_0, ..., d_L)``; ``m`` is set when all hidden widths agree."""

    d: tuple

    def __post_init__(self):
        d = tuple(int(x) for x in self.d)
        if len(d) < 2:
            raise ValueError("a plan needs at least d_0 and d_L")
        if any(x < 1 for x in d):
            raise ValueError(f"all widths must be >= 1, got {d}")
        object.__setattr__(self, "d", d)

    @classmethod
    def uniform(cls, d_x, d_y, m, L):
        if L < 1:
            raise ValueError(f"depth must be >= 1, got {L}")
        return cls((d_x,) + (m,) * (L - 1) + (d_y,))

    @property
    def L(self):
        return len(self.d) - 1

    @property
    def d_x(self):
        return self.d[0]

    @property
    def d_y(self):
        return self.d[-1]

    @property
    def m(self):
        hidden = set(self.d[1:-1])
        if len(hidden) == 1:
            return hidden.pop()
        if not hidden:
            # L == 1: no hidden layer; the orthogonal factor lives in R^{max(d_x, d_y)}
            return max(self.d_x, self.d_y)
        return None


@dataclass(frozen=True)
class InitScheme:
    """``kind`` is ``"orthogonal"`` or ``"gaussian"``; ``sigma`` holds per-layer std-devs.

    A scalar ``sigma`` is broadcast over layers. ``poly_exponent`` is the
    exponent ``c`` of the sanity window ``d_i sigma_i^2 in [L^-c, L^c]``;
    violations only warn.
    """

    kind: str = ORTHOGONAL
    sigma: object = 1.0
    poly_exponent: float = 3.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in (ORTHOGONAL, GAUSSIAN):
            raise ValueError(f"unknown init scheme {self.kind!r}")
        object.__setattr__(self, "kind", kind)

    def sigmas(self, L):
        if np.ndim(self.sigma) == 0:
            sig = [float(self.sigma)] * L
        else:
            sig = [float(s) for s in self.sigma]
            if len(sig) != L:
                raise ValueError(f"expected {L} sigmas, got {len(sig)}")
        if any(not (s > 0 and math.isfinite(s)) for s in sig):
            raise ValueError("Gaussian sigmas must be positive and finite")
        return sig

    def check_sanity(self, plan):
        """Warn when some ``d_i sigma_i^2`` falls outside ``[L^-c, L^c]``; return the offenders."""
        L = plan.L
        if L == 1:
            return []
        lo, hi = L ** (-self.poly_exponent), L**self.poly_exponent
        bad = [
            i + 1
            for i, (d, s) in enumerate(zip(plan.d[1:], self.sigmas(L)))
            if not lo <= d * s * s <= hi
        ]
        if bad:
            warnings.warn(
                f"d_i*sigma_i^2 outside [L^-{self.poly_exponent}, L^{self.poly_exponent}] "
                f"for layers {bad}",
                RuntimeWarning,
                stacklevel=2,
            )
        return bad


def _validate(plan, scheme):
    if scheme.kind == ORTHOGONAL:
        m = plan.m
        if m is None:
            raise ValueError("orthogonal init needs equal hidden widths")
        if m < max(plan.d_x, plan.d_y):
            raise ValueError(f"orthogonal init needs m >= max(d_x, d_y); got m={m}, d={plan.d}")


def sample_haar_orthogonal(m, rng):
    """Haar-distributed ``m x m`` orthogonal matrix.

    QR of an iid Gaussian matrix, with the columns of ``Q`` multiplied by
    ``sign(diag(R))`` so the distribution is exactly uniform on O(m).
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    Z = rng.standard_normal((m, m))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def layer_scales(plan, scheme):
    """Natural scale of each layer: ``sqrt(m)`` (orthogonal) or ``sqrt(d_i) sigma_i`` (Gaussian)."""
    if scheme.kind == ORTHOGONAL:
        return [math.sqrt(plan.m)] * plan.L
    return [math.sqrt(d) * s for d, s in zip(plan.d[1:], scheme.sigmas(plan.L))]


def log_scaling_alpha(plan, scheme):
    """``log(alpha)``, computed without forming ``m^{L-1}``."""
    _validate(plan, scheme)
    L = plan.L
    if scheme.kind == ORTHOGONAL:
        return -0.5 * ((L - 1) * math.log(plan.m) + math.log(plan.d_y))
    sig = scheme.sigmas(L)
    log_prod = sum(math.log(d) + 2.0 * math.log(s) for d, s in zip(plan.d[1:L], sig[: L - 1]))
    return -0.5 * (math.log(plan.d_y) + 2.0 * math.log(sig[L - 1]) + log_prod)


def scaling_alpha(plan, scheme):
    """Output scaling that makes ``E ||f(x)||^2 = ||x||^2`` at initialization.

    Orthogonal: ``1 / sqrt(m^(L-1) d_y)``. Gaussian:
    ``1 / sqrt(d_y sigma_L^2 prod_{i<L} d_i sigma_i^2)``.
    May underflow to 0.0 for extreme depths; the network keeps the log.
    """
    return math.exp(log_scaling_alpha(plan, scheme))


def init_weights(plan, scheme, seed):
    """Sample ``W_1(0), ..., W_L(0)``; layer ``i`` draws from the stream ``(seed, i)``.

    Orthogonal layers are slices of ``sqrt(m)`` times a Haar matrix: ``W_1``
    keeps the first ``d_x`` columns, ``W_L`` the first ``d_y`` rows, hidden
    layers are full. Gaussian layers are iid ``N(0, sigma_i^2)``.
    """
    _validate(plan, scheme)
    L = plan.L
    weights = []
    if scheme.kind == ORTHOGONAL:
        m = plan.m
        root = math.sqrt(m)
        for i in range(1, L + 1):
            Q = root * sample_haar_orthogonal(m, make_rng(seed, "layer", i))
            rows = plan.d_y if i == L else m
            cols = plan.d_x if i == 1 else m
            weights.append(np.ascontiguousarray(Q[:rows, :cols]))
    else:
        scheme.check_sanity(plan)
        for i, s in enumerate(scheme.sigmas(L), start=1):
            rng = make_rng(seed, "layer", i)
            weights.append(s * rng.standard_normal((plan.d[i], plan.d[i - 1])))
    meta = {"scheme": scheme.kind, "seed": int(seed)}
    if scheme.kind == GAUSSIAN:
        meta["sigma"] = ",".join("%.17g" % s for s in scheme.sigmas(L))
    return NetworkState(
        tuple(weights),
        log_alpha=log_scaling_alpha(plan, scheme),
        scales=layer_scales(plan, scheme),
        plan=plan,
        meta=meta,
    )
