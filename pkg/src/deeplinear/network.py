"""Deep linear network ``f(x) = alpha * W_L ... W_1 x``: outputs, loss and gradients.

Chains of weight matrices are evaluated on *normalized* layers
``W_i / s_i``, where ``s_i`` is the natural scale the initializer used
(``sqrt(m)`` for orthogonal layers, ``sqrt(d_i) * sigma_i`` for Gaussian
ones, 1 for hand-built nets). The product of the scales is carried as a
logarithm together with ``log(alpha)``, so ``alpha * W_{L:1}`` is formed
without ever materializing ``m^{L/2}``. Mathematically nothing changes:
``alpha`` still multiplies the chain once, at the output.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .data import RANK_TOL, read_meta, write_meta

__all__ = [
    "NetworkState",
    "ProductCache",
    "product_cache",
    "forward_output",
    "loss",
    "partial_product",
    "log_partial_product",
    "gradients",
    "gradients_and_output",
    "least_squares_opt",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Weights ``W_1..W_L`` (``W_i`` is ``d_i x d_{i-1}``) and the output scaling.

    ``alpha`` may be given directly or as ``log_alpha``; the latter is the
    stored form. ``scales`` are the per-layer normalizers described in the
    module docstring (defaults to all ones).
    """

    weights: tuple
    log_alpha: float = 0.0
    scales: tuple = None
    plan: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ws = tuple(linalg.as_matrix(w, f"W_{i + 1}") for i, w in enumerate(self.weights))
        if not ws:
            raise ValueError("a network needs at least one layer")
        for i in range(1, len(ws)):
            if ws[i].shape[1] != ws[i - 1].shape[0]:
                raise ValueError(
                    f"W_{i + 1} has {ws[i].shape[1]} columns but W_{i} has {ws[i - 1].shape[0]} rows"
                )
        for w in ws:
            w.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        if not math.isfinite(self.log_alpha):
            raise ValueError("alpha must be positive and finite")
        scales = (1.0,) * len(ws) if self.scales is None else tuple(float(s) for s in self.scales)
        if len(scales) != len(ws) or any(not (s > 0 and math.isfinite(s)) for s in scales):
            raise ValueError("scales must be one positive finite value per layer")
        object.__setattr__(self, "scales", scales)

    @classmethod
    def from_alpha(cls, weights, alpha=1.0, **kwargs):
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        return cls(tuple(weights), log_alpha=math.log(alpha), **kwargs)

    @property
    def L(self):
        return len(self.weights)

    @property
    def dims(self):
        """Layer widths ``(d_0, ..., d_L)``."""
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def alpha(self):
        return math.exp(self.log_alpha)

    @property
    def log_beta(self):
        """``log(alpha * prod s_i)``: the output factor applied to normalized chains."""
        return self.log_alpha + sum(math.log(s) for s in self.scales)

    def normalized(self, i):
        """``W_i / s_i`` for 1-based layer index ``i``."""
        return self.weights[i - 1] / self.scales[i - 1]

    def replace_weights(self, weights):
        return NetworkState(tuple(weights), self.log_alpha, self.scales, self.plan, dict(self.meta))


@dataclass(frozen=True)
class ProductCache:
    """Normalized prefix and suffix products for one network and input.

    ``prefixes[i]`` is ``W_{i:1} X / prod_{k<=i} s_k`` for ``i = 0..L`` and
    ``suffixes[i]`` is ``W_{L:i} / prod_{k>=i} s_k`` for ``i = 1..L+1``
    (index 0 unused, ``suffixes[L+1] = I``).
    """

    prefixes: list
    suffixes: list
    log_beta: float

    @property
    def output(self):
        """The network output ``U = alpha W_{L:1} X``."""
        return math.exp(self.log_beta) * self.prefixes[-1]


def _check_input(net, X):
    X = linalg.as_matrix(X, "X")
    if X.shape[0] != net.dims[0]:
        raise ValueError(f"input has {X.shape[0]} rows, network expects {net.dims[0]}")
    return X


def product_cache(net, X, suffixes=True):
    X = _check_input(net, X)
    L = net.L
    layers = [net.normalized(i) for i in range(1, L + 1)]
    prefixes = [X]
    for w in layers:
        prefixes.append(w @ prefixes[-1])
    sfx = [None] * (L + 2)
    if suffixes:
        sfx[L + 1] = np.eye(net.dims[-1])
        for i in range(L, 0, -1):
            sfx[i] = sfx[i + 1] @ layers[i - 1]
    return ProductCache(prefixes, sfx, net.log_beta)


def forward_output(net, X):
    """``U = alpha W_L ... W_1 X``, multiplied right-to-left onto ``X``."""
    X = _check_input(net, X)
    out = X
    for i in range(1, net.L + 1):
        out = net.normalized(i) @ out
    U = math.exp(net.log_beta) * out
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("network output is not finite")
    return U


def loss(net, ds):
    """``0.5 * ||U - Y||_F^2``."""
    R = forward_output(net, ds.X) - ds.Y
    return 0.5 * float(np.sum(R * R))


def _check_range(net, i, j):
    if not (1 <= i <= j + 1 <= net.L + 1):
        raise IndexError(f"need 1 <= i <= j+1 <= L+1, got i={i}, j={j}, L={net.L}")


def log_partial_product(net, i, j):
    """``(M, log_scale)`` with ``W_j ... W_i = exp(log_scale) * M``.

    ``M`` is the chain of normalized layers, so its entries stay O(1) even
    when the raw product would overflow.
    """
    _check_range(net, i, j)
    if j == i - 1:
        return np.eye(net.dims[i - 1]), 0.0
    M = net.normalized(i)
    for k in range(i + 1, j + 1):
        M = net.normalized(k) @ M
    return M, sum(math.log(net.scales[k - 1]) for k in range(i, j + 1))


def partial_product(net, i, j):
    """``W_{j:i} = W_j W_{j-1} ... W_i`` with 1-based indices.

    The empty range ``j = i - 1`` gives the identity of size ``d_{i-1}``.
    """
    M, log_scale = log_partial_product(net, i, j)
    out = math.exp(log_scale) * M
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("partial product overflows; use log_partial_product")
    return out


def gradients(net, ds):
    """Closed-form ``dl/dW_i = alpha W_{L:i+1}^T (U - Y) (W_{i-1:1} X)^T`` for all layers.

    One prefix and one suffix sweep; no per-pair chains are formed.
    """
    return gradients_and_output(net, ds)[0]


def gradients_and_output(net, ds, cache=None):
    """Like :func:`gradients` but also returns the output ``U`` the gradients were taken at."""
    if cache is None:
        cache = product_cache(net, ds.X)
    beta = math.exp(cache.log_beta)
    U = beta * cache.prefixes[-1]
    R = U - ds.Y
    grads = []
    for i in range(1, net.L + 1):
        left = cache.suffixes[i + 1].T @ R
        grads.append((beta / net.scales[i - 1]) * (left @ cache.prefixes[i - 1].T))
    return grads, U


def least_squares_opt(ds):
    """Minimizer of ``||W X - Y||_F`` via the SVD pseudo-inverse, and ``0.5`` times its residual."""
    Wopt = ds.Y @ np.linalg.pinv(ds.X, rcond=RANK_TOL)
    R = Wopt @ ds.X - ds.Y
    return Wopt, 0.5 * float(np.sum(R * R))


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(net, directory, **extra):
    os.makedirs(directory, exist_ok=True)
    for i, w in enumerate(net.weights, start=1):
        linalg.save_matrix(os.path.join(directory, f"W_{i}.mat"), w)
    meta = {
        "L": net.L,
        "dims": ",".join(str(d) for d in net.dims),
        "alpha": "%.17g" % net.alpha,
        "log_alpha": "%.17g" % net.log_alpha,
        "scales": ",".join("%.17g" % s for s in net.scales),
    }
    meta.update({k: v for k, v in net.meta.items() if k not in meta})
    meta.update(extra)
    write_meta(os.path.join(directory, "meta"), meta)


def load_checkpoint(directory):
    meta = read_meta(os.path.join(directory, "meta"))
    L = int(meta["L"])
    weights = [linalg.load_matrix(os.path.join(directory, f"W_{i}.mat")) for i in range(1, L + 1)]
    if "log_alpha" in meta:
        log_alpha = float(meta["log_alpha"])
    else:
        log_alpha = math.log(float(meta["alpha"]))
    scales = [float(s) for s in meta["scales"].split(",")] if "scales" in meta else None
    net = NetworkState(tuple(weights), log_alpha, scales, meta=meta)
    expected = tuple(int(d) for d in meta["dims"].split(",")) if "dims" in meta else net.dims
    if expected != net.dims:
        raise ValueError(f"checkpoint dims {expected} disagree with weights {net.dims}")
    return net
