"""Synthetic regression data ``Y = W* X`` and its spectral statistics."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .rng import make_rng

__all__ = [
    "RANK_TOL",
    "DataStats",
    "Dataset",
    "data_stats",
    "gen_synthetic",
    "reduce_wlog",
    "least_squares_residual",
    "save_dataset",
    "load_dataset",
    "read_meta",
    "write_meta",
]

# Numerical rank: singular values above RANK_TOL * sigma_1 count.
RANK_TOL = 1e-10


@dataclass(frozen=True)
class DataStats:
    r: int
    kappa: float
    stable_rank: float
    sigma_min_X: float
    norm_X: float
    frob_X: float
    norm_Wstar: float | None = None

    @property
    def lambda_r(self):
        """Smallest nonzero eigenvalue of ``X^T X``."""
        return self.sigma_min_X**2


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    Wstar: np.ndarray | None = None
    stats: DataStats = field(default=None)
    seed: int | None = None
    normalized: bool = False

    def __post_init__(self):
        X = linalg.as_matrix(self.X, "X")
        Y = linalg.as_matrix(self.Y, "Y")
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"X has {X.shape[1]} columns but Y has {Y.shape[1]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.Wstar is not None:
            W = linalg.as_matrix(self.Wstar, "Wstar")
            if W.shape != (Y.shape[0], X.shape[0]):
                raise ValueError(f"Wstar shape {W.shape} incompatible with X {X.shape}, Y {Y.shape}")
            object.__setattr__(self, "Wstar", W)
        if self.stats is None:
            object.__setattr__(self, "stats", data_stats(X, self.Wstar))
        for arr in (self.X, self.Y, self.Wstar):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def d_x(self):
        return self.X.shape[0]

    @property
    def d_y(self):
        return self.Y.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def is_realizable(self):
        if self.Wstar is None:
            return False
        resid = np.linalg.norm(self.Wstar @ self.X - self.Y)
        return resid <= 1e-10 * max(np.linalg.norm(self.Y), 1e-300)

    def scaled(self, x_scale=1.0, w_scale=1.0):
        """Return the dataset with ``X`` and ``W*`` rescaled (``Y`` follows)."""
        X = self.X * x_scale
        if self.Wstar is None:
            return Dataset(X, self.Y * x_scale * w_scale, seed=self.seed)
        W = self.Wstar * w_scale
        return Dataset(X, W @ X, W, seed=self.seed, normalized=self.normalized)


def data_stats(X, Wstar=None):
    """Rank, condition ratio, stable rank and norms of ``X``.

    >>> s = data_stats(np.diag([2.0, 1.0]))
    >>> s.kappa, s.stable_rank
    (4.0, 1.25)
    """
    X = linalg.as_matrix(X, "X")
    sv = linalg.singular_values(X)
    if sv[0] == 0.0:
        raise ValueError("X is identically zero; rank 0 is unsupported")
    r = int(np.sum(sv > RANK_TOL * sv[0]))
    norm_X = float(sv[0])
    frob_X = float(np.sqrt(np.sum(sv**2)))
    sigma_min = float(sv[r - 1])
    return DataStats(
        r=r,
        kappa=(norm_X / sigma_min) ** 2,
        stable_rank=(frob_X / norm_X) ** 2,
        sigma_min_X=sigma_min,
        norm_X=norm_X,
        frob_X=frob_X,
        norm_Wstar=None if Wstar is None else linalg.spectral_norm(Wstar),
    )


def gen_synthetic(d_x, d_y, n, seed, normalize=False):
    """Draw ``X`` (d_x x n) and ``W*`` (d_y x d_x) iid N(0, 1) and set ``Y = W* X``.

    With ``normalize=True`` the data is rescaled so that ``||X||_F = 1`` and
    ``||Y||_F = 1`` while staying realizable (``W*`` absorbs the scale).
    """
    for name, v in (("d_x", d_x), ("d_y", d_y), ("n", n)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    rng = make_rng(seed, "dataset")
    X = rng.standard_normal((d_x, n))
    Wstar = rng.standard_normal((d_y, d_x))
    if normalize:
        X = X / np.linalg.norm(X)
        Wstar = Wstar / np.linalg.norm(Wstar @ X)
    Y = Wstar @ X
    return Dataset(X, Y, Wstar, seed=int(seed), normalized=bool(normalize))


def reduce_wlog(ds):
    """Compress the data to ``r`` columns without changing the optimization landscape.

    With the compact SVD ``X = U S V^T`` the reduced data is ``X' = U S`` and
    ``Y' = Y V``. For every ``W`` the loss on ``(X', Y')`` differs from the loss on
    ``(X, Y)`` by the constant ``0.5 ||Y (I - V V^T)||_F^2``.
    """
    U, s, Vt = np.linalg.svd(ds.X, full_matrices=False)
    if s[0] == 0.0:
        raise ValueError("X has rank 0")
    r = int(np.sum(s > RANK_TOL * s[0]))
    V = Vt[:r].T
    Xr = U[:, :r] * s[:r]
    Yr = ds.Y @ V
    if ds.Wstar is not None and ds.is_realizable:
        resid = np.linalg.norm(ds.Wstar @ Xr - Yr)
        if resid >= 1e-9 * max(np.linalg.norm(Yr), 1.0):
            raise ArithmeticError(f"reduced data lost realizability (residual {resid:.3g})")
    return Dataset(Xr, Yr, ds.Wstar, seed=ds.seed, normalized=ds.normalized)


def least_squares_residual(ds):
    """Replace ``Y`` by its projection onto the row space of ``X``.

    The result is realizable (``l* = 0``); theory checks that assume a zero
    optimum run on this when the stored targets carry a residual.
    """
    pinv = np.linalg.pinv(ds.X, rcond=RANK_TOL)
    Wopt = ds.Y @ pinv
    return Dataset(ds.X, Wopt @ ds.X, Wopt, seed=ds.seed, normalized=ds.normalized)


# -- on-disk format ------------------------------------------------------------


def write_meta(path, meta):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={value}\n")


def read_meta(path):
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def save_dataset(ds, directory):
    os.makedirs(directory, exist_ok=True)
    linalg.save_matrix(os.path.join(directory, "X.mat"), ds.X)
    linalg.save_matrix(os.path.join(directory, "Y.mat"), ds.Y)
    if ds.Wstar is not None:
        linalg.save_matrix(os.path.join(directory, "Wstar.mat"), ds.Wstar)
    meta = {"d_x": ds.d_x, "d_y": ds.d_y, "n": ds.n}
    if ds.seed is not None:
        meta["seed"] = ds.seed
    meta["normalize"] = int(ds.normalized)
    write_meta(os.path.join(directory, "meta"), meta)


def load_dataset(directory):
    X = linalg.load_matrix(os.path.join(directory, "X.mat"))
    Y = linalg.load_matrix(os.path.join(directory, "Y.mat"))
    wpath = os.path.join(directory, "Wstar.mat")
    Wstar = linalg.load_matrix(wpath) if os.path.exists(wpath) else None
    meta_path = os.path.join(directory, "meta")
    meta = read_meta(meta_path) if os.path.exists(meta_path) else {}
    seed = int(meta["seed"]) if "seed" in meta else None
    ds = Dataset(X, Y, Wstar, seed=seed, normalized=bool(int(meta.get("normalize", 0))))
    for key, actual in (("d_x", ds.d_x), ("d_y", ds.d_y), ("n", ds.n)):
        if key in meta and int(meta[key]) != actual:
            raise ValueError(f"meta {key}={meta[key]} disagrees with stored matrices ({actual})")
    return ds

