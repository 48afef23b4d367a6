"""Train a deep orthogonally initialized linear net and compare with the geometric bound.

Run:  python demos/orthogonal_convergence.py
"""
import numpy as np

from deeplinear import DimensionPlan, InitScheme, TrainConfig, gen_synthetic, train_run
from deeplinear.theory import contraction_factor, fit_geometric_rate, theorem1_bound_curve

ds = gen_synthetic(16, 4, 16, seed=0)
print("data: d_x=%d d_y=%d n=%d  rank %d  kappa %.3g" % (ds.d_x, ds.d_y, ds.n, ds.stats.r, ds.stats.kappa))

L, m = 16, 64
cfg = TrainConfig(DimensionPlan.uniform(ds.d_x, ds.d_y, m, L), InitScheme("orthogonal"), steps=2000,
                  record_every=100, seed=0)
rec = train_run(cfg, ds)
eta = float(rec.header["eta"])

bound = theorem1_bound_curve(ds, L, ds.d_y, eta, rec.loss0, rec.t)
print("\n   t        loss      bound")
for t, l, b in zip(rec.t, rec.losses, bound):
    print("%5d  %10.4g  %10.4g" % (t, l, b))

q = contraction_factor(ds, L, ds.d_y, eta)
print("\nguaranteed per-step factor %.6f, fitted %.6f" % (q, fit_geometric_rate(rec)))
# the guarantee is loose when X is badly conditioned: lambda_min sets the rate
assert np.all(rec.losses <= bound * (1 + 1e-12))
