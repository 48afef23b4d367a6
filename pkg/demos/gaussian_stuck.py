"""Deep, narrow Gaussian nets barely move; orthogonal ones of the same shape train.

Run:  python demos/gaussian_stuck.py   (about a minute)
"""
import warnings

from deeplinear import DimensionPlan, InitScheme, TrainConfig, gen_synthetic, train_run
from deeplinear.theory import mc_product_norm

# scaled Gaussian products shrink with depth at small width
st = mc_product_norm([4] * 65, trials=100, seed=0, depths=[8, 16, 32, 64], tail_pairs=False)
for d, v in zip(st.depths, st.median_log_norm):
    print("width 4, depth %3d: median log ||A|| = %7.2f" % (d, v))

ds = gen_synthetic(64, 4, 16, seed=0, normalize=True)
for scheme, width in (("gaussian", 10), ("orthogonal", 64), ("gaussian", 64)):
    cfg = TrainConfig(DimensionPlan.uniform(64, 4, width, 100), InitScheme(scheme), steps=2000,
                      record_every=500, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rec = train_run(cfg, ds, keep_states=False)
    curve = "  ".join("t=%d: %.3g" % (t, r) for t, r in zip(rec.t, rec.rel_losses))
    print("%-10s width %3d depth 100:  %s" % (scheme, width, curve))
