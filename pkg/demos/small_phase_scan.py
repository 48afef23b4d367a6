"""A small depth x width scan with heat maps, the same code path as ``deeplinear scan``.

Run:  python demos/small_phase_scan.py [out_dir]
"""
import sys

import numpy as np

from deeplinear.experiments import ScanConfig, run_scan
from deeplinear.experiments.heatmap import heatmap_grid

out = sys.argv[1] if len(sys.argv) > 1 else "phase_demo"
cfg = ScanConfig(depths=(4, 16, 64), widths=(4, 16, 64), trials=2, steps=500, checkpoints=(100, 500),
                 d_x=16, d_y=4, n=8)
cells = run_scan(cfg, out)

for scheme in cfg.schemes:
    depths, widths, grid = heatmap_grid(cells, scheme, 500)
    print("\n%s, median log10 l(500)/l(0)   (nan: width below the data dims)" % scheme)
    print("depth\\width " + "".join("%8d" % w for w in widths))
    for d, row in zip(depths, grid):
        print("%11d " % d + "".join("%8.2f" % v if np.isfinite(v) else "%8s" % v for v in row))
print("\nwrote %s/scan.csv and heatmap_*.ppm" % out)
