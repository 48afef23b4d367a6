"""Depth x width trainability scans.

Every cell ``(depth, width, scheme, trial)`` is an independent training run
with its own seed, hashed from the master seed and the cell coordinates.
Rows are collected and written in sorted order, so the CSV does not depend
on worker count or completion order.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ..data import gen_synthetic, load_dataset, save_dataset, write_meta
from ..initializers import ORTHOGONAL, DimensionPlan, InitScheme
from ..rng import derive_seed
from ..theory import width_requirement
from ..trainer import TrainConfig, train_run
from .heatmap import emit_heatmap

__all__ = [
    "CSV_HEADER",
    "ScanCell",
    "cell_seed",
    "check_seed_collisions",
    "scan_dataset",
    "run_cell",
    "run_scan",
    "format_rows",
    "read_scan_csv",
]

CSV_HEADER = "depth,width,scheme,trial,eta,checkpoint,rel_loss_log10,status"

INVALID = "invalid"  # orthogonal init needs width >= max(d_x, d_y)
LOG10_FLOOR = -300.0  # rel loss of exactly 0 is reported at this floor


@dataclass
class ScanCell:
    depth: int
    width: int
    scheme: str
    trial: int
    eta: float
    rel_loss_log10: dict
    status: str
    trajectory: list | None = None

    @property
    def key(self):
        return (self.depth, self.width, self.scheme, self.trial)


def cell_seed(master_seed, depth, width, scheme, trial):
    return derive_seed(master_seed, "cell", depth, width, scheme, trial)


def _cells(cfg):
    return [
        (d, w, s, k)
        for d in cfg.depths
        for w in cfg.widths
        for s in cfg.schemes
        for k in range(cfg.trials)
    ]


def check_seed_collisions(cfg):
    """Raise ``RuntimeError`` if two cells would share a seed."""
    seen = {}
    for cell in _cells(cfg):
        s = cell_seed(cfg.master_seed, *cell)
        if s in seen:
            raise RuntimeError(f"seed collision between cells {seen[s]} and {cell}")
        seen[s] = cell
    return len(seen)


def scan_dataset(cfg):
    if cfg.data_path:
        return load_dataset(cfg.data_path)
    return gen_synthetic(cfg.d_x, cfg.d_y, cfg.n, cfg.data_seed, normalize=cfg.normalize)


def run_cell(cfg, ds, depth, width, scheme, trial):
    """Train one cell and read off ``log10 l(t)/l(0)`` at every checkpoint.

    Checkpoints after a divergence get ``+inf``; invalid orthogonal cells
    (width below ``max(d_x, d_y)``) get NaN and are not trained.
    """
    plan = DimensionPlan.uniform(ds.d_x, ds.d_y, width, depth)
    init = InitScheme(scheme)
    seed = cell_seed(cfg.master_seed, depth, width, scheme, trial)
    tcfg = TrainConfig(
        plan,
        init,
        steps=cfg.train_steps,
        eta=cfg.eta,
        record_every=cfg.trajectory_every or cfg.train_steps + 1,
        seed=seed,
        record_steps=cfg.checkpoints,
    )
    eta = tcfg.resolve_eta(ds)
    if scheme == ORTHOGONAL and width < max(ds.d_x, ds.d_y):
        return ScanCell(depth, width, scheme, trial, eta, {c: math.nan for c in cfg.checkpoints}, INVALID)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rec = train_run(tcfg, ds, keep_states=False)
    rel = {t: r for t, _, r in rec.rows}
    values = {}
    for c in cfg.checkpoints:
        if c in rel:
            values[c] = max(math.log10(rel[c]), LOG10_FLOOR) if rel[c] > 0 else LOG10_FLOOR
        else:
            values[c] = math.inf  # only possible after a divergence
    traj = None
    if cfg.trajectory_every:
        traj = [(t, r) for t, _, r in rec.rows if t % cfg.trajectory_every == 0]
    return ScanCell(depth, width, scheme, trial, eta, values, rec.status, traj)


def format_rows(cells):
    """CSV body (header included) sorted by (depth, width, scheme, trial, checkpoint)."""
    lines = [CSV_HEADER]
    for c in sorted(cells, key=lambda c: c.key):
        for cp in sorted(c.rel_loss_log10):
            v = c.rel_loss_log10[cp]
            lines.append(
                f"{c.depth},{c.width},{c.scheme},{c.trial},{'%.10g' % c.eta},{cp},"
                f"{'%.10g' % v},{c.status}"
            )
    return "\n".join(lines) + "\n"


def read_scan_csv(path):
    """Parse a scan CSV back into :class:`ScanCell` objects (without trajectories)."""
    cells = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for line in fh:
            d, w, s, k, eta, cp, v, status = line.strip().split(",")
            key = (int(d), int(w), s, int(k))
            cell = cells.get(key)
            if cell is None:
                cell = cells[key] = ScanCell(*key, float(eta), {}, status)
            cell.rel_loss_log10[int(cp)] = float(v)
    return [cells[k] for k in sorted(cells)]


def run_scan(cfg, out_dir, jobs=1, log=None):
    """Run every cell, write ``scan.csv``, heat maps and a config echo into ``out_dir``.

    Returns the list of :class:`ScanCell`. A cell that raises is recorded
    with status ``error`` and NaN values; the scan continues.
    """
    n_cells = check_seed_collisions(cfg)
    ds = scan_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(cfg, ds) + cell for cell in _cells(cfg)]
    results = []

    def done(res):
        results.append(res)
        if log is not None:
            log(f"[{len(results)}/{n_cells}] depth={res.depth} width={res.width} "
                f"{res.scheme} trial={res.trial} {res.status}")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(t, pool.submit(run_cell, *t)) for t in tasks]
            for t, fut in futures:
                try:
                    done(fut.result())
                except Exception as exc:  # recorded, never aborts the scan
                    done(_error_cell(cfg, t, exc))
    else:
        for t in tasks:
            try:
                done(run_cell(*t))
            except Exception as exc:
                done(_error_cell(cfg, t, exc))

    with open(os.path.join(out_dir, "scan.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_rows(results))
    meta = cfg.to_meta()
    meta["cells"] = n_cells
    meta["width_requirement_C1_delta0.1"] = width_requirement(ds, ds.d_y, 0.1)
    write_meta(os.path.join(out_dir, "scan_config"), meta)
    save_dataset(ds, os.path.join(out_dir, "data"))
    for scheme in cfg.schemes:
        for cp in cfg.checkpoints:
            path = os.path.join(out_dir, f"heatmap_{scheme}_t{cp}.ppm")
            try:
                missing = emit_heatmap(results, scheme, cp, path)
            except ValueError as exc:
                if log is not None:
                    log(f"no heat map for {scheme} t={cp}: {exc}")
                continue
            if missing and log is not None:
                log(f"{path}: {len(missing)} cells drawn red (no usable value)")
    if cfg.trajectory_every:
        _write_trajectories(results, os.path.join(out_dir, "trajectories"))
    return sorted(results, key=lambda c: c.key)


def _error_cell(cfg, task, exc):
    _, _, d, w, s, k = task
    return ScanCell(d, w, s, k, math.nan, {c: math.nan for c in cfg.checkpoints}, "error")


def _write_trajectories(cells, directory):
    os.makedirs(directory, exist_ok=True)
    for c in cells:
        if not c.trajectory:
            continue
        name = f"{c.scheme}_depth{c.depth}_width{c.width}_trial{c.trial}.csv"
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,rel_loss\n")
            for t, r in c.trajectory:
                fh.write(f"{t},{'%.10g' % r}\n")
