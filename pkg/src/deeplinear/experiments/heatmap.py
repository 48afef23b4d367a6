"""Binary PPM (P6) heat maps of ``log10 l(t)/l(0)`` over the depth x width grid."""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = ["LOW", "HIGH", "MISSING_RGB", "gray_level", "heatmap_grid", "emit_heatmap", "read_ppm"]

# rel_loss_log10 mapped linearly from [LOW, HIGH] onto gray [0, 255]; darker = smaller loss
LOW = -6.0
HIGH = 0.0
MISSING_RGB = (255, 0, 0)


def gray_level(value):
    """Clamp ``value`` to ``[LOW, HIGH]`` and map to 0..255, rounding half up."""
    if math.isnan(value):
        raise ValueError("nan has no gray level")
    v = min(max(value, LOW), HIGH)
    return int(math.floor((v - LOW) / (HIGH - LOW) * 255.0 + 0.5))


def heatmap_grid(cells, scheme, checkpoint):
    """Median-over-trials ``rel_loss_log10`` per (depth, width).

    Returns ``(depths, widths, grid)`` with ``grid[i, j]`` NaN where no
    usable cell exists. ``cells`` are :class:`ScanCell`-like objects or dicts.
    """
    values = {}
    depths, widths = set(), set()
    for c in cells:
        get = c.get if isinstance(c, dict) else (lambda k, c=c: getattr(c, k))
        depths.add(int(get("depth")))
        widths.add(int(get("width")))
        if get("scheme") != scheme:
            continue
        v = get("rel_loss_log10").get(checkpoint) if isinstance(get("rel_loss_log10"), dict) else None
        if v is None or math.isnan(v):
            continue
        values.setdefault((int(get("depth")), int(get("width"))), []).append(v)
    depths, widths = sorted(depths), sorted(widths)
    grid = np.full((len(depths), len(widths)), np.nan)
    for (d, w), vs in values.items():
        grid[depths.index(d), widths.index(w)] = float(np.median(vs))
    return depths, widths, grid


def emit_heatmap(cells, scheme, checkpoint, out):
    """Write ``out`` (P6, one pixel per cell) and ``out`` with ``.csv`` suffix.

    Rows are depths ascending top to bottom, columns widths ascending left
    to right. Cells with no finite median are drawn pure red. Returns the
    list of missing ``(depth, width)`` pairs.
    """
    depths, widths, grid = heatmap_grid(cells, scheme, checkpoint)
    if not depths or not widths:
        raise ValueError("no cells to draw")
    if np.all(np.isnan(grid)):
        raise ValueError(f"no usable cells for scheme={scheme} checkpoint={checkpoint}")
    missing = []
    pixels = bytearray()
    for i, d in enumerate(depths):
        for j, w in enumerate(widths):
            v = grid[i, j]
            if math.isnan(v):
                missing.append((d, w))
                pixels.extend(MISSING_RGB)
            else:
                g = gray_level(v)
                pixels.extend((g, g, g))
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(f"P6\n{len(widths)} {len(depths)}\n255\n".encode("ascii"))
        fh.write(bytes(pixels))
    csv_path = os.path.splitext(out)[0] + ".csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("depth,width,median_rel_loss_log10\n")
        for i, d in enumerate(depths):
            for j, w in enumerate(widths):
                v = grid[i, j]
                fh.write(f"{d},{w},{'nan' if math.isnan(v) else '%.10g' % v}\n")
    return missing


def read_ppm(path):
    """Read a P6 file back as an ``(rows, cols, 3)`` uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # exactly one whitespace byte separates header and raster
    if tokens[0] != b"P6":
        raise ValueError("not a P6 file")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    return np.frombuffer(data[pos : pos + rows * cols * 3], dtype=np.uint8).reshape(rows, cols, 3)
