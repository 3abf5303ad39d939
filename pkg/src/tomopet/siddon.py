"""Exact pixel-traversal (Siddon-style) line integration on a centered grid."""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def trace_segment(p0, p1, nx: int, ny: int, pixel_size: float):
    """Intersection lengths of segment p0 -> p1 with each crossed pixel.

    The grid is centered on the origin: x spans [-nx/2, nx/2] * pixel_size
    and y spans [-ny/2, ny/2] * pixel_size; pixel (row i, col j) maps to flat
    index i * nx + j.

    Returns (pixel_indices, lengths_mm), sorted by pixel index.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    d = p1 - p0
    length = float(np.hypot(d[0], d[1]))
    if length < _EPS:
        return np.empty(0, dtype=np.int64), np.empty(0)

    xmin, xmax = -nx * pixel_size / 2.0, nx * pixel_size / 2.0
    ymin, ymax = -ny * pixel_size / 2.0, ny * pixel_size / 2.0

    # Slab clipping of the parameter interval [0, 1] to the grid box.
    t0, t1 = 0.0, 1.0
    for axis, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
        if abs(d[axis]) < _EPS:
            if not lo <= p0[axis] <= hi:
                return np.empty(0, dtype=np.int64), np.empty(0)
        else:
            ta = (lo - p0[axis]) / d[axis]
            tb = (hi - p0[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    if t1 - t0 < _EPS:
        return np.empty(0, dtype=np.int64), np.empty(0)

    crossings = [np.array([t0, t1])]
    if abs(d[0]) >= _EPS:
        tx = (xmin + np.arange(nx + 1) * pixel_size - p0[0]) / d[0]
        crossings.append(tx[(tx > t0) & (tx < t1)])
    if abs(d[1]) >= _EPS:
        ty = (ymin + np.arange(ny + 1) * pixel_size - p0[1]) / d[1]
        crossings.append(ty[(ty > t0) & (ty < t1)])
    ts = np.unique(np.concatenate(crossings))

    dt = np.diff(ts)
    keep = dt > _EPS
    mids = (ts[:-1] + ts[1:])[keep] / 2.0
    lengths = dt[keep] * length
    px = p0[0] + mids * d[0]
    py = p0[1] + mids * d[1]
    ix = np.clip(((px - xmin) / pixel_size).astype(np.int64), 0, nx - 1)
    iy = np.clip(((py - ymin) / pixel_size).astype(np.int64), 0, ny - 1)
    pixels = iy * nx + ix
    order = np.argsort(pixels, kind="stable")
    return pixels[order], lengths[order]


def clipped_chord_length(p0, p1, nx: int, ny: int, pixel_size: float) -> float:
    """Length of segment p0 -> p1 inside the grid rectangle (analytic)."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for axis, half in enumerate((nx * pixel_size / 2.0, ny * pixel_size / 2.0)):
        if abs(d[axis]) < _EPS:
            if not -half <= p0[axis] <= half:
                return 0.0
        else:
            ta = (-half - p0[axis]) / d[axis]
            tb = (half - p0[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    if t1 <= t0:
        return 0.0
    return (t1 - t0) * float(np.hypot(d[0], d[1]))
