"""Hot geometry kernels: polygon fill, point-in-polygon, polyline projection, OBB overlap.

Every kernel is written once as a plain numpy/python function and, unless the
environment variable ``FLOWPLAN_NO_NUMBA=1`` is set (or numba is missing),
compiled with ``numba.njit``.  Both paths execute the *same source* with
strict IEEE semantics (no fastmath), so results are bit-identical, which the
golden-raster tests rely on.  ``benchmarks/bench_kernels.py`` times one path
against the other.
"""

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("FLOWPLAN_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def _jit(fn):
        return _njit(cache=True)(fn)
else:
    def _jit(fn):
        return fn


# ---------------------------------------------------------------------------
# raw implementations (njit-compatible subset of numpy)
# ---------------------------------------------------------------------------

def _fill_polygon_impl(grid, rows, cols, value):
    """Scanline even-odd fill of a polygon given in continuous pixel coords.

    Pixel (i, j) has its center at continuous coordinate (i, j).  A pixel is
    filled iff its center lies in a half-open [enter, exit) crossing span,
    which makes shared edges between adjacent polygons paint each pixel
    exactly once.
    """
    h, w = grid.shape
    n = rows.shape[0]
    rmin = rows[0]
    rmax = rows[0]
    for i in range(1, n):
        if rows[i] < rmin:
            rmin = rows[i]
        if rows[i] > rmax:
            rmax = rows[i]
    r0 = int(np.ceil(rmin))
    r1 = int(np.floor(rmax))
    if r0 < 0:
        r0 = 0
    if r1 > h - 1:
        r1 = h - 1
    xs = np.empty(n, np.float64)
    for r in range(r0, r1 + 1):
        yr = float(r)
        m = 0
        for i in range(n):
            j = i + 1
            if j == n:
                j = 0
            y0 = rows[i]
            y1 = rows[j]
            if (y0 <= yr < y1) or (y1 <= yr < y0):
                t = (yr - y0) / (y1 - y0)
                xs[m] = cols[i] + t * (cols[j] - cols[i])
                m += 1
        if m < 2:
            continue
        # insertion sort of the first m crossings
        for a in range(1, m):
            key = xs[a]
            b = a - 1
            while b >= 0 and xs[b] > key:
                xs[b + 1] = xs[b]
                b -= 1
            xs[b + 1] = key
        for k in range(0, m - 1, 2):
            c0 = int(np.ceil(xs[k]))
            c1 = int(np.ceil(xs[k + 1])) - 1
            if c0 < 0:
                c0 = 0
            if c1 > w - 1:
                c1 = w - 1
            for c in range(c0, c1 + 1):
                grid[r, c] = value


def _point_in_polygon_impl(px, py, vx, vy):
    """Even-odd point-in-polygon test; points on an edge count as inside."""
    n = vx.shape[0]
    inside = False
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        x0 = vx[i]
        y0 = vy[i]
        x1 = vx[j]
        y1 = vy[j]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        if abs(cross) <= 1e-9:
            lo = x0 if x0 < x1 else x1
            hi = x0 if x0 > x1 else x1
            if lo - 1e-9 <= px <= hi + 1e-9:
                lo = y0 if y0 < y1 else y1
                hi = y0 if y0 > y1 else y1
                if lo - 1e-9 <= py <= hi + 1e-9:
                    return True
        if (y0 > py) != (y1 > py):
            xi = x0 + (py - y0) / (y1 - y0) * (x1 - x0)
            if px < xi:
                inside = not inside
    return inside


def _points_in_any_polygon_impl(pxs, pys, flat_x, flat_y, offsets, out):
    """out[k] = any polygon contains point k.  Polygons are packed flat with
    offsets[p]..offsets[p+1] delimiting polygon p's vertices."""
    npoly = offsets.shape[0] - 1
    for k in range(pxs.shape[0]):
        hit = False
        for p in range(npoly):
            a = offsets[p]
            b = offsets[p + 1]
            if _point_in_polygon(pxs[k], pys[k], flat_x[a:b], flat_y[a:b]):
                hit = True
                break
        out[k] = hit


def _project_polyline_impl(xs, ys, cum, px, py):
    """Project a point onto a polyline.

    Returns (s, lateral, dist): arc length of the closest point, signed
    perpendicular offset (positive left of travel direction) and distance.
    Ties in distance resolve to the smaller s because segments are scanned
    in order and only strictly closer hits replace the incumbent.
    """
    best_d2 = 1e300
    best_s = 0.0
    best_lat = 0.0
    for i in range(xs.shape[0] - 1):
        ax = xs[i]
        ay = ys[i]
        bx = xs[i + 1]
        by = ys[i + 1]
        dx = bx - ax
        dy = by - ay
        seg2 = dx * dx + dy * dy
        if seg2 <= 0.0:
            continue
        t = ((px - ax) * dx + (py - ay) * dy) / seg2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cx = ax + t * dx
        cy = ay + t * dy
        ex = px - cx
        ey = py - cy
        d2 = ex * ex + ey * ey
        if d2 < best_d2 - 1e-18:
            best_d2 = d2
            seg_len = np.sqrt(seg2)
            best_s = cum[i] + t * seg_len
            # signed offset: cross(dir, p - proj) > 0 means left of direction
            cr = (dx * ey - dy * ex) / seg_len
            best_lat = cr
    return best_s, best_lat, np.sqrt(best_d2)


def _obb_corners_impl(x, y, heading, length, width, out):
    """Four corners of an oriented box, CCW starting front-left."""
    hl = 0.5 * length
    hw = 0.5 * width
    c = np.cos(heading)
    s = np.sin(heading)
    out[0, 0] = x + hl * c - hw * s
    out[0, 1] = y + hl * s + hw * c
    out[1, 0] = x - hl * c - hw * s
    out[1, 1] = y - hl * s + hw * c
    out[2, 0] = x - hl * c + hw * s
    out[2, 1] = y - hl * s - hw * c
    out[3, 0] = x + hl * c + hw * s
    out[3, 1] = y + hl * s - hw * c


def _obb_overlap_impl(x1, y1, h1, l1, w1, x2, y2, h2, l2, w2):
    """Separating-axis test for two oriented rectangles; touching counts as
    overlap (separation requires a strictly positive gap)."""
    c1 = np.empty((4, 2), np.float64)
    c2 = np.empty((4, 2), np.float64)
    _obb_corners(x1, y1, h1, l1, w1, c1)
    _obb_corners(x2, y2, h2, l2, w2, c2)
    axes = np.empty((4, 2), np.float64)
    axes[0, 0] = np.cos(h1)
    axes[0, 1] = np.sin(h1)
    axes[1, 0] = -axes[0, 1]
    axes[1, 1] = axes[0, 0]
    axes[2, 0] = np.cos(h2)
    axes[2, 1] = np.sin(h2)
    axes[3, 0] = -axes[2, 1]
    axes[3, 1] = axes[2, 0]
    for a in range(4):
        ax = axes[a, 0]
        ay = axes[a, 1]
        min1 = 1e300
        max1 = -1e300
        min2 = 1e300
        max2 = -1e300
        for i in range(4):
            p = c1[i, 0] * ax + c1[i, 1] * ay
            if p < min1:
                min1 = p
            if p > max1:
                max1 = p
            q = c2[i, 0] * ax + c2[i, 1] * ay
            if q < min2:
                min2 = q
            if q > max2:
                max2 = q
        if max1 < min2 or max2 < min1:
            return False
    return True


def _collision_pairs_impl(xs, ys, hs, ls, ws, out_i, out_j):
    """All overlapping index pairs (i < j); returns the pair count.

    A center-distance broadphase culls pairs before the SAT narrow phase.
    """
    n = xs.shape[0]
    count = 0
    for i in range(n):
        ri = 0.5 * np.sqrt(ls[i] * ls[i] + ws[i] * ws[i])
        for j in range(i + 1, n):
            rj = 0.5 * np.sqrt(ls[j] * ls[j] + ws[j] * ws[j])
            dx = xs[j] - xs[i]
            dy = ys[j] - ys[i]
            if dx * dx + dy * dy > (ri + rj) * (ri + rj):
                continue
            if _obb_overlap(xs[i], ys[i], hs[i], ls[i], ws[i],
                            xs[j], ys[j], hs[j], ls[j], ws[j]):
                out_i[count] = i
                out_j[count] = j
                count += 1
    return count


# ---------------------------------------------------------------------------
# public (possibly jitted) entry points
# ---------------------------------------------------------------------------

fill_polygon = _jit(_fill_polygon_impl)
_point_in_polygon = _jit(_point_in_polygon_impl)
project_polyline = _jit(_project_polyline_impl)
_obb_corners = _jit(_obb_corners_impl)
_obb_overlap = _jit(_obb_overlap_impl)
_collision_pairs = _jit(_collision_pairs_impl)
_points_in_any_polygon = _jit(_points_in_any_polygon_impl)

# raw-python references for the parity tests and the benchmark
PY_IMPLS = {
    "fill_polygon": _fill_polygon_impl,
    "point_in_polygon": _point_in_polygon_impl,
    "project_polyline": _project_polyline_impl,
    "obb_overlap": _obb_overlap_impl,
    "collision_pairs": _collision_pairs_impl,
    "points_in_any_polygon": _points_in_any_polygon_impl,
}


def point_in_polygon(px, py, polygon):
    """Boundary-inclusive even-odd containment of (px, py) in a (N, 2) polygon."""
    poly = np.ascontiguousarray(polygon, dtype=np.float64)
    return bool(_point_in_polygon(float(px), float(py), poly[:, 0].copy(), poly[:, 1].copy()))


def obb_corners(x, y, heading, length, width):
    out = np.empty((4, 2), np.float64)
    _obb_corners(float(x), float(y), float(heading), float(length), float(width), out)
    return out


def obb_overlap(pose1, box1, pose2, box2):
    """SAT overlap of two oriented rectangles given as pose (x, y, heading)
    and box (length, width)."""
    return bool(_obb_overlap(pose1[0], pose1[1], pose1[2], box1[0], box1[1],
                             pose2[0], pose2[1], pose2[2], box2[0], box2[1]))


def collision_pairs(xs, ys, hs, ls, ws):
    """Index pairs (i, j), i < j, of mutually overlapping oriented boxes."""
    n = len(xs)
    if n < 2:
        return []
    cap = n * (n - 1) // 2
    out_i = np.empty(cap, np.int64)
    out_j = np.empty(cap, np.int64)
    count = _collision_pairs(np.asarray(xs, np.float64), np.asarray(ys, np.float64),
                             np.asarray(hs, np.float64), np.asarray(ls, np.float64),
                             np.asarray(ws, np.float64), out_i, out_j)
    return [(int(out_i[k]), int(out_j[k])) for k in range(count)]


class PackedPolygons:
    """Polygon soup packed into flat arrays for batch containment queries."""

    def __init__(self, polygons):
        if polygons:
            self.flat_x = np.concatenate([np.asarray(p, np.float64)[:, 0] for p in polygons])
            self.flat_y = np.concatenate([np.asarray(p, np.float64)[:, 1] for p in polygons])
            lens = [len(p) for p in polygons]
            self.offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        else:
            self.flat_x = np.empty(0, np.float64)
            self.flat_y = np.empty(0, np.float64)
            self.offsets = np.zeros(1, np.int64)

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, np.float64))
        out = np.zeros(len(pts), np.bool_)
        if self.offsets.shape[0] > 1:
            _points_in_any_polygon(pts[:, 0].copy(), pts[:, 1].copy(),
                                   self.flat_x, self.flat_y, self.offsets, out)
        return out
