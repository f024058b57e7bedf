"""Local Voronoi cells by half-plane clipping of the domain rectangle.

Each cell starts as the full rectangle and is cut by the perpendicular
bisector of every stencil neighbor, nearest first. No global triangulation
is involved, so cells can be built for any subset of points and reused for
moving clouds. Neighbors whose bisector is clipped away entirely keep a
zero face measure and drop out of the flux stencil.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from gfdm2d.pointcloud import PointCloud, Neighborhood

#: Polygon edges shorter than this (relative to h_i) are numerical noise.
FACE_NOISE_REL = 1e-12

#: Cells with measure below this signal a defective cloud.
DEGENERATE_MEASURE = 1e-14

_MAXV = 64


class DegenerateCellError(RuntimeError):
    """Voronoi cell collapsed to (numerically) zero area."""


@dataclass
class VoronoiCell:
    """Clipped Voronoi polygon of one point.

    ``faces`` lists ``(j, face_measure, distance, midpoint)`` for every
    neighbor whose bisector survives the clipping; ``boundary_face`` is the
    total perimeter length lying on the domain boundary.
    """

    owner: int
    faces: list[tuple[int, float, float, np.ndarray]]
    measure: float
    boundary_face: float
    vertices: np.ndarray  # (M, 2) polygon vertices, counter-clockwise

    def face_neighbors(self) -> np.ndarray:
        return np.array([f[0] for f in self.faces], dtype=np.int64)


@njit(cache=True)
def _clip_cell_kernel(xi, npts, order, verts, labels):
    """Clip the unit rectangle by all neighbor bisectors, nearest first.

    ``labels[t]`` tags the edge from vertex t to t+1: negative values are
    domain edges, non-negative values index into ``npts``. Returns
    (vertex_count, area); count 0 flags a degenerate cell, -1 an overflow.
    """
    verts[0, 0], verts[0, 1] = -1.0, -1.0
    verts[1, 0], verts[1, 1] = 1.0, -1.0
    verts[2, 0], verts[2, 1] = 1.0, 1.0
    verts[3, 0], verts[3, 1] = -1.0, 1.0
    labels[0], labels[1], labels[2], labels[3] = -1, -2, -3, -4
    m = 4
    sides = np.empty(_MAXV)
    tmp_v = np.empty((_MAXV, 2))
    tmp_l = np.empty(_MAXV, dtype=np.int64)

    for oi in range(len(order)):
        k = order[oi]
        nx = npts[k, 0] - xi[0]
        ny = npts[k, 1] - xi[1]
        off = 0.5 * (nx * (xi[0] + npts[k, 0]) + ny * (xi[1] + npts[k, 1]))
        any_out = False
        for t in range(m):
            s = verts[t, 0] * nx + verts[t, 1] * ny - off
            sides[t] = s
            if s > 0.0:
                any_out = True
        if not any_out:
            continue
        mm = 0
        for t in range(m):
            t2 = t + 1 if t + 1 < m else 0
            a_in = sides[t] <= 0.0
            b_in = sides[t2] <= 0.0
            if a_in:
                tmp_v[mm, 0] = verts[t, 0]
                tmp_v[mm, 1] = verts[t, 1]
                tmp_l[mm] = labels[t]
                mm += 1
            if a_in != b_in:
                frac = sides[t] / (sides[t] - sides[t2])
                tmp_v[mm, 0] = verts[t, 0] + frac * (verts[t2, 0] - verts[t, 0])
                tmp_v[mm, 1] = verts[t, 1] + frac * (verts[t2, 1] - verts[t, 1])
                tmp_l[mm] = k if a_in else labels[t]
                mm += 1
            if mm > _MAXV - 2:
                return -1, 0.0
        if mm < 3:
            return 0, 0.0
        for t in range(mm):
            verts[t, 0] = tmp_v[t, 0]
            verts[t, 1] = tmp_v[t, 1]
            labels[t] = tmp_l[t]
        m = mm

    area = 0.0
    for t in range(m):
        t2 = t + 1 if t + 1 < m else 0
        area += verts[t, 0] * verts[t2, 1] - verts[t2, 0] * verts[t, 1]
    return m, 0.5 * area


@njit(cache=True)
def _face_length_canonical(pa, pb, pts, skip1, skip2):
    """Length of the Voronoi face between sites a < b, clipped to the box.

    The bisector is parametrized from the canonical pair midpoint, and every
    constraint is written against site a, so both owning cells evaluate
    bit-identical arithmetic: face measures are exactly symmetric, which
    makes the volume-weighted column sums telescope to rounding level.
    """
    midx = 0.5 * (pa[0] + pb[0])
    midy = 0.5 * (pa[1] + pb[1])
    nx = pb[0] - pa[0]
    ny = pb[1] - pa[1]
    nn = np.sqrt(nx * nx + ny * ny)
    if nn == 0.0:
        return 0.0
    tx = -ny / nn
    ty = nx / nn
    tlo = -3.0
    thi = 3.0
    # domain walls: -1 <= mid + t*tau <= 1 per component
    for comp in range(2):
        tau = tx if comp == 0 else ty
        mid = midx if comp == 0 else midy
        if tau > 0.0:
            thi = min(thi, (1.0 - mid) / tau)
            tlo = max(tlo, (-1.0 - mid) / tau)
        elif tau < 0.0:
            thi = min(thi, (-1.0 - mid) / tau)
            tlo = max(tlo, (1.0 - mid) / tau)
        elif not (-1.0 <= mid <= 1.0):
            return 0.0
    aa = pa[0] * pa[0] + pa[1] * pa[1]
    for k in range(len(pts)):
        if k == skip1 or k == skip2:
            continue
        dx = pts[k, 0] - pa[0]
        dy = pts[k, 1] - pa[1]
        alpha = 2.0 * (tx * dx + ty * dy)
        beta = pts[k, 0] * pts[k, 0] + pts[k, 1] * pts[k, 1] - aa - \
            2.0 * (midx * dx + midy * dy)
        if alpha > 0.0:
            t = beta / alpha
            if t < thi:
                thi = t
        elif alpha < 0.0:
            t = beta / alpha
            if t > tlo:
                tlo = t
        elif beta < 0.0:
            return 0.0
        if thi <= tlo:
            return 0.0
    return thi - tlo


def local_voronoi_cell(cloud: PointCloud, neigh: Neighborhood,
                       i: int) -> VoronoiCell:
    """Construct the Voronoi cell of point i clipped to the rectangle.

    Requires S_i to contain every Voronoi-relevant neighbor of i, which the
    generators guarantee through the hole-size condition.
    """
    xi = cloud.points[i]
    others = neigh[i][neigh[i] != i]
    npts = cloud.points[others]
    # same squared-distance key and stable tie-break as the bulk measures
    # kernel, so both paths clip in the same order and agree bitwise
    d2 = (npts[:, 0] - xi[0]) ** 2 + (npts[:, 1] - xi[1]) ** 2
    order = np.argsort(d2, kind="stable").astype(np.int64)

    verts = np.empty((_MAXV, 2))
    labels = np.empty(_MAXV, dtype=np.int64)
    m, area = _clip_cell_kernel(xi, npts, order, verts, labels)
    if m == -1:
        raise RuntimeError(f"cell {i}: vertex buffer overflow")
    if m == 0 or area <= DEGENERATE_MEASURE:
        raise DegenerateCellError(f"cell {i} has (near-)zero measure")

    verts = verts[:m].copy()
    labels = labels[:m]
    seg = np.roll(verts, -1, axis=0) - verts
    lengths = np.linalg.norm(seg, axis=1)
    noise = FACE_NOISE_REL * cloud.h[i]

    boundary_len = 0.0
    for t in range(m):
        if int(labels[t]) < 0 and lengths[t] > noise:
            boundary_len += lengths[t]

    # face measures and membership come from the pair-canonical interval
    # clipping so both owning cells report bit-identical values
    stencil_pts = cloud.points[neigh[i]]
    my_pos = int(np.flatnonzero(neigh[i] == i)[0])
    faces = []
    for j_pos, j in enumerate(neigh[i]):
        j = int(j)
        if j == i:
            continue
        a, b = (i, j) if i < j else (j, i)
        length = _face_length_canonical(cloud.points[a], cloud.points[b],
                                        stencil_pts, my_pos, j_pos)
        if length <= noise:
            continue
        dij = float(np.linalg.norm(cloud.points[j] - xi))
        faces.append((j, float(length), dij, 0.5 * (xi + cloud.points[j])))
    return VoronoiCell(int(i), faces, float(area), float(boundary_len), verts)


@njit(cache=True)
def _measures_kernel(points, indptr, indices):
    n = len(indptr) - 1
    out = np.empty(n)
    verts = np.empty((_MAXV, 2))
    labels = np.empty(_MAXV, dtype=np.int64)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cnt = 0
        for p in range(lo, hi):
            if indices[p] != i:
                cnt += 1
        npts = np.empty((cnt, 2))
        d2 = np.empty(cnt)
        t = 0
        for p in range(lo, hi):
            j = indices[p]
            if j == i:
                continue
            npts[t, 0] = points[j, 0]
            npts[t, 1] = points[j, 1]
            dx = points[j, 0] - points[i, 0]
            dy = points[j, 1] - points[i, 1]
            d2[t] = dx * dx + dy * dy
            t += 1
        order = np.argsort(d2, kind="mergesort")
        m, area = _clip_cell_kernel(points[i], npts, order, verts, labels)
        out[i] = area if m > 0 else -1.0
    return out


class CellCache:
    """Lazily built, memoized Voronoi cells for one cloud."""

    def __init__(self, cloud: PointCloud, neigh: Neighborhood):
        self.cloud = cloud
        self.neigh = neigh
        self._cells: dict[int, VoronoiCell] = {}
        self._measures: np.ndarray | None = None

    def cell(self, i: int) -> VoronoiCell:
        c = self._cells.get(i)
        if c is None:
            c = local_voronoi_cell(self.cloud, self.neigh, i)
            self._cells[i] = c
        return c

    def all_cells(self) -> list[VoronoiCell]:
        return [self.cell(i) for i in range(len(self.cloud))]

    def measures(self) -> np.ndarray:
        """Cell measures of all points (bulk kernel, no face bookkeeping)."""
        if self._measures is None:
            indptr = np.zeros(len(self.cloud) + 1, dtype=np.int64)
            np.cumsum(self.neigh.sizes(), out=indptr[1:])
            indices = np.concatenate(self.neigh.stencils)
            out = _measures_kernel(self.cloud.points, indptr, indices)
            if np.any(out <= DEGENERATE_MEASURE):
                bad = int(np.argmax(out <= DEGENERATE_MEASURE))
                raise DegenerateCellError(f"cell {bad} has (near-)zero measure")
            self._measures = out
        return self._measures


@dataclass
class CellReport:
    total_measure: float
    domain_measure: float
    deviation: float
    min_measure: float
    max_measure: float


def cell_diagnostics(cells: list[VoronoiCell],
                     domain_measure: float = 4.0) -> CellReport:
    """Partition check: cell measures must sum to the domain measure."""
    measures = np.array([c.measure for c in cells])
    total = float(np.sum(measures))
    return CellReport(total, domain_measure, abs(total - domain_measure),
                      float(np.min(measures)), float(np.max(measures)))


def write_cells_csv(path, cells: list[VoronoiCell]) -> None:
    """Debug dump `i,vertex_index,x,y` of the cell polygons."""
    with open(path, "w") as f:
        f.write("i,vertex_index,x,y\n")
        for c in cells:
            for k, v in enumerate(c.vertices):
                f.write(f"{c.owner},{k},{v[0]:.17g},{v[1]:.17g}\n")
