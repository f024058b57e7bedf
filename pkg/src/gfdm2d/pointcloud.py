"""Point clouds on the rectangle [-1,1]^2: generation, classification, connectivity.

Two generators are provided: a tensor-product uniform grid and an irregular
advancing-front fill (Bridson-style) that respects a minimum spacing of
``r_min * h`` and a maximum hole radius of ``r_max * h``. Boundary points are
placed on the four edges first and classified as Dirichlet or Neumann
according to an edge partition; corners fall back to Dirichlet whenever an
adjacent edge is Dirichlet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

#: Uniform grid spacing as a fraction of the interaction radius h.
UNIFORM_SPACING_FACTOR = 0.4

#: Advancing-front defaults (relative to h).
R_MIN_DEFAULT = 0.25
R_MAX_DEFAULT = 0.45

#: Disk radius used by the front fill; must lie in [r_min, r_max].
FRONT_DISK_FACTOR = 0.35

DOMAIN = ((-1.0, 1.0), (-1.0, 1.0))

_EDGE_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


class FrontStallError(RuntimeError):
    """Raised when the advancing front cannot place any further points."""


@dataclass(frozen=True)
class EdgePartition:
    """Boundary-condition kind per rectangle edge ('dirichlet' or 'neumann')."""

    left: str = "dirichlet"
    right: str = "dirichlet"
    bottom: str = "dirichlet"
    top: str = "dirichlet"

    def kind(self, edge: str) -> int:
        tag = getattr(self, edge)
        if tag == "dirichlet":
            return DIRICHLET
        if tag == "neumann":
            return NEUMANN
        raise ValueError(f"unknown boundary tag {tag!r} on edge {edge}")


ALL_DIRICHLET = EdgePartition()
STRIP_PARTITION = EdgePartition(left="dirichlet", right="dirichlet",
                                bottom="neumann", top="neumann")


@dataclass
class PointCloud:
    """A finite point set with per-point interaction radius and boundary tags.

    ``kind`` holds INTERIOR/DIRICHLET/NEUMANN per point; ``normals`` holds the
    outward unit normal for Neumann points and zeros elsewhere (so that cloud
    CSV files round-trip exactly).
    """

    points: np.ndarray          # (N, 2)
    h: np.ndarray               # (N,)
    kind: np.ndarray            # (N,) int
    normals: np.ndarray         # (N, 2), zero for non-Neumann points
    generator: str = "unknown"
    level: int | None = None
    seed: int | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.kind = np.asarray(self.kind, dtype=np.int64)
        self.normals = np.ascontiguousarray(self.normals, dtype=float)
        n = len(self.points)
        if not (len(self.h) == len(self.kind) == len(self.normals) == n >= 1):
            raise ValueError("inconsistent cloud array lengths")
        if np.any(self.h <= 0.0):
            raise ValueError("interaction radii must be positive")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_boundary(self) -> int:
        return int(np.count_nonzero(self.kind != INTERIOR))

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.kind == INTERIOR)


@dataclass
class Neighborhood:
    """Per-point stencil index sets S_i under the metric d1 or d2."""

    stencils: list[np.ndarray]
    metric: str = "d2"

    def __len__(self) -> int:
        return len(self.stencils)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.stencils[i]

    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.stencils])


def refinement_radius(k: int) -> float:
    """Interaction radius of refinement level k: h_k = 2^-k / 5."""
    return 2.0 ** (-k) / 5.0


def _classify_boundary(points: np.ndarray, partition: EdgePartition,
                       tol: float = 1e-12):
    """Tag points lying on the rectangle boundary; corners prefer Dirichlet."""
    n = len(points)
    kind = np.zeros(n, dtype=np.int64)
    normals = np.zeros((n, 2))
    x, y = points[:, 0], points[:, 1]
    on = {
        "left": np.abs(x + 1.0) <= tol,
        "right": np.abs(x - 1.0) <= tol,
        "bottom": np.abs(y + 1.0) <= tol,
        "top": np.abs(y - 1.0) <= tol,
    }
    for i in range(n):
        edges = [e for e in ("left", "right", "bottom", "top") if on[e][i]]
        if not edges:
            continue
        kinds = [partition.kind(e) for e in edges]
        if DIRICHLET in kinds:
            kind[i] = DIRICHLET
        else:
            kind[i] = NEUMANN
            nrm = np.sum([_EDGE_NORMALS[e] for e in edges], axis=0)
            normals[i] = nrm / np.linalg.norm(nrm)
    return kind, normals


def generate_uniform(h: float, partition: EdgePartition = ALL_DIRICHLET,
                     level: int | None = None) -> PointCloud:
    """Tensor-product grid on [-1,1]^2 with spacing 0.4*h including the boundary."""
    if h <= 0.0:
        raise ValueError("h must be positive")
    dx = UNIFORM_SPACING_FACTOR * h
    n_int = int(round(2.0 / dx))
    if n_int < 2:
        raise ValueError(f"h={h} too large: fewer than 3 points per axis")
    axis = np.linspace(-1.0, 1.0, n_int + 1)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    kind, normals = _classify_boundary(pts, partition)
    return PointCloud(pts, np.full(len(pts), h), kind, normals,
                      generator="uniform", level=level)


def _edge_points(h: float, rng: np.random.Generator):
    """Corner and jittered edge points for the advancing front, with normals.

    Edge spacing is ~0.4*h with +-15% jitter, which keeps adjacent gaps in
    [0.7, 1.3] times the nominal spacing and hence above r_min*h.
    """
    pts = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    edges = []
    for edge, fixed in (("bottom", -1.0), ("top", 1.0)):
        edges.append((edge, "x", fixed))
    for edge, fixed in (("left", -1.0), ("right", 1.0)):
        edges.append((edge, "y", fixed))
    for edge, axis, fixed in edges:
        n_seg = max(int(round(2.0 / (UNIFORM_SPACING_FACTOR * h))), 1)
        t = np.linspace(-1.0, 1.0, n_seg + 1)[1:-1]
        if len(t):
            gap = 2.0 / n_seg
            t = t + rng.uniform(-0.15 * gap, 0.15 * gap, size=len(t))
        for v in t:
            pts.append((v, fixed) if axis == "x" else (fixed, v))
    return np.array(pts)


def generate_advancing_front(h: float, r_min: float = R_MIN_DEFAULT,
                             r_max: float = R_MAX_DEFAULT, seed: int = 0,
                             partition: EdgePartition = ALL_DIRICHLET,
                             level: int | None = None) -> PointCloud:
    """Irregular cloud: boundary points first, interior filled front-wise.

    Every pair of points keeps a distance of at least ``r_min * h`` and the
    fill saturates so that holes stay below ``r_max * h`` (disk radius
    ``FRONT_DISK_FACTOR * h``). Deterministic for a fixed seed.
    """
    if not (0.0 < r_min < r_max < 1.0):
        raise ValueError(f"need 0 < r_min < r_max < 1, got {r_min}, {r_max}")
    if h <= 0.0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    r_disk = max(FRONT_DISK_FACTOR, r_min) * h
    if r_disk > r_max * h:
        r_disk = 0.5 * (r_min + r_max) * h

    boundary = _edge_points(h, rng)
    pts = _bridson_fill(boundary, r_disk, seed)
    if len(pts) == len(boundary) and h < 0.5:
        raise FrontStallError("advancing front placed no interior points")

    kind, normals = _classify_boundary(pts, partition)
    return PointCloud(pts, np.full(len(pts), h), kind, normals,
                      generator="irregular", level=level, seed=seed)


@njit(cache=True, inline="always")
def _splitmix64(state):
    """Deterministic counter-based RNG step; returns (new_state, float in [0,1))."""
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _bridson_kernel(seeds, r, seed_int, k_tries):
    cell = r / np.sqrt(2.0)
    nx = int(np.ceil(2.0 / cell)) + 1
    grid = -np.ones((nx, nx), dtype=np.int64)
    cap = max(4 * len(seeds), int(16.0 / (r * r)))
    pts = np.empty((cap, 2))
    nseed = len(seeds)
    pts[:nseed] = seeds
    n = nseed
    for i in range(n):
        gx = int((pts[i, 0] + 1.0) / cell)
        gy = int((pts[i, 1] + 1.0) / cell)
        grid[gx, gy] = i

    active = np.empty(cap, dtype=np.int64)
    for i in range(n):
        active[i] = i
    n_active = n
    state = np.uint64(seed_int) * np.uint64(0x2545F4914F6CDD1D) + np.uint64(1)

    while n_active > 0:
        state, u = _splitmix64(state)
        pick = int(u * n_active)
        if pick == n_active:
            pick = n_active - 1
        i = active[pick]
        bx, by = pts[i, 0], pts[i, 1]
        placed = False
        for _ in range(k_tries):
            state, u1 = _splitmix64(state)
            state, u2 = _splitmix64(state)
            rad = r * (1.0 + u1)
            ang = 2.0 * np.pi * u2
            cx = bx + rad * np.cos(ang)
            cy = by + rad * np.sin(ang)
            if not (-1.0 < cx < 1.0 and -1.0 < cy < 1.0):
                continue
            gx = int((cx + 1.0) / cell)
            gy = int((cy + 1.0) / cell)
            ok = True
            for ix in range(max(gx - 2, 0), min(gx + 3, nx)):
                for iy in range(max(gy - 2, 0), min(gy + 3, nx)):
                    q = grid[ix, iy]
                    if q >= 0:
                        dx = pts[q, 0] - cx
                        dy = pts[q, 1] - cy
                        if dx * dx + dy * dy < r * r:
                            ok = False
                            break
                if not ok:
                    break
            if ok:
                if n == cap:
                    newcap = 2 * cap
                    newpts = np.empty((newcap, 2))
                    newpts[:n] = pts[:n]
                    pts = newpts
                    newactive = np.empty(newcap, dtype=np.int64)
                    newactive[:n_active] = active[:n_active]
                    active = newactive
                    cap = newcap
                pts[n] = cx, cy
                grid[gx, gy] = n
                active[n_active] = n
                n_active += 1
                n += 1
                placed = True
                break
        if not placed:
            active[pick] = active[n_active - 1]
            n_active -= 1
    return pts[:n]


def _bridson_fill(seeds: np.ndarray, r: float, seed: int,
                  k_tries: int = 30) -> np.ndarray:
    """Poisson-disk fill of the open rectangle, seeded with boundary points."""
    return _bridson_kernel(np.ascontiguousarray(seeds, dtype=np.float64),
                           float(r), int(seed) & 0xFFFFFFFFFFFF, int(k_tries))


def build_neighborhoods(cloud: PointCloud, metric: str = "d2") -> Neighborhood:
    """Stencils S_i = {j : d(x_j, x_i) <= 1}, sorted ascending.

    d1 scales by h_i only; d2 by the mean of h_i and h_j, which makes the
    neighbor relation symmetric.
    """
    if metric not in ("d1", "d2"):
        raise ValueError(f"metric must be 'd1' or 'd2', got {metric!r}")
    tree = cKDTree(cloud.points)
    h = cloud.h
    if metric == "d1":
        radii = h
    else:
        radii = 0.5 * (h + np.max(h))
    raw = tree.query_ball_point(cloud.points, radii)
    stencils = []
    for i, members in enumerate(raw):
        idx = np.sort(np.asarray(members, dtype=np.int64))
        if metric == "d2":
            d = np.linalg.norm(cloud.points[idx] - cloud.points[i], axis=1)
            idx = idx[2.0 * d <= h[idx] + h[i]]
        stencils.append(idx)
    return Neighborhood(stencils, metric)


@dataclass
class QualityReport:
    min_neighbor_ratio: float
    max_hole_radius: float
    stencil_min: int
    stencil_mean: float
    stencil_max: int


def quality_check(cloud: PointCloud, neigh: Neighborhood,
                  hole_samples: int = 256) -> QualityReport:
    """Nearest-neighbor ratio, sampled hole radius, and stencil-size stats."""
    n = len(cloud)
    sizes = neigh.sizes()
    if n == 1:
        return QualityReport(np.inf, np.inf, 1, 1.0, 1)
    tree = cKDTree(cloud.points)
    d, _ = tree.query(cloud.points, k=2)
    ratio = float(np.min(d[:, 1] / cloud.h))
    axis = np.linspace(-1.0, 1.0, hole_samples)
    xx, yy = np.meshgrid(axis, axis)
    dist, _ = tree.query(np.column_stack([xx.ravel(), yy.ravel()]))
    return QualityReport(ratio, float(np.max(dist)), int(np.min(sizes)),
                         float(np.mean(sizes)), int(np.max(sizes)))


def write_cloud_csv(path, cloud: PointCloud) -> None:
    """Write `x,y,h,kind,nx,ny` rows at 17 significant digits."""
    with open(path, "w") as f:
        f.write("x,y,h,kind,nx,ny\n")
        for p, h, k, nrm in zip(cloud.points, cloud.h, cloud.kind,
                                cloud.normals):
            f.write(f"{p[0]:.17g},{p[1]:.17g},{h:.17g},{int(k)},"
                    f"{nrm[0]:.17g},{nrm[1]:.17g}\n")


def read_cloud_csv(path) -> PointCloud:
    """Inverse of :func:`write_cloud_csv`; bit-exact round trip."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    if data.shape[1] != 6:
        raise ValueError(f"expected 6 columns in cloud file, got {data.shape[1]}")
    return PointCloud(data[:, :2], data[:, 2], data[:, 3].astype(np.int64),
                      data[:, 4:6], generator="file")
