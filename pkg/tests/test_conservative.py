import numpy as np
import pytest

from gfdm2d.conservative import (
    IsolatedCellError,
    column_sum_check,
    diffusion_row_conservative,
    eta_midpoint,
    neumann_row_conservative,
)
from gfdm2d.geometry import CellCache, local_voronoi_cell
from gfdm2d.pointcloud import (
    NEUMANN,
    STRIP_PARTITION,
    build_neighborhoods,
    generate_advancing_front,
    generate_uniform,
)
from gfdm2d.strongform import DiffusivityField

S = 0.08  # spacing of the h = 0.2 uniform cloud


@pytest.fixture(scope="module")
def uniform():
    cloud = generate_uniform(0.2, partition=STRIP_PARTITION)
    neigh = build_neighborhoods(cloud)
    return cloud, neigh, CellCache(cloud, neigh)


@pytest.fixture(scope="module")
def irregular():
    cloud = generate_advancing_front(0.1, seed=2, partition=STRIP_PARTITION)
    neigh = build_neighborhoods(cloud)
    return cloud, neigh, CellCache(cloud, neigh)


def const_field(cloud, neigh, value=1.0):
    return DiffusivityField.from_values(np.full(len(cloud), value), cloud,
                                        neigh)


def jump_field(cloud, neigh, delta):
    eta = np.where(cloud.points[:, 0] <= 0.0, 1.0, delta)
    return DiffusivityField.from_values(eta, cloud, neigh)


def _near(cloud, x, y):
    return int(np.argmin(np.linalg.norm(cloud.points - [x, y], axis=1)))


# -------------------------------------------------------------- eta midpoint

def test_harmonic_mean_of_equals():
    assert eta_midpoint(5.0, 5.0)[0] == pytest.approx(5.0)


def test_harmonic_mean_large_jump():
    val, flag = eta_midpoint(1.0, 1e10)
    assert val == pytest.approx(2.0 / (1.0 + 1e-10), rel=1e-14)
    assert not flag


def test_harmonic_mean_bounds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = 10.0 ** rng.uniform(-8, 8, 2)
        val, _ = eta_midpoint(a, b)
        assert min(a, b) <= val * (1 + 1e-14)
        assert val <= 2.0 * min(a, b) * (1 + 1e-14)


def test_wlsq_midpoint_negative_reconstruction_flagged(irregular):
    cloud, neigh, cells = irregular
    field = jump_field(cloud, neigh, 1e10)
    flagged = 0
    band = [int(i) for i in cloud.interior
            if abs(cloud.points[i, 0]) < 2 * cloud.h[i]][:200]
    for i in band:
        for j in neigh[i][neigh[i] != i]:
            val, neg = eta_midpoint(field.eta[i], field.eta[int(j)], "wlsq",
                                    (cloud, neigh, field.eta, i, int(j)))
            if neg:
                assert val <= 0.0
                flagged += 1
        if flagged:
            break
    assert flagged > 0, "expected a negative reconstruction near a 1e10 jump"


# ------------------------------------------------------- conservative rows

def test_uniform_five_point_row(uniform):
    cloud, neigh, cells = uniform
    i = _near(cloud, 0.45, 0.45)
    field = const_field(cloud, neigh, 3.0)
    row = diffusion_row_conservative(cells.cell(i), field)
    assert len(row.cols) == 5
    offdiag = row.vals[row.cols != i]
    assert np.allclose(offdiag, 3.0 / S ** 2, rtol=1e-10)
    assert row.diagonal == pytest.approx(-4 * 3.0 / S ** 2, rel=1e-10)
    u = cloud.points[:, 0] ** 2
    assert row.apply(u) == pytest.approx(6.0, rel=1e-9)


def test_constant_field_annihilated(irregular):
    cloud, neigh, cells = irregular
    field = jump_field(cloud, neigh, 1e8)
    u = np.full(len(cloud), 2.5)
    for i in cloud.interior[:50]:
        row = diffusion_row_conservative(cells.cell(int(i)), field)
        scale = np.abs(row.vals).max()
        assert abs(row.apply(u)) <= 1e-13 * scale * 2.5


def test_eta_scaling_linearity(uniform):
    cloud, neigh, cells = uniform
    i = _near(cloud, -0.3, 0.2)
    f1 = jump_field(cloud, neigh, 100.0)
    f2 = DiffusivityField.from_values(2.0 * f1.eta, cloud, neigh)
    r1 = diffusion_row_conservative(cells.cell(i), f1)
    r2 = diffusion_row_conservative(cells.cell(i), f2)
    assert np.allclose(r2.vals, 2.0 * r1.vals, rtol=1e-14)


def test_m_matrix_conditions(irregular):
    cloud, neigh, cells = irregular
    field = jump_field(cloud, neigh, 1e10)
    for i in cloud.interior[::7]:
        row = diffusion_row_conservative(cells.cell(int(i)), field)
        off = row.vals[row.cols != int(i)]
        assert np.all(off >= 0.0)
        assert row.diagonal < 0.0
        # equality of row sum, by construction
        assert abs(np.sum(row.vals)) <= 1e-13 * np.abs(row.vals).max()


def test_exactness_on_linears(irregular):
    cloud, neigh, cells = irregular
    eta0 = 4.0
    field = const_field(cloud, neigh, eta0)
    u = 0.7 * cloud.points[:, 0] - 1.3 * cloud.points[:, 1] + 0.2
    for i in cloud.interior[::11]:
        row = diffusion_row_conservative(cells.cell(int(i)), field)
        h = cloud.h[int(i)]
        assert abs(row.apply(u)) <= 1e-11 * eta0 / h ** 2


def test_flux_antisymmetry(irregular):
    cloud, neigh, cells = irregular
    field = jump_field(cloud, neigh, 1e6)
    flux = {}
    floor = {}
    for i in range(len(cloud)):
        cell = cells.cell(i)
        for j, face, dij, _ in cell.faces:
            eta_ij, _ = eta_midpoint(field.eta[i], field.eta[j])
            flux[(i, j)] = face * eta_ij / dij
            # clipping leaves ~machine-epsilon absolute noise on the face
            # length; sliver faces hit that floor before the relative target
            floor[(i, j)] = 1e-14 * eta_ij / dij
    for (i, j), val in flux.items():
        assert (j, i) in flux
        assert abs(val - flux[(j, i)]) <= 1e-12 * abs(val) + floor[(i, j)]


def test_isolated_cell_error():
    cloud = generate_uniform(0.2)
    neigh = build_neighborhoods(cloud)
    cell = local_voronoi_cell(cloud, neigh, _near(cloud, 0.0, 0.0))
    cell.faces = []
    field = const_field(cloud, neigh)
    with pytest.raises(IsolatedCellError):
        diffusion_row_conservative(cell, field)


# ------------------------------------------------------------ Neumann rows

def test_neumann_zero_flux_admits_constants(uniform):
    cloud, neigh, cells = uniform
    b = _near(cloud, 0.35, -1.0)
    assert cloud.kind[b] == NEUMANN
    field = const_field(cloud, neigh, 2.0)
    row = neumann_row_conservative(cells.cell(b), field, 0.0, 0.0)
    assert row.rhs_shift == 0.0
    u = np.full(len(cloud), 4.2)
    assert abs(row.apply(u)) <= 1e-12 * np.abs(row.vals).max()


def test_neumann_half_square_linear_balance(uniform):
    cloud, neigh, cells = uniform
    b = _near(cloud, 0.35, -1.0)
    field = const_field(cloud, neigh, 1.0)
    row = neumann_row_conservative(cells.cell(b), field, 0.0, 0.0)
    u = 3.0 * cloud.points[:, 0] + 1.0  # linear, slope along the wall
    assert abs(row.apply(u)) <= 1e-10 * np.abs(row.vals).max()


def test_neumann_rhs_shift_linearity(uniform):
    cloud, neigh, cells = uniform
    b = _near(cloud, -0.2, 1.0)
    field = const_field(cloud, neigh, 5.0)
    r1 = neumann_row_conservative(cells.cell(b), field, 1.5, 0.0)
    r2 = neumann_row_conservative(cells.cell(b), field, 3.0, 0.0)
    assert r2.rhs_shift == pytest.approx(2.0 * r1.rhs_shift, rel=1e-14)
    cell = cells.cell(b)
    expect = -(cell.boundary_face / cell.measure) * 5.0 * 1.5
    assert r1.rhs_shift == pytest.approx(expect, rel=1e-12)


def test_neumann_requires_boundary_face(uniform):
    cloud, neigh, cells = uniform
    i = _near(cloud, 0.0, 0.0)
    field = const_field(cloud, neigh)
    with pytest.raises(ValueError):
        neumann_row_conservative(cells.cell(i), field, 0.0, 0.0)


# -------------------------------------------------------------- column sums

def _full_conservative_rows(cloud, neigh, cells, field):
    rows = {}
    for i in range(len(cloud)):
        cell = cells.cell(i)
        if cell.boundary_face > 0.0:
            rows[i] = neumann_row_conservative(cell, field, 0.0, 0.0)
        else:
            rows[i] = diffusion_row_conservative(cell, field)
    return rows


@pytest.mark.parametrize("fixture_name", ["uniform", "irregular"])
def test_discrete_divergence_theorem(fixture_name, request):
    cloud, neigh, cells = request.getfixturevalue(fixture_name)
    field = jump_field(cloud, neigh, 1e10)
    rows = _full_conservative_rows(cloud, neigh, cells, field)
    measures = cells.measures()
    dev = column_sum_check(rows, measures, cloud.interior)
    scale = max(abs(measures[i] * rows[i].diagonal) for i in rows)
    assert dev <= 1e-12 * scale


def test_column_sum_detects_defect(uniform):
    cloud, neigh, cells = uniform
    field = const_field(cloud, neigh)
    rows = _full_conservative_rows(cloud, neigh, cells, field)
    i = int(cloud.interior[10])
    rows[i].vals[1] *= 1.0 + 1e-3
    measures = cells.measures()
    dev = column_sum_check(rows, measures, cloud.interior)
    assert dev >= 1e-3 * measures[i] * abs(rows[i].vals[1]) / 2.0
