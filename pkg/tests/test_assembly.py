import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from gfdm2d.assembly import (
    DIRICHLET_ROW,
    INTERIOR_CONSERVATIVE,
    INTERIOR_STRONG,
    SolverConfig,
    assemble,
    equilibrated,
    select_hybrid_nodes,
    solve,
    write_system,
)
from gfdm2d.geometry import CellCache
from gfdm2d.pointcloud import (
    DIRICHLET,
    build_neighborhoods,
    generate_advancing_front,
    generate_uniform,
)
from gfdm2d.problems import InteriorInterface, TwoStrip, build_field
from gfdm2d.solvers import (
    BreakdownError,
    ILU0,
    MaxIterationsError,
    SolverError,
    ZeroPivotError,
    bicgstab2,
    ilu0,
)
from gfdm2d.strongform import StencilRow, classical_rows


# ------------------------------------------------------------------- ILU(0)

def test_ilu0_identity():
    fac = ilu0(sp.eye(7).tocsr())
    b = np.arange(7.0)
    assert np.array_equal(fac.solve(b), b)
    assert np.allclose(fac.data, sp.eye(7).tocsr().data)


def test_ilu0_dense_equals_lu_oracle():
    rng = np.random.default_rng(1)
    A = rng.random((3, 3)) + 3.0 * np.eye(3)
    fac = ilu0(sp.csr_matrix(A))
    # full pattern: ILU(0) must equal the exact LU factors
    P, L, U = scipy.linalg.lu(A)
    assert np.allclose(P, np.eye(3))  # diagonally dominant: no pivoting
    dense = np.zeros((3, 3))
    for i in range(3):
        for p in range(fac.indptr[i], fac.indptr[i + 1]):
            dense[i, fac.indices[p]] = fac.data[p]
    got_L = np.tril(dense, -1) + np.eye(3)
    got_U = np.triu(dense)
    assert np.allclose(got_L, L, atol=1e-12)
    assert np.allclose(got_U, U, atol=1e-12)


def test_ilu0_tridiagonal_exact():
    n = 12
    T = sp.diags([[-1.0] * (n - 1), [2.0] * n, [-1.0] * (n - 1)],
                 [-1, 0, 1]).tocsr()
    fac = ilu0(T)
    rng = np.random.default_rng(2)
    b = rng.random(n)
    exact = sp.linalg.spsolve(T.tocsc(), b)
    assert np.allclose(fac.solve(b), exact, atol=1e-12)
    # preconditioned residual after one application beats the raw residual
    x1 = fac.solve(b)
    assert np.linalg.norm(b - T @ x1) < np.linalg.norm(b - T @ b)


def test_ilu0_zero_pivot_reports_row():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ZeroPivotError) as err:
        ilu0(A)
    assert err.value.row == 0


def test_ilu0_missing_diagonal():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    A.eliminate_zeros()
    with pytest.raises(ZeroPivotError):
        ilu0(A)


# -------------------------------------------------------------- BiCGstab(2)

def test_bicgstab2_identity_one_iteration():
    rng = np.random.default_rng(0)
    b = rng.random(20)
    x, k, res = bicgstab2(sp.eye(20).tocsr(), b)
    assert k <= 1
    assert np.allclose(x, b)


def test_bicgstab2_zero_rhs():
    x, k, res = bicgstab2(sp.eye(5).tocsr(), np.zeros(5))
    assert np.array_equal(x, np.zeros(5))
    assert k == 0
    assert res == 0.0


def test_bicgstab2_matches_dense_oracle():
    rng = np.random.default_rng(3)
    for trial in range(20):
        n = int(rng.integers(20, 200))
        A = rng.random((n, n)) - 0.5
        A += np.diag(np.abs(A).sum(axis=1) + 1.0)
        b = rng.standard_normal(n)
        x, k, res = bicgstab2(sp.csr_matrix(A), b, tol=1e-12,
                              preconditioner=ilu0(sp.csr_matrix(A)))
        oracle = np.linalg.solve(A, b)
        assert np.abs(x - oracle).max() <= 1e-8 * np.abs(oracle).max()


def test_bicgstab2_reported_residual_consistent():
    rng = np.random.default_rng(4)
    n = 80
    A = rng.random((n, n)) - 0.5
    A += np.diag(np.abs(A).sum(axis=1) + 1.0)
    G = sp.csr_matrix(A)
    b = rng.standard_normal(n)
    x, k, res = bicgstab2(G, b, tol=1e-10)
    recomputed = np.linalg.norm(b - G @ x) / np.linalg.norm(b)
    assert abs(res - recomputed) <= 1e-14


def test_bicgstab2_maxiter_error():
    rng = np.random.default_rng(5)
    n = 60
    A = rng.standard_normal((n, n)) + 1e-3 * np.eye(n)
    with pytest.raises(MaxIterationsError) as err:
        bicgstab2(sp.csr_matrix(A), rng.standard_normal(n), tol=1e-14,
                  maxiter=2)
    assert err.value.iterations == 2
    assert isinstance(err.value, SolverError)


def test_bicgstab2_breakdown_is_distinct():
    # singular operator: the residual stalls and a scalar collapses
    A = sp.csr_matrix(np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(SolverError) as err:
        bicgstab2(A, np.array([1.0, 1.0, 1.0]), tol=1e-12, maxiter=50)
    assert isinstance(err.value, (BreakdownError, MaxIterationsError))


# ------------------------------------------------------------ hybrid select

def test_select_all_dominant_empty():
    rows = {i: StencilRow(i, np.array([i, (i + 1) % 4]),
                          np.array([-2.0, 1.0])) for i in range(4)}

    class FakeNeigh:
        def __getitem__(self, i):
            return np.array([i, (i + 1) % 4])

    sel = select_hybrid_nodes(rows, FakeNeigh())
    assert len(sel.sigma0) == 0
    assert len(sel.sigma1) == 0
    assert len(sel.conservative_set) == 0


def test_select_set_algebra():
    cloud = generate_advancing_front(0.1, seed=6)
    neigh = build_neighborhoods(cloud)
    case = InteriorInterface(delta_eta=1e8)
    field = build_field(case, cloud, neigh, "cons_hybrid")
    rows = classical_rows(cloud, neigh, field)
    sel = select_hybrid_nodes(rows, neigh, interior=cloud.interior)
    s0 = set(sel.sigma0.tolist())
    s1 = set(sel.sigma1.tolist())
    assert s0 and s1
    assert not s0 & s1
    interior = set(cloud.interior.tolist())
    for i in s1:
        assert i in interior
        assert any(int(j) in s0 for j in neigh[i])
    for i in interior - s0 - s1:
        assert not any(int(j) in s0 for j in neigh[i])


def test_uniform_small_jump_degenerates_to_strong():
    # small-jump regime: every corrected row stays dominant on the uniform
    # grid, so the hybrid assembly must be the strong assembly bit for bit
    case = TwoStrip(delta_eta=5.0)
    cloud = generate_uniform(0.1, partition=case.partition)
    neigh = build_neighborhoods(cloud)
    cells = CellCache(cloud, neigh)
    field = build_field(case, cloud, neigh, "cons_hybrid")
    rows = classical_rows(cloud, neigh, field)
    sel = select_hybrid_nodes(rows, neigh, interior=cloud.interior)
    assert len(sel.sigma0) == 0
    strong = assemble(cloud, neigh, cells, field, case, "strong",
                      strong_rows=rows)
    hybrid = assemble(cloud, neigh, cells, field, case, "cons_hybrid",
                      neumann_mode="conservative_near_switch",
                      strong_rows=rows)
    assert np.array_equal(strong.matrix.indptr, hybrid.matrix.indptr)
    assert np.array_equal(strong.matrix.indices, hybrid.matrix.indices)
    assert np.array_equal(strong.matrix.data, hybrid.matrix.data)
    assert np.array_equal(strong.rhs, hybrid.rhs)
    assert np.array_equal(strong.row_kind, hybrid.row_kind)


# ---------------------------------------------------------------- assembly

@pytest.fixture(scope="module")
def twostrip_setup():
    case = TwoStrip(delta_eta=1e6)
    cloud = generate_advancing_front(0.2, seed=3, partition=case.partition)
    neigh = build_neighborhoods(cloud)
    cells = CellCache(cloud, neigh)
    return case, cloud, neigh, cells


def test_assemble_strong_has_no_conservative_rows(twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "strong")
    system = assemble(cloud, neigh, cells, field, case, "strong")
    counts = system.row_kind_counts()
    assert counts["interior-conservative"] == 0
    assert counts["neumann-conservative"] == 0
    assert counts["dirichlet"] == int(np.sum(cloud.kind == DIRICHLET))


def test_assemble_dirichlet_rows_are_unit(twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "strong")
    system = assemble(cloud, neigh, cells, field, case, "strong")
    G = system.matrix
    for i in np.flatnonzero(cloud.kind == DIRICHLET):
        row = G.getrow(i)
        assert row.nnz == 1
        assert row.indices[0] == i
        assert row.data[0] == 1.0
        assert system.rhs[i] == case.dirichlet(cloud.points[i])


def test_assemble_deterministic(twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "cons_hybrid")
    s1 = assemble(cloud, neigh, cells, field, case, "cons_hybrid")
    s2 = assemble(cloud, neigh, cells, field, case, "cons_hybrid")
    assert np.array_equal(s1.matrix.indptr, s2.matrix.indptr)
    assert np.array_equal(s1.matrix.indices, s2.matrix.indices)
    assert np.array_equal(s1.matrix.data, s2.matrix.data)
    assert np.array_equal(s1.rhs, s2.rhs)


def test_pos_subset_of_cons_and_positive_diagonals(twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "cons_hybrid")
    rows = classical_rows(cloud, neigh, field)
    pos = assemble(cloud, neigh, cells, field, case, "pos_hybrid",
                   strong_rows=rows)
    cons = assemble(cloud, neigh, cells, field, case, "cons_hybrid",
                    strong_rows=rows)
    n_pos = pos.row_kind_counts()["interior-conservative"]
    n_cons = cons.row_kind_counts()["interior-conservative"]
    assert 0 < n_pos <= n_cons
    for system in (pos, cons):
        diag = system.matrix.diagonal()
        interior = cloud.interior
        assert np.all(diag[interior] > 0.0)


def test_conservative_interior_rows_are_m_matrix_rows(twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "cons_hybrid")
    system = assemble(cloud, neigh, cells, field, case, "cons_hybrid")
    G = system.matrix.tocsr()
    for i in np.flatnonzero(system.row_kind == INTERIOR_CONSERVATIVE):
        lo, hi = G.indptr[i], G.indptr[i + 1]
        cols = G.indices[lo:hi]
        vals = G.data[lo:hi]
        diag = vals[cols == i][0]
        off = vals[cols != i]
        assert diag > 0.0
        assert np.all(off <= 0.0)
        assert abs(diag + off.sum()) <= 1e-13 * diag


def test_solve_reaches_tolerance(twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "cons_hybrid")
    system = assemble(cloud, neigh, cells, field, case, "cons_hybrid")
    u, iters, res = solve(system, SolverConfig(tol=1e-10))
    assert res <= 1e-10
    G, f = equilibrated(system)
    recomputed = np.linalg.norm(f - G @ u) / np.linalg.norm(f)
    assert abs(recomputed - res) <= 1e-13


def test_write_system_roundtrip(tmp_path, twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "strong")
    system = assemble(cloud, neigh, cells, field, case, "strong")
    write_system(tmp_path / "sys", system)
    rows, cols, vals = [], [], []
    for line in (tmp_path / "sys_matrix.txt").read_text().splitlines():
        i, j, v = line.split()
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    back = sp.csr_matrix((vals, (rows, cols)), shape=system.matrix.shape)
    assert (back != system.matrix).nnz == 0
    rhs = np.array([float(t) for t in
                    (tmp_path / "sys_rhs.txt").read_text().split()])
    assert np.array_equal(rhs, system.rhs)


def test_invalid_method_rejected(twostrip_setup):
    case, cloud, neigh, cells = twostrip_setup
    field = build_field(case, cloud, neigh, "strong")
    with pytest.raises(ValueError):
        assemble(cloud, neigh, cells, field, case, "magic")
    with pytest.raises(ValueError):
        assemble(cloud, neigh, cells, field, case, "strong",
                 neumann_mode="sometimes")
