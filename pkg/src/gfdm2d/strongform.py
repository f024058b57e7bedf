"""Strong-form GFDM operators from weighted-least-squares stencils.

A stencil row reproduces all monomials up to degree K (default 2) exactly
and, among all such rows, minimizes the weighted coefficient norm
``sum_j (c_ij / w_ij)^2`` with Gaussian-type weights. The diffusion operator
is assembled from gradient and Laplacian rows via the product rule, either
on the raw/smoothed diffusivity or on its logarithm. A null-space correction
vector can be added to push rows toward diagonal dominance without touching
their monomial reproduction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from gfdm2d.pointcloud import PointCloud, Neighborhood


class SingularStencilError(RuntimeError):
    """The stencil cannot reproduce the monomial basis (under-resolved)."""


@dataclass(frozen=True)
class MonomialBasis:
    """Multi-indices |alpha| <= degree, centered at the stencil point."""

    degree: int = 2

    @property
    def exponents(self) -> np.ndarray:
        exps = [(a - b, b) for a in range(self.degree + 1) for b in range(a + 1)]
        return np.array(exps, dtype=np.int64)

    def __len__(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2


BASIS = MonomialBasis(2)
_EXP = BASIS.exponents          # [(0,0),(1,0),(0,1),(2,0),(1,1),(0,2)]
_ABS = _EXP.sum(axis=1)

#: Target vectors b* for the standard differential operators at the center.
IDENTITY_TARGETS = np.array([1.0, 0, 0, 0, 0, 0])
GRAD_X_TARGETS = np.array([0.0, 1, 0, 0, 0, 0])
GRAD_Y_TARGETS = np.array([0.0, 0, 1, 0, 0, 0])
LAPLACIAN_TARGETS = np.array([0.0, 0, 0, 2, 0, 2])


def point_value_targets(offset: np.ndarray) -> np.ndarray:
    """Targets of the identity functional at center + offset: (offset)^alpha."""
    return np.prod(np.asarray(offset, dtype=float) ** _EXP, axis=1)


@dataclass
class StencilRow:
    """Sparse operator row: ``D_i u ~= sum_k vals[k] * u[cols[k]]``."""

    center: int
    cols: np.ndarray
    vals: np.ndarray

    def apply(self, u: np.ndarray) -> float:
        return float(self.vals @ u[self.cols])

    @property
    def diagonal(self) -> float:
        pos = np.flatnonzero(self.cols == self.center)
        return float(self.vals[pos[0]]) if len(pos) else 0.0

    def offdiag_abs_sum(self) -> float:
        mask = self.cols != self.center
        return float(np.sum(np.abs(self.vals[mask])))


def _scaled_system(cloud: PointCloud, neigh: Neighborhood, i: int,
                   indices: np.ndarray | None = None):
    """Monomial matrix and weights in stretch-invariant coordinates.

    Offsets are divided by h_i before building the monomial rows; the
    resulting coefficients are identical to the unscaled solve because each
    constraint is only rescaled by a power of h_i. ``indices`` restricts the
    stencil to a subset of S_i (used for one-sided subdomain gradients).
    """
    idx = neigh[i] if indices is None else np.asarray(indices, dtype=np.int64)
    off = (cloud.points[idx] - cloud.points[i]) / cloud.h[i]
    K = np.prod(off[:, None, :] ** _EXP[None, :, :], axis=2).T  # (6, n)
    dist = np.linalg.norm(cloud.points[idx] - cloud.points[i], axis=1)
    w = np.exp(-2.0 * dist / (cloud.h[i] + cloud.h[idx]))
    return idx, K, w


def _min_norm_solve(K: np.ndarray, w: np.ndarray, rhs: np.ndarray,
                    what: str) -> np.ndarray:
    """c = W^2 K^T (K W^2 K^T)^{-1} rhs, with a reproduction sanity check."""
    A = K * w
    M = A @ A.T
    try:
        lam = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularStencilError(f"{what}: singular stencil system") from exc
    c = w * (A.T @ lam)
    resid = K @ c - rhs
    if not np.all(np.abs(resid) <= 1e-9 * (1.0 + np.max(np.abs(rhs)))):
        raise SingularStencilError(
            f"{what}: monomial constraints violated (residual "
            f"{np.max(np.abs(resid)):.3e}); stencil under-resolved")
    return c


def wlsq_row(cloud: PointCloud, neigh: Neighborhood, i: int,
             rhs: np.ndarray, indices: np.ndarray | None = None) -> StencilRow:
    """Minimal-weighted-norm row with exact monomial reproduction.

    ``rhs`` lists the exact values of the target operator applied to
    ``(x - x_i)^alpha`` at ``x_i``, in the order of ``BASIS.exponents``.
    """
    idx, K, w = _scaled_system(cloud, neigh, i, indices)
    if len(idx) < len(BASIS):
        raise SingularStencilError(
            f"stencil of point {i} has {len(idx)} < {len(BASIS)} points")
    scaled_rhs = np.asarray(rhs, dtype=float) / cloud.h[i] ** _ABS
    c = _min_norm_solve(K, w, scaled_rhs, f"point {i}")
    return StencilRow(i, idx, c)


def wlsq_rows_multi(cloud: PointCloud, neigh: Neighborhood, i: int,
                    rhs_list) -> list[StencilRow]:
    """Several target operators on one stencil, sharing the factorization."""
    idx, K, w = _scaled_system(cloud, neigh, i)
    if len(idx) < len(BASIS):
        raise SingularStencilError(
            f"stencil of point {i} has {len(idx)} < {len(BASIS)} points")
    A = K * w
    M = A @ A.T
    B = np.column_stack([np.asarray(r, dtype=float) / cloud.h[i] ** _ABS
                         for r in rhs_list])
    try:
        lam = np.linalg.solve(M, B)
    except np.linalg.LinAlgError as exc:
        raise SingularStencilError(f"point {i}: singular stencil system") from exc
    C = w[:, None] * (A.T @ lam)
    resid = K @ C - B
    if not np.all(np.abs(resid) <= 1e-9 * (1.0 + np.max(np.abs(B), axis=0))):
        raise SingularStencilError(f"point {i}: monomial constraints violated")
    return [StencilRow(i, idx, C[:, k].copy()) for k in range(C.shape[1])]


def null_space_row(cloud: PointCloud, neigh: Neighborhood,
                   i: int) -> StencilRow:
    """Zero-operator vector: annihilates all basis monomials, xi_ii = 1.

    The center coefficient is pinned by eliminating its column and moving it
    to the right-hand side of the constraints.
    """
    idx, K, w = _scaled_system(cloud, neigh, i)
    free = idx != i
    if int(np.count_nonzero(free)) < len(BASIS):
        raise SingularStencilError(
            f"point {i}: too few neighbors for a null-space vector")
    center_col = K[:, ~free][:, 0]
    c_free = _min_norm_solve(K[:, free], w[free], -center_col,
                             f"point {i} (null space)")
    vals = np.empty(len(idx))
    vals[free] = c_free
    vals[~free] = 1.0
    return StencilRow(i, idx, vals)


def smooth_field(values: np.ndarray, cloud: PointCloud, neigh: Neighborhood,
                 cycles: int) -> np.ndarray:
    """Repeated convex neighborhood averaging with s_ij = exp(-3 d^2 / h_i^2)."""
    v = np.asarray(values, dtype=float).copy()
    if cycles <= 0:
        return v
    rows = np.repeat(np.arange(len(cloud)), neigh.sizes())
    cols = np.concatenate(neigh.stencils)
    d2 = np.sum((cloud.points[cols] - cloud.points[rows]) ** 2, axis=1)
    s = np.exp(-3.0 * d2 / cloud.h[rows] ** 2)
    S = sp.csr_matrix((s, (rows, cols)), shape=(len(cloud), len(cloud)))
    S = sp.diags(1.0 / S.sum(axis=1).A1) @ S
    for _ in range(cycles):
        v = S @ v
    return v


@dataclass
class DiffusivityField:
    """Nodal diffusivity with optional smoothing and logarithmic scaling.

    ``smoothed`` is the field actually differentiated by the classical
    operator: eta-tilde when unscaled, mu-tilde = smoothed log(eta) when
    scaled. The raw ``eta`` always feeds the conservative flux coefficients.
    """

    eta: np.ndarray
    smoothed: np.ndarray
    mu: np.ndarray | None
    smoothing_cycles: int
    scaled: bool

    @classmethod
    def from_values(cls, eta: np.ndarray, cloud: PointCloud,
                    neigh: Neighborhood, smoothing_cycles: int = 0,
                    scaled: bool = False) -> "DiffusivityField":
        eta = np.asarray(eta, dtype=float)
        if np.any(eta <= 0.0):
            raise ValueError("diffusivity must be positive")
        smoothed = smooth_field(eta, cloud, neigh, smoothing_cycles)
        mu = None
        if scaled:
            mu = smooth_field(np.log(eta), cloud, neigh, smoothing_cycles)
        return cls(eta, smoothed, mu, smoothing_cycles, scaled)


def gradient_rows(cloud: PointCloud, neigh: Neighborhood,
                  i: int) -> tuple[StencilRow, StencilRow]:
    rx, ry = wlsq_rows_multi(cloud, neigh, i, [GRAD_X_TARGETS, GRAD_Y_TARGETS])
    return rx, ry


def _pin_zero_row_sum(vals: np.ndarray, pos: int) -> np.ndarray:
    """Force exact constant annihilation through the diagonal entry.

    The diffusion operator maps constants to zero, but the least-squares
    solve leaves a ~1e-13 row-sum defect that gets amplified by diffusivity
    magnitudes of 1e10 into a visible spurious source. The center offset is
    zero, so adjusting the diagonal touches no other monomial constraint.
    """
    vals[pos] -= np.sum(vals)
    return vals


def diffusion_row_classical(cloud: PointCloud, neigh: Neighborhood, i: int,
                            field: DiffusivityField) -> StencilRow:
    """Product-rule row for div(eta grad u) at point i.

    Unscaled: grad(eta~) . c_grad + eta~_i c_lap. Scaled: the gradient acts
    on mu~ = log-diffusivity and the row is premultiplied by exp(mu~_i).
    """
    cx, cy, cl = wlsq_rows_multi(
        cloud, neigh, i, [GRAD_X_TARGETS, GRAD_Y_TARGETS, LAPLACIAN_TARGETS])
    idx = cx.cols
    if field.scaled:
        mu = field.mu[idx]
        gx = cx.vals @ mu
        gy = cy.vals @ mu
        vals = np.exp(field.mu[i]) * (gx * cx.vals + gy * cy.vals + cl.vals)
    else:
        eta = field.smoothed[idx]
        gx = cx.vals @ eta
        gy = cy.vals @ eta
        vals = gx * cx.vals + gy * cy.vals + field.smoothed[i] * cl.vals
    pos = int(np.flatnonzero(idx == i)[0])
    return StencilRow(i, idx, _pin_zero_row_sum(vals, pos))


def null_space_correction(row: StencilRow, cloud: PointCloud,
                          neigh: Neighborhood, i: int) -> StencilRow:
    """Add the optimal multiple of the zero operator to improve dominance.

    Falls back to the input row when no null-space vector exists or when the
    optimum is undefined (denominator numerically zero).
    """
    try:
        xi = null_space_row(cloud, neigh, i)
    except SingularStencilError:
        return row
    g, x = row.vals, xi.vals
    pos = int(np.flatnonzero(row.cols == i)[0])
    gii, xii = g[pos], x[pos]
    gx = g @ x
    den = xii * gx - gii * (x @ x)
    if abs(den) <= 1e-14 * np.linalg.norm(x) * np.linalg.norm(g):
        return row
    alpha = (gii * gx - xii * (g @ g)) / den
    return StencilRow(i, row.cols, _pin_zero_row_sum(g + alpha * x, pos))


def sigma(row: StencilRow) -> float:
    """Diagonal dominance error: 0 iff the row is dominant with diag < 0."""
    diag = row.diagonal
    if diag == 0.0:
        return np.inf
    return max(row.offdiag_abs_sum() / abs(diag) - 1.0, diag, 0.0)


def _classical_rows_single(cloud, neigh, field, indices, correct):
    rows = {}
    for i in indices:
        row = diffusion_row_classical(cloud, neigh, int(i), field)
        if correct:
            row = null_space_correction(row, cloud, neigh, int(i))
        rows[int(i)] = row
    return rows


def _classical_rows_batch(cloud, neigh, field, members, idxmat, correct):
    """Vectorized classical rows for stencils sharing one size."""
    m, n = idxmat.shape
    ctr = cloud.points[members]
    h = cloud.h[members]
    P = cloud.points[idxmat]
    X = (P - ctr[:, None, :]) / h[:, None, None]
    K = X[:, None, :, 0] ** _EXP[None, :, 0, None] * \
        X[:, None, :, 1] ** _EXP[None, :, 1, None]
    dist = np.linalg.norm(P - ctr[:, None, :], axis=2)
    W = np.exp(-2.0 * dist / (cloud.h[members][:, None] + cloud.h[idxmat]))
    A = K * W[:, None, :]
    M = A @ A.transpose(0, 2, 1)
    B = np.zeros((m, 6, 3))
    B[:, 1, 0] = 1.0 / h
    B[:, 2, 1] = 1.0 / h
    B[:, 3, 2] = 2.0 / h ** 2
    B[:, 5, 2] = 2.0 / h ** 2
    lam = np.linalg.solve(M, B)
    C = W[:, :, None] * (A.transpose(0, 2, 1) @ lam)
    resid = np.abs(K @ C - B)
    tol = 1e-9 * (1.0 + np.max(np.abs(B), axis=1))
    if np.any(resid > tol[:, None, :]):
        bad = int(members[np.argmax(np.any(resid > tol[:, None, :],
                                           axis=(1, 2)))])
        raise SingularStencilError(f"point {bad}: monomial constraints violated")

    pos = np.argmax(idxmat == members[:, None], axis=1)
    if field.scaled:
        v = field.mu[idxmat]
        v0 = field.mu[members]
        gx = np.sum(C[:, :, 0] * v, axis=1)
        gy = np.sum(C[:, :, 1] * v, axis=1)
        vals = np.exp(v0)[:, None] * (gx[:, None] * C[:, :, 0] +
                                      gy[:, None] * C[:, :, 1] + C[:, :, 2])
    else:
        v = field.smoothed[idxmat]
        v0 = field.smoothed[members]
        gx = np.sum(C[:, :, 0] * v, axis=1)
        gy = np.sum(C[:, :, 1] * v, axis=1)
        vals = gx[:, None] * C[:, :, 0] + gy[:, None] * C[:, :, 1] + \
            v0[:, None] * C[:, :, 2]
    np.put_along_axis(
        vals, pos[:, None],
        np.take_along_axis(vals, pos[:, None], axis=1) -
        vals.sum(axis=1)[:, None], axis=1)

    if correct and n >= len(BASIS) + 1:
        mask = np.arange(n)[None, :] != pos[:, None]
        freepos = np.broadcast_to(np.arange(n), (m, n))[mask].reshape(m, n - 1)
        Kf = np.take_along_axis(K, freepos[:, None, :], axis=2)
        Wf = np.take_along_axis(W, freepos, axis=1)
        rhs = -np.take_along_axis(K, pos[:, None, None], axis=2)[:, :, 0]
        Af = Kf * Wf[:, None, :]
        Mf = Af @ Af.transpose(0, 2, 1)
        lamf = np.linalg.solve(Mf, rhs[:, :, None])[:, :, 0]
        cf = Wf * np.einsum("mkn,mk->mn", Af, lamf)
        xi = np.zeros((m, n))
        np.put_along_axis(xi, freepos, cf, axis=1)
        np.put_along_axis(xi, pos[:, None], 1.0, axis=1)
        xi_resid = np.abs(np.einsum("mkn,mn->mk", K, xi))
        ok = np.all(xi_resid <= 1e-9, axis=1)
        gii = np.take_along_axis(vals, pos[:, None], axis=1)[:, 0]
        gdotx = np.sum(vals * xi, axis=1)
        gg = np.sum(vals * vals, axis=1)
        xx = np.sum(xi * xi, axis=1)
        den = gdotx - gii * xx
        ok &= np.abs(den) > 1e-14 * np.sqrt(xx * gg)
        alpha = np.where(ok, (gii * gdotx - gg) / np.where(ok, den, 1.0), 0.0)
        vals = vals + alpha[:, None] * xi
        np.put_along_axis(
            vals, pos[:, None],
            np.take_along_axis(vals, pos[:, None], axis=1) -
            vals.sum(axis=1)[:, None], axis=1)

    return {int(i): StencilRow(int(i), idxmat[r], vals[r].copy())
            for r, i in enumerate(members)}


def classical_rows(cloud: PointCloud, neigh: Neighborhood,
                   field: DiffusivityField, indices=None,
                   correct: bool = True) -> dict[int, StencilRow]:
    """Corrected classical diffusion rows for the given points (default: interior).

    Stencils are batched by size so all small dense solves run through one
    LAPACK call per group; results match the per-point operations.
    """
    if indices is None:
        indices = cloud.interior
    indices = np.asarray(indices, dtype=np.int64)
    sizes = neigh.sizes()[indices]
    rows: dict[int, StencilRow] = {}
    for n in np.unique(sizes):
        members = indices[sizes == n]
        idxmat = np.vstack([neigh[int(i)] for i in members])
        try:
            rows.update(_classical_rows_batch(cloud, neigh, field, members,
                                              idxmat, correct))
        except np.linalg.LinAlgError:
            rows.update(_classical_rows_single(cloud, neigh, field, members,
                                               correct))
    return rows
