"""Bilinear forward/inverse mapping on quadrilateral mesh cells.

A cell is given by four corners ordered by local coordinates:
c00 = (u=0, v=0), c10 = (1, 0), c01 = (0, 1), c11 = (1, 1).
The forward map is

    f(u, v) = (1-u)(1-v) c00 + u(1-v) c10 + (1-u)v c01 + uv c11

and the inverse is solved with Newton iteration started at (0.5, 0.5).
"""

from __future__ import annotations

import numpy as np

from .errors import ContainmentError

NEWTON_TOL = 1e-6
NEWTON_MAX_ITER = 20


def forward_bilinear(c00, c10, c01, c11, u, v):
    """Map local coordinates (u, v) to world coordinates.

    Corner arrays broadcast against each other with a trailing axis of
    length 2; u and v broadcast against the corner batch shape.
    """
    u = np.asarray(u, dtype=float)[..., None]
    v = np.asarray(v, dtype=float)[..., None]
    return ((1 - u) * (1 - v) * np.asarray(c00, float)
            + u * (1 - v) * np.asarray(c10, float)
            + (1 - u) * v * np.asarray(c01, float)
            + u * v * np.asarray(c11, float))


def inverse_bilinear_batch(c00, c10, c01, c11, pts,
                           tol: float = NEWTON_TOL,
                           max_iter: int = NEWTON_MAX_ITER):
    """Vectorized Newton inverse of the bilinear map.

    Parameters
    ----------
    c00, c10, c01, c11 : arrays broadcastable to (..., 2)
    pts : array (..., 2) of world points

    Returns
    -------
    uv : array (..., 2) of local coordinates (unclamped)
    converged : bool array (...,)
    """
    c00 = np.asarray(c00, float)
    c10 = np.asarray(c10, float)
    c01 = np.asarray(c01, float)
    c11 = np.asarray(c11, float)
    pts = np.asarray(pts, float)
    batch = np.broadcast_shapes(c00.shape[:-1], pts.shape[:-1])
    u = np.full(batch, 0.5)
    v = np.full(batch, 0.5)
    converged = np.zeros(batch, dtype=bool)
    for _ in range(max_iter):
        uu = u[..., None]
        vv = v[..., None]
        f = ((1 - uu) * (1 - vv) * c00 + uu * (1 - vv) * c10
             + (1 - uu) * vv * c01 + uu * vv * c11) - pts
        res = np.abs(f).max(axis=-1)
        converged = res < tol
        if converged.all():
            break
        # Jacobian columns d f / d u and d f / d v
        ju = (1 - vv) * (c10 - c00) + vv * (c11 - c01)
        jv = (1 - uu) * (c01 - c00) + uu * (c11 - c10)
        det = ju[..., 0] * jv[..., 1] - ju[..., 1] * jv[..., 0]
        safe = np.abs(det) > 1e-300
        inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
        du = (f[..., 0] * jv[..., 1] - f[..., 1] * jv[..., 0]) * inv_det
        dv = (ju[..., 0] * f[..., 1] - ju[..., 1] * f[..., 0]) * inv_det
        step = ~converged
        u = u - np.where(step, du, 0.0)
        v = v - np.where(step, dv, 0.0)
    uv = np.stack([u, v], axis=-1)
    return uv, converged


def inverse_bilinear(cell, p, tol: float = NEWTON_TOL,
                     max_iter: int = NEWTON_MAX_ITER):
    """Invert one cell at one point, enforcing containment.

    `cell` is a (4, 2) array ordered (c00, c10, c01, c11). Raises
    ContainmentError if Newton fails to converge or the solution lies
    outside the unit square.
    """
    cell = np.asarray(cell, dtype=float)
    if cell.shape != (4, 2):
        raise ValueError("cell must be a (4, 2) array of corners")
    uv, ok = inverse_bilinear_batch(cell[0], cell[1], cell[2], cell[3],
                                    np.asarray(p, float), tol=tol,
                                    max_iter=max_iter)
    if not bool(ok):
        raise ContainmentError(f"Newton iteration did not converge for {p}")
    u, v = float(uv[0]), float(uv[1])
    eps = 1e-7
    if not (-eps <= u <= 1 + eps and -eps <= v <= 1 + eps):
        raise ContainmentError(f"point {p} lies outside the cell (u={u:.4g}, v={v:.4g})")
    return min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0)


def cell_corners(mesh_pts: np.ndarray, ci, cj):
    """Gather the four corners of cell (ci, cj) from an (l, r, 2) frame.

    u runs along the longitudinal index i, v along the radial index j.
    """
    return (mesh_pts[ci, cj], mesh_pts[ci + 1, cj],
            mesh_pts[ci, cj + 1], mesh_pts[ci + 1, cj + 1])


def quad_areas(mesh_pts: np.ndarray) -> np.ndarray:
    """Shoelace area of every cell of an (l, r, 2) frame -> (l-1, r-1)."""
    a = mesh_pts[:-1, :-1]
    b = mesh_pts[1:, :-1]
    c = mesh_pts[1:, 1:]
    d = mesh_pts[:-1, 1:]
    x = np.stack([a[..., 0], b[..., 0], c[..., 0], d[..., 0]], axis=-1)
    y = np.stack([a[..., 1], b[..., 1], c[..., 1], d[..., 1]], axis=-1)
    xn = np.roll(x, -1, axis=-1)
    yn = np.roll(y, -1, axis=-1)
    return 0.5 * np.abs((x * yn - xn * y).sum(axis=-1))


def locate_in_mesh(mesh_pts: np.ndarray, pts: np.ndarray):
    """Find, for each point, the mesh cell containing it and its (u, v).

    Parameters
    ----------
    mesh_pts : (l, r, 2) mesh frame
    pts : (M, 2) query points

    Returns
    -------
    ci, cj : int arrays (M,), -1 where no cell contains the point
    uv : (M, 2) local coordinates (valid only where found)
    found : bool array (M,)
    """
    l, r, _ = mesh_pts.shape
    m = len(pts)
    ci = np.full(m, -1, dtype=np.int64)
    cj = np.full(m, -1, dtype=np.int64)
    uv = np.zeros((m, 2))
    found = np.zeros(m, dtype=bool)
    eps = 1e-9
    for i in range(l - 1):
        for j in range(r - 1):
            todo = ~found
            if not todo.any():
                return ci, cj, uv, found
            c00, c10, c01, c11 = cell_corners(mesh_pts, i, j)
            quad = np.stack([c00, c10, c11, c01])
            lo = quad.min(axis=0) - 1e-6
            hi = quad.max(axis=0) + 1e-6
            cand = todo & np.all((pts >= lo) & (pts <= hi), axis=1)
            idx = np.nonzero(cand)[0]
            if idx.size == 0:
                continue
            sol, ok = inverse_bilinear_batch(c00, c10, c01, c11, pts[idx])
            inside = (ok & (sol[:, 0] >= -eps) & (sol[:, 0] <= 1 + eps)
                      & (sol[:, 1] >= -eps) & (sol[:, 1] <= 1 + eps))
            hit = idx[inside]
            ci[hit] = i
            cj[hit] = j
            uv[hit] = np.clip(sol[inside], 0.0, 1.0)
            found[hit] = True
    return ci, cj, uv, found


def locate_with_fallback(mesh_pts: np.ndarray, pts: np.ndarray):
    """locate_in_mesh, but unlocated points snap to their nearest cell.

    Points that fall in no cell (rasterization slack, falloff band) are
    assigned the cell adjacent to the nearest mesh vertex, with (u, v)
    from an unconstrained Newton solve clipped to [0, 1].
    """
    ci, cj, uv, found = locate_in_mesh(mesh_pts, pts)
    miss = np.nonzero(~found)[0]
    if miss.size:
        l, r, _ = mesh_pts.shape
        flat = mesh_pts.reshape(-1, 2)
        from scipy.spatial import cKDTree

        _, nearest = cKDTree(flat).query(pts[miss])
        ni, nj = np.unravel_index(nearest, (l, r))
        fi = np.minimum(ni, l - 2)
        fj = np.minimum(nj, r - 2)
        c00 = mesh_pts[fi, fj]
        c10 = mesh_pts[fi + 1, fj]
        c01 = mesh_pts[fi, fj + 1]
        c11 = mesh_pts[fi + 1, fj + 1]
        sol, _ = inverse_bilinear_batch(c00, c10, c01, c11, pts[miss])
        ci[miss] = fi
        cj[miss] = fj
        uv[miss] = np.clip(np.nan_to_num(sol), 0.0, 1.0)
    return ci, cj, uv, found
