"""Hot inner loops, each in a numpy and a numba flavour.

Public names (``wedge_apply``, ``laplacian_apply``, ``frames_gram_schmidt``,
``sweep_align``) dispatch on :data:`cartanlab._accel.USE_NUMBA`. The
``*_numpy`` / ``*_numba`` variants stay importable so tests and the benchmark
can compare them directly.
"""

from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# pointwise graded wedge with a bilinear value product
#
# a: (P, ca, da), b: (P, cb, db)
# table rows (out_comp, a_comp, b_comp, sign) enumerate shuffles
# triplets (k, i, j, v) are the nonzeros of the bilinear product tensor
# ---------------------------------------------------------------------------


def wedge_apply_numpy(a, b, table, trip, out_c, out_d):
    P = a.shape[0]
    out = np.zeros((P, out_c, out_d))
    if len(trip) == 0 or len(table) == 0:
        return out
    tk = trip[:, 0].astype(np.int64)
    ti = trip[:, 1].astype(np.int64)
    tj = trip[:, 2].astype(np.int64)
    tv = trip[:, 3]
    for row in table:
        J, I, K, s = int(row[0]), int(row[1]), int(row[2]), row[3]
        prod = a[:, I, ti] * b[:, K, tj] * (s * tv)
        acc = np.zeros((P, out_d))
        for k in range(out_d):
            mask = tk == k
            if np.any(mask):
                acc[:, k] = prod[:, mask].sum(axis=1)
        out[:, J, :] += acc
    return out


@njit(cache=True)
def _wedge_numba(a, b, tJ, tI, tK, ts, tk, ti, tj, tv, out_c, out_d):
    P = a.shape[0]
    out = np.zeros((P, out_c, out_d))
    nt = tJ.shape[0]
    nr = tk.shape[0]
    for p in range(P):
        for r in range(nt):
            J = tJ[r]
            I = tI[r]
            K = tK[r]
            s = ts[r]
            for q in range(nr):
                out[p, J, tk[q]] += s * tv[q] * a[p, I, ti[q]] * b[p, K, tj[q]]
    return out


def wedge_apply_numba(a, b, table, trip, out_c, out_d):
    if len(trip) == 0 or len(table) == 0:
        return np.zeros((a.shape[0], out_c, out_d))
    return _wedge_numba(
        np.ascontiguousarray(a), np.ascontiguousarray(b),
        table[:, 0].astype(np.int64), table[:, 1].astype(np.int64),
        table[:, 2].astype(np.int64), table[:, 3].astype(np.float64),
        trip[:, 0].astype(np.int64), trip[:, 1].astype(np.int64),
        trip[:, 2].astype(np.int64), trip[:, 3].astype(np.float64),
        out_c, out_d,
    )


def wedge_apply(a, b, table, trip, out_c, out_d):
    if _accel.USE_NUMBA:
        return wedge_apply_numba(a, b, table, trip, out_c, out_d)
    return wedge_apply_numpy(a, b, table, trip, out_c, out_d)


# ---------------------------------------------------------------------------
# componentwise (2n+1)-point Laplacian, -sum_j (f(x+e_j) - 2 f + f(x-e_j)) / h_j^2
# plus a diagonal shift; f has shape (*sizes, rest)
# ---------------------------------------------------------------------------


def laplacian_apply_numpy(f, h, shift=0.0):
    out = shift * f if shift else np.zeros_like(f)
    n = len(h)
    for j in range(n):
        out -= (np.roll(f, -1, axis=j) - 2.0 * f + np.roll(f, 1, axis=j)) / (h[j] * h[j])
    return out


@njit(cache=True)
def _lap2(f, hx, hy, shift):
    nx, ny, r = f.shape
    out = np.empty_like(f)
    ax = 1.0 / (hx * hx)
    ay = 1.0 / (hy * hy)
    for i in range(nx):
        ip = (i + 1) % nx
        im = (i - 1) % nx
        for j in range(ny):
            jp = (j + 1) % ny
            jm = (j - 1) % ny
            for c in range(r):
                v = f[i, j, c]
                out[i, j, c] = (shift * v
                                - ax * (f[ip, j, c] - 2.0 * v + f[im, j, c])
                                - ay * (f[i, jp, c] - 2.0 * v + f[i, jm, c]))
    return out


@njit(cache=True)
def _lap3(f, hx, hy, hz, shift):
    nx, ny, nz, r = f.shape
    out = np.empty_like(f)
    ax = 1.0 / (hx * hx)
    ay = 1.0 / (hy * hy)
    az = 1.0 / (hz * hz)
    for i in range(nx):
        ip = (i + 1) % nx
        im = (i - 1) % nx
        for j in range(ny):
            jp = (j + 1) % ny
            jm = (j - 1) % ny
            for k in range(nz):
                kp = (k + 1) % nz
                km = (k - 1) % nz
                for c in range(r):
                    v = f[i, j, k, c]
                    out[i, j, k, c] = (shift * v
                                       - ax * (f[ip, j, k, c] - 2.0 * v + f[im, j, k, c])
                                       - ay * (f[i, jp, k, c] - 2.0 * v + f[i, jm, k, c])
                                       - az * (f[i, j, kp, c] - 2.0 * v + f[i, j, km, c]))
    return out


def laplacian_apply_numba(f, h, shift=0.0):
    n = len(h)
    if n == 2:
        return _lap2(np.ascontiguousarray(f), float(h[0]), float(h[1]), float(shift))
    if n == 3:
        return _lap3(np.ascontiguousarray(f), float(h[0]), float(h[1]), float(h[2]), float(shift))
    return laplacian_apply_numpy(f, h, shift)


def laplacian_apply(f, h, shift=0.0):
    """Apply ``shift*I + Delta`` componentwise; trailing axes of ``f`` are values."""
    if _accel.USE_NUMBA:
        return laplacian_apply_numba(f, h, shift)
    return laplacian_apply_numpy(f, h, shift)


# ---------------------------------------------------------------------------
# adapted frames: tangent Gram-Schmidt, then normals seeded by the canonical
# basis vector with largest residual (ties -> smallest index)
# jac: (P, N, n) columns are partial derivatives; returns (P, N, N), min seed residual
# ---------------------------------------------------------------------------


def frames_gram_schmidt_numpy(jac):
    P, N, n = jac.shape
    E = np.zeros((P, N, N))
    for a in range(n):
        v = jac[:, :, a].copy()
        for _ in range(2):
            c = np.einsum("pcb,pc->pb", E[:, :, :a], v)
            v = v - np.einsum("pb,pcb->pc", c, E[:, :, :a])
        E[:, :, a] = v / np.linalg.norm(v, axis=1)[:, None]
    min_res = np.full(P, np.inf)
    eye = np.eye(N)
    rows = np.arange(P)
    for a in range(n, N):
        basis = E[:, :, :a]
        # residual of each canonical seed e_s against span(E[:, :, :a])
        res = eye[None, :, :] - np.einsum("psb,pcb->psc", basis, basis)
        rn = np.linalg.norm(res, axis=2)
        # ties within 1e-12 resolve to the smallest seed index
        best = np.argmax(rn >= rn.max(axis=1, keepdims=True) - 1e-12, axis=1)
        nv = rn[rows, best]
        min_res = np.minimum(min_res, nv)
        v = res[rows, best] / nv[:, None]
        c = np.einsum("pcb,pc->pb", basis, v)
        v = v - np.einsum("pb,pcb->pc", c, basis)
        E[:, :, a] = v / np.linalg.norm(v, axis=1)[:, None]
    return E, min_res


@njit(cache=True)
def _frames_numba(jac):
    P, N, n = jac.shape
    E = np.zeros((P, N, N))
    min_res = np.full(P, np.inf)
    v = np.empty(N)
    best_v = np.empty(N)
    for p in range(P):
        for a in range(n):
            for i in range(N):
                v[i] = jac[p, i, a]
            for rep in range(2):
                for b in range(a):
                    s = 0.0
                    for i in range(N):
                        s += E[p, i, b] * v[i]
                    for i in range(N):
                        v[i] -= s * E[p, i, b]
            nv = 0.0
            for i in range(N):
                nv += v[i] * v[i]
            nv = np.sqrt(nv)
            for i in range(N):
                E[p, i, a] = v[i] / nv
        for a in range(n, N):
            best = -1.0
            for seed in range(N):
                for i in range(N):
                    v[i] = 0.0
                v[seed] = 1.0
                for b in range(a):
                    s = E[p, seed, b]
                    for i in range(N):
                        v[i] -= s * E[p, i, b]
                nv = 0.0
                for i in range(N):
                    nv += v[i] * v[i]
                nv = np.sqrt(nv)
                if nv > best + 1e-12:
                    best = nv
                    for i in range(N):
                        best_v[i] = v[i]
            if best < min_res[p]:
                min_res[p] = best
            for i in range(N):
                v[i] = best_v[i] / best
            for b in range(a):
                s = 0.0
                for i in range(N):
                    s += E[p, i, b] * v[i]
                for i in range(N):
                    v[i] -= s * E[p, i, b]
            nv = 0.0
            for i in range(N):
                nv += v[i] * v[i]
            nv = np.sqrt(nv)
            for i in range(N):
                E[p, i, a] = v[i] / nv
    return E, min_res


def frames_gram_schmidt_numba(jac):
    return _frames_numba(np.ascontiguousarray(jac, dtype=np.float64))


def frames_gram_schmidt(jac):
    if _accel.USE_NUMBA:
        return frames_gram_schmidt_numba(jac)
    return frames_gram_schmidt_numpy(jac)


# ---------------------------------------------------------------------------
# normal-frame continuity sweep over a lexicographic spanning tree
# normals: (P, N, m) flattened in C order of `shape`; parent: (P,) index of the
# reference neighbour (-1 for the root). Codimension one flips signs; higher
# codimension applies the orthogonal Procrustes rotation toward the parent.
# ---------------------------------------------------------------------------


def sweep_parents(shape):
    """Parent of each grid point in the lexicographic sweep from the origin."""
    shape = tuple(shape)
    P = int(np.prod(shape))
    idx = np.arange(P).reshape(shape)
    parent = np.full(shape, -1, dtype=np.int64)
    n = len(shape)
    for ax in range(n - 1, -1, -1):
        # points whose first nonzero index from the right is on this axis:
        # all later axes are zero and this one is > 0
        sl = [slice(None)] * n
        for later in range(ax + 1, n):
            sl[later] = 0
        sl[ax] = slice(1, None)
        sub = idx[tuple(sl)]
        prev = [slice(None)] * n
        for later in range(ax + 1, n):
            prev[later] = 0
        prev[ax] = slice(0, -1)
        parent[tuple(sl)] = idx[tuple(prev)]
    # points with a nonzero last-axis index take the previous point along it
    sl = [slice(None)] * n
    sl[n - 1] = slice(1, None)
    prev = [slice(None)] * n
    prev[n - 1] = slice(0, -1)
    parent[tuple(sl)] = idx[tuple(prev)]
    return parent.reshape(-1)


def _polar(m):
    u, _, vt = np.linalg.svd(m)
    return u @ vt


def _sweep_gauge(normals, shape):
    # gauge Q with out = normals @ Q, built recursively: the hyperplane with
    # last index 0 first, then a vectorised cumulative product along the last
    # axis; Q_p = polar(n_p^T n_parent) Q_parent reproduces the point sweep
    P, N, m = normals.shape
    nv = normals.reshape(tuple(shape) + (N, m))
    Q = np.zeros(tuple(shape) + (m, m))
    if len(shape) == 1:
        Q0 = np.eye(m)[None]
    else:
        Q0 = _sweep_gauge(nv[..., 0, :, :].reshape(-1, N, m), shape[:-1])
        Q0 = Q0.reshape(tuple(shape[:-1]) + (m, m))
    Q[..., 0, :, :] = Q0
    for j in range(1, shape[-1]):
        M = np.einsum("...ia,...ib->...ab", nv[..., j, :, :], nv[..., j - 1, :, :])
        if m == 1:
            R = np.where(M < 0, -1.0, 1.0)
        else:
            R = _polar(M)
        Q[..., j, :, :] = R @ Q[..., j - 1, :, :]
    return Q.reshape(P, m, m) if len(shape) > 1 else Q


def sweep_align_numpy(normals, parent, shape=None):
    """Vectorised sweep; ``shape`` is the grid shape (inferred 1-D if absent)."""
    if shape is None:
        shape = (normals.shape[0],)
    Q = _sweep_gauge(normals, tuple(shape)).reshape(normals.shape[0], normals.shape[2], normals.shape[2])
    return np.einsum("pia,pab->pib", normals, Q)


@njit(cache=True)
def _sweep_numba(out, parent):
    P, N, m = out.shape
    for p in range(P):
        q = parent[p]
        if q < 0:
            continue
        if m == 1:
            s = 0.0
            for i in range(N):
                s += out[p, i, 0] * out[q, i, 0]
            if s < 0:
                for i in range(N):
                    out[p, i, 0] = -out[p, i, 0]
        else:
            mm = out[p].T @ out[q]
            u, _, vt = np.linalg.svd(mm)
            out[p] = out[p] @ (u @ vt)
    return out


def sweep_align_numba(normals, parent):
    return _sweep_numba(np.ascontiguousarray(normals.copy()), parent.astype(np.int64))


def sweep_align(normals, shape):
    """Align normal frames along the lexicographic sweep over a grid of ``shape``."""
    if _accel.USE_NUMBA:
        return sweep_align_numba(normals, sweep_parents(shape))
    return sweep_align_numpy(normals, None, shape)
