"""Vectorized simplex helpers: measures, frames, subdivision and clipping.

Simplices are stored as arrays ``(F, k + 1, d)`` with k in {1, 2} the
simplex dimension and d the ambient dimension.
"""
from __future__ import annotations

import numpy as np

Array = np.ndarray


def frames(verts: Array) -> Array:
    """Euclidean-orthonormal tangent frames ``(F, k, d)`` by Gram-Schmidt on the edges from vertex 0."""
    e1 = verts[:, 1] - verts[:, 0]
    t1 = e1 / np.linalg.norm(e1, axis=1)[:, None]
    if verts.shape[1] == 2:
        return t1[:, None, :]
    e2 = verts[:, 2] - verts[:, 0]
    e2 = e2 - np.sum(e2 * t1, axis=1)[:, None] * t1
    t2 = e2 / np.linalg.norm(e2, axis=1)[:, None]
    return np.stack([t1, t2], axis=1)


def measures(verts: Array) -> Array:
    """Euclidean k-measure of each simplex."""
    e1 = verts[:, 1] - verts[:, 0]
    if verts.shape[1] == 2:
        return np.linalg.norm(e1, axis=1)
    e2 = verts[:, 2] - verts[:, 0]
    g11 = np.sum(e1 * e1, axis=1)
    g22 = np.sum(e2 * e2, axis=1)
    g12 = np.sum(e1 * e2, axis=1)
    return 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))


def projectors(frame: Array) -> Array:
    """Orthogonal projectors onto the spans of Euclidean-orthonormal frames."""
    return np.einsum("fia,fib->fab", frame, frame)


def subdivide(verts: Array, m: int) -> tuple[Array, Array]:
    """Split each simplex into m^k congruent pieces.

    Returns the sub-simplices ``(F, m^k, k + 1, d)``; the second output maps
    each sub-simplex back to its parent index.
    """
    f, kp1, d = verts.shape
    if m == 1:
        return verts[:, None], np.arange(f)
    if kp1 == 2:
        s = np.linspace(0.0, 1.0, m + 1)
        a = verts[:, None, 0] + s[None, :-1, None] * (verts[:, None, 1] - verts[:, None, 0])
        b = verts[:, None, 0] + s[None, 1:, None] * (verts[:, None, 1] - verts[:, None, 0])
        return np.stack([a, b], axis=2), np.repeat(np.arange(f), m)
    # barycentric lattice for triangles
    bary = []
    for i in range(m):
        for j in range(m - i):
            bary.append([(i, j), (i + 1, j), (i, j + 1)])
            if j < m - i - 1:
                bary.append([(i + 1, j), (i + 1, j + 1), (i, j + 1)])
    lam = np.array(bary, dtype=float) / m  # (m^2, 3, 2) weights of vertices 1 and 2
    w0 = 1.0 - lam[..., 0] - lam[..., 1]
    sub = (
        w0[None, :, :, None] * verts[:, None, None, 0]
        + lam[None, :, :, 0, None] * verts[:, None, None, 1]
        + lam[None, :, :, 1, None] * verts[:, None, None, 2]
    )
    return sub, np.repeat(np.arange(f), m * m)


def segment_ball_measure(verts: Array, center: Array, r: float) -> Array:
    """Exact length of segments inside a closed ball."""
    a = verts[:, 0] - center
    d = verts[:, 1] - verts[:, 0]
    dd = np.sum(d * d, axis=1)
    ad = np.sum(a * d, axis=1)
    aa = np.sum(a * a, axis=1)
    disc = ad * ad - dd * (aa - r * r)
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = np.clip((-ad - root) / dd, 0.0, 1.0)
    t1 = np.clip((-ad + root) / dd, 0.0, 1.0)
    frac = np.where(disc > 0, t1 - t0, 0.0)
    return frac * np.sqrt(dd)


def _edge_disc_area(p: Array, q: Array, rad: Array) -> Array:
    """Signed area of the disc of radius ``rad`` at 0 intersected with triangle (0, p, q)."""
    d = q - p
    dd = np.sum(d * d, axis=-1)
    pd = np.sum(p * d, axis=-1)
    pp = np.sum(p * p, axis=-1)
    disc = pd * pd - dd * (pp - rad * rad)
    safe_dd = np.where(dd > 0, dd, 1.0)
    root = np.sqrt(np.maximum(disc, 0.0))
    hit = (disc > 0) & (dd > 0)
    t0 = np.where(hit, np.clip((-pd - root) / safe_dd, 0.0, 1.0), 0.0)
    t1 = np.where(hit, np.clip((-pd + root) / safe_dd, 0.0, 1.0), 0.0)
    p1 = p + t0[..., None] * d
    p2 = p + t1[..., None] * d

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    def sector(u, v):
        ang = np.arctan2(cross(u, v), np.sum(u * v, axis=-1))
        return 0.5 * rad * rad * ang

    # outside piece p -> p1, inside piece p1 -> p2, outside piece p2 -> q
    return sector(p, p1) + 0.5 * cross(p1, p2) + sector(p2, q)


def triangle_ball_measure(verts: Array, center: Array, r: float) -> Array:
    """Exact area of triangles in R^3 inside a closed ball."""
    fr = frames(verts)
    normal = np.cross(fr[:, 0], fr[:, 1])
    rel = verts - center
    dist = np.sum(rel[:, 0] * normal, axis=1)
    rad2 = r * r - dist * dist
    out = np.zeros(verts.shape[0])
    live = rad2 > 0
    if not np.any(live):
        return out
    rad = np.sqrt(rad2[live])
    # in-plane coordinates relative to the projected centre
    proj = rel[live] - dist[live, None, None] * normal[live, None, :]
    uv = np.einsum("fvd,fkd->fvk", proj, fr[live])
    total = np.zeros(uv.shape[0])
    for i in range(3):
        total += _edge_disc_area(uv[:, i], uv[:, (i + 1) % 3], rad)
    out[live] = np.abs(total)
    return out


def ball_measure(verts: Array, center, r: float) -> Array:
    """Exact Euclidean measure of each simplex inside the closed ball B_r(center)."""
    center = np.asarray(center, dtype=float)
    if verts.shape[0] == 0:
        return np.zeros(0)
    if verts.shape[1] == 2:
        return segment_ball_measure(verts, center, r)
    return triangle_ball_measure(verts, center, r)


def clip_halfspace(verts: Array, normal, offset: float) -> tuple[Array, Array]:
    """Pieces of simplices inside ``{x : normal . x > offset}``.

    Returns sub-simplices and their parent indices; triangles cut into a
    quadrilateral come back as two triangles.
    """
    normal = np.asarray(normal, dtype=float)
    lv = verts @ normal - offset
    pos = lv > 0
    npos = pos.sum(axis=1)
    f = verts.shape[0]
    idx = np.arange(f)
    pieces = [verts[npos == verts.shape[1]]]
    parents = [idx[npos == verts.shape[1]]]

    def cut(a, b, la, lb):
        t = la / (la - lb)
        return a + t[:, None] * (b - a)

    if verts.shape[1] == 2:
        sel = npos == 1
        if np.any(sel):
            v, l_ = verts[sel], lv[sel]
            first_pos = pos[sel, 0]
            inner = np.where(first_pos[:, None], v[:, 0], v[:, 1])
            p = cut(v[:, 0], v[:, 1], l_[:, 0], l_[:, 1])
            pieces.append(np.stack([inner, p], axis=1))
            parents.append(idx[sel])
        return np.concatenate(pieces), np.concatenate(parents)

    for count in (1, 2):
        sel = npos == count
        if not np.any(sel):
            continue
        v, l_, ps = verts[sel], lv[sel], pos[sel]
        # rotate vertex order so that the odd vertex comes first
        odd = np.argmax(ps if count == 1 else ~ps, axis=1)
        order = (odd[:, None] + np.arange(3)[None, :]) % 3
        v = np.take_along_axis(v, order[:, :, None], axis=1)
        l_ = np.take_along_axis(l_, order, axis=1)
        p1 = cut(v[:, 0], v[:, 1], l_[:, 0], l_[:, 1])
        p2 = cut(v[:, 0], v[:, 2], l_[:, 0], l_[:, 2])
        if count == 1:
            pieces.append(np.stack([v[:, 0], p1, p2], axis=1))
            parents.append(idx[sel])
        else:
            pieces.append(np.stack([p1, v[:, 1], v[:, 2]], axis=1))
            pieces.append(np.stack([p1, v[:, 2], p2], axis=1))
            parents.append(idx[sel])
            parents.append(idx[sel])
    return np.concatenate(pieces), np.concatenate(parents)


def clip_slab(verts: Array, axis_normal, low: float, high: float) -> tuple[Array, Array]:
    """Pieces of simplices with ``low < normal . x < high``."""
    normal = np.asarray(axis_normal, dtype=float)
    a, pa = clip_halfspace(verts, normal, low)
    b, pb = clip_halfspace(a, -normal, -high)
    return b, pa[pb]
