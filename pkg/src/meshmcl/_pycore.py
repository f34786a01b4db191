"""NumPy fallback for the compiled kernels in ``_core.pyx``.

Same algorithm and signatures; per-triangle work is vectorized over the
candidate pixels of its image-space bounding box.
"""

import numpy as np

DET_EPS = 1e-12
ORIGIN_EPS = 1e-9


def _seg_dist(a, b):
    d = b - a
    L = d @ d
    s = 0.0 if L == 0.0 else min(max(-(a @ d) / L, 0.0), 1.0)
    p = a + s * d
    return float(np.hypot(p[0], p[1]))


def _rho_min(p2):
    a, b, c = p2
    d1 = (b[0] - a[0]) * (-a[1]) - (b[1] - a[1]) * (-a[0])
    d2 = (c[0] - b[0]) * (-b[1]) - (c[1] - b[1]) * (-b[0])
    d3 = (a[0] - c[0]) * (-c[1]) - (a[1] - c[1]) * (-c[0])
    has_neg = d1 < 0 or d2 < 0 or d3 < 0
    has_pos = d1 > 0 or d2 > 0 or d3 > 0
    if not (has_neg and has_pos):
        return 0.0
    return min(_seg_dist(a, b), _seg_dist(b, c), _seg_dist(c, a))


def _setup_pose(verts, tris, boxes, cand, pose, w, h, min_range, max_range, fov_up, fov):
    R = pose[:9].reshape(3, 3)
    t = pose[9:]
    b = boxes[cand]
    gap = np.maximum(np.maximum(b[:, :3] - t, t - b[:, 3:]), 0.0)
    dist = np.sqrt((gap * gap).sum(axis=1))
    keep = dist <= max_range
    cand, dist = cand[keep], dist[keep]
    setups = []
    half = 0.5 * w
    for tri, dmin in zip(cand, dist):
        p = (verts[tris[tri]] - t) @ R
        if np.sqrt((p * p).sum(axis=1)).max() < min_range:
            continue
        rho = np.hypot(p[:, 0], p[:, 1])
        rho_min = _rho_min(p[:, :2])
        if rho_min <= ORIGIN_EPS:
            c0, c1 = 0, w - 1
        else:
            uu = 0.5 * (1.0 - np.arctan2(p[:, 1], p[:, 0]) / np.pi) * w
            if uu.max() - uu.min() > half:
                uu = np.where(uu < half, uu + w, uu)
            c0 = int(np.floor(uu.min() - 0.5))
            c1 = int(np.ceil(uu.max() - 0.5))
            if c1 - c0 + 1 >= w:
                c0, c1 = 0, w - 1
        zmin, zmax = p[:, 2].min(), p[:, 2].max()
        emax = np.arctan2(zmax, rho_min if zmax > 0.0 else rho.max())
        emin = np.arctan2(zmin, rho_min if zmin < 0.0 else rho.max())
        r0 = max(int(np.floor((1.0 - (emax + fov_up) / fov) * h - 0.5)), 0)
        r1 = min(int(np.ceil((1.0 - (emin + fov_up) / fov) * h - 0.5)), h - 1)
        if r0 > r1:
            continue
        setups.append((dmin, p[0], p[1] - p[0], p[2] - p[0], c0, c1, r0, r1))
    setups.sort(key=lambda s: s[0])
    return setups


def _raster(setups, dirs, w, min_range, max_range, mask, buf):
    flat_dirs = dirs.reshape(-1, 3)
    for dmin, p0, e1, e2, c0, c1, r0, r1 in setups:
        cols = np.arange(c0, c1 + 1) % w
        rows = np.arange(r0, r1 + 1)
        idx = (rows[:, None] * w + cols[None, :]).ravel()
        live = buf[idx] > dmin
        if mask is not None:
            live &= mask[idx].astype(bool)
        idx = idx[live]
        if idx.size == 0:
            continue
        d = flat_dirs[idx]
        q = np.cross(d, e2)
        det = q @ e1
        ok = np.abs(det) >= DET_EPS
        inv = np.zeros_like(det)
        inv[ok] = 1.0 / det[ok]
        bu = (q @ -p0) * inv
        ok &= (bu >= 0.0) & (bu <= 1.0)
        qv = np.cross(-p0, e1)
        bv = (d @ qv) * inv
        ok &= (bv >= 0.0) & (bu + bv <= 1.0)
        tt = (e2 @ qv) * inv
        ok &= (tt >= min_range) & (tt <= max_range) & (tt < buf[idx])
        buf[idx[ok]] = tt[ok]


def render_many(verts, tris, boxes, cand, offsets, pose_group, poses, dirs,
                min_range, max_range, fov_up, fov, out):
    h, w = dirs.shape[:2]
    verts, tris, boxes = np.asarray(verts), np.asarray(tris), np.asarray(boxes)
    cand, offsets = np.asarray(cand), np.asarray(offsets)
    dirs = np.asarray(dirs)
    for i, pose in enumerate(np.asarray(poses)):
        buf = out[i].reshape(-1)
        buf[:] = np.inf
        g = pose_group[i]
        c = cand[offsets[g]:offsets[g + 1]]
        if c.size:
            setups = _setup_pose(verts, tris, boxes, c, pose, w, h,
                                 min_range, max_range, fov_up, fov)
            _raster(setups, dirs, w, min_range, max_range, None, buf)


def score_many(verts, tris, boxes, cand, offsets, pose_group, poses, dirs,
               min_range, max_range, fov_up, fov, scan, scan_valid, sums, counts):
    h, w = dirs.shape[:2]
    verts, tris, boxes = np.asarray(verts), np.asarray(tris), np.asarray(boxes)
    cand, offsets = np.asarray(cand), np.asarray(offsets)
    dirs = np.asarray(dirs)
    scan = np.asarray(scan)
    scan_valid = np.asarray(scan_valid).astype(bool)
    buf = np.empty(h * w)
    for i, pose in enumerate(np.asarray(poses)):
        buf[:] = np.inf
        g = pose_group[i]
        c = cand[offsets[g]:offsets[g + 1]]
        if c.size:
            setups = _setup_pose(verts, tris, boxes, c, pose, w, h,
                                 min_range, max_range, fov_up, fov)
            _raster(setups, dirs, w, min_range, max_range, scan_valid, buf)
        both = scan_valid & np.isfinite(buf)
        sums[i] = np.abs(scan[both] - buf[both]).sum()
        counts[i] = int(both.sum())
