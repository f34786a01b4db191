# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rasterization kernels.

Both entry points share one per-pose routine: cull triangles against the
range window, bound each survivor in image space, then run an exact
ray/triangle test at every candidate pixel center.  ``_pycore`` mirrors
these signatures in NumPy.
"""

from libc.math cimport atan2, sqrt, floor, ceil, fabs, INFINITY, M_PI
from libc.stdlib cimport malloc, free, qsort

import numpy as np

cdef double DET_EPS = 1e-12
cdef double ORIGIN_EPS = 1e-9


cdef struct Setup:
    # with the ray origin at the sensor every Moller-Trumbore cross product
    # is a per-triangle constant: det = d.m, u = d.b / det, v = d.q / det
    double mx, my, mz
    double bx, by, bz
    double qx, qy, qz
    double tnum
    double dmin
    int c0, c1, r0, r1


cdef int _cmp_setup(const void* a, const void* b) noexcept nogil:
    cdef double da = (<const Setup*>a).dmin
    cdef double db = (<const Setup*>b).dmin
    if da < db:
        return -1
    if da > db:
        return 1
    return 0


cdef inline double _seg_dist2(double ax, double ay, double bx, double by) noexcept nogil:
    # squared distance from the origin to segment ab
    cdef double dx = bx - ax, dy = by - ay
    cdef double L = dx * dx + dy * dy
    cdef double s = 0.0
    if L > 0.0:
        s = -(ax * dx + ay * dy) / L
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    cdef double px = ax + s * dx, py = ay + s * dy
    return px * px + py * py


cdef inline double _rho_min(double ax, double ay, double bx, double by,
                            double cx, double cy) noexcept nogil:
    """Distance from the origin to a 2-D triangle (0 when inside)."""
    cdef double d1 = (bx - ax) * (-ay) - (by - ay) * (-ax)
    cdef double d2 = (cx - bx) * (-by) - (cy - by) * (-bx)
    cdef double d3 = (ax - cx) * (-cy) - (ay - cy) * (-cx)
    cdef bint has_neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    cdef bint has_pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    if not (has_neg and has_pos):
        return 0.0
    cdef double m = _seg_dist2(ax, ay, bx, by)
    cdef double t = _seg_dist2(bx, by, cx, cy)
    if t < m:
        m = t
    t = _seg_dist2(cx, cy, ax, ay)
    if t < m:
        m = t
    return sqrt(m)


cdef int _setup_pose(const double[:, ::1] verts, const int[:, ::1] tris,
                     const double[:, ::1] boxes, const int* cand, Py_ssize_t ncand,
                     const double* pose, int w, int h, double min_range,
                     double max_range, double fov_up, double fov,
                     Setup* out) noexcept nogil:
    cdef Py_ssize_t k, tri
    cdef int n = 0, j
    cdef double tx = pose[9], ty = pose[10], tz = pose[11]
    cdef double dx, dy, dz, dist, gx, gy, gz
    cdef double px[3]
    cdef double py[3]
    cdef double pz[3]
    cdef double uu[3]
    cdef double rmax2, rho, rho_max, rho_min, zmin, zmax, umin, umax, emax, emin, half
    cdef double e1x, e1y, e1z, e2x, e2y, e2z
    cdef Setup* s
    half = 0.5 * w
    for k in range(ncand):
        tri = cand[k]
        # distance from the sensor to the triangle's world AABB
        dx = boxes[tri, 0] - tx
        if tx - boxes[tri, 3] > dx:
            dx = tx - boxes[tri, 3]
        if dx < 0.0:
            dx = 0.0
        dy = boxes[tri, 1] - ty
        if ty - boxes[tri, 4] > dy:
            dy = ty - boxes[tri, 4]
        if dy < 0.0:
            dy = 0.0
        dz = boxes[tri, 2] - tz
        if tz - boxes[tri, 5] > dz:
            dz = tz - boxes[tri, 5]
        if dz < 0.0:
            dz = 0.0
        dist = sqrt(dx * dx + dy * dy + dz * dz)
        if dist > max_range:
            continue
        rmax2 = 0.0
        rho_max = 0.0
        for j in range(3):
            gx = verts[tris[tri, j], 0] - tx
            gy = verts[tris[tri, j], 1] - ty
            gz = verts[tris[tri, j], 2] - tz
            # sensor frame: R^T (v - t), pose holds R row-major
            px[j] = pose[0] * gx + pose[3] * gy + pose[6] * gz
            py[j] = pose[1] * gx + pose[4] * gy + pose[7] * gz
            pz[j] = pose[2] * gx + pose[5] * gy + pose[8] * gz
            if px[j] * px[j] + py[j] * py[j] + pz[j] * pz[j] > rmax2:
                rmax2 = px[j] * px[j] + py[j] * py[j] + pz[j] * pz[j]
            rho = sqrt(px[j] * px[j] + py[j] * py[j])
            if rho > rho_max:
                rho_max = rho
        if sqrt(rmax2) < min_range:
            continue
        s = &out[n]
        e1x = px[1] - px[0]; e1y = py[1] - py[0]; e1z = pz[1] - pz[0]
        e2x = px[2] - px[0]; e2y = py[2] - py[0]; e2z = pz[2] - pz[0]
        s.mx = e2y * e1z - e2z * e1y
        s.my = e2z * e1x - e2x * e1z
        s.mz = e2x * e1y - e2y * e1x
        s.bx = py[0] * e2z - pz[0] * e2y
        s.by = pz[0] * e2x - px[0] * e2z
        s.bz = px[0] * e2y - py[0] * e2x
        s.qx = e1y * pz[0] - e1z * py[0]
        s.qy = e1z * px[0] - e1x * pz[0]
        s.qz = e1x * py[0] - e1y * px[0]
        s.tnum = e2x * s.qx + e2y * s.qy + e2z * s.qz
        s.dmin = dist

        rho_min = _rho_min(px[0], py[0], px[1], py[1], px[2], py[2])
        if rho_min <= ORIGIN_EPS:
            s.c0 = 0
            s.c1 = w - 1
        else:
            for j in range(3):
                uu[j] = 0.5 * (1.0 - atan2(py[j], px[j]) / M_PI) * w
            umin = uu[0]; umax = uu[0]
            for j in range(1, 3):
                if uu[j] < umin:
                    umin = uu[j]
                if uu[j] > umax:
                    umax = uu[j]
            if umax - umin > half:
                # seam-crossing: shift the left-hand vertices by one turn
                for j in range(3):
                    if uu[j] < half:
                        uu[j] += w
                umin = uu[0]; umax = uu[0]
                for j in range(1, 3):
                    if uu[j] < umin:
                        umin = uu[j]
                    if uu[j] > umax:
                        umax = uu[j]
            s.c0 = <int>floor(umin - 0.5)
            s.c1 = <int>ceil(umax - 0.5)
            if s.c1 - s.c0 + 1 >= w:
                s.c0 = 0
                s.c1 = w - 1

        zmin = pz[0]; zmax = pz[0]
        for j in range(1, 3):
            if pz[j] < zmin:
                zmin = pz[j]
            if pz[j] > zmax:
                zmax = pz[j]
        emax = atan2(zmax, rho_min if zmax > 0.0 else rho_max)
        emin = atan2(zmin, rho_min if zmin < 0.0 else rho_max)
        s.r0 = <int>floor((1.0 - (emax + fov_up) / fov) * h - 0.5)
        s.r1 = <int>ceil((1.0 - (emin + fov_up) / fov) * h - 0.5)
        if s.r0 < 0:
            s.r0 = 0
        if s.r1 > h - 1:
            s.r1 = h - 1
        if s.r0 > s.r1:
            continue
        n += 1
    qsort(out, n, sizeof(Setup), _cmp_setup)
    return n


cdef void _raster(const Setup* setups, int n, const double[:, :, ::1] dirs,
                  int w, double min_range, double max_range,
                  const unsigned char* mask, double* buf) noexcept nogil:
    cdef int i, r, cc, c
    cdef Py_ssize_t idx
    cdef const Setup* s
    cdef double dx, dy, dz, det, adet, sgn, bu, bv, t
    for i in range(n):
        s = &setups[i]
        for r in range(s.r0, s.r1 + 1):
            for cc in range(s.c0, s.c1 + 1):
                c = cc
                if c >= w:
                    c -= w
                elif c < 0:
                    c += w
                idx = <Py_ssize_t>r * w + c
                if mask != NULL and mask[idx] == 0:
                    continue
                if buf[idx] <= s.dmin:
                    continue
                dx = dirs[r, c, 0]; dy = dirs[r, c, 1]; dz = dirs[r, c, 2]
                det = dx * s.mx + dy * s.my + dz * s.mz
                if fabs(det) < DET_EPS:
                    continue
                # barycentric tests on numerators scaled by sign(det), one division per hit
                sgn = 1.0 if det > 0.0 else -1.0
                bu = (dx * s.bx + dy * s.by + dz * s.bz) * sgn
                adet = det * sgn
                if bu < 0.0 or bu > adet:
                    continue
                bv = (dx * s.qx + dy * s.qy + dz * s.qz) * sgn
                if bv < 0.0 or bu + bv > adet:
                    continue
                t = s.tnum / det
                if t >= min_range and t <= max_range and t < buf[idx]:
                    buf[idx] = t


def render_many(const double[:, ::1] verts, const int[:, ::1] tris,
                const double[:, ::1] boxes, const int[::1] cand,
                const Py_ssize_t[::1] offsets, const int[::1] pose_group,
                const double[:, ::1] poses, const double[:, :, ::1] dirs,
                double min_range, double max_range, double fov_up, double fov,
                double[:, :, ::1] out):
    """Render one range buffer per pose into ``out`` (inf = no return)."""
    cdef int h = dirs.shape[0], w = dirs.shape[1]
    cdef Py_ssize_t n = poses.shape[0], i, p, g, maxc = 0
    cdef int ns
    cdef Setup* work
    for g in range(offsets.shape[0] - 1):
        if offsets[g + 1] - offsets[g] > maxc:
            maxc = offsets[g + 1] - offsets[g]
    work = <Setup*>malloc((maxc + 1) * sizeof(Setup))
    if work == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                for p in range(h * w):
                    (&out[i, 0, 0])[p] = INFINITY
                g = pose_group[i]
                if offsets[g + 1] > offsets[g]:
                    ns = _setup_pose(verts, tris, boxes, &cand[offsets[g]],
                                     offsets[g + 1] - offsets[g], &poses[i, 0], w, h,
                                     min_range, max_range, fov_up, fov, work)
                    _raster(work, ns, dirs, w, min_range, max_range, NULL, &out[i, 0, 0])
    finally:
        free(work)


def score_many(const double[:, ::1] verts, const int[:, ::1] tris,
               const double[:, ::1] boxes, const int[::1] cand,
               const Py_ssize_t[::1] offsets, const int[::1] pose_group,
               const double[:, ::1] poses, const double[:, :, ::1] dirs,
               double min_range, double max_range, double fov_up, double fov,
               const double[::1] scan, const unsigned char[::1] scan_valid,
               double[::1] sums, long long[::1] counts):
    """Fused render + absolute difference against ``scan`` for each pose.

    Only pixels valid in the scan are rasterized; ``sums``/``counts`` receive
    the summed absolute difference and the number of mutually valid pixels.
    """
    cdef int h = dirs.shape[0], w = dirs.shape[1]
    cdef Py_ssize_t n = poses.shape[0], i, p, g, maxc = 0
    cdef int ns
    cdef double acc
    cdef long long cnt
    cdef Setup* work
    cdef double* buf
    for g in range(offsets.shape[0] - 1):
        if offsets[g + 1] - offsets[g] > maxc:
            maxc = offsets[g + 1] - offsets[g]
    work = <Setup*>malloc((maxc + 1) * sizeof(Setup))
    buf = <double*>malloc(h * w * sizeof(double))
    if work == NULL or buf == NULL:
        free(work)
        free(buf)
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                for p in range(h * w):
                    buf[p] = INFINITY
                g = pose_group[i]
                if offsets[g + 1] > offsets[g]:
                    ns = _setup_pose(verts, tris, boxes, &cand[offsets[g]],
                                     offsets[g + 1] - offsets[g], &poses[i, 0], w, h,
                                     min_range, max_range, fov_up, fov, work)
                    _raster(work, ns, dirs, w, min_range, max_range, &scan_valid[0], buf)
                acc = 0.0
                cnt = 0
                for p in range(h * w):
                    if scan_valid[p] and buf[p] < INFINITY:
                        acc += fabs(scan[p] - buf[p])
                        cnt += 1
                sums[i] = acc
                counts[i] = cnt
    finally:
        free(work)
        free(buf)
