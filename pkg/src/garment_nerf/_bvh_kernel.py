"""Compiled per-point BVH traversal for closest-point queries."""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - optional accelerator
    numba = None

TIE_REL, TIE_ABS = 1e-10, 1e-24

if numba is not None:

    @numba.njit(cache=True, inline="always")
    def _dot(ax, ay, az, bx, by, bz):
        return ax * bx + ay * by + az * bz

    @numba.njit(cache=True)
    def _tri_dist2(px, py, pz, a, b, c):
        abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
        acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
        apx, apy, apz = px - a[0], py - a[1], pz - a[2]
        d1 = _dot(abx, aby, abz, apx, apy, apz)
        d2 = _dot(acx, acy, acz, apx, apy, apz)
        bpx, bpy, bpz = px - b[0], py - b[1], pz - b[2]
        d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
        d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
        cpx, cpy, cpz = px - c[0], py - c[1], pz - c[2]
        d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
        d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        u, v, w = 0.0, 0.0, 0.0
        if d1 <= 0 and d2 <= 0:
            u = 1.0
        elif d3 >= 0 and d4 <= d3:
            v = 1.0
        elif vc <= 0 and d1 >= 0 and d3 <= 0:
            den = d1 - d3
            t = d1 / den if den != 0 else 0.0
            u, v = 1 - t, t
        elif d6 >= 0 and d5 <= d6:
            w = 1.0
        elif vb <= 0 and d2 >= 0 and d6 <= 0:
            den = d2 - d6
            t = d2 / den if den != 0 else 0.0
            u, w = 1 - t, t
        else:
            e43, e56 = d4 - d3, d5 - d6
            if va <= 0 and e43 >= 0 and e56 >= 0:
                den = e43 + e56
                t = e43 / den if den != 0 else 0.0
                v, w = 1 - t, t
            else:
                den = va + vb + vc
                v = vb / den if den != 0 else 0.0
                w = vc / den if den != 0 else 0.0
                u = 1 - v - w
        u, v, w = max(u, 0.0), max(v, 0.0), max(w, 0.0)
        s = u + v + w
        if s > 0:
            u, v, w = u / s, v / s, w / s
        else:
            u, v, w = 1.0, 0.0, 0.0
        qx = u * a[0] + v * b[0] + w * c[0] - px
        qy = u * a[1] + v * b[1] + w * c[1] - py
        qz = u * a[2] + v * b[2] + w * c[2] - pz
        return qx * qx + qy * qy + qz * qz

    @numba.njit(cache=True)
    def _box2(px, py, pz, lo, hi):
        dx = max(0.0, max(lo[0] - px, px - hi[0]))
        dy = max(0.0, max(lo[1] - py, py - hi[1]))
        dz = max(0.0, max(lo[2] - pz, pz - hi[2]))
        return dx * dx + dy * dy + dz * dz

    @numba.njit(cache=True)
    def _traverse(px, py, pz, bound, pick_lowest, init_t, lo, hi, left, right, start, count, tri_ids, verts, tris, stack):
        """pick_lowest=False: minimum squared distance. True: lowest triangle index within `bound`."""
        best = bound
        best_t = init_t
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box2(px, py, pz, lo[node], hi[node]) > best:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    t = tri_ids[k]
                    if pick_lowest and best_t >= 0 and t >= best_t:
                        continue
                    tv = tris[t]
                    d2 = _tri_dist2(px, py, pz, verts[tv[0]], verts[tv[1]], verts[tv[2]])
                    if pick_lowest:
                        if d2 <= bound and (best_t < 0 or t < best_t):
                            best_t = t
                    elif d2 <= best:
                        best = d2
                        best_t = t
            else:
                l, r = left[node], right[node]
                dl = _box2(px, py, pz, lo[l], hi[l])
                dr = _box2(px, py, pz, lo[r], hi[r])
                # push the farther child first so the nearer one is visited next
                if dl <= dr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
        return best, best_t

    @numba.njit(cache=True)
    def nearest_triangles(pts, upper2, lo, hi, left, right, start, count, tri_ids, verts, tris):
        """Closest triangle per point; `upper2` is a valid upper bound on each squared distance."""
        n = pts.shape[0]
        out = np.empty(n, dtype=np.int64)
        stack = np.empty(256, dtype=np.int64)
        for i in range(n):
            px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
            d2, t0 = _traverse(px, py, pz, upper2[i], False, -1, lo, hi, left, right, start, count, tri_ids, verts,
                              tris, stack)
            bound = d2 * (1 + TIE_REL) + TIE_ABS
            # any lower-indexed triangle within the tie tolerance wins
            _, t = _traverse(px, py, pz, bound, True, t0, lo, hi, left, right, start, count, tri_ids, verts,
                             tris, stack)
            out[i] = t
        return out

else:
    nearest_triangles = None
