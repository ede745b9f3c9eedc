# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Mirrors ``_numpy_impl`` function for function.  Kernels that feed integer
decisions (block matching, diffusion, bilinear taps) replicate the numpy
operation order exactly so both backends are bit-identical; the matmul-style
kernels (correlation, attention) agree to float tolerance.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, floor, fabs

cnp.import_array()


def bilinear_sample_px(double[:, :, ::1] src, double[::1] px, double[::1] py):
    cdef Py_ssize_t c = src.shape[0], h = src.shape[1], w = src.shape[2]
    cdef Py_ssize_t n = px.shape[0]
    out_arr = np.zeros((c, n), np.float64)
    valid_arr = np.zeros(n, np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef unsigned char[::1] valid = valid_arr
    cdef Py_ssize_t i, ch, x0, y0
    cdef double x, y, cx, cy, fx, fy, w00, w01, w10, w11
    for i in range(n):
        x = px[i]
        y = py[i]
        if x >= 0.0 and x <= w - 1.0 and y >= 0.0 and y <= h - 1.0:
            valid[i] = 1
            cx = x
            cy = y
        else:
            # clip like the reference; the result is zeroed anyway
            cx = min(max(x, 0.0), w - 1.0)
            cy = min(max(y, 0.0), h - 1.0)
        x0 = <Py_ssize_t>floor(cx)
        if x0 > w - 2:
            x0 = w - 2
        if x0 < 0:
            x0 = 0
        y0 = <Py_ssize_t>floor(cy)
        if y0 > h - 2:
            y0 = h - 2
        if y0 < 0:
            y0 = 0
        fx = cx - x0
        fy = cy - y0
        if valid[i]:
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            for ch in range(c):
                out[ch, i] = (w00 * src[ch, y0, x0] + w01 * src[ch, y0, x0 + 1]
                              + w10 * src[ch, y0 + 1, x0]
                              + w11 * src[ch, y0 + 1, x0 + 1])
    return out_arr, valid_arr


def bilinear_sample_grad_px(double[:, :, ::1] src, double[::1] px,
                            double[::1] py):
    cdef Py_ssize_t c = src.shape[0], h = src.shape[1], w = src.shape[2]
    cdef Py_ssize_t n = px.shape[0]
    out_arr = np.zeros((c, n), np.float64)
    gx_arr = np.zeros((c, n), np.float64)
    gy_arr = np.zeros((c, n), np.float64)
    valid_arr = np.zeros(n, np.uint8)
    cdef double[:, ::1] out = out_arr, gx = gx_arr, gy = gy_arr
    cdef unsigned char[::1] valid = valid_arr
    cdef Py_ssize_t i, ch, x0, y0
    cdef double x, y, fx, fy, s00, s01, s10, s11
    for i in range(n):
        x = px[i]
        y = py[i]
        if not (x >= 0.0 and x <= w - 1.0 and y >= 0.0 and y <= h - 1.0):
            continue
        valid[i] = 1
        x0 = <Py_ssize_t>floor(x)
        if x0 > w - 2:
            x0 = w - 2
        if x0 < 0:
            x0 = 0
        y0 = <Py_ssize_t>floor(y)
        if y0 > h - 2:
            y0 = h - 2
        if y0 < 0:
            y0 = 0
        fx = x - x0
        fy = y - y0
        for ch in range(c):
            s00 = src[ch, y0, x0]
            s01 = src[ch, y0, x0 + 1]
            s10 = src[ch, y0 + 1, x0]
            s11 = src[ch, y0 + 1, x0 + 1]
            out[ch, i] = ((1.0 - fy) * (1.0 - fx) * s00 + (1.0 - fy) * fx * s01
                          + fy * (1.0 - fx) * s10 + fy * fx * s11)
            gx[ch, i] = (1.0 - fy) * (s01 - s00) + fy * (s11 - s10)
            gy[ch, i] = (1.0 - fx) * (s10 - s00) + fx * (s11 - s01)
    return out_arr, gx_arr, gy_arr, valid_arr


def masked_correlation(double[:, ::1] fr, double[:, ::1] ft,
                       unsigned char[::1] mr, unsigned char[::1] mt):
    cdef Py_ssize_t c = fr.shape[0], n = fr.shape[1], m = ft.shape[1]
    out_arr = np.zeros((n, m), np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, ch
    cdef double acc
    for i in range(n):
        if not mr[i]:
            continue
        for j in range(m):
            if not mt[j]:
                continue
            acc = 0.0
            for ch in range(c):
                acc += fr[ch, i] * ft[ch, j]
            out[i, j] = acc
    return out_arr


def softmax_columns(double[:, ::1] scores, unsigned char[::1] row_valid,
                    double temperature):
    cdef Py_ssize_t r = scores.shape[0], c = scores.shape[1]
    out_arr = np.zeros((r, c), np.float64)
    col_arr = np.zeros(c, np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef unsigned char[::1] col_valid = col_arr
    cdef Py_ssize_t i, j
    cdef double m, s, total
    cdef bint any_valid = False
    for i in range(r):
        if row_valid[i]:
            any_valid = True
            break
    if not any_valid:
        return out_arr, col_arr
    for j in range(c):
        col_valid[j] = 1
        m = -INFINITY
        for i in range(r):
            if row_valid[i]:
                s = scores[i, j] / temperature
                if s > m:
                    m = s
        total = 0.0
        for i in range(r):
            if row_valid[i]:
                out[i, j] = exp(scores[i, j] / temperature - m)
                total += out[i, j]
        for i in range(r):
            if row_valid[i]:
                out[i, j] /= total
    return out_arr, col_arr


def attention_weights(double[:, ::1] q, double[:, ::1] k,
                      unsigned char[::1] key_valid,
                      unsigned char[::1] query_sel, double temperature):
    cdef Py_ssize_t c = q.shape[0], nq = q.shape[1], nk = k.shape[1]
    out_arr = np.zeros((nq, nk), np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, ch
    cdef double m, s, total
    cdef bint any_key = False
    for j in range(nk):
        if key_valid[j]:
            any_key = True
            break
    if not any_key:
        return out_arr
    score_buf = np.empty(nk, np.float64)
    cdef double[::1] sc = score_buf
    for i in range(nq):
        if not query_sel[i]:
            continue
        m = -INFINITY
        for j in range(nk):
            if key_valid[j]:
                s = 0.0
                for ch in range(c):
                    s += q[ch, i] * k[ch, j]
                s /= temperature
                sc[j] = s
                if s > m:
                    m = s
        total = 0.0
        for j in range(nk):
            if key_valid[j]:
                out[i, j] = exp(sc[j] - m)
                total += out[i, j]
        for j in range(nk):
            if key_valid[j]:
                out[i, j] /= total
    return out_arr


def attention_residual(double[:, ::1] q, double[:, ::1] k, double[:, ::1] v,
                       unsigned char[::1] key_valid,
                       unsigned char[::1] query_sel, double temperature):
    cdef Py_ssize_t c = q.shape[0], nq = q.shape[1], nk = k.shape[1]
    res_arr = np.zeros((c, nq), np.float64)
    ref_arr = np.zeros(nq, np.uint8)
    cdef double[:, ::1] res = res_arr
    cdef unsigned char[::1] refined = ref_arr
    cdef Py_ssize_t i, j, ch
    cdef double m, s, total, wj
    cdef bint any_key = False
    for j in range(nk):
        if key_valid[j]:
            any_key = True
            break
    if not any_key:
        return res_arr, ref_arr
    score_buf = np.empty(nk, np.float64)
    cdef double[::1] sc = score_buf
    for i in range(nq):
        if not query_sel[i]:
            continue
        refined[i] = 1
        m = -INFINITY
        for j in range(nk):
            if key_valid[j]:
                s = 0.0
                for ch in range(c):
                    s += q[ch, i] * k[ch, j]
                s /= temperature
                sc[j] = s
                if s > m:
                    m = s
        total = 0.0
        for j in range(nk):
            if key_valid[j]:
                sc[j] = exp(sc[j] - m)
                total += sc[j]
        for j in range(nk):
            if key_valid[j]:
                wj = sc[j] / total
                for ch in range(c):
                    res[ch, i] += wj * v[ch, j]
    return res_arr, ref_arr


def block_match(double[:, :, ::1] cur, double[:, :, ::1] prev,
                long[:, ::1] base_u, long[:, ::1] base_v,
                int radius, int win, int min_count):
    cdef Py_ssize_t ch = cur.shape[0], h = cur.shape[1], w = cur.shape[2]
    cdef int hw = win // 2
    du_arr = np.zeros((h, w), np.int64)
    dv_arr = np.zeros((h, w), np.int64)
    cdef long[:, ::1] du = du_arr
    cdef long[:, ::1] dv = dv_arr
    cdef Py_ssize_t y, x, cc
    cdef int dy, dx, wy, wx, ty, tx, sy, sx, bu, bv
    cdef long cnt, tu, tv, tot2, best_tot2, best_dy, best_dx
    cdef long big = 0x7fffffffffffffff
    cdef double ssd, diff2, d, cost, best_cost
    for y in range(h):
        for x in range(w):
            bu = <int>base_u[y, x]
            bv = <int>base_v[y, x]
            best_cost = INFINITY
            best_tot2 = big
            best_dy = 0
            best_dx = 0
            # lexicographic (cost, |total|^2, index) minimum; the first
            # candidate in index order wins exact ties
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    ssd = 0.0
                    cnt = 0
                    for wy in range(win):
                        for wx in range(win):
                            ty = <int>y + wy - hw
                            tx = <int>x + wx - hw
                            sy = ty + bv + dy
                            sx = tx + bu + dx
                            diff2 = 0.0
                            if (0 <= ty < <int>h and 0 <= tx < <int>w
                                    and 0 <= sy < <int>h and 0 <= sx < <int>w):
                                for cc in range(ch):
                                    d = cur[cc, ty, tx] - prev[cc, sy, sx]
                                    diff2 = diff2 + d * d
                                cnt = cnt + 1
                            ssd = ssd + diff2
                    if cnt >= min_count:
                        cost = ssd / cnt
                    else:
                        cost = INFINITY
                    tu = bu + dx
                    tv = bv + dy
                    tot2 = tu * tu + tv * tv
                    if cost < best_cost or (cost == best_cost
                                            and tot2 < best_tot2):
                        best_cost = cost
                        best_tot2 = tot2
                        best_dy = dy
                        best_dx = dx
            du[y, x] = best_dx
            dv[y, x] = best_dy
    return du_arr, dv_arr


def diffusion_fill(double[:, :, ::1] values, unsigned char[:, ::1] known,
                   double init, double tol, int max_iters):
    cdef Py_ssize_t c = values.shape[0], h = values.shape[1], w = values.shape[2]
    out_arr = np.array(values, np.float64, copy=True)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, y, x
    cdef bint any_unknown = False
    for y in range(h):
        for x in range(w):
            if not known[y, x]:
                any_unknown = True
                for ch in range(c):
                    out[ch, y, x] = init
    if not any_unknown:
        return out_arr

    # fixed neighbour order shared with the reference implementation
    cdef int[8] noy = [-1, -1, -1, 0, 0, 1, 1, 1]
    cdef int[8] nox = [-1, 0, 1, -1, 1, -1, 0, 1]
    cnt_arr = np.zeros((h, w), np.float64)
    cdef double[:, ::1] cnt = cnt_arr
    cdef int k, ny, nx
    for y in range(h):
        for x in range(w):
            for k in range(8):
                ny = <int>y + noy[k]
                nx = <int>x + nox[k]
                if 0 <= ny < <int>h and 0 <= nx < <int>w:
                    cnt[y, x] += 1.0

    prev_arr = np.empty_like(out_arr)
    new_arr = np.empty_like(out_arr)
    cdef double[:, :, ::1] prev = prev_arr
    cdef double[:, :, ::1] new = new_arr
    cdef double acc, delta, dv_, nb
    cdef int it
    for it in range(max_iters):
        prev_arr[...] = out_arr
        delta = 0.0
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for k in range(8):
                        ny = <int>y + noy[k]
                        nx = <int>x + nox[k]
                        if 0 <= ny < <int>h and 0 <= nx < <int>w:
                            nb = prev[ch, ny, nx]
                        else:
                            nb = 0.0
                        acc = acc + nb
                    new[ch, y, x] = acc / cnt[y, x]
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    if not known[y, x]:
                        dv_ = fabs(new[ch, y, x] - out[ch, y, x])
                        if dv_ > delta:
                            delta = dv_
                        out[ch, y, x] = new[ch, y, x]
        if delta < tol:
            break
    return out_arr
