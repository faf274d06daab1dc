# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the convolution and splat inner loops.

Same contracts as numpy_backend; results agree to floating-point noise
(summation order differs, so cross-backend equality is approximate while
each backend on its own is bit-deterministic).
"""

import numpy as np

cimport numpy as cnp

NAME = "cython"


def conv2d_forward(x, w):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, :, ::1] wv = w
    cdef Py_ssize_t ci = xv.shape[0], h = xv.shape[1], wd = xv.shape[2]
    cdef Py_ssize_t co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out = np.zeros((co, h, wd))
    cdef double[:, :, ::1] yv = out
    cdef Py_ssize_t o, c, di, dj, i, j, ilo, ihi, jlo, jhi
    cdef double wval
    with nogil:
        for o in range(co):
            for c in range(ci):
                for di in range(kh):
                    ilo = ph - di if ph - di > 0 else 0
                    ihi = h + ph - di if h + ph - di < h else h
                    for dj in range(kw):
                        jlo = pw - dj if pw - dj > 0 else 0
                        jhi = wd + pw - dj if wd + pw - dj < wd else wd
                        wval = wv[o, c, di, dj]
                        for i in range(ilo, ihi):
                            for j in range(jlo, jhi):
                                yv[o, i, j] += wval * xv[c, i + di - ph, j + dj - pw]
    return out


def conv2d_grad_input(w, gy):
    w = np.ascontiguousarray(w, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = w
    cdef double[:, :, ::1] gv = gy
    cdef Py_ssize_t co = wv.shape[0], ci = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t h = gv.shape[1], wd = gv.shape[2]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out = np.zeros((ci, h, wd))
    cdef double[:, :, ::1] xv = out
    cdef Py_ssize_t o, c, di, dj, i, j, ilo, ihi, jlo, jhi
    cdef double wval
    with nogil:
        for o in range(co):
            for c in range(ci):
                for di in range(kh):
                    ilo = ph - di if ph - di > 0 else 0
                    ihi = h + ph - di if h + ph - di < h else h
                    for dj in range(kw):
                        jlo = pw - dj if pw - dj > 0 else 0
                        jhi = wd + pw - dj if wd + pw - dj < wd else wd
                        wval = wv[o, c, di, dj]
                        for i in range(ilo, ihi):
                            for j in range(jlo, jhi):
                                xv[c, i + di - ph, j + dj - pw] += wval * gv[o, i, j]
    return out


def conv2d_grad_weight(x, gy, Py_ssize_t kh, Py_ssize_t kw):
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, ::1] gv = gy
    cdef Py_ssize_t ci = xv.shape[0], h = xv.shape[1], wd = xv.shape[2]
    cdef Py_ssize_t co = gv.shape[0]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out = np.zeros((co, ci, kh, kw))
    cdef double[:, :, :, ::1] gwv = out
    cdef Py_ssize_t o, c, di, dj, i, j, ilo, ihi, jlo, jhi
    cdef double acc
    with nogil:
        for o in range(co):
            for c in range(ci):
                for di in range(kh):
                    ilo = ph - di if ph - di > 0 else 0
                    ihi = h + ph - di if h + ph - di < h else h
                    for dj in range(kw):
                        jlo = pw - dj if pw - dj > 0 else 0
                        jhi = wd + pw - dj if wd + pw - dj < wd else wd
                        acc = 0.0
                        for i in range(ilo, ihi):
                            for j in range(jlo, jhi):
                                acc += gv[o, i, j] * xv[c, i + di - ph, j + dj - pw]
                        gwv[o, c, di, dj] = acc
    return out


def conv3d_forward(x, w):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = x
    cdef double[:, :, :, :, ::1] wv = w
    cdef Py_ssize_t ci = xv.shape[0], d = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef Py_ssize_t co = wv.shape[0], kd = wv.shape[2], kh = wv.shape[3], kw = wv.shape[4]
    cdef Py_ssize_t pd = kd // 2, ph = kh // 2, pw = kw // 2
    out = np.zeros((co, d, h, wd))
    cdef double[:, :, :, ::1] yv = out
    cdef Py_ssize_t o, c, dd, di, dj, z, i, j, zlo, zhi, ilo, ihi, jlo, jhi
    cdef double wval
    with nogil:
        for o in range(co):
            for c in range(ci):
                for dd in range(kd):
                    zlo = pd - dd if pd - dd > 0 else 0
                    zhi = d + pd - dd if d + pd - dd < d else d
                    for di in range(kh):
                        ilo = ph - di if ph - di > 0 else 0
                        ihi = h + ph - di if h + ph - di < h else h
                        for dj in range(kw):
                            jlo = pw - dj if pw - dj > 0 else 0
                            jhi = wd + pw - dj if wd + pw - dj < wd else wd
                            wval = wv[o, c, dd, di, dj]
                            for z in range(zlo, zhi):
                                for i in range(ilo, ihi):
                                    for j in range(jlo, jhi):
                                        yv[o, z, i, j] += wval * xv[
                                            c, z + dd - pd, i + di - ph, j + dj - pw]
    return out


def conv3d_grad_input(w, gy):
    w = np.ascontiguousarray(w, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, :, :, :, ::1] wv = w
    cdef double[:, :, :, ::1] gv = gy
    cdef Py_ssize_t co = wv.shape[0], ci = wv.shape[1]
    cdef Py_ssize_t kd = wv.shape[2], kh = wv.shape[3], kw = wv.shape[4]
    cdef Py_ssize_t d = gv.shape[1], h = gv.shape[2], wd = gv.shape[3]
    cdef Py_ssize_t pd = kd // 2, ph = kh // 2, pw = kw // 2
    out = np.zeros((ci, d, h, wd))
    cdef double[:, :, :, ::1] xv = out
    cdef Py_ssize_t o, c, dd, di, dj, z, i, j, zlo, zhi, ilo, ihi, jlo, jhi
    cdef double wval
    with nogil:
        for o in range(co):
            for c in range(ci):
                for dd in range(kd):
                    zlo = pd - dd if pd - dd > 0 else 0
                    zhi = d + pd - dd if d + pd - dd < d else d
                    for di in range(kh):
                        ilo = ph - di if ph - di > 0 else 0
                        ihi = h + ph - di if h + ph - di < h else h
                        for dj in range(kw):
                            jlo = pw - dj if pw - dj > 0 else 0
                            jhi = wd + pw - dj if wd + pw - dj < wd else wd
                            wval = wv[o, c, dd, di, dj]
                            for z in range(zlo, zhi):
                                for i in range(ilo, ihi):
                                    for j in range(jlo, jhi):
                                        xv[c, z + dd - pd, i + di - ph, j + dj - pw] += (
                                            wval * gv[o, z, i, j])
    return out


def conv3d_grad_weight(x, gy, Py_ssize_t kd, Py_ssize_t kh, Py_ssize_t kw):
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = x
    cdef double[:, :, :, ::1] gv = gy
    cdef Py_ssize_t ci = xv.shape[0], d = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef Py_ssize_t co = gv.shape[0]
    cdef Py_ssize_t pd = kd // 2, ph = kh // 2, pw = kw // 2
    out = np.zeros((co, ci, kd, kh, kw))
    cdef double[:, :, :, :, ::1] gwv = out
    cdef Py_ssize_t o, c, dd, di, dj, z, i, j, zlo, zhi, ilo, ihi, jlo, jhi
    cdef double acc
    with nogil:
        for o in range(co):
            for c in range(ci):
                for dd in range(kd):
                    zlo = pd - dd if pd - dd > 0 else 0
                    zhi = d + pd - dd if d + pd - dd < d else d
                    for di in range(kh):
                        ilo = ph - di if ph - di > 0 else 0
                        ihi = h + ph - di if h + ph - di < h else h
                        for dj in range(kw):
                            jlo = pw - dj if pw - dj > 0 else 0
                            jhi = wd + pw - dj if wd + pw - dj < wd else wd
                            acc = 0.0
                            for z in range(zlo, zhi):
                                for i in range(ilo, ihi):
                                    for j in range(jlo, jhi):
                                        acc += gv[o, z, i, j] * xv[
                                            c, z + dd - pd, i + di - ph, j + dj - pw]
                            gwv[o, c, dd, di, dj] = acc
    return out


def splat_forward(feat, wgt, cell, Py_ssize_t n_cells):
    feat = np.ascontiguousarray(feat, dtype=np.float64)
    wgt = np.ascontiguousarray(wgt, dtype=np.float64)
    cell = np.ascontiguousarray(cell, dtype=np.int64)
    cdef double[:, ::1] fv = feat
    cdef double[:, ::1] wv = wgt
    cdef cnp.int64_t[:, ::1] cv = cell
    cdef Py_ssize_t c_dim = fv.shape[0], p_dim = fv.shape[1], k_dim = wv.shape[0]
    out = np.zeros((c_dim, n_cells))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t k, p, c
    cdef cnp.int64_t idx
    cdef double wk
    with nogil:
        for k in range(k_dim):
            for p in range(p_dim):
                idx = cv[k, p]
                if idx < 0:
                    continue
                wk = wv[k, p]
                for c in range(c_dim):
                    ov[c, idx] += wk * fv[c, p]
    return out


def splat_grad_feat(wgt, cell, gout):
    wgt = np.ascontiguousarray(wgt, dtype=np.float64)
    cell = np.ascontiguousarray(cell, dtype=np.int64)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    cdef double[:, ::1] wv = wgt
    cdef cnp.int64_t[:, ::1] cv = cell
    cdef double[:, ::1] gv = gout
    cdef Py_ssize_t k_dim = wv.shape[0], p_dim = wv.shape[1], c_dim = gv.shape[0]
    out = np.zeros((c_dim, p_dim))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t k, p, c
    cdef cnp.int64_t idx
    cdef double wk
    with nogil:
        for k in range(k_dim):
            for p in range(p_dim):
                idx = cv[k, p]
                if idx < 0:
                    continue
                wk = wv[k, p]
                for c in range(c_dim):
                    ov[c, p] += wk * gv[c, idx]
    return out


def splat_grad_weight(feat, cell, gout):
    feat = np.ascontiguousarray(feat, dtype=np.float64)
    cell = np.ascontiguousarray(cell, dtype=np.int64)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    cdef double[:, ::1] fv = feat
    cdef cnp.int64_t[:, ::1] cv = cell
    cdef double[:, ::1] gv = gout
    cdef Py_ssize_t k_dim = cv.shape[0], p_dim = cv.shape[1], c_dim = fv.shape[0]
    out = np.zeros((k_dim, p_dim))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t k, p, c
    cdef cnp.int64_t idx
    cdef double acc
    with nogil:
        for k in range(k_dim):
            for p in range(p_dim):
                idx = cv[k, p]
                if idx < 0:
                    continue
                acc = 0.0
                for c in range(c_dim):
                    acc += fv[c, p] * gv[c, idx]
                ov[k, p] = acc
    return out
