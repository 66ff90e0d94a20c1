# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels; must match aisf._kernels._slow bit-for-contract.

Same conventions as the fallback: corner coordinates, interpolation on the
pixel-center lattice at u - 0.5, zero outside for ROIAlign, edge clamp for
paste.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def roi_align_forward(double[:, :, ::1] fm, double y0, double x0, double y1, double x1,
                      int out_h, int out_w, int samples):
    cdef Py_ssize_t c = fm.shape[0], h = fm.shape[1], w = fm.shape[2]
    cdef int n = samples
    cdef double sy = (y1 - y0) / (out_h * n)
    cdef double sx = (x1 - x0) / (out_w * n)
    out_arr = np.zeros((c, out_h, out_w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, a, b
    cdef Py_ssize_t y0i, y1i, x0i, x1i
    cdef double u, v, wy0, wy1, wx0, wx1, acc, r0, r1
    cdef double inv = 1.0 / (n * n)
    for i in range(out_h):
        for j in range(out_w):
            for a in range(n):
                u = y0 + (i * n + a + 0.5) * sy - 0.5
                y0i = <Py_ssize_t>floor(u)
                wy1 = u - y0i
                wy0 = 1.0 - wy1
                y1i = y0i + 1
                if y0i < 0 or y0i >= h:
                    wy0 = 0.0
                    y0i = 0
                if y1i < 0 or y1i >= h:
                    wy1 = 0.0
                    y1i = 0
                for b in range(n):
                    v = x0 + (j * n + b + 0.5) * sx - 0.5
                    x0i = <Py_ssize_t>floor(v)
                    wx1 = v - x0i
                    wx0 = 1.0 - wx1
                    x1i = x0i + 1
                    if x0i < 0 or x0i >= w:
                        wx0 = 0.0
                        x0i = 0
                    if x1i < 0 or x1i >= w:
                        wx1 = 0.0
                        x1i = 0
                    for ch in range(c):
                        r0 = fm[ch, y0i, x0i] * wy0 + fm[ch, y1i, x0i] * wy1
                        r1 = fm[ch, y0i, x1i] * wy0 + fm[ch, y1i, x1i] * wy1
                        out[ch, i, j] += (r0 * wx0 + r1 * wx1) * inv
    return out_arr


def roi_align_backward(double[:, :, ::1] grad, double y0, double x0, double y1, double x1,
                       int samples, int height, int width):
    cdef Py_ssize_t c = grad.shape[0], oh = grad.shape[1], ow = grad.shape[2]
    cdef int n = samples
    cdef double sy = (y1 - y0) / (oh * n)
    cdef double sx = (x1 - x0) / (ow * n)
    dfm_arr = np.zeros((c, height, width), dtype=np.float64)
    cdef double[:, :, ::1] dfm = dfm_arr
    cdef Py_ssize_t ch, i, j, a, b
    cdef Py_ssize_t y0i, y1i, x0i, x1i
    cdef double u, v, wy0, wy1, wx0, wx1, g
    cdef double inv = 1.0 / (n * n)
    for i in range(oh):
        for j in range(ow):
            for a in range(n):
                u = y0 + (i * n + a + 0.5) * sy - 0.5
                y0i = <Py_ssize_t>floor(u)
                wy1 = u - y0i
                wy0 = 1.0 - wy1
                y1i = y0i + 1
                if y0i < 0 or y0i >= height:
                    wy0 = 0.0
                    y0i = 0
                if y1i < 0 or y1i >= height:
                    wy1 = 0.0
                    y1i = 0
                for b in range(n):
                    v = x0 + (j * n + b + 0.5) * sx - 0.5
                    x0i = <Py_ssize_t>floor(v)
                    wx1 = v - x0i
                    wx0 = 1.0 - wx1
                    x1i = x0i + 1
                    if x0i < 0 or x0i >= width:
                        wx0 = 0.0
                        x0i = 0
                    if x1i < 0 or x1i >= width:
                        wx1 = 0.0
                        x1i = 0
                    for ch in range(c):
                        g = grad[ch, i, j] * inv
                        dfm[ch, y0i, x0i] += g * wy0 * wx0
                        dfm[ch, y1i, x0i] += g * wy1 * wx0
                        dfm[ch, y0i, x1i] += g * wy0 * wx1
                        dfm[ch, y1i, x1i] += g * wy1 * wx1
    return dfm_arr


def paste_bilinear(double[:, ::1] src, double y0, double x0, double y1, double x1,
                   int out_h, int out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef double bh = (y1 - y0) / h
    cdef double bw = (x1 - x0) / w
    out_arr = np.zeros((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, u0, u1, v0, v1
    cdef double yc, xc, u, v, au, av, r0, r1
    for i in range(out_h):
        yc = i + 0.5
        if yc < y0 or yc >= y1:
            continue
        u = (yc - y0) / bh - 0.5
        if u < 0.0:
            u = 0.0
        if u > h - 1.0:
            u = h - 1.0
        u0 = <Py_ssize_t>floor(u)
        if h > 1 and u0 > h - 2:
            u0 = h - 2
        au = u - u0
        u1 = u0 + 1 if u0 + 1 < h else h - 1
        for j in range(out_w):
            xc = j + 0.5
            if xc < x0 or xc >= x1:
                continue
            v = (xc - x0) / bw - 0.5
            if v < 0.0:
                v = 0.0
            if v > w - 1.0:
                v = w - 1.0
            v0 = <Py_ssize_t>floor(v)
            if w > 1 and v0 > w - 2:
                v0 = w - 2
            av = v - v0
            v1 = v0 + 1 if v0 + 1 < w else w - 1
            r0 = src[u0, v0] * (1.0 - au) + src[u1, v0] * au
            r1 = src[u0, v1] * (1.0 - au) + src[u1, v1] * au
            out[i, j] = r0 * (1.0 - av) + r1 * av
    return out_arr
