# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the recurrent hot loops.

Semantics mirror stepsmith.kernels.reference exactly (same tap order, same
gate order); see that module for the conventions. The win over numpy comes
from fusing the elementwise gate math into one memory pass and from doing
the conv gather/scatter without intermediate copies.
"""

import numpy as np

cimport cython
from libc.math cimport exp, tanh


ctypedef fused real:
    float
    double


cdef inline real _sig(real x) noexcept nogil:
    cdef real e
    if x >= 0:
        return <real>1.0 / (<real>1.0 + <real>exp(-x))
    e = <real>exp(x)
    return e / (<real>1.0 + e)


def im2col3x3(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    out_arr = np.zeros((n, h, w, 9 * c), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, k, dy, dx, yy, xx, tap
    with nogil:
        for b in range(n):
            for i in range(h):
                for dy in range(-1, 2):
                    yy = i + dy
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(w):
                        for dx in range(-1, 2):
                            xx = j + dx
                            if xx < 0 or xx >= w:
                                continue
                            tap = (dy + 1) * 3 + (dx + 1)
                            for k in range(c):
                                out[b, i, j, tap * c + k] = x[b, yy, xx, k]
    return out_arr


def col2im3x3(real[:, :, :, ::1] cols, Py_ssize_t channels):
    cdef Py_ssize_t n = cols.shape[0], h = cols.shape[1], w = cols.shape[2]
    cdef Py_ssize_t c = channels
    out_arr = np.zeros((n, h, w, c), dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, k, dy, dx, yy, xx, tap
    with nogil:
        for b in range(n):
            for i in range(h):
                for dy in range(-1, 2):
                    yy = i + dy
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(w):
                        for dx in range(-1, 2):
                            xx = j + dx
                            if xx < 0 or xx >= w:
                                continue
                            tap = (dy + 1) * 3 + (dx + 1)
                            for k in range(c):
                                out[b, yy, xx, k] += cols[b, i, j, tap * c + k]
    return out_arr


def cell_forward(real[:, ::1] preact, real[:, ::1] c_prev):
    cdef Py_ssize_t m = preact.shape[0], u = c_prev.shape[1]
    dtype = np.asarray(preact).dtype
    h_arr = np.empty((m, u), dtype=dtype)
    c_arr = np.empty((m, u), dtype=dtype)
    gates_arr = np.empty((m, 4 * u), dtype=dtype)
    tanh_c_arr = np.empty((m, u), dtype=dtype)
    cdef real[:, ::1] h = h_arr, c = c_arr, gates = gates_arr, tanh_c = tanh_c_arr
    cdef Py_ssize_t r, k
    cdef real gi, gf, gg, go, cc, tc
    with nogil:
        for r in range(m):
            for k in range(u):
                gi = _sig(preact[r, k])
                gf = _sig(preact[r, u + k])
                gg = <real>tanh(preact[r, 2 * u + k])
                go = _sig(preact[r, 3 * u + k])
                cc = gf * c_prev[r, k] + gi * gg
                tc = <real>tanh(cc)
                gates[r, k] = gi
                gates[r, u + k] = gf
                gates[r, 2 * u + k] = gg
                gates[r, 3 * u + k] = go
                c[r, k] = cc
                tanh_c[r, k] = tc
                h[r, k] = go * tc
    return h_arr, c_arr, gates_arr, tanh_c_arr


def cell_backward_h(real[:, ::1] dh, real[:, ::1] gates, real[:, ::1] tanh_c):
    cdef Py_ssize_t m = dh.shape[0], u = dh.shape[1]
    dtype = np.asarray(dh).dtype
    dpre_o_arr = np.empty((m, u), dtype=dtype)
    dc_arr = np.empty((m, u), dtype=dtype)
    cdef real[:, ::1] dpre_o = dpre_o_arr, dc = dc_arr
    cdef Py_ssize_t r, k
    cdef real o, tc, g
    with nogil:
        for r in range(m):
            for k in range(u):
                o = gates[r, 3 * u + k]
                tc = tanh_c[r, k]
                g = dh[r, k]
                dpre_o[r, k] = g * tc * o * (<real>1.0 - o)
                dc[r, k] = g * o * (<real>1.0 - tc * tc)
    return dpre_o_arr, dc_arr


def cell_backward_c(real[:, ::1] dc, real[:, ::1] gates, real[:, ::1] c_prev):
    cdef Py_ssize_t m = dc.shape[0], u = dc.shape[1]
    dtype = np.asarray(dc).dtype
    dpre_arr = np.empty((m, 3 * u), dtype=dtype)
    dcp_arr = np.empty((m, u), dtype=dtype)
    cdef real[:, ::1] dpre = dpre_arr, dcp = dcp_arr
    cdef Py_ssize_t r, k
    cdef real gi, gf, gg, d
    with nogil:
        for r in range(m):
            for k in range(u):
                gi = gates[r, k]
                gf = gates[r, u + k]
                gg = gates[r, 2 * u + k]
                d = dc[r, k]
                dpre[r, k] = d * gg * gi * (<real>1.0 - gi)
                dpre[r, u + k] = d * c_prev[r, k] * gf * (<real>1.0 - gf)
                dpre[r, 2 * u + k] = d * gi * (<real>1.0 - gg * gg)
                dcp[r, k] = d * gf
    return dpre_arr, dcp_arr
