# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: convolution unfold/fold and the SMO loop."""
from libc.math cimport INFINITY

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int ho, int wo,
           real[:, ::1] out):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t b, oh, ow, ch, i, j, row, col, y0, x0
    with nogil:
        for b in range(n):
            for oh in range(ho):
                y0 = oh * stride
                for ow in range(wo):
                    x0 = ow * stride
                    row = (b * ho + oh) * wo + ow
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[row, col] = xp[b, ch, y0 + i, x0 + j]
                                col += 1
    return out


def col2im(real[:, ::1] cols, int kh, int kw, int stride, int ho, int wo,
           real[:, :, :, ::1] xp):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t b, oh, ow, ch, i, j, row, col, y0, x0
    with nogil:
        for b in range(n):
            for oh in range(ho):
                y0 = oh * stride
                for ow in range(wo):
                    x0 = ow * stride
                    row = (b * ho + oh) * wo + ow
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                xp[b, ch, y0 + i, x0 + j] += cols[row, col]
                                col += 1
    return xp


def smo_solve(double[:, ::1] K, double c, double tol, long max_iter,
              double[::1] alpha, double[::1] grad):
    cdef Py_ssize_t n = K.shape[0]
    cdef Py_ssize_t t, i, j
    cdef long it = 0, stall = 0
    cdef double gmin, gmax, gap = INFINITY, eta, step, lim_i, lim_j, s2
    cdef bint hit_i, hit_j
    with nogil:
        while it < max_iter:
            i = 0
            j = 0
            gmin = INFINITY
            gmax = -INFINITY
            for t in range(n):
                if alpha[t] < c and grad[t] < gmin:
                    gmin = grad[t]
                    i = t
                if alpha[t] > 0.0 and grad[t] > gmax:
                    gmax = grad[t]
                    j = t
            gap = gmax - gmin
            if gap <= tol or i == j:
                break
            eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
            lim_i = c - alpha[i]
            lim_j = alpha[j]
            if eta > 1e-12:
                step = gap / (2.0 * eta)
            else:
                step = INFINITY
            hit_i = False
            hit_j = False
            if step >= lim_i:
                step = lim_i
                hit_i = True
            if step >= lim_j:
                step = lim_j
                hit_j = True
                hit_i = lim_i == lim_j
            if step <= 0.0:
                stall += 1
                if stall > n:
                    break
            else:
                stall = 0
            if hit_i:
                alpha[i] = c
            else:
                alpha[i] = alpha[i] + step
            if hit_j:
                alpha[j] = 0.0
            else:
                alpha[j] = alpha[j] - step
            s2 = 2.0 * step
            for t in range(n):
                grad[t] += s2 * (K[t, i] - K[t, j])
            it += 1
    return it, gap
