# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``_fallback``."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor
from scipy.special.cython_special cimport j0

cnp.import_array()


def hankel_sum(const double[::1] rho, const double[::1] s,
               const double[::1] g_re, const double[::1] g_im, double scale):
    """out[i] = sum_j g[j] * J0(scale * rho[i] * s[j])."""
    cdef Py_ssize_t n = rho.shape[0], m = s.shape[0], i, j
    cdef double acc_re, acc_im, b, arg
    out_re = np.empty(n, dtype=np.float64)
    out_im = np.empty(n, dtype=np.float64)
    cdef double[::1] ore = out_re, oim = out_im
    for i in prange(n, nogil=True, schedule="static"):
        acc_re = 0.0
        acc_im = 0.0
        arg = scale * rho[i]
        for j in range(m):
            b = j0(arg * s[j])
            acc_re = acc_re + g_re[j] * b
            acc_im = acc_im + g_im[j] * b
        ore[i] = acc_re
        oim[i] = acc_im
    return out_re, out_im


def bilinear_sample(const double[:, ::1] img, const double[::1] ys,
                    const double[::1] xs, double fill):
    """Bilinear interpolation at (ys, xs); points outside the grid get ``fill``."""
    cdef Py_ssize_t ny = img.shape[0], nx = img.shape[1]
    cdef Py_ssize_t n = ys.shape[0], k, y0, x0
    cdef double y, x, fy, fx
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            y = ys[k]
            x = xs[k]
            if y < 0.0 or x < 0.0 or y > ny - 1 or x > nx - 1:
                o[k] = fill
                continue
            y0 = <Py_ssize_t>floor(y)
            x0 = <Py_ssize_t>floor(x)
            if y0 >= ny - 1:
                y0 = ny - 2 if ny > 1 else 0
            if x0 >= nx - 1:
                x0 = nx - 2 if nx > 1 else 0
            fy = y - y0
            fx = x - x0
            if ny == 1 or nx == 1:
                o[k] = img[y0, x0]
                continue
            o[k] = ((1.0 - fy) * ((1.0 - fx) * img[y0, x0] + fx * img[y0, x0 + 1])
                    + fy * ((1.0 - fx) * img[y0 + 1, x0] + fx * img[y0 + 1, x0 + 1]))
    return out
