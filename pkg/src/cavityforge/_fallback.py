"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import numpy as np
from scipy.special import j0

# rows of the J0 matrix evaluated per block; bounds peak memory
_BLOCK_ELEMS = 1 << 22


def hankel_sum(rho, s, g_re, g_im, scale):
    """out[i] = sum_j g[j] * J0(scale * rho[i] * s[j])."""
    rho = np.asarray(rho, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g_re, dtype=np.float64) + 1j * np.asarray(g_im, dtype=np.float64)
    out = np.empty(rho.size, dtype=np.complex128)
    step = max(1, _BLOCK_ELEMS // max(s.size, 1))
    for start in range(0, rho.size, step):
        block = rho[start:start + step]
        out[start:start + step] = j0(scale * block[:, None] * s[None, :]) @ g
    return out.real.copy(), out.imag.copy()


def bilinear_sample(img, ys, xs, fill):
    """Bilinear interpolation at (ys, xs); points outside the grid get ``fill``."""
    img = np.asarray(img, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ny, nx = img.shape
    out = np.full(ys.shape, fill, dtype=np.float64)
    inside = (ys >= 0) & (xs >= 0) & (ys <= ny - 1) & (xs <= nx - 1)
    y = ys[inside]
    x = xs[inside]
    if ny == 1 or nx == 1:
        out[inside] = img[np.floor(y).astype(np.intp), np.floor(x).astype(np.intp)]
        return out
    y0 = np.minimum(np.floor(y).astype(np.intp), ny - 2)
    x0 = np.minimum(np.floor(x).astype(np.intp), nx - 2)
    fy = y - y0
    fx = x - x0
    out[inside] = ((1.0 - fy) * ((1.0 - fx) * img[y0, x0] + fx * img[y0, x0 + 1])
                   + fy * ((1.0 - fx) * img[y0 + 1, x0] + fx * img[y0 + 1, x0 + 1]))
    return out
