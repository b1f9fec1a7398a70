"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable, or when ``OCRM_PURE_PYTHON=1``.
Semantics match ``_ckernels.pyx`` exactly; accumulation order may differ.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, kh, kw, stride, ho, wo, out):
    """Unfold padded input ``xp[N,C,Hp,Wp]`` into ``out[N*ho*wo, C*kh*kw]``."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    out.reshape(n, ho, wo, c, kh, kw)[...] = view
    return out


def col2im(cols, kh, kw, stride, ho, wo, xp):
    """Scatter-add ``cols[N*ho*wo, C*kh*kw]`` back into padded ``xp[N,C,Hp,Wp]``."""
    n, c = xp.shape[:2]
    c6 = cols.reshape(n, ho, wo, c, kh, kw)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + hspan:stride, j:j + wspan:stride] += c6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return xp


def smo_solve(K, c, tol, max_iter, alpha, grad):
    """Pairwise SMO on ``min a'Ka - diag(K)'a`` s.t. ``0 <= a <= c, sum(a) = 1``.

    ``alpha`` must be feasible on entry and ``grad`` must equal ``2*K@alpha - diag(K)``.
    Both are updated in place. Returns ``(n_iter, gap)``.
    """
    n = K.shape[0]
    it = 0
    stall = 0
    gap = np.inf
    while it < max_iter:
        up = alpha < c
        down = alpha > 0.0
        gi = np.where(up, grad, np.inf)
        gj = np.where(down, grad, -np.inf)
        i = int(np.argmin(gi))
        j = int(np.argmax(gj))
        gap = gj[j] - gi[i]
        if gap <= tol or i == j:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        lim_i = c - alpha[i]
        lim_j = alpha[j]
        if eta > 1e-12:
            step = gap / (2.0 * eta)
        else:
            step = np.inf
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
        alpha[i] = c if hit_i else alpha[i] + step
        alpha[j] = 0.0 if hit_j else alpha[j] - step
        grad += (2.0 * step) * (K[:, i] - K[:, j])
        it += 1
    return it, float(gap)
