# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled accelerated projected-gradient iterations for box-constrained QPs.

Mirrors ``_qp_py.apg_box`` exactly; the pure-Python module is the reference.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


cdef inline double _clip(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def apg_box(const double[:, ::1] H, const double[::1] f, const double[::1] lo, const double[::1] hi,
            const double[::1] u0, double step, double tol, int max_iter):
    """Minimize 0.5 u'Hu + f'u over lo <= u <= hi.

    Returns ``(u, iterations, residual)`` where ``residual`` is the infinity
    norm of ``u - clip(u - (Hu + f))``.
    """
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t i, j
    cdef int it = 0
    cdef double t = 1.0, t_next, beta, acc, res = 0.0, r, restart
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] u = out
    cdef double[::1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] u_prev = np.empty(n, dtype=np.float64)
    cdef double[::1] g = np.empty(n, dtype=np.float64)

    for i in range(n):
        u[i] = _clip(u0[i], lo[i], hi[i])
        y[i] = u[i]

    with nogil:
        while True:
            # residual at the current iterate
            res = 0.0
            for i in range(n):
                acc = f[i]
                for j in range(n):
                    acc = acc + H[i, j] * u[j]
                r = fabs(u[i] - _clip(u[i] - acc, lo[i], hi[i]))
                if r > res:
                    res = r
            if res <= tol or it >= max_iter:
                break
            # gradient at the extrapolated point
            for i in range(n):
                acc = f[i]
                for j in range(n):
                    acc = acc + H[i, j] * y[j]
                g[i] = acc
            restart = 0.0
            for i in range(n):
                u_prev[i] = u[i]
                u[i] = _clip(y[i] - step * g[i], lo[i], hi[i])
                restart = restart + g[i] * (u[i] - u_prev[i])
            t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
            if restart > 0.0:
                # gradient restart: momentum points uphill
                t_next = 1.0
                for i in range(n):
                    y[i] = u[i]
            else:
                beta = (t - 1.0) / t_next
                for i in range(n):
                    y[i] = u[i] + beta * (u[i] - u_prev[i])
            t = t_next
            it += 1
    return out, it, res
