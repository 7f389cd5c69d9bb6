"""Pure-Python (numpy) twin of the compiled box-QP kernel."""
import numpy as np


def apg_box(H, f, lo, hi, u0, step, tol, max_iter):
    """Minimize 0.5 u'Hu + f'u over lo <= u <= hi.

    Accelerated projected gradient with gradient-based restart. Returns
    ``(u, iterations, residual)``.
    """
    u = np.clip(u0, lo, hi)
    y = u.copy()
    t = 1.0
    it = 0
    while True:
        res = float(np.max(np.abs(u - np.clip(u - (H @ u + f), lo, hi)), initial=0.0))
        if res <= tol or it >= max_iter:
            break
        g = H @ y + f
        u_prev = u
        u = np.clip(y - step * g, lo, hi)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if g @ (u - u_prev) > 0.0:
            t_next = 1.0
            y = u.copy()
        else:
            y = u + ((t - 1.0) / t_next) * (u - u_prev)
        t = t_next
        it += 1
    return u, it, res
