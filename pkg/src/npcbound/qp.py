"""Small dense convex QP solvers used by the MPC.

Box-only problems go through accelerated projected gradient (compiled kernel
when available) followed by an active-set polish. Problems with additional
linear constraints use ADMM with exact projection onto the constraint box.

Set ``NPCBOUND_PURE_PYTHON=1`` to force the numpy kernel.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import _qp_py
from .errors import InfeasibleError, NumericalError

__all__ = ["BACKEND", "QPResult", "QPInfeasibleError", "QPNumericalError", "box_residual", "solve_box_qp", "solve_qp_admm", "kernel"]


def _load_kernel():
    if os.environ.get("NPCBOUND_PURE_PYTHON", "").strip() not in ("", "0"):
        return _qp_py.apg_box, "python"
    try:
        from ._qp_kernel import apg_box
    except ImportError:
        return _qp_py.apg_box, "python"
    return apg_box, "cython"


_apg_box, BACKEND = _load_kernel()


def kernel(name: str | None = None):
    """The APG kernel for ``name`` ('cython' or 'python'); default: selected backend."""
    if name is None:
        return _apg_box
    if name == "python":
        return _qp_py.apg_box
    if name == "cython":
        from ._qp_kernel import apg_box

        return apg_box
    raise ValueError(f"unknown backend {name!r}")


class QPInfeasibleError(InfeasibleError):
    """Constraints admit no solution."""


class QPNumericalError(NumericalError):
    """Iteration cap reached without meeting the tolerance."""


@dataclass
class QPResult:
    x: np.ndarray
    iterations: int
    residual: float
    polished: bool


def box_residual(H, f, lo, hi, x) -> float:
    """Natural KKT residual ||x - clip(x - (Hx + f))||_inf of a box QP."""
    return float(np.max(np.abs(x - np.clip(x - (H @ x + f), lo, hi)), initial=0.0))


def _polish(H, f, lo, hi, x, max_rounds=25):
    # primal-dual active-set refinement seeded by the approximate solution
    n = x.size
    for _ in range(max_rounds):
        g = H @ x + f
        step = x - g
        at_lo = step < lo
        at_hi = step > hi
        free = ~(at_lo | at_hi)
        x_new = np.where(at_lo, lo, np.where(at_hi, hi, 0.0))
        if free.any():
            rhs = -(f[free] + H[np.ix_(free, ~free)] @ x_new[~free])
            try:
                x_new[free] = sla.solve(H[np.ix_(free, free)], rhs, assume_a="pos")
            except (sla.LinAlgError, ValueError):
                return None
        if np.array_equal(x_new, x):
            break
        x = x_new
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        return None
    return np.clip(x, lo, hi) if n else x


def solve_box_qp(H, f, lo, hi, x0=None, tol=1e-9, max_iter=50_000, backend=None, step=None) -> QPResult:
    """Minimize ``0.5 x'Hx + f'x`` subject to ``lo <= x <= hi``.

    ``H`` must be symmetric positive definite. Raises :class:`QPNumericalError`
    when neither the iterations nor the polish reach ``tol``.
    """
    H = np.ascontiguousarray(H, dtype=float)
    f = np.ascontiguousarray(f, dtype=float)
    lo = np.ascontiguousarray(np.broadcast_to(lo, f.shape), dtype=float)
    hi = np.ascontiguousarray(np.broadcast_to(hi, f.shape), dtype=float)
    if np.any(lo > hi):
        raise QPInfeasibleError("empty box")
    if x0 is None:
        x0 = np.zeros_like(f)
    x0 = np.ascontiguousarray(x0, dtype=float)
    if step is None:
        step = 1.0 / float(np.linalg.eigvalsh(H)[-1])
    apg = kernel(backend)
    # coarse solve, then exact active-set polish
    x, it, res = apg(H, f, lo, hi, x0, step, max(tol, 1e-6), max_iter)
    polished = _polish(H, f, lo, hi, np.asarray(x))
    if polished is not None:
        pres = box_residual(H, f, lo, hi, polished)
        if pres <= tol:
            return QPResult(polished, it, pres, True)
    x, it2, res = apg(H, f, lo, hi, np.asarray(x), step, tol, max_iter)
    if res > tol:
        raise QPNumericalError(f"box QP residual {res:.3e} after {it + it2} iterations")
    return QPResult(np.asarray(x), it + it2, res, False)


def solve_qp_admm(H, f, C, l, u, tol=1e-9, max_iter=50_000, rho=1.0, sigma=1e-8) -> QPResult:
    """Minimize ``0.5 x'Hx + f'x`` subject to ``l <= Cx <= u`` via ADMM.

    Detects primal infeasibility from the dual iterates; raises
    :class:`QPInfeasibleError` in that case.
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = f.size, l.size
    x = np.zeros(n)
    z = np.clip(C @ x, l, u)
    y = np.zeros(m)
    kkt = sla.cho_factor(H + sigma * np.eye(n) + rho * C.T @ C)
    eps_inf = 1e-10
    for it in range(1, max_iter + 1):
        x = sla.cho_solve(kkt, sigma * x - f + C.T @ (rho * z - y))
        z_prev, y_prev = z, y
        cx = C @ x
        z = np.clip(cx + y / rho, l, u)
        y = y + rho * (cx - z)
        r_prim = float(np.max(np.abs(cx - z), initial=0.0))
        r_dual = float(np.max(np.abs(rho * C.T @ (z - z_prev)), initial=0.0))
        if r_prim <= tol and r_dual <= tol:
            return QPResult(x, it, max(r_prim, r_dual), False)
        dy = y - y_prev
        ndy = float(np.max(np.abs(dy), initial=0.0))
        if ndy > 0:
            lo_term = np.where(np.isfinite(l), l, 0.0) @ np.minimum(dy, 0.0)
            hi_term = np.where(np.isfinite(u), u, 0.0) @ np.maximum(dy, 0.0)
            unbounded = np.any((dy > eps_inf * ndy) & ~np.isfinite(u)) or np.any((dy < -eps_inf * ndy) & ~np.isfinite(l))
            if (
                not unbounded
                and np.max(np.abs(C.T @ dy)) <= eps_inf * ndy
                and hi_term + lo_term < -eps_inf * ndy
            ):
                raise QPInfeasibleError("constraints are infeasible")
    raise QPNumericalError(f"ADMM residual above {tol:g} after {max_iter} iterations")
