"""Independent reference computations used by the tests.

Nothing here imports the package's numerical routines except the
distribution object used to draw delays, so agreement is meaningful.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_discrete_are


def open_loop_table(a, b, lipschitz, w_bar, u_bar, horizon, n):
    """Coefficients ``(c0, c1)`` with E_o(l, eps0) = c0[l] + c1[l] * eps0, l = 0..n."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    a_n = np.linalg.norm(a, 2)
    b_n = np.linalg.norm(np.atleast_2d(np.asarray(b, dtype=float)), 2)
    lam = a_n + b_n * lipschitz
    pw = [np.linalg.norm(np.linalg.matrix_power(a, i), 2) for i in range(n + 1)]
    c0, c1 = np.zeros(n + 1), np.zeros(n + 1)
    for l in range(n + 1):
        if l < horizon:
            c1[l] = lam**l
            c0[l] = w_bar * sum(lam**i for i in range(l))
        else:
            k = pw[l - horizon]
            c1[l] = k * lam ** (horizon - 1)
            c0[l] = k * w_bar * sum(lam**i for i in range(horizon - 1)) + (w_bar + 2 * b_n * u_bar) * sum(pw[:l])
    return c0, c1, pw


def phase_errors_mc(d, a, b, lipschitz, w_bar, u_bar, horizon, tau, limit, n=10**6, seed=0):
    """Monte Carlo estimates of the nominal, correction and acknowledgement errors.

    Samples the defining random variables directly: consecutive round trips for
    overtaking, a Bernoulli arrival chain for the freshest packet and the run
    of late steps after it, and geometric retransmission counts for the two
    recovery phases. Sums are cut at ``limit`` like the analytic series.
    """
    rng = np.random.default_rng(seed)
    c0, c1, pw = open_loop_table(a, b, lipschitz, w_bar, u_bar, horizon, tau + limit + 2)

    def eo(l, e):
        return c0[l] + c1[l] * e

    e_r = w_bar * sum(pw[:tau])
    prev, cur = d.sample(rng, n), d.sample(rng, n)
    gap = prev - cur
    hit = (prev <= tau) & (gap >= 1) & (gap <= tau - 1) & (gap <= limit)
    early = np.where(hit, eo(np.clip(gap, 0, limit), e_r), 0.0).mean()

    cdf = np.array([d.F(j) for j in range(tau + limit + d.k_max + 3)])
    k = np.full(n, -1)
    for j in range(tau + 1):
        arrived = (k < 0) & (rng.random(n) < d.p(j))
        k[arrived] = j
    k = k[k >= 0]
    acc = np.zeros(k.size)
    waiting = np.ones(k.size, dtype=bool)
    for i in range(1, limit + 1):
        waiting &= rng.random(k.size) < 1.0 - cdf[k + i - 1]
        if not waiting.any():
            break
        acc += np.where(waiting, eo(i, e_r), 0.0)
    eps_n = e_r + early + acc.mean()

    p_d = 1.0 - d.F(tau)
    eps_o = eo(tau, eps_n)
    x1 = rng.geometric(1.0 - p_d, n) - 1
    x2 = rng.geometric(1.0 - p_d, n) - 1

    def recovery(t):
        inc = np.where(t <= limit, eo(tau + np.minimum(t, limit), eps_n) - eps_o, 0.0)
        return eps_o / tau + inc.mean()

    return eps_n, recovery(x1 + x2), recovery(x1)


def power_iteration(p, tol=1e-15, max_iter=1_000_000):
    """Left fixed point of a row-stochastic matrix from the uniform start."""
    pi = np.full(p.shape[0], 1.0 / p.shape[0])
    for _ in range(max_iter):
        nxt = pi @ p
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    return pi


def stationary_eig(p):
    vals, vecs = np.linalg.eig(p.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def zoh_taylor(a_c, b_c, t_d, terms=20):
    """Zero-order-hold pair from truncated series of exp(A t) and its integral."""
    n = a_c.shape[0]
    ad = np.zeros((n, n))
    integral = np.zeros((n, n))
    term = np.eye(n)
    for k in range(terms):
        ad += term * t_d**k / math.factorial(k)
        integral += term * t_d ** (k + 1) / math.factorial(k + 1)
        term = term @ a_c
    return ad, integral @ b_c


def riccati_iteration(a, b, q, r, iters):
    p = q.copy()
    for _ in range(iters):
        k = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
        p = q + a.T @ p @ (a - b @ k)
    return p


def batch_matrices(a, b, q, r, p_term, horizon):
    """Prediction matrices and the condensed Hessian/linear term, built row by row."""
    n, m = b.shape
    phi = np.vstack([np.linalg.matrix_power(a, i + 1) for i in range(horizon)])
    gamma = np.zeros((n * horizon, m * horizon))
    for i in range(horizon):
        for j in range(i + 1):
            gamma[i * n:(i + 1) * n, j * m:(j + 1) * m] = np.linalg.matrix_power(a, i - j) @ b
    qbar = np.kron(np.eye(horizon), q)
    qbar[-n:, -n:] = p_term
    rbar = np.kron(np.eye(horizon), r)
    h = gamma.T @ qbar @ gamma + rbar
    f = gamma.T @ qbar @ phi
    return h, f


def dare(a, b, q, r):
    return solve_discrete_are(a, b, q, r)
