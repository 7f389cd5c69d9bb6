"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run under pytest (the lines are repeated in the terminal summary) or directly
with ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import contextlib
import io
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

import oracles  # noqa: E402
from npcbound.bound_optimizer import is_unimodal, optimal_bound  # noqa: E402
from npcbound.cli import main as cli_main  # noqa: E402
from npcbound.config import load_config  # noqa: E402
from npcbound.delay_model import (  # noqa: E402
    DiscretizationRule,
    dropout_prob,
    from_lognormal,
    from_pmf,
    p_ack,
    p_correction,
    p_freshest,
    truncation_horizon,
)
from npcbound.error_calculus import ErrorParams, ack_error, correction_error, nominal_error, series_limit  # noqa: E402
from npcbound.mode_chain import stationary, transition_matrix  # noqa: E402
from npcbound.mpc_core import CondensedMpc, MpcConfig, PlantModel, dare_terminal, msd_plant  # noqa: E402
from npcbound.netsim import ScriptedChannel, run_batch, run_episode  # noqa: E402
from npcbound.qp import box_residual, solve_box_qp  # noqa: E402

CONFIG = HERE.parent / "configs" / "paper_msd.cfg"
RESULTS: dict[int, str] = {}


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS[n] = line
    print(line)
    return ok


# ---------------------------------------------------------------- 1


def test_criterion_1_closed_form_matches_chain():
    t0 = time.perf_counter()
    worst = 0.0
    for p_d in np.round(np.arange(0.0, 0.951, 0.05), 2):
        pi_iter = oracles.power_iteration(transition_matrix(p_d))
        worst = max(worst, float(np.max(np.abs(stationary(p_d).pi - pi_iter))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 1.0
    assert report(1, ok, f"max |pi_closed - pi_power| = {worst:.2e} <= 1e-10, {dt:.2f}s < 1s")


# ---------------------------------------------------------------- 2


def _fixtures():
    a, b = msd_plant(1.0, 10.0, 0.5, 0.05)
    return [
        ("uniform{0..3}, tau=1, a=1.05", from_pmf([1, 1, 1, 1]), [[1.05]], [[1.0]], 0.5, 0.1, 2.0, 5, 1),
        ("uniform{0..4}, tau=2, a=0.9", from_pmf([1, 1, 1, 1, 1]), [[0.9]], [[1.0]], 0.5, 0.1, 2.0, 5, 2),
        ("msd lognormal, tau=3, L=15.5", from_lognormal(0.5, 0.5, DiscretizationRule("ceil", 0)), a, b, 15.5, 0.1, 25.0, 20, 3),
    ]


def test_criterion_2_expectations_match_monte_carlo():
    t0 = time.perf_counter()
    worst, names = 0.0, []
    for i, (name, d, a, b, lip, w, u, horizon, tau) in enumerate(_fixtures()):
        p = ErrorParams.from_matrices(a, b, lip, w, u, horizon)
        analytic = (nominal_error(d, p, tau), correction_error(d, p, tau), ack_error(d, p, tau))
        mc = oracles.phase_errors_mc(d, a, b, lip, w, u, horizon, tau, series_limit(d, p, tau), n=10**6, seed=100 + i)
        rel = max(abs(x / y - 1.0) for x, y in zip(analytic, mc))
        worst = max(worst, rel)
        names.append(f"{name}: {rel:.2%}")
    dt = time.perf_counter() - t0
    ok = worst < 0.01 and dt < 30.0
    assert report(2, ok, f"worst relative error {worst:.3%} < 1% over [{'; '.join(names)}], {dt:.1f}s < 30s")


# ---------------------------------------------------------------- 3


def test_criterion_3_probability_normalization():
    t0 = time.perf_counter()
    failures = []
    dists = {
        "lognormal(0.5,0.5)": from_lognormal(0.5, 0.5, DiscretizationRule("ceil", 0)),
        "lognormal(1.5,0.5)": from_lognormal(1.5, 0.5, DiscretizationRule("ceil", 0)),
        "lognormal(0.5,0.5) round+1": from_lognormal(0.5, 0.5, DiscretizationRule("round", 1)),
        "uniform{0..3}": from_pmf([1, 1, 1, 1]),
        "skewed": from_pmf([0.05, 0.6, 0.1, 0.0, 0.25]),
    }
    threshold = 1e-3
    for name, d in dists.items():
        if abs(d.pmf.sum() - 1.0) > 1e-12 or np.any(np.diff(d.cdf) < 0):
            failures.append(f"{name}: pmf/cdf")
        prev = 1.0
        for tau in range(0, d.k_max + 2):
            p_d = dropout_prob(d, tau)
            if p_d > prev + 1e-15:
                failures.append(f"{name}: dropout increases at {tau}")
            prev = p_d
            if d.F(tau) > 0:
                s = sum(p_freshest(d, k, tau) for k in range(tau + 1))
                if abs(s - 1.0) > 1e-12:
                    failures.append(f"{name}: freshest sums to {s} at {tau}")
            if p_d < 1.0 and tau >= 1:
                c = truncation_horizon(p_d, tau, threshold)
                limit = tau + c
                for weight in (p_correction, p_ack):
                    mass = sum(weight(p_d, i) for i in range(limit + 1))
                    if not 1.0 - mass < 10 * threshold:
                        failures.append(f"{name}: {weight.__name__} tail {1 - mass:.2e} at {tau}")
                # enough terms that the geometric tail is below double precision
                n_terms = 100 if p_d == 0 else int(2 * math.log(1e-18) / math.log(p_d)) + 100
                for weight in (p_correction, p_ack):
                    total = math.fsum(weight(p_d, i) for i in range(n_terms))
                    if abs(total - 1.0) > 1e-9:
                        failures.append(f"{name}: {weight.__name__} sums to {total}")
        if dropout_prob(d, d.k_max) != 0.0:
            failures.append(f"{name}: dropout nonzero at k_max")
    dt = time.perf_counter() - t0
    ok = not failures and dt < 1.0
    detail = "; ".join(failures[:3]) if failures else f"{len(dists)} distributions, all invariants hold"
    assert report(3, ok, f"{detail}, {dt:.2f}s < 1s")


# ---------------------------------------------------------------- 4


def _optimize(variant, out):
    args = ["optimize", "--config", str(CONFIG), "--out", str(out)]
    if variant:
        args += ["--variant", variant]
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli_main(args)
    assert code == 0, buf.getvalue()
    line = next(l for l in buf.getvalue().splitlines() if l.startswith("tau_star="))
    return int(line.split("=")[1])


def test_criterion_4_analytic_optimum(tmp_path):
    t0 = time.perf_counter()
    got = {"r1": _optimize("r1", tmp_path / "r1"), None: _optimize(None, tmp_path / "base")}
    dt = time.perf_counter() - t0
    expected = {"r1": 3, None: 4}
    exact = all(got[k] == expected[k] for k in expected)
    detail = f"R=1 tau*={got['r1']} (want 3), R=0.1 L=87.3 tau*={got[None]} (want 4)"
    ok = exact and dt < 5.0
    if not exact:
        # documented fallback: unimodal index with an interior minimizer within one step
        fallback = True
        for variant in expected:
            cfg = load_config(CONFIG, variant)
            tau_star, table = optimal_bound(cfg.distribution(), cfg.error_params())
            eps = [b.eps_total for b in table if b.p_d > 0]
            fallback &= is_unimodal(eps) and abs(tau_star - expected[variant]) <= 1
        ok = fallback and dt < 5.0
        detail += ", fallback criterion"
    assert report(4, ok, f"{detail}, {dt:.2f}s < 5s")


# ---------------------------------------------------------------- 5


@pytest.mark.slow
def test_criterion_5_empirical_optimum():
    t0 = time.perf_counter()
    cfg = load_config(CONFIG)
    tau_star, _ = optimal_bound(cfg.distribution(), cfg.error_params())
    stats = {tau: run_batch(cfg.npc_config(tau), cfg.runs) for tau in cfg.sweep_taus}
    dt = time.perf_counter() - t0
    means = {t: s.mean_rmse for t, s in stats.items()}
    widths = {t: s.ci_half_width * 2 for t, s in stats.items()}
    best = min(means, key=means.get)
    narrowest = min(widths.values())
    near = abs(best - tau_star) <= 1
    consistent = widths[tau_star] <= 1.1 * narrowest
    table = ", ".join(f"{t}:{means[t]:.4f}+-{widths[t] / 2:.4f}" for t in sorted(means))
    ok = near and consistent and dt < 600
    assert report(
        5, ok,
        f"argmin RMSE tau={best} vs tau*={tau_star} ({'within' if near else 'outside'} +-1); "
        f"CI width at tau*={widths[tau_star]:.4f} vs narrowest {narrowest:.4f} "
        f"({'within' if consistent else 'above'} 10%); [{table}]; {dt:.0f}s < 600s",
    )


# ---------------------------------------------------------------- 6


@pytest.mark.slow
def test_criterion_6_distribution_switch():
    from npcbound.cli import switch_strategies

    t0 = time.perf_counter()
    cfg = load_config(CONFIG)
    spec = cfg.switch_delay_spec()
    stats = {name: run_batch(cfg.npc_config(sched, spec), cfg.runs) for name, _, sched in switch_strategies(cfg)}
    dt = time.perf_counter() - t0
    adaptive = stats.pop("adaptive")
    checks = {name: adaptive.mean_rmse <= s.mean_rmse + s.ci_half_width for name, s in stats.items()}
    parts = [f"adaptive {adaptive.mean_rmse:.4f}"] + [
        f"{name} {s.mean_rmse:.4f}+-{s.ci_half_width:.4f}" for name, s in stats.items()
    ]
    ok = all(checks.values()) and dt < 600
    assert report(6, ok, f"{', '.join(parts)}; adaptive <= constant + half-width: {all(checks.values())}; {dt:.0f}s < 600s")


# ---------------------------------------------------------------- 7


def test_criterion_7_prediction_consistency():
    t0 = time.perf_counter()
    cfg = load_config(CONFIG)
    plant = replace(cfg.plant, w_bar=0.0)
    worst, fresh, gaps = 0.0, 0, 0
    for tau, (sc, ca) in [(2, (1, 1)), (4, (1, 2)), (3, (0, 0))]:
        npc = replace(cfg.npc_config(tau), plant=plant)
        res = run_episode(npc, channel=ScriptedChannel({}, default=(sc, ca)))
        errs = np.array(res.prediction_errors[tau:])
        applied = errs[~np.isnan(errs)]
        fresh += applied.size
        worst = max(worst, float(applied.max()))
        gaps += npc.duration - tau - applied.size
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and gaps == 0 and dt < 1.0
    assert report(
        7, ok,
        f"max prediction error {worst:.1e} <= 1e-9 over {fresh} fresh applications, "
        f"{gaps} post-transient steps without a fresh sequence, {dt:.2f}s < 1s",
    )


# ---------------------------------------------------------------- 8


def test_criterion_8_qp_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    kkt = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 41))
        m = rng.standard_normal((n, n))
        h = m @ m.T + 0.1 * np.eye(n)
        f = 5 * rng.standard_normal(n)
        lo = -rng.uniform(0.1, 2.0, n)
        hi = rng.uniform(0.1, 2.0, n)
        res = solve_box_qp(h, f, lo, hi, tol=1e-10)
        kkt = max(kkt, box_residual(h, f, lo, hi, res.x))

    a, b = msd_plant(1.0, 10.0, 0.5, 0.05)
    q, r = np.diag([500.0, 1.0]), np.array([[0.1]])
    mpc = CondensedMpc(PlantModel(a, b, w_bar=0.1, u_bar=1e6), MpcConfig(q, r, horizon=20))
    h, f = oracles.batch_matrices(a, b, q, r, oracles.dare(a, b, q, r), 20)
    unc = 0.0
    for _ in range(20):
        x0 = rng.uniform(-2, 2, 2)
        v_ref = -np.linalg.solve(h, f @ x0)
        v, _ = mpc.solve(x0)
        unc = max(unc, float(np.max(np.abs(v.ravel() - v_ref))) / max(1.0, float(np.max(np.abs(v_ref)))))

    p = dare_terminal(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    golden = abs(float(p[0, 0]) - (1 + math.sqrt(5)) / 2)
    dt = time.perf_counter() - t0
    ok = kkt < 1e-8 and unc < 1e-8 and golden <= 1e-9 and dt < 10.0
    assert report(
        8, ok,
        f"max KKT residual {kkt:.1e} < 1e-8 on 100 box QPs; unconstrained vs batch {unc:.1e} < 1e-8; "
        f"golden-ratio Riccati error {golden:.1e} <= 1e-9; {dt:.2f}s < 10s",
    )


# ---------------------------------------------------------------- 9


@pytest.mark.slow
def test_criterion_9_dropout_rate_converges():
    t0 = time.perf_counter()
    cfg = load_config(CONFIG)
    pairs = [((0.5, 0.5), 2), ((0.5, 0.5), 4), ((1.5, 0.5), 7)]
    steps = 100_000
    parts, ok = [], True
    # the channel statistics do not depend on the controller, so a short horizon keeps this fast
    mpc_cfg = replace(cfg.mpc, horizon=10)
    for i, ((mu, sigma), tau) in enumerate(pairs):
        npc = replace(cfg.npc_config(tau), mpc=mpc_cfg, duration=steps, seed=cfg.seed + i,
                      delay_spec=[replace(cfg.npc_config(tau).delay_spec[0], mu=mu, sigma=sigma)])
        res = run_episode(npc)
        p_d = dropout_prob(from_lognormal(mu, sigma, cfg.rule), tau)
        se = math.sqrt(p_d * (1 - p_d) / steps)
        z = abs(res.dropout_rate - p_d) / se
        ok &= z <= 3.0
        parts.append(f"LN({mu},{sigma}) tau={tau}: {res.dropout_rate:.4f} vs {p_d:.4f}, {z:.2f} SE")
    dt = time.perf_counter() - t0
    ok &= dt < 60.0
    assert report(9, ok, f"{'; '.join(parts)}; all within 3 SE; {dt:.1f}s < 60s")


def _run_all():
    import tempfile

    tests = [
        test_criterion_1_closed_form_matches_chain,
        test_criterion_2_expectations_match_monte_carlo,
        test_criterion_3_probability_normalization,
        lambda: test_criterion_4_analytic_optimum(Path(tempfile.mkdtemp())),
        test_criterion_5_empirical_optimum,
        test_criterion_6_distribution_switch,
        test_criterion_7_prediction_consistency,
        test_criterion_8_qp_correctness,
        test_criterion_9_dropout_rate_converges,
    ]
    for n, test in enumerate(tests, 1):
        try:
            with contextlib.redirect_stdout(io.StringIO()):
                test()
        except Exception:  # the verdict line, if any, was already recorded
            pass
        print(RESULTS.get(n, f"criterion {n}: FAIL (error before a verdict)"))
    return all("PASS" in line for line in RESULTS.values()) and len(RESULTS) == 9


if __name__ == "__main__":
    sys.exit(0 if _run_all() else 1)
