"""Compare the compiled and numpy projected-gradient kernels.

Times one saturated MPC solve (the case the simulator cannot shortcut with
the unconstrained solution) and a batch of random box QPs, per backend::

    python3 benchmarks/bench_qp.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from npcbound import qp
from npcbound.mpc_core import CondensedMpc, MpcConfig, PlantModel, msd_plant


def _mpc_problem(horizon):
    a, b = msd_plant()
    mpc = CondensedMpc(PlantModel(a, b, w_bar=0.1, u_bar=2.0), MpcConfig(np.diag([500.0, 1.0]), [[0.1]], horizon))
    f = mpc.F @ np.array([1.5, -3.0])
    lo, hi = mpc.input_bounds(np.zeros(1))
    return mpc.H, f, lo, hi, mpc.step


def _random_problem(n, seed=0):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    h = m @ m.T + 0.1 * np.eye(n)
    return h, 5 * rng.standard_normal(n), -np.ones(n), np.ones(n), 1.0 / np.linalg.eigvalsh(h)[-1]


def bench(backends, repeat):
    cases = {f"mpc N={n}": _mpc_problem(n) for n in (10, 20, 40)}
    cases.update({f"random n={n}": _random_problem(n) for n in (20, 80)})
    print(f"{'case':<14}" + "".join(f"{b:>14}" for b in backends) + "   speedup")
    for name, (h, f, lo, hi, step) in cases.items():
        times = []
        for b in backends:
            kern = qp.kernel(b)
            x0 = np.zeros_like(f)
            t = min(timeit.repeat(lambda: kern(h, f, lo, hi, x0, step, 1e-8, 50_000), number=1, repeat=repeat))
            times.append(t)
        ratio = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{name:<14}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times) + ratio)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    backends = ["python"]
    try:
        qp.kernel("cython")
        backends.append("cython")
    except ImportError:
        print("compiled kernel not built; timing the numpy kernel only")
    bench(backends, args.repeat)


if __name__ == "__main__":
    main()
