"""Command-line front end.

Subcommands::

    npcbound optimize --config FILE [--variant NAME] [--tau-min A --tau-max B]
    npcbound sweep    --config FILE [--runs N] [--seed S] [--tau-min A --tau-max B]
    npcbound switch   --config FILE [--runs N] [--seed S]
    npcbound rerun    OUT/manifest.json

Every command writes its CSV files and a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 rerun mismatch, 2 config error, 3 infeasible,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

from . import __version__
from .bound_optimizer import InfeasibleRangeError, breakdown_csv, optimal_bound
from .config import ExperimentConfig, parse_config
from .errors import ConfigError, InfeasibleError, NumericalError
from .netsim import run_batch, run_episode, trace_csv

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3, 4
AGGREGATE_COLUMNS = ["config_id", "tau_bar", "mean_rmse", "ci_low", "ci_high", "rho1_hat", "rho2_hat", "rho3_hat"]
MANIFEST = "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str, outputs: dict):
    path = out / name
    path.write_text(text)
    outputs[name] = _sha256(path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _manifest(out: Path, command: str, params: dict, cfg: ExperimentConfig, config_text: str, outputs: dict, extra=None):
    d = cfg.distribution()
    doc = {
        "tool": "npcbound",
        "version": __version__,
        "command": command,
        "params": params,
        "config_id": cfg.config_id,
        "config": cfg.snapshot,
        "config_text": config_text,
        "seed": cfg.seed,
        "discretization_rule": cfg.rule.as_dict(),
        "delay_mean_steps": d.mean(),
        "outputs": outputs,
    }
    if cfg.target_mean is not None:
        doc["target_mean_steps"] = cfg.target_mean
        doc["mean_discrepancy_steps"] = d.mean() - cfg.target_mean
        doc["notes"] = [
            f"the discretized delay law has mean {d.mean():.3f} steps, "
            f"{d.mean() - cfg.target_mean:+.3f} from the configured target {cfg.target_mean}"
        ]
    if extra:
        doc.update(extra)
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _tau_range(args, cfg):
    lo = args.tau_min if args.tau_min is not None else (cfg.tau_range[0] if cfg.tau_range else None)
    hi = args.tau_max if args.tau_max is not None else (cfg.tau_range[1] if cfg.tau_range else None)
    return lo, hi


def cmd_optimize(cfg: ExperimentConfig, args, out: Path, config_text: str) -> int:
    d, p = cfg.distribution(), cfg.error_params()
    lo, hi = _tau_range(args, cfg)
    tau_range = None
    if lo is not None or hi is not None:
        from .bound_optimizer import default_tau_range

        dlo, dhi = default_tau_range(d, p)
        tau_range = (dlo if lo is None else lo, dhi if hi is None else hi)
    tau_star, table = optimal_bound(d, p, tau_range)
    outputs = {}
    _write(out, "breakdown.csv", breakdown_csv(table), outputs)
    best = next(b for b in table if b.tau_bar == tau_star)
    _manifest(out, "optimize", {"tau_range": tau_range}, cfg, config_text, outputs,
              {"tau_star": tau_star, "eps_total": best.eps_total})
    print(f"tau_star={tau_star}")
    print(f"eps_total={best.eps_total:.6g} p_d={best.p_d:.6g} rule={cfg.rule.mode}+{cfg.rule.offset} mean_delay={d.mean():.4f}")
    return EXIT_OK


def _aggregate_row(config_id, tau_label, stats):
    return [config_id, tau_label, stats.mean_rmse, stats.ci_low, stats.ci_high, *map(float, stats.rho_hat)]


def cmd_sweep(cfg: ExperimentConfig, args, out: Path, config_text: str) -> int:
    lo, hi = _tau_range(args, cfg)
    taus = cfg.sweep_taus if lo is None and hi is None else list(range(lo or 1, (hi or lo) + 1))
    if not taus or min(taus) < 1:
        raise ConfigError("sweep needs delay bounds >= 1")
    rows = []
    for tau in taus:
        stats = run_batch(cfg.npc_config(tau), args.runs, workers=args.workers)
        rows.append(_aggregate_row(cfg.config_id, tau, stats))
        print(f"tau_bar={tau} mean_rmse={stats.mean_rmse:.5f} ci=[{stats.ci_low:.5f}, {stats.ci_high:.5f}]")
    best = min(rows, key=lambda r: (r[2], r[1]))
    print(f"best_tau={best[1]}")
    outputs = {}
    _write(out, "sweep.csv", _csv_text(AGGREGATE_COLUMNS, rows), outputs)
    _manifest(out, "sweep", {"taus": taus, "runs": args.runs}, cfg, config_text, outputs, {"best_tau": best[1]})
    return EXIT_OK


def switch_strategies(cfg: ExperimentConfig):
    """(name, tau label, tau schedule) for the constant and adaptive strategies."""
    before, after = cfg.switch_taus
    return [
        (f"constant-{before}", str(before), [(0, before)]),
        (f"constant-{after}", str(after), [(0, after)]),
        ("adaptive", f"{before}->{after}", [(0, before), (cfg.switch_step, after)]),
    ]


def cmd_switch(cfg: ExperimentConfig, args, out: Path, config_text: str) -> int:
    spec = cfg.switch_delay_spec()
    rows, pos_rows, outputs = [], [], {}
    for name, label, schedule in switch_strategies(cfg):
        npc = cfg.npc_config(schedule, spec)
        stats = run_batch(npc, args.runs, workers=args.workers)
        rows.append(_aggregate_row(f"{cfg.config_id}/{name}", label, stats))
        for t, (m, h) in enumerate(zip(stats.position_mean, stats.position_half_width)):
            pos_rows.append([name, t, t * cfg.plant.t_d, float(m), float(m - h), float(m + h)])
        _write(out, f"trace_{name}.csv", trace_csv(run_episode(npc, 0)), outputs)
        print(f"{name} mean_rmse={stats.mean_rmse:.5f} ci=[{stats.ci_low:.5f}, {stats.ci_high:.5f}]")
    _write(out, "switch.csv", _csv_text(AGGREGATE_COLUMNS, rows), outputs)
    _write(out, "switch_positions.csv", _csv_text(["strategy", "step", "time", "mean_x1", "ci_low", "ci_high"], pos_rows), outputs)
    _manifest(out, "switch", {"runs": args.runs}, cfg, config_text, outputs)
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "sweep": cmd_sweep, "switch": cmd_switch}


def _run(args, config_text: str, config_id: str) -> int:
    cfg = parse_config(config_text, args.variant, config_id=config_id)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "runs", None) is None:
        args.runs = cfg.runs
    if args.runs is not None and args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[args.command](cfg, args, out, config_text)


def cmd_rerun(args) -> int:
    """Re-execute the command recorded in a manifest and compare output hashes."""
    path = Path(args.manifest)
    try:
        doc = json.loads(path.read_text())
        recorded = doc["rerun_args"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"unreadable manifest {path}: {exc}") from None
    ns = argparse.Namespace(**recorded)
    ns.out = args.out or str(path.parent / "rerun")
    config_id = doc["config_id"].split(":", 1)[0]
    code = _run(ns, doc["config_text"], config_id)
    if code != EXIT_OK:
        return code
    fresh = json.loads((Path(ns.out) / MANIFEST).read_text())
    mismatched = [n for n, h in doc["outputs"].items() if fresh["outputs"].get(n) != h]
    if mismatched:
        print("rerun mismatch: " + ", ".join(sorted(mismatched)))
        return EXIT_MISMATCH
    print(f"rerun identical: {len(doc['outputs'])} files")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npcbound", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runs=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--variant", default=None, help="apply the [variant:NAME] overrides")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="npcbound-out", help="output directory")
        p.add_argument("--tau-min", type=int, default=None)
        p.add_argument("--tau-max", type=int, default=None)
        if runs:
            p.add_argument("--runs", type=int, default=None, help="episodes per configuration")
            p.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    common(sub.add_parser("optimize", help="compute the optimal delay bound"))
    common(sub.add_parser("sweep", help="Monte Carlo RMSE over delay bounds"), runs=True)
    common(sub.add_parser("switch", help="constant vs adaptive bound under a delay-law switch"), runs=True)
    rr = sub.add_parser("rerun", help="reproduce the outputs recorded in a manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            return cmd_rerun(args)
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        code = _run(args, text, path.stem)
        # record the resolved arguments so the manifest can be replayed
        man = Path(args.out) / MANIFEST
        doc = json.loads(man.read_text())
        doc["rerun_args"] = {k: v for k, v in vars(args).items() if k != "out"}
        man.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return code
    except InfeasibleRangeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.rejected:
            print(f"rejected tau_bar values: {exc.rejected}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
