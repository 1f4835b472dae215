"""Command-line runner: simulate, compare, bounds, verify.

Exit codes: 0 ok, 1 usage or config error, 2 invariant violation, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from collections import OrderedDict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, oracle
from .config import ExperimentFile, load_experiment, resolve_seed, with_overrides
from .engine import CheckStat, ConfigError, InvariantReport, RunResult, run_batch, snapshot_times
from .graph import metropolis_weights
from .seeding import derived_seed

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_RUNTIME = 0, 1, 2, 3
TRAJECTORY_COLUMNS = ("run", "t", "agent", "regret")
COMPARISON_COLUMNS = ("policy", "t", "mean", "sem")
GROUP_COLUMNS = ("policy", "group", "t", "mean", "sem", "agents")
CONCENTRATION_EPSILON = 1.0
# verify tolerances
RECON_TOL = 1e-9
SUM_TOL = 1e-10
CLOSED_FORM_TOL = 1e-10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def _workers(flag: int | None) -> int:
    if flag is not None:
        if flag < 1:
            raise UsageError(f"--workers must be >= 1, got {flag}")
        return flag
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _out_dir(args, exp: ExperimentFile) -> Path:
    out = args.out or exp.output_dir or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_fault(text: str | None):
    """ROUND:AGENT:ARM[:DELTA] with 1-based agent and arm."""
    if text is None:
        return None
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise UsageError(f"--inject-fault expects ROUND:AGENT:ARM[:DELTA], got {text!r}")
    try:
        rnd, agent, arm = (int(p) for p in parts[:3])
        delta = float(parts[3]) if len(parts) == 4 else 1e-3
    except ValueError:
        raise UsageError(f"--inject-fault expects integers and a real delta, got {text!r}") from None
    if rnd < 0 or agent < 1 or arm < 1:
        raise UsageError("--inject-fault needs round >= 0 and 1-based agent and arm")
    return rnd, agent - 1, arm - 1, delta


def _load(path, args, **overrides):
    exp = load_experiment(path)
    exp = with_overrides(exp, **overrides)
    seed, source = resolve_seed(getattr(args, "seed", None), exp.seed)
    return exp, seed, source


def _policy_label(exp: ExperimentFile) -> str:
    if isinstance(exp.policy, tuple) or isinstance(exp.varsigma, tuple) or isinstance(exp.beta, tuple):
        return Path(exp.source).stem
    if exp.policy == "dec_klucb":
        return f"dec_klucb(varsigma={exp.varsigma:g})"
    if exp.policy == "dec_ucb1":
        return f"dec_ucb1(beta={exp.beta:g})"
    return exp.policy


def agent_groups(cfg) -> "OrderedDict[str, list[int]]":
    """Agents grouped by (policy, exploration parameter, neighborhood size),
    numbered in order of first appearance."""
    sizes = cfg.graph.neighborhood_sizes()
    keys: OrderedDict[tuple, list[int]] = OrderedDict()
    for i, p in enumerate(cfg.effective_policies):
        param = cfg.varsigma[i] if p.endswith("klucb") else cfg.beta[i]
        if not p.startswith("dec_"):
            param = None
        keys.setdefault((p, param, int(sizes[i])), []).append(i)
    out: OrderedDict[str, list[int]] = OrderedDict()
    for g, ((p, param, size), members) in enumerate(keys.items(), start=1):
        tag = p if param is None else f"{p}(param={param:g})"
        out[f"group{g}:{tag}:nbrs={size}"] = members
    return out


def write_trajectories(results: list[RunResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for r in sorted(results, key=lambda r: r.run_index):
            for row, t in enumerate(r.times):
                for i in range(r.regret.shape[1]):
                    w.writerow([r.run_index, int(t), i + 1, _fmt(r.regret[row, i])])


def _summary(exp, seed, source, cfg, batch, runtime, extra=None) -> dict:
    finals = np.stack([r.final_regret for r in batch.runs])          # (R, N)
    std_agent = finals.std(axis=0, ddof=1) if finals.shape[0] > 1 else np.zeros(finals.shape[1])
    resolved = exp.echo()
    resolved["seed"] = seed
    out = {
        "config": resolved,
        "seed_source": source,
        "seeds": {
            "master_seed": seed,
            "graph_stream": "SeedSequence(master_seed, spawn_key=(2,))",
            "run_streams": batch.runs[0].seeds["scheme"],
            "run_indices": [r.run_index for r in batch.runs],
        },
        "graph": {
            "fingerprint": cfg.graph.fingerprint(),
            "nodes": cfg.graph.node_count,
            "edges": sorted([i + 1, j + 1] for i, j in cfg.graph.edges),
            "rho2": metropolis_weights(cfg.graph).rho2,
        },
        "arm_means": [float(m) for m in cfg.arms.mu],
        "effective_policies": list(cfg.effective_policies),
        "final_regret": {
            "mean_by_agent": [float(x) for x in batch.final_by_agent()],
            "std_by_agent": [float(x) for x in std_agent],
            "mean": batch.final_mean,
            "std": batch.std_final,
        },
        "runtime_seconds": runtime,
    }
    if extra:
        out.update(extra)
    return out


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _merge_invariants(results) -> InvariantReport | None:
    reports = [r.invariants for r in results if r.invariants is not None]
    if not reports:
        return None
    total = InvariantReport()
    for rep in reports:
        total.merge(rep)
    return total


def _ledger_checks(results, cfg, override_guard: bool, epsilon: float, out: Path | None = None) -> dict:
    """Coefficient-ledger checks over every traced run."""
    w = metropolis_weights(cfg.graph)
    N, M = cfg.graph.node_count, len(cfg.arms)
    checks = {
        "reconstruction": CheckStat(),
        "coefficient_sum": CheckStat(),
        "closed_form_agreement": CheckStat(),
        "zero_case": CheckStat(),
        "coefficient_concentration": CheckStat(),
    }
    notes = []
    f2 = None
    if cfg.graph.is_connected() and all(p.startswith("dec_") for p in cfg.effective_policies):
        try:
            f2 = analysis.f2(epsilon, w.rho2, N, M)
        except analysis.F2ScanError as exc:
            notes.append(f"concentration check not evaluated: {exc}")
    else:
        notes.append("concentration check needs a connected graph with every agent fusing")
    checks["coefficient_concentration"].applicable = f2 is not None
    worst = None
    for r in results:
        ledger = oracle.track(r.trace, override_guard=override_guard)
        # the closed form costs O(t N^3) per step, so long traces sample ~200 times
        rec = oracle.check_reconstruction(ledger, closed_form_every=max(1, cfg.horizon // 200))
        tag = f"run={r.run_index}"
        checks["reconstruction"].record(np.array([RECON_TOL - rec.max_abs_error]), tag)
        checks["coefficient_sum"].record(np.array([SUM_TOL - rec.max_sum_error]), tag)
        checks["closed_form_agreement"].record(np.array([CLOSED_FORM_TOL - rec.max_closed_form_gap]), tag)
        checks["zero_case"].record(np.array([0.0 if rec.closed_form_zero_case else -1.0]), tag)
        if f2 is not None:
            rep = oracle.check_concentration(ledger, epsilon, f2)
            stat = checks["coefficient_concentration"]
            stat.checked += rep.stat.checked
            stat.violations += rep.stat.violations
            stat.tightest = min(stat.tightest, rep.stat.tightest)
            if stat.first_violation is None and rep.stat.first_violation is not None:
                stat.first_violation = f"{tag} {rep.stat.first_violation}"
                worst = rep.worst
        if out is not None:
            oracle.write_ledger_csv(ledger, out / f"ledger_run{r.run_index}.csv", r.run_index)
    return {"checks": checks, "f2": f2, "epsilon": epsilon, "notes": notes, "concentration_worst": worst}


def _print_checks(title: str, checks: dict) -> bool:
    ok = True
    print(title)
    for name, stat in checks.items():
        if not stat.applicable:
            status = "n/a"
        elif stat.checked == 0:
            status = "pass (vacuous)"
        else:
            status = "pass" if stat.passed else "FAIL"
            ok &= stat.passed
        margin = "-" if stat.tightest == math.inf else f"{stat.tightest + 0.0:.3g}"
        print(f"  {name:<26} {status:<15} checked={stat.checked:<10} violations={stat.violations:<8} "
              f"tightest_margin={margin}")
    return ok


def cmd_simulate(args) -> int:
    exp, seed, source = _load(args.config, args,
                              invariant_checks=True if args.check_invariants else None,
                              oracle=True if args.oracle else None)
    cfg = exp.build(seed)
    out = _out_dir(args, exp)
    workers = _workers(args.workers)
    start = time.perf_counter()
    if cfg.oracle_tracking and not args.override_guard:
        _guard(cfg)
    batch = run_batch(cfg, workers=workers)
    runtime = time.perf_counter() - start
    write_trajectories(batch.runs, out / "trajectories.csv")
    extra = {}
    status = EXIT_OK
    inv = _merge_invariants(batch.runs)
    if inv is not None:
        extra["invariants"] = inv.as_dict()
        if not _print_checks("invariant checks", inv.checks):
            status = EXIT_INVARIANT
    if cfg.oracle_tracking:
        led = _ledger_checks(batch.runs, cfg, args.override_guard, CONCENTRATION_EPSILON, out)
        extra["oracle"] = {k: v.as_dict() for k, v in led["checks"].items()}
        extra["oracle_notes"] = led["notes"]
        if not _print_checks("coefficient ledger checks", led["checks"]):
            status = EXIT_INVARIANT
    _write_json(_summary(exp, seed, source, cfg, batch, runtime, extra), out / "summary.json")
    print(f"wrote {out / 'trajectories.csv'} and {out / 'summary.json'}; "
          f"mean final regret {batch.final_mean:.6g} over {len(batch.runs)} run(s)")
    return status


def _guard(cfg) -> None:
    N, T = cfg.graph.node_count, cfg.horizon
    if N > oracle.GUARD_MAX_AGENTS or T > oracle.GUARD_MAX_HORIZON:
        raise oracle.OracleGuardError(
            f"coefficient tracking limited to N <= {oracle.GUARD_MAX_AGENTS}, T <= {oracle.GUARD_MAX_HORIZON} "
            f"(got N={N}, T={T}); use --override-guard")


def cmd_compare(args) -> int:
    loaded = [_load(p, args) for p in args.config]
    base, seed, source = loaded[0]
    for exp, s, _ in loaded[1:]:
        for key in ("graph", "arms", "T", "runs", "snapshot_interval"):
            if getattr(exp, key) != getattr(base, key):
                raise ConfigError(f"{exp.source}: {key} differs from {base.source}; compared configs must share it")
        if s != seed:
            raise ConfigError(f"{exp.source}: seed {s} differs from {base.source} seed {seed}")
    out = _out_dir(args, base)
    workers = _workers(args.workers)
    labels = []
    for exp, _, _ in loaded:
        label = _policy_label(exp)
        count = sum(1 for x in labels if x == label or x.startswith(label + "#"))
        labels.append(label if count == 0 else f"{label}#{count + 1}")
    start = time.perf_counter()
    comparison, groups, summaries = [], [], {}
    for c, (label, (exp, _, _)) in enumerate(zip(labels, loaded)):
        cfg = exp.build(seed)
        if not args.shared_seeds:
            # same graph, independent reward streams per compared config
            cfg = replace(cfg, seed=derived_seed(seed, c))
        batch = run_batch(cfg, workers=workers)
        stack = np.stack([r.regret for r in batch.runs])          # (R, times, N)
        R = stack.shape[0]
        pooled = stack.mean(axis=2)
        sem = pooled.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(pooled.shape[1])
        for row, t in enumerate(batch.times):
            comparison.append((label, int(t), batch.mean[row], sem[row]))
        for gname, members in agent_groups(cfg).items():
            per_run = stack[:, :, members].mean(axis=2)
            gmean = per_run.mean(axis=0)
            gsem = per_run.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(gmean)
            agents = " ".join(str(i + 1) for i in members)
            for row, t in enumerate(batch.times):
                groups.append((label, gname, int(t), gmean[row], gsem[row], agents))
        summaries[label] = {
            "config": {**exp.echo(), "seed": seed},
            "stream_seed": int(cfg.seed),
            "final_mean": batch.final_mean,
            "final_std": batch.std_final,
            "final_by_group": {g: float(batch.final_by_agent()[m].mean()) for g, m in agent_groups(cfg).items()},
        }
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for label, t, m, s in comparison:
            w.writerow([label, t, _fmt(m), _fmt(s)])
    with open(out / "groups.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GROUP_COLUMNS)
        for label, g, t, m, s, agents in groups:
            w.writerow([label, g, t, _fmt(m), _fmt(s), agents])
    _write_json({"seed": seed, "seed_source": source, "shared_reward_streams": args.shared_seeds,
                 "policies": summaries, "runtime_seconds": time.perf_counter() - start},
                out / "comparison.json")
    for label, s in summaries.items():
        print(f"{label:<32} final mean regret {s['final_mean']:.6g} (std {s['final_std']:.3g})")
    return EXIT_OK


def bound_reports(cfg) -> list[analysis.BoundReport]:
    """One report per agent at the config's horizon."""
    w = metropolis_weights(cfg.graph)
    N, M, T = cfg.graph.node_count, len(cfg.arms), max(cfg.horizon, 1)
    mu = cfg.arms.mu
    sizes = cfg.graph.neighborhood_sizes()
    constants_cache: dict[float, analysis.BoundConstants | str] = {}
    reports = []
    for i, p in enumerate(cfg.effective_policies):
        single = not p.startswith("dec_")
        size = int(sizes[i])
        notes = []
        if p.endswith("klucb"):
            coeff = analysis.asym_coeff_klucb(mu, size, cfg.varsigma[i], single)
            params = {"varsigma": cfg.varsigma[i], "neighborhood": size}
            notes.append("finite-time KL-UCB constant not computed; asymptotic coefficient only")
            rep = analysis.BoundReport(p, params, coeff, horizon=T, notes=notes)
        else:
            coeff = analysis.asym_coeff_ucb1(mu, size, cfg.beta[i], single)
            params = {"beta": cfg.beta[i], "neighborhood": size}
            rep = analysis.BoundReport(p, params, coeff, horizon=T, notes=notes)
            if not single:
                if not cfg.graph.is_connected():
                    notes.append("finite bound needs a connected graph")
                else:
                    # constants depend on the agent only through its beta
                    if cfg.beta[i] not in constants_cache:
                        try:
                            constants_cache[cfg.beta[i]] = analysis.bound_constants(w.rho2, N, M, cfg.beta, agent=i)
                        except analysis.F2ScanError as exc:
                            constants_cache[cfg.beta[i]] = str(exc)
                    c = constants_cache[cfg.beta[i]]
                    if isinstance(c, str):
                        notes.append(f"finite bound not computed: {c}")
                    else:
                        rep.constants = c
                        rep.finite_bound = analysis.finite_bound_ucb1(T, mu, size, cfg.beta[i], c)
        rep.params["single_agent_coefficient"] = float(np.sum(
            analysis.asym_coeff_klucb(mu, 1, 0.0, True) if p.endswith("klucb")
            else analysis.asym_coeff_ucb1(mu, 1, 0.0, True)))
        rep.params["lower_bound_coefficient"] = float(np.sum(analysis.lower_bound_coeff(mu, N)))
        reports.append(rep)
    return reports


def cmd_bounds(args) -> int:
    exp, seed, _ = _load(args.config, args)
    cfg = exp.build(seed)
    out = _out_dir(args, exp)
    reports = bound_reports(cfg)
    times = [t for t in snapshot_times(cfg.horizon, cfg.snapshot_interval) if t >= 1]
    rows = []
    for gname, members in agent_groups(cfg).items():
        rep = reports[members[0]]
        for t in times:
            rows.append((t, rep.total_coefficient * math.log(t), f"{rep.policy}:asymptotic", gname))
            if rep.finite_bound is not None:
                fb = analysis.finite_bound_ucb1(t, cfg.arms.mu, rep.params["neighborhood"],
                                                rep.params["beta"], rep.constants)
                rows.append((t, fb, f"{rep.policy}:finite", gname))
        for t in times:
            rows.append((t, rep.params["lower_bound_coefficient"] * math.log(t), "lower_bound", gname))
    analysis.write_bound_csv(rows, out / "bounds.csv")
    _write_json({"seed": seed, "rho2": metropolis_weights(cfg.graph).rho2,
                 "agents": [dict(agent=i + 1, **r.as_dict()) for i, r in enumerate(reports)]},
                out / "bounds.json")
    print(f"{'agent':>5} {'policy':<13} {'|N_i|':>5} {'coeff':>12} {'single':>12} {'finite@T':>14}")
    for i, r in enumerate(reports):
        fb = "-" if r.finite_bound is None else f"{r.finite_bound:.6g}"
        print(f"{i + 1:>5} {r.policy:<13} {r.params['neighborhood']:>5} {r.total_coefficient:>12.6g} "
              f"{r.params['single_agent_coefficient']:>12.6g} {fb:>14}")
    return EXIT_OK


def cmd_verify(args) -> int:
    exp, seed, source = _load(args.config, args, invariant_checks=True, oracle=True)
    cfg = exp.build(seed)
    if not args.override_guard:
        _guard(cfg)
    fault = _parse_fault(args.inject_fault)
    if fault is not None:
        if fault[1] >= cfg.graph.node_count or fault[2] >= len(cfg.arms):
            raise UsageError("--inject-fault agent or arm out of range")
        cfg = replace(cfg, fault=fault)
    workers = _workers(args.workers)
    start = time.perf_counter()
    results = run_batch(cfg, workers=workers).runs
    inv = _merge_invariants(results)
    led = _ledger_checks(results, cfg, args.override_guard, args.epsilon)
    ok = _print_checks("invariant checks", inv.checks)
    ok &= _print_checks("coefficient ledger checks", led["checks"])
    for note in led["notes"]:
        print(f"  note: {note}")
    report = {
        "config": {**exp.echo(), "seed": seed},
        "seed_source": source,
        "fault": None if fault is None else dict(zip(("round", "agent", "arm", "delta"),
                                                      (fault[0], fault[1] + 1, fault[2] + 1, fault[3]))),
        "invariants": inv.as_dict(),
        "oracle": {k: v.as_dict() for k, v in led["checks"].items()},
        "concentration": {"epsilon": led["epsilon"], "f2": led["f2"], "worst": led["concentration_worst"]},
        "notes": led["notes"],
        "passed": bool(ok),
        "runtime_seconds": time.perf_counter() - start,
    }
    if args.out or exp.output_dir:
        _write_json(report, _out_dir(args, exp) / "verify.json")
    print("verify: " + ("all checks pass" if ok else "violations found"))
    return EXIT_OK if ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decbandit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, multi=False):
        if multi:
            p.add_argument("--config", nargs="+", required=True, metavar="PATH")
        else:
            p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--workers", type=int, metavar="N")

    p = sub.add_parser("simulate", help="run a config and write trajectories.csv and summary.json")
    common(p)
    p.add_argument("--check-invariants", action="store_true")
    p.add_argument("--oracle", action="store_true", help="track reward coefficients and dump the ledger")
    p.add_argument("--override-guard", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several configs on shared graph, arms and seeds")
    common(p, multi=True)
    p.add_argument("--no-shared-seeds", dest="shared_seeds", action="store_false",
                   help="give each config its own reward streams")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bounds", help="asymptotic and finite-time regret bounds per agent")
    common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="run with every structural and coefficient check enabled")
    common(p)
    p.add_argument("--override-guard", action="store_true")
    p.add_argument("--epsilon", type=float, default=CONCENTRATION_EPSILON,
                   help="tolerance of the coefficient-concentration check")
    p.add_argument("--inject-fault", metavar="ROUND:AGENT:ARM[:DELTA]",
                   help="perturb one consensus estimate after a round (default delta 1e-3)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, oracle.OracleGuardError, ValueError) as exc:
        print(f"decbandit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"decbandit: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
