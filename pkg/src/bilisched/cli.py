"""Command-line entry points for the solver, simulator, and trace pipeline.

All CSV files use a comma separator, a header row, '.' decimals, and LF
line endings.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from bilisched import allocation, distributed, oracle, simulation, trace
from bilisched.model import load_scenario
from bilisched.svgplot import LineSeries, render_line_plot


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_table(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [dict(zip(header, row)) for row in reader]
    return header, rows


# -- solve ------------------------------------------------------------------


def _cmd_solve(args):
    _, rows = _read_table(args.problem)
    pairs = {(int(r["i"]), int(r["j"])): float(r["r_hat"]) for r in rows}
    i_ids = sorted({i for i, _ in pairs})
    j_ids = sorted({j for _, j in pairs})
    q = np.zeros(len(i_ids))
    w = np.ones(len(i_ids))
    n = np.zeros(len(j_ids))
    r_hat = np.zeros((len(i_ids), len(j_ids)))
    gamma = float(rows[0]["gamma"])
    v_param = float(rows[0]["V"])
    for r in rows:
        i, j = i_ids.index(int(r["i"])), j_ids.index(int(r["j"]))
        r_hat[i, j] = float(r["r_hat"])
        q[i] = float(r["Q"])
        w[i] = float(r["w"])
        n[j] = float(r["n"])
    bound = max(1.0, float(np.abs(r_hat).max()))
    if gamma <= bound:
        bound = max(np.abs(r_hat).max(), gamma / 1.2)
    problem = allocation.AllocationProblem(weights=w, queue_lengths=q, r_hat=r_hat,
                                           capacities=n, gamma=gamma, V=v_param,
                                           reward_bound=bound)
    result = allocation.solve(problem, tol=args.tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "allocation.csv", ["i", "j", "y"],
               [(i_ids[i], j_ids[j], repr(float(result.y[i, j])))
                for i in range(len(i_ids)) for j in range(len(j_ids))])
    _write_csv(out / "duals.csv", ["j", "price"],
               [(j_ids[j], repr(float(result.server_prices[j]))) for j in range(len(j_ids))])
    _write_csv(out / "summary.csv", ["objective", "kkt_residual", "iterations", "converged"],
               [(repr(result.objective), repr(result.kkt_residual),
                 result.iterations, int(result.converged))])
    print(f"solved: objective {result.objective:.6g}, residual {result.kkt_residual:.3g}")
    return 0


# -- oracle -----------------------------------------------------------------


def _cmd_oracle(args):
    _, rows = _read_table(args.problem)
    i_ids = sorted({int(r["i"]) for r in rows})
    j_ids = sorted({int(r["j"]) for r in rows})
    rho = np.zeros(len(i_ids))
    n = np.zeros(len(j_ids))
    rewards = np.zeros((len(i_ids), len(j_ids)))
    for r in rows:
        i, j = i_ids.index(int(r["i"])), j_ids.index(int(r["j"]))
        rewards[i, j] = float(r["r"])
        rho[i] = float(r["rho"])
        n[j] = float(r["n"])
    solution = oracle.solve_oracle(oracle.OracleProblem(rho, n, rewards))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "p.csv", ["i", "j", "p"],
               [(i_ids[i], j_ids[j], repr(float(solution.p[i, j])))
                for i in range(len(i_ids)) for j in range(len(j_ids))])
    _write_csv(out / "summary.csv", ["value", "duality_gap"],
               [(repr(solution.value), repr(solution.duality_gap))])
    print(f"oracle value {solution.value:.6g} (gap {solution.duality_gap:.3g})")
    return 0


# -- simulate and sweep -------------------------------------------------------


def _run_summary(log):
    half = log.total_queue[log.horizon // 2:]
    return {
        "policy": log.policy, "seed": log.seed, "T": log.horizon,
        "V": repr(log.V), "oracle_value": repr(log.oracle_value),
        "final_regret": repr(float(log.regret[-1])) if log.horizon else "0.0",
        "final_holding_cost": repr(float(log.holding_cost[-1])) if log.horizon else "0.0",
        "mean_queue_second_half": repr(float(half.mean())) if len(half) else "0.0",
        "total_realized_reward": repr(float(log.realized_reward.sum())),
        "estimator_refreshes": int(log.refresh_count[-1]) if log.horizon else 0,
    }


def _cmd_simulate(args):
    scenario = load_scenario(args.scenario)
    log = simulation.run(scenario, policy_name=args.policy, horizon=args.T, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.to_csv(out / "metrics.csv")
    summary = _run_summary(log)
    _write_csv(out / "summary.csv", list(summary), [list(summary.values())])
    print(f"{log.policy} seed {log.seed}: regret {summary['final_regret']}, "
          f"mean queue {summary['mean_queue_second_half']}")
    return 0


def _cmd_sweep(args):
    scenario = load_scenario(args.scenario)
    policies = args.policies.split(",")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    by_policy = {}
    for policy in policies:
        paths = []
        for seed in range(args.seeds):
            log = simulation.run(scenario, policy_name=policy, horizon=args.T, seed=seed)
            path = out / f"metrics_{policy}_{seed}.csv"
            log.to_csv(path)
            paths.append(path)
            summaries.append(_run_summary(log))
        by_policy[policy] = [trace._read_metrics_csv(p) for p in paths]
    _write_csv(out / "summary.csv", list(summaries[0]),
               [list(s.values()) for s in summaries])

    agg_rows = []
    for metric in ("regret", "total_queue", "holding_cost"):
        series = []
        for policy, frames in by_policy.items():
            stack = np.stack([f[metric] for f in frames])
            mean = stack.mean(axis=0)
            if len(frames) > 1:
                half = 1.96 * stack.std(axis=0, ddof=1) / math.sqrt(len(frames))
            else:
                half = np.zeros_like(mean)
            steps = frames[0]["t"]
            series.append(LineSeries(policy, steps, mean, mean - half, mean + half))
            for k in range(len(steps)):
                agg_rows.append((metric, policy, int(steps[k]), repr(float(mean[k])),
                                 repr(float(mean[k] - half[k])), repr(float(mean[k] + half[k]))))
        svg = render_line_plot(series, title=metric.replace("_", " "),
                               xlabel="step", ylabel=metric.replace("_", " "))
        (out / f"{metric}.svg").write_text(svg, encoding="utf-8")
    _write_csv(out / "aggregate.csv", ["metric", "policy", "t", "mean", "ci_lo", "ci_hi"],
               agg_rows)
    print(f"swept {len(policies)} policies x {args.seeds} seeds -> {out}")
    return 0


# -- distributed dynamics -------------------------------------------------------


def _parse_penalty(text: str, capacity: float) -> distributed.PenaltySpec:
    parts = text.split(":")
    kind = parts[0]
    if kind == "power":
        return distributed.PenaltySpec("power", capacity,
                                       exponent=float(parts[1]) if len(parts) > 1 else 1.0)
    if kind == "bounded":
        exponent = float(parts[1]) if len(parts) > 1 else 1.0
        ceiling = float(parts[2]) if len(parts) > 2 else 1.0
        return distributed.PenaltySpec("bounded", capacity, exponent=exponent, ceiling=ceiling)
    if kind == "rational":
        return distributed.PenaltySpec("rational", capacity)
    raise ValueError(f"unknown penalty {text!r}")


def _cmd_distsim(args):
    _, rows = _read_table(args.problem)
    i_ids = sorted({int(r["i"]) for r in rows})
    j_ids = sorted({int(r["j"]) for r in rows})
    costs = np.zeros((len(i_ids), len(j_ids)))
    wq = np.zeros(len(i_ids))
    caps = np.zeros(len(j_ids))
    for r in rows:
        i, j = i_ids.index(int(r["i"])), j_ids.index(int(r["j"]))
        costs[i, j] = float(r["cost"])
        wq[i] = float(r["utility_scale"])
        caps[j] = float(r["capacity"])
    penalties = [_parse_penalty(args.penalty, caps[j]) for j in range(len(j_ids))]
    problem = distributed.SoftPenaltyProblem(wq, costs, penalties)

    fwd = np.zeros((len(i_ids), len(j_ids)), dtype=int)
    bwd = np.zeros_like(fwd)
    if args.delays:
        _, delay_rows = _read_table(args.delays)
        for r in delay_rows:
            i, j = i_ids.index(int(r["i"])), j_ids.index(int(r["j"]))
            fwd[i, j] = int(r["forward"])
            bwd[i, j] = int(r["backward"])
    dyn = distributed.DelayedDynamics(problem, np.full(costs.shape, args.alpha),
                                      fwd, bwd, mode=args.mode)

    eq = distributed.equilibrium_solve(problem)
    report = distributed.stability_check(dyn, eq)
    start = eq.y * 1.01
    traj = distributed.simulate_dynamics(dyn, start, args.ticks)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["tick"] + [f"y_{i}_{j}" for i in i_ids for j in j_ids]
    _write_csv(out / "trajectory.csv", header,
               [[r] + [repr(float(v)) for v in traj[r].reshape(-1)]
                for r in range(traj.shape[0])])
    _write_csv(out / "equilibrium.csv", ["i", "j", "y"],
               [(i_ids[i], j_ids[j], repr(float(eq.y[i, j])))
                for i in range(len(i_ids)) for j in range(len(j_ids))])
    _write_csv(out / "stability.csv",
               ["i", "j", "margin", "general_threshold", "conservative_threshold",
                "specialized_threshold", "stable"],
               [(i_ids[i], j_ids[j], repr(float(report.margins[i, j])),
                 repr(float(report.general_thresholds[i, j])),
                 repr(float(report.conservative_thresholds[i, j])),
                 repr(float(report.specialized_thresholds[j])), int(report.stable))
                for i in range(len(i_ids)) for j in range(len(j_ids))])
    gap = abs(traj[-1].sum(axis=1) - eq.row_totals).max()
    print(f"stable={report.stable}, max margin {report.margins.max():.4f}, "
          f"final row-total gap {gap:.3g}")
    return 0


# -- trace pipeline ---------------------------------------------------------------


def _cmd_ingest(args):
    result = trace.read_trace(args.collections, args.machines, args.cpi)
    scenario, summary = trace.export_scenario(result, k=args.K,
                                              step_seconds=args.step_seconds, seed=args.seed)
    from bilisched.model import save_scenario
    save_scenario(scenario, args.out)
    print(f"ingested {len(result.collections)} collections, {len(result.machines)} machines, "
          f"{len(result.cpi)} cpi rows ({len(result.rejected)} rejected)")
    print(f"scenario: {scenario.num_job_classes} job classes, "
          f"{scenario.num_server_classes} machine classes, T={summary.horizon} -> {args.out}")
    return 0


def _cmd_gen_trace(args):
    paths = trace.generate_trace(args.out, seed=args.seed,
                                 num_collections=args.collections,
                                 window_seconds=args.window)
    for name, path in paths.items():
        print(f"wrote {path}")
    return 0


def _cmd_plot(args):
    files = args.infile
    frames = [trace._read_metrics_csv(p) for p in files]
    steps = frames[0]["t"]
    stack = np.stack([f[args.column] for f in frames])
    mean = stack.mean(axis=0)
    if len(frames) > 1:
        half = 1.96 * stack.std(axis=0, ddof=1) / math.sqrt(len(frames))
        series = [LineSeries(args.column, steps, mean, mean - half, mean + half)]
    else:
        series = [LineSeries(args.column, steps, mean)]
    svg = render_line_plot(series, title=args.column.replace("_", " "),
                           xlabel="step", ylabel=args.column.replace("_", " "))
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilisched",
                                     description="Queue scheduling with learned bilinear rewards")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one allocation program from CSV")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("oracle", help="solve the oracle assignment LP from CSV")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("simulate", help="run one simulation")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", default="sabr", choices=simulation.POLICIES)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="run a seed x policy grid with aggregate plots")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policies", default="sabr")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("distsim", help="delayed distributed allocation dynamics")
    p.add_argument("--problem", required=True)
    p.add_argument("--penalty", default="power:1.0")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--delays", default=None)
    p.add_argument("--ticks", type=int, default=1000)
    p.add_argument("--mode", choices=("job", "server"), default="job")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_distsim)

    p = sub.add_parser("ingest", help="trace CSVs -> scenario file")
    p.add_argument("--collections", required=True)
    p.add_argument("--machines", required=True)
    p.add_argument("--cpi", required=True)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--step-seconds", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("gen-trace", help="write a synthetic schema-compatible trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--collections", type=int, default=70)
    p.add_argument("--window", type=float, default=5000.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("plot", help="metrics CSV(s) -> SVG line plot")
    p.add_argument("--in", dest="infile", nargs="+", required=True)
    p.add_argument("--column", default="regret")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
