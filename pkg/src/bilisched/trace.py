"""Cluster-trace experiment pipeline: ingest, classing, rewards, scenario export.

The trace schema is three CSV files (comma separator, header row, '.'
decimal, LF line endings):

    collections.csv  collection_id,enqueue_time,cpu_request,memory_request,instance_count
    machines.csv     machine_id,cpu_capacity,memory_capacity
    cpi.csv          collection_id,machine_id,cpi

Collections are clustered into job classes on their per-instance resource
requests; machine classes are the distinct capacity pairs.  Observed cycles
per instruction define per-cell assignment rewards through their inverses,
and the whole summary exports as a simulator scenario with one-step service.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bilisched.model import (
    JobClassSpec,
    RewardTableEnvironment,
    Scenario,
    ServerClassSpec,
    SystemConfig,
)
from bilisched.svgplot import LineSeries, render_line_plot

__all__ = [
    "TraceRecord",
    "MachineRecord",
    "CpiRecord",
    "RewardTable",
    "IngestResult",
    "build_features",
    "emit_plots",
    "estimate_reward_table",
    "export_scenario",
    "generate_trace",
    "kmeans",
    "read_trace",
]


@dataclass(frozen=True)
class TraceRecord:
    """One collection: arrival time and per-instance resource requests."""

    collection_id: int
    enqueue_time: float
    cpu_request: float
    memory_request: float
    instance_count: int


@dataclass(frozen=True)
class MachineRecord:
    machine_id: int
    cpu_capacity: float
    memory_capacity: float


@dataclass(frozen=True)
class CpiRecord:
    collection_id: int
    machine_id: int
    cpi: float


@dataclass(frozen=True)
class RewardTable:
    """Per-(job class, machine class) inverse-CPI statistics.

    Cells with no observed assignment keep mean zero and count zero.
    """

    means: np.ndarray
    variances: np.ndarray
    counts: np.ndarray


@dataclass
class IngestResult:
    collections: List[TraceRecord]
    machines: List[MachineRecord]
    cpi: List[CpiRecord]
    rejected: List[Tuple[str, int, str]]    # (file, line number, reason)

    @property
    def rows_seen(self) -> int:
        return len(self.collections) + len(self.machines) + len(self.cpi) + len(self.rejected)


def kmeans(points: Sequence[Sequence[float]], k: int, seed: int = 0,
           max_iters: int = 100):
    """Lloyd's algorithm with seeded initialization.

    Returns (labels, centroids, wcss_history); the history is recorded after
    every centroid update and never increases.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty 2-D collection")
    distinct = np.unique(pts, axis=0)
    if not (1 <= k <= distinct.shape[0]):
        raise ValueError(f"k={k} must be between 1 and the {distinct.shape[0]} distinct points")
    rng = np.random.default_rng(seed)
    centroids = distinct[rng.choice(distinct.shape[0], size=k, replace=False)].copy()

    labels = np.zeros(pts.shape[0], dtype=int)
    wcss_history: List[float] = []
    for _ in range(max_iters):
        dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for c in range(k):
            members = pts[new_labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                # Reseed an empty cluster at the worst-fit point.
                far = int(dists[np.arange(len(pts)), new_labels].argmax())
                centroids[c] = pts[far]
                new_labels[far] = c
        wcss = float(((pts - centroids[new_labels]) ** 2).sum())
        converged = np.array_equal(new_labels, labels) and wcss_history \
            and wcss_history[-1] == wcss
        labels = new_labels
        wcss_history.append(wcss)
        if converged:
            break
    return labels, centroids, wcss_history


def build_features(cpu: float, mem: float) -> np.ndarray:
    """Unit-norm feature vector (cpu, mem, 1/cpu, 1/mem)."""
    if cpu <= 0 or mem <= 0:
        raise ValueError("resources must be positive")
    raw = np.array([cpu, mem, 1.0 / cpu, 1.0 / mem])
    return raw / np.linalg.norm(raw)


def estimate_reward_table(samples: Sequence[Tuple[int, int, float]],
                          num_job_classes: int, num_machine_classes: int) -> RewardTable:
    """Empirical mean/variance of inverse CPI per class pair.

    ``samples`` holds (job class, machine class, cpi) with cpi > 0; the
    reward of a sample is 1 / cpi.
    """
    sums = np.zeros((num_job_classes, num_machine_classes))
    sq_sums = np.zeros_like(sums)
    counts = np.zeros_like(sums)
    for job_cls, mach_cls, cpi in samples:
        if cpi <= 0:
            raise ValueError("cpi must be positive")
        r = 1.0 / cpi
        sums[job_cls, mach_cls] += r
        sq_sums[job_cls, mach_cls] += r * r
        counts[job_cls, mach_cls] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        variances = np.where(counts > 0,
                             np.maximum(sq_sums / np.maximum(counts, 1) - means ** 2, 0.0),
                             0.0)
    return RewardTable(means=means, variances=variances, counts=counts.astype(int))


# -- ingestion ------------------------------------------------------------------


def _read_csv(path, columns, parsers, rejected, label):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(columns):
            raise ValueError(f"{label}: expected header {','.join(columns)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                rejected.append((label, line_no, "wrong field count"))
                continue
            try:
                rows.append([p(v) for p, v in zip(parsers, row)])
            except ValueError as exc:
                rejected.append((label, line_no, str(exc)))
    return rows


def read_trace(collections_path, machines_path, cpi_path) -> IngestResult:
    """Parse the three trace files; malformed rows are rejected with reasons."""
    rejected: List[Tuple[str, int, str]] = []
    col_rows = _read_csv(collections_path,
                         ["collection_id", "enqueue_time", "cpu_request",
                          "memory_request", "instance_count"],
                         [int, float, float, float, int], rejected, "collections")
    mach_rows = _read_csv(machines_path,
                          ["machine_id", "cpu_capacity", "memory_capacity"],
                          [int, float, float], rejected, "machines")
    cpi_rows = _read_csv(cpi_path, ["collection_id", "machine_id", "cpi"],
                         [int, int, float], rejected, "cpi")

    collections = []
    for row in col_rows:
        rec = TraceRecord(*row)
        if rec.cpu_request <= 0 or rec.memory_request <= 0 or rec.instance_count < 1 \
                or rec.enqueue_time < 0:
            rejected.append(("collections", rec.collection_id, "out-of-range values"))
        else:
            collections.append(rec)
    machines = []
    for row in mach_rows:
        rec = MachineRecord(*row)
        if rec.cpu_capacity <= 0 or rec.memory_capacity <= 0:
            rejected.append(("machines", rec.machine_id, "out-of-range values"))
        else:
            machines.append(rec)
    cpi = []
    for row in cpi_rows:
        rec = CpiRecord(*row)
        if rec.cpi <= 0:
            rejected.append(("cpi", rec.collection_id, "nonpositive cpi"))
        else:
            cpi.append(rec)
    return IngestResult(collections, machines, cpi, rejected)


# -- scenario export --------------------------------------------------------------


@dataclass
class ExportSummary:
    job_centroids: np.ndarray
    machine_classes: List[Tuple[float, float]]
    machine_counts: List[int]
    reward_table: RewardTable
    horizon: int
    median_instances: List[float]     # per job class, robust size statistic


def export_scenario(trace: IngestResult, k: int = 5, step_seconds: float = 5.0,
                    window_seconds: Optional[float] = None, seed: int = 0,
                    gamma_margin: float = 1.2) -> Tuple[Scenario, ExportSummary]:
    """Turn an ingested trace into a simulator scenario.

    Job classes come from K-means on collection resource requests, machine
    classes from distinct capacity pairs, arrival rates from empirical
    collection arrivals per step, and rewards from the per-cell inverse-CPI
    table.  Service is one step per job and each machine holds one job per
    step, so the horizon is the window divided by the step length.
    """
    if not trace.collections or not trace.machines:
        raise ValueError("empty trace")
    if window_seconds is None:
        window_seconds = max(c.enqueue_time for c in trace.collections) + step_seconds
    horizon = int(window_seconds / step_seconds)
    if horizon < 1:
        raise ValueError("window shorter than one step")

    points = [(c.cpu_request, c.memory_request) for c in trace.collections]
    labels, centroids, _ = kmeans(points, k, seed=seed)
    job_of_collection = {c.collection_id: int(lab) for c, lab in zip(trace.collections, labels)}

    pair_of: Dict[Tuple[float, float], int] = {}
    machine_counts: List[int] = []
    machine_of: Dict[int, int] = {}
    for m in trace.machines:
        key = (m.cpu_capacity, m.memory_capacity)
        if key not in pair_of:
            pair_of[key] = len(pair_of)
            machine_counts.append(0)
        machine_of[m.machine_id] = pair_of[key]
        machine_counts[pair_of[key]] += 1
    machine_classes = sorted(pair_of, key=pair_of.get)

    samples = [(job_of_collection[r.collection_id], machine_of[r.machine_id], r.cpi)
               for r in trace.cpi
               if r.collection_id in job_of_collection and r.machine_id in machine_of]
    table = estimate_reward_table(samples, k, len(machine_classes))

    bound = max(1.0, float(np.abs(table.means).max(initial=0.0)))
    counts = np.bincount(labels, minlength=k).astype(float)
    lam = counts / horizon
    if lam.sum() > 1.0:
        raise ValueError("more than one collection arrival per step on average; "
                         "shorten the step or widen the window")
    instances = [[] for _ in range(k)]
    for c, lab in zip(trace.collections, labels):
        instances[int(lab)].append(c.instance_count)

    jobs = []
    for i in range(k):
        cpu, mem = centroids[i]
        jobs.append(JobClassSpec(
            id=i, feature=build_features(cpu, mem),
            arrival_rate=max(float(lam[i]), 1e-9), service_rate=1.0))
    servers = [ServerClassSpec(id=j, feature=build_features(*machine_classes[j]),
                               capacity=machine_counts[j])
               for j in range(len(machine_classes))]
    env = RewardTableEnvironment(means=table.means, variances=table.variances,
                                 reward_bound=bound)
    cfg = SystemConfig(horizon=horizon, gamma=gamma_margin * bound, seed=seed)
    scenario = Scenario(jobs, servers, cfg, env)
    summary = ExportSummary(
        job_centroids=centroids, machine_classes=machine_classes,
        machine_counts=machine_counts, reward_table=table, horizon=horizon,
        median_instances=[float(statistics.median(g)) if g else 0.0 for g in instances])
    return scenario, summary


# -- synthetic trace generation -----------------------------------------------------


def generate_trace(out_dir, seed: int = 0, num_collections: int = 70,
                   window_seconds: float = 5000.0, num_job_groups: int = 5,
                   machines_per_type: Tuple[int, int] = (2, 6)) -> Dict[str, str]:
    """Write a schema-compatible synthetic trace; deterministic given the seed.

    Collections fall into well-separated resource groups so the clustering
    step has real structure to find, and each (group, machine type) pair has
    its own efficiency level driving the CPI samples.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cap_grid = [0.25, 0.5, 1.0]
    types = [(c, m) for c in cap_grid for m in cap_grid]
    chosen = [types[int(idx)] for idx in rng.choice(len(types), size=4, replace=False)]
    machines = []
    mid = 0
    for cpu, mem in chosen:
        for _ in range(int(rng.integers(machines_per_type[0], machines_per_type[1] + 1))):
            machines.append(MachineRecord(mid, cpu, mem))
            mid += 1

    group_centers = rng.uniform(0.1, 0.9, size=(num_job_groups, 2))
    efficiency = rng.uniform(0.3, 0.9, size=(num_job_groups, len(chosen)))
    type_of = {m.machine_id: chosen.index((m.cpu_capacity, m.memory_capacity))
               for m in machines}

    collections = []
    cpi_rows = []
    times = np.sort(rng.uniform(0.0, window_seconds, size=num_collections))
    for cid, t in enumerate(times):
        g = int(rng.integers(num_job_groups))
        cpu, mem = np.clip(group_centers[g] + rng.normal(0.0, 0.02, size=2), 0.01, 1.5)
        count = 1 + int(rng.geometric(0.5))
        collections.append(TraceRecord(cid, float(t), float(cpu), float(mem), count))
        for m in rng.choice(len(machines), size=min(3, len(machines)), replace=False):
            machine = machines[int(m)]
            inv = max(efficiency[g, type_of[machine.machine_id]] + rng.normal(0.0, 0.05), 0.05)
            cpi_rows.append(CpiRecord(cid, machine.machine_id, float(1.0 / inv)))

    paths = {}
    spec = [
        ("collections.csv",
         ["collection_id", "enqueue_time", "cpu_request", "memory_request", "instance_count"],
         [(c.collection_id, f"{c.enqueue_time:.3f}", f"{c.cpu_request:.6f}",
           f"{c.memory_request:.6f}", c.instance_count) for c in collections]),
        ("machines.csv", ["machine_id", "cpu_capacity", "memory_capacity"],
         [(m.machine_id, f"{m.cpu_capacity:.4f}", f"{m.memory_capacity:.4f}")
          for m in machines]),
        ("cpi.csv", ["collection_id", "machine_id", "cpi"],
         [(r.collection_id, r.machine_id, f"{r.cpi:.6f}") for r in cpi_rows]),
    ]
    for name, header, rows in spec:
        path = out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        paths[name] = str(path)
    return paths


# -- plot emission --------------------------------------------------------------


def _read_metrics_csv(path) -> Dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or "t" not in header:
            raise ValueError(f"{path}: not a metrics file")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(v) for v in row] for row in rows])
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return {name: data[:, k] for k, name in enumerate(header)}


def emit_plots(metric_files: Sequence, out_dir,
               columns: Sequence[str] = ("regret", "total_queue", "holding_cost")) -> List[str]:
    """Aggregate per-seed metrics files into mean / 95% CI line plots.

    One SVG per requested column; errors before writing anything when the
    input is empty or malformed.
    """
    if not metric_files:
        raise ValueError("no metrics files given")
    frames = [_read_metrics_csv(p) for p in metric_files]
    steps = frames[0]["t"]
    for f in frames:
        if len(f["t"]) != len(steps):
            raise ValueError("metrics files cover different horizons")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    n = len(frames)
    for col in columns:
        stack = np.stack([f[col] for f in frames])
        mean = stack.mean(axis=0)
        half = 1.96 * stack.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        series = [LineSeries(f"mean over {n} seeds", steps, mean, mean - half, mean + half)]
        svg = render_line_plot(series, title=col.replace("_", " "),
                               xlabel="step", ylabel=col.replace("_", " "))
        path = out / f"{col}.svg"
        path.write_text(svg, encoding="utf-8")
        written.append(str(path))
    return written
