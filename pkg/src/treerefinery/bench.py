"""Benchmark harness: timed refinement runs over a parameter grid.

For every cell (n, k, p) and replicate, one instance is generated and fed
to every selected algorithm, so comparisons are paired.  Only the refine
call is timed (monotonic clock); instance generation, including the flat
array mirrors the compiled kernel reads, happens outside the clock.  One
warm-up replicate per cell is run and discarded.  Each algorithm has a
per-cell time budget; once its own accumulated time exceeds the budget its
remaining replicates are emitted as ``timeout`` records with duration 0,
so the record count stays exactly cells x replicates x algorithms.
"""

import csv
import math
import time
from dataclasses import dataclass
from itertools import product

from .algorithms import REFINERS
from .simgen import InstanceParams, make_instance

CSV_COLUMNS = ("algorithm", "n", "k", "p", "replicate", "seed", "outcome", "duration_ns")

DEFAULT_N_VALUES = tuple(2**e for e in range(7, 14))
DEFAULT_K_VALUES = (2, 8, 32)
DEFAULT_P_VALUES = (0.1, 0.5, 0.9)


@dataclass(frozen=True)
class BenchConfig:
    n_values: tuple = DEFAULT_N_VALUES
    k_values: tuple = DEFAULT_K_VALUES
    p_values: tuple = DEFAULT_P_VALUES
    replicates: int = 100
    algorithms: tuple = ("lincr", "build")
    seed: int = 1
    time_budget_s: float = 60.0

    def __post_init__(self):
        if not self.n_values or not self.k_values or not self.p_values:
            raise ValueError("empty parameter grid")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.algorithms:
            raise ValueError("no algorithms selected")
        if self.time_budget_s <= 0:
            raise ValueError("time budget must be positive")


@dataclass(frozen=True)
class BenchRecord:
    algorithm: str
    n: int
    k: int
    p: float
    replicate: int
    seed: int
    outcome: str  # refined | incompatible | error | timeout
    duration_ns: int


def _run_one(runner, trees):
    start = time.perf_counter_ns()
    try:
        outcome = runner(trees)
    except Exception:
        return "error", time.perf_counter_ns() - start
    duration = time.perf_counter_ns() - start
    return ("refined" if outcome.refined else "incompatible"), duration


def run_grid(config, runners=None):
    """Yield one BenchRecord per (cell, replicate, algorithm)."""
    table = REFINERS if runners is None else runners
    for name in config.algorithms:
        if name not in table:
            raise ValueError(f"unknown algorithm {name!r}")
    budget_ns = int(config.time_budget_s * 1e9)
    for n, k, p in product(config.n_values, config.k_values, config.p_values):
        spent = {name: 0 for name in config.algorithms}
        # warm-up replicate, outside the recorded range, discarded but budgeted
        warm = InstanceParams(n, k, p, config.seed, replicate=config.replicates)
        _, trees = make_instance(warm)
        _prepare(trees)
        for name in config.algorithms:
            _, duration = _run_one(table[name], trees)
            spent[name] += duration
        for replicate in range(config.replicates):
            params = InstanceParams(n, k, p, config.seed, replicate)
            _, trees = make_instance(params)
            _prepare(trees)
            for name in config.algorithms:
                if spent[name] > budget_ns:
                    yield BenchRecord(name, n, k, p, replicate, params.stream_seed, "timeout", 0)
                    continue
                outcome, duration = _run_one(table[name], trees)
                spent[name] += duration
                yield BenchRecord(name, n, k, p, replicate, params.stream_seed, outcome, duration)


def _prepare(trees):
    # mirrors are part of the instance representation, not of the timed run
    for t in trees:
        t.kernel_arrays()


def lower_median(values):
    """Deterministic median: the lower of the two middle elements."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("no values")
    return ordered[(len(ordered) - 1) // 2]


def _medians_by_n(records, algorithm, k, p):
    groups = {}
    for r in records:
        if (
            r.algorithm == algorithm
            and r.k == k
            and r.p == p
            and r.outcome == "refined"
        ):
            groups.setdefault(r.n, []).append(r.duration_ns)
    return {n: lower_median(d) for n, d in groups.items()}


def fit_slope(records, algorithm, k, p):
    """Least-squares slope of log(median duration) vs log(n) in one cell
    group; needs successful records for at least three distinct n."""
    medians = _medians_by_n(records, algorithm, k, p)
    if len(medians) < 3:
        raise ValueError(
            f"need >= 3 distinct n with successful records for {algorithm}, "
            f"k={k}, p={p}; have {len(medians)}"
        )
    points = [(math.log(n), math.log(m)) for n, m in sorted(medians.items())]
    mean_x = sum(x for x, _ in points) / len(points)
    mean_y = sum(y for _, y in points) / len(points)
    sxx = sum((x - mean_x) ** 2 for x, _ in points)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in points)
    return sxy / sxx


def slope_table(records):
    """(algorithm, k, p, slope-or-None) for every cell group present."""
    keys = sorted({(r.algorithm, r.k, r.p) for r in records})
    out = []
    for algorithm, k, p in keys:
        try:
            slope = fit_slope(records, algorithm, k, p)
        except ValueError:
            slope = None
        out.append((algorithm, k, p, slope))
    return out


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [r.algorithm, r.n, r.k, r.p, r.replicate, r.seed, r.outcome, r.duration_ns]
            )


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                BenchRecord(
                    row["algorithm"],
                    int(row["n"]),
                    int(row["k"]),
                    float(row["p"]),
                    int(row["replicate"]),
                    int(row["seed"]),
                    row["outcome"],
                    int(row["duration_ns"]),
                )
            )
    return out


def summarize(records):
    """Human-readable per-cell medians plus fitted slopes."""
    lines = []
    for algorithm, k, p, slope in slope_table(records):
        medians = _medians_by_n(records, algorithm, k, p)
        med_text = "  ".join(
            f"n={n}:{medians[n] / 1e6:.3f}ms" for n in sorted(medians)
        )
        slope_text = f"{slope:.3f}" if slope is not None else "NA"
        lines.append(f"{algorithm} k={k} p={p}: slope={slope_text}  {med_text}")
    return "\n".join(lines)


def write_svg(records, path):
    """Median-vs-n log-log panels, k across columns and p down rows."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ks = sorted({r.k for r in records})
    ps = sorted({r.p for r in records})
    algorithms = sorted({r.algorithm for r in records})
    fig, axes = plt.subplots(
        len(ps), len(ks), figsize=(4 * len(ks), 3 * len(ps)), squeeze=False
    )
    for row, p in enumerate(ps):
        for col, k in enumerate(ks):
            ax = axes[row][col]
            for algorithm in algorithms:
                medians = _medians_by_n(records, algorithm, k, p)
                if not medians:
                    continue
                ns = sorted(medians)
                ax.loglog(
                    ns, [medians[n] / 1e9 for n in ns], marker="o", label=algorithm
                )
            ax.set_title(f"k={k}, p={p}", fontsize=9)
            if row == len(ps) - 1:
                ax.set_xlabel("leaves")
            if col == 0:
                ax.set_ylabel("median seconds")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_report(records, csv_path, svg_path=None):
    """Write the CSV (and optional SVG) and return the text summary."""
    records = list(records)
    write_csv(records, csv_path)
    if svg_path is not None:
        write_svg(records, svg_path)
    return summarize(records)
