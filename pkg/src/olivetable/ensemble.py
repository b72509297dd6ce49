"""Replicated Monte Carlo experiments with mergeable, exactly-aggregated stats.

Replica ``i`` of a run is fully determined by the config: its stream seed is
``derive_seed(master_seed, i)``, so any subset of replicas can be computed on
any worker (or re-run alone) and merged back bit-identically.  Olive totals
are aggregated in Python integers (never floats), increment/gap/level
statistics are pooled into exact integer histograms, and ``merge`` is
associative and commutative, so chunked parallel runs equal monolithic ones.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .process import TrajectoryRecord, run_trajectory
from .rng import derive_seed

ENSEMBLE_CSV_HEADER = (
    "replica,seed,O,t_plate,tau1,two_to_one,max_other_olives,"
    "first_plate_olives,L_ge3,plate_moves_ge3"
)

Z99 = 2.576  # two-sided 99% normal quantile, fixed for every CI here

REPLICA_DTYPE = np.dtype(
    [
        ("replica", np.int64),
        ("seed", np.uint64),
        ("O", np.int64),
        ("t_plate", np.int64),
        ("tau1", np.int64),
        ("two_to_one", np.int64),
        ("max_other_olives", np.int64),
        ("first_plate_olives", np.int64),
        ("L_ge3", np.int64),
        ("plate_moves_ge3", np.int64),
    ]
)


class ConfigMismatchError(ValueError):
    """Attempt to merge stats produced under different configs."""


@dataclass(frozen=True)
class EnsembleConfig:
    """Parameters that fully determine an ensemble run.

    ``c_bounds`` is the (lower, upper) band for the per-replica O/t check,
    defaulting to [1/342, 2/3]; ``deltas`` drive the concentration report.
    ``cadence`` is carried for provenance (re-running a single replica with
    it reproduces that replica's time series); ensemble runs themselves do
    not retain per-replica series.
    """

    t: int
    replicas: int
    master_seed: int
    deltas: tuple[float, ...] = (0.005, 0.01, 0.02, 0.05)
    cadence: int = 0
    c_bounds: tuple[Fraction, Fraction] = (Fraction(1, 342), Fraction(2, 3))

    def __post_init__(self):
        if self.t < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        if self.cadence < 0:
            raise ValueError(f"cadence must be >= 0, got {self.cadence}")
        for d in self.deltas:
            if not 0 < d <= 1:
                raise ValueError(f"delta must be in (0, 1], got {d}")
        lo, hi = self.c_bounds
        if not lo < hi:
            raise ValueError(f"c_bounds must satisfy lower < upper, got {self.c_bounds}")

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "R": self.replicas,
            "master_seed": self.master_seed,
            "cadence": self.cadence,
            "deltas": list(self.deltas),
            "c_bounds": [str(b) for b in self.c_bounds],
        }


@dataclass
class EnsembleStats:
    """Mergeable aggregate over a set of replicas of one config.

    ``records`` holds one row per replica (sorted by replica index) with
    exactly the ensemble CSV columns.  The histograms pool the inter-return
    olive increments, the inter-return gaps, and the plate-count level
    entries over all replicas; they are exact integer counts, so merging is
    lossless.  ``sum_olives``/``sum_olives_sq`` are exact Python ints.
    """

    config: EnsembleConfig
    records: np.ndarray
    xi_hist: Counter = field(default_factory=Counter)
    gap_hist: Counter = field(default_factory=Counter)
    tau_hist: Counter = field(default_factory=Counter)
    sum_olives: int = 0
    sum_olives_sq: int = 0

    @property
    def n(self) -> int:
        return len(self.records)

    def mean_olives(self) -> Fraction:
        if self.n == 0:
            raise ValueError("no replicas")
        return Fraction(self.sum_olives, self.n)

    def sd_olives(self) -> float:
        if self.n < 2:
            return 0.0
        var = (self.sum_olives_sq - Fraction(self.sum_olives**2, self.n)) / (self.n - 1)
        return math.sqrt(float(var))

    def check_invariants(self) -> None:
        o = self.records["O"]
        assert self.sum_olives == sum(int(v) for v in o)
        assert self.sum_olives_sq == sum(int(v) * int(v) for v in o)
        indices = [int(r) for r in self.records["replica"]]
        assert indices == sorted(set(indices))
        if self.n:
            # one increment recorded per 2 -> 1 transition
            assert sum(self.xi_hist.values()) == int(self.records["two_to_one"].sum())


def empty_stats(config: EnsembleConfig) -> EnsembleStats:
    """The merge identity: zero replicas of ``config``."""
    return EnsembleStats(config=config, records=np.empty(0, dtype=REPLICA_DTYPE))


def _replica_row(index: int, seed: int, rec: TrajectoryRecord) -> tuple:
    o = rec.final_state.total_olives
    # The conservation law must hold at the final step of every replica.
    if o != rec.t_max - rec.final_state.plate_moves - 2 * rec.final_state.c_remove_olive:
        raise AssertionError(f"olive conservation violated in replica {index}")
    return (
        index,
        seed,
        o,
        rec.final_state.plate_moves,
        rec.tau.get(1, 0),
        rec.num_returns,
        rec.max_other_olives,
        rec.first_plate_olives,
        rec.l_ge3_removals,
        rec.plate_moves_at_ge3,
    )


def _run_chunk(args: tuple) -> tuple:
    config, lo, hi, check_identity = args
    rows = np.empty(hi - lo, dtype=REPLICA_DTYPE)
    xi = Counter()
    gaps = Counter()
    tau = Counter()
    sum_o = 0
    sum_o2 = 0
    for k, i in enumerate(range(lo, hi)):
        seed = derive_seed(config.master_seed, i)
        rec = run_trajectory(config.t, seed, cadence=0, check_identity=check_identity)
        rows[k] = _replica_row(i, seed, rec)
        xi.update(rec.olive_increments)
        gaps.update(rec.return_gaps)
        tau.update(rec.tau)
        o = rec.final_state.total_olives
        sum_o += o
        sum_o2 += o * o
    return rows, xi, gaps, tau, sum_o, sum_o2


def run_ensemble(
    config: EnsembleConfig,
    threads: Optional[int] = None,
    replica_range: Optional[tuple[int, int]] = None,
    check_identity: bool = False,
) -> EnsembleStats:
    """Run replicas [lo, hi) of ``config`` (default: all of them).

    ``threads`` sizes the worker pool (default: available parallelism);
    the result is identical for any thread count because replica seeds are
    derived from the config and chunks merge by replica index.
    """
    lo, hi = replica_range if replica_range is not None else (0, config.replicas)
    if not 0 <= lo <= hi <= config.replicas:
        raise ValueError(f"bad replica range {replica_range} for R={config.replicas}")
    if lo == hi:
        return empty_stats(config)
    if threads is None:
        threads = os.cpu_count() or 1
    count = hi - lo
    use_pool = threads > 1 and count > 1 and count * config.t >= 1_000_000

    if use_pool:
        n_chunks = min(count, threads * 4)
        bounds = [lo + (count * k) // n_chunks for k in range(n_chunks + 1)]
        tasks = [
            (config, bounds[k], bounds[k + 1], check_identity)
            for k in range(n_chunks)
            if bounds[k] < bounds[k + 1]
        ]
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=threads) as pool:
            parts = pool.map(_run_chunk, tasks)
    else:
        parts = [_run_chunk((config, lo, hi, check_identity))]

    records = np.concatenate([p[0] for p in parts])
    stats = EnsembleStats(config=config, records=records)
    for _, xi, gaps, tau, sum_o, sum_o2 in parts:
        stats.xi_hist += xi
        stats.gap_hist += gaps
        stats.tau_hist += tau
        stats.sum_olives += sum_o
        stats.sum_olives_sq += sum_o2
    return stats


def merge(a: EnsembleStats, b: EnsembleStats) -> EnsembleStats:
    """Exact, associative, commutative merge of disjoint replica sets."""
    if a.config != b.config:
        raise ConfigMismatchError(f"configs differ: {a.config} vs {b.config}")
    seen = set(int(r) for r in a.records["replica"])
    if any(int(r) in seen for r in b.records["replica"]):
        raise ConfigMismatchError("overlapping replica indices")
    records = np.concatenate([a.records, b.records])
    records = records[np.argsort(records["replica"], kind="stable")]
    return EnsembleStats(
        config=a.config,
        records=records,
        xi_hist=a.xi_hist + b.xi_hist,
        gap_hist=a.gap_hist + b.gap_hist,
        tau_hist=a.tau_hist + b.tau_hist,
        sum_olives=a.sum_olives + b.sum_olives,
        sum_olives_sq=a.sum_olives_sq + b.sum_olives_sq,
    )


# -- statistics helpers -------------------------------------------------------


def wilson_upper(successes: int, n: int, z: float = Z99) -> float:
    """Upper end of the Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    phat = successes / n
    denom = 1 + z * z / n
    center = phat + z * z / (2 * n)
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return (center + half) / denom


def ratio_estimate(o_values: Sequence[int], t: int, z: float = Z99) -> dict:
    """Mean O/t with a normal-approximation CI from per-replica totals.

    Exact integer sums feed the point estimate; the CI uses the sample sd.
    Degenerate samples (all equal) get a zero-width interval.
    """
    n = len(o_values)
    if n < 1:
        raise ValueError("need at least one replica")
    total = sum(int(v) for v in o_values)
    total_sq = sum(int(v) * int(v) for v in o_values)
    mean_o = Fraction(total, n)
    ratio = mean_o / t
    if n > 1:
        var = (total_sq - Fraction(total**2, n)) / (n - 1)
        se = math.sqrt(float(var) / n) / t
    else:
        se = float("nan")
    half = z * se if n > 1 else float("nan")
    return {
        "n": n,
        "t": t,
        "mean_O": float(mean_o),
        "mean_O_exact": f"{mean_o.numerator}/{mean_o.denominator}",
        "ratio": float(ratio),
        "ci_low": float(ratio) - half,
        "ci_high": float(ratio) + half,
        "sd_O": math.sqrt(float(var)) if n > 1 else 0.0,
    }


# -- reports ------------------------------------------------------------------


def estimate_c(
    t_list: Sequence[int],
    replicas: int,
    master_seed: int,
    threads: Optional[int] = None,
) -> dict:
    """Per-horizon estimates of the linear olive-growth constant.

    Runs one ensemble per t (same master seed, hence common random numbers
    across horizons) and reports mean O/t with 99% CIs plus the maximum
    pairwise ratio difference as a stability diagnostic.
    """
    if any(t < 1000 for t in t_list):
        raise ValueError("estimate_c expects horizons t >= 1000")
    rows = []
    for t in t_list:
        config = EnsembleConfig(t=t, replicas=replicas, master_seed=master_seed)
        stats = run_ensemble(config, threads=threads)
        est = ratio_estimate(stats.records["O"], t)
        lo, hi = config.c_bounds
        est["within_bounds"] = lo <= stats.mean_olives() / t <= hi
        rows.append(est)
    ratios = [r["ratio"] for r in rows]
    stability = max(abs(a - b) for a in ratios for b in ratios) if len(ratios) > 1 else 0.0
    return {
        "replicas": replicas,
        "master_seed": master_seed,
        "rows": rows,
        "max_ratio_difference": stability,
    }


def concentration_report(stats: EnsembleStats, deltas: Optional[Iterable[float]] = None) -> dict:
    """Exceedance frequencies of |O - mean| >= delta * t per delta.

    Comparisons are exact (|O*R - sum| >= delta * t * R in rationals);
    zero counts come with Wilson 99% upper bounds.
    """
    if stats.n < 1:
        raise ValueError("need at least one replica")
    deltas = tuple(deltas) if deltas is not None else stats.config.deltas
    n = stats.n
    total = stats.sum_olives
    t = stats.config.t
    o_vals = [int(v) for v in stats.records["O"]]
    rows = []
    for d in deltas:
        threshold = Fraction(d) * t * n
        count = sum(1 for o in o_vals if abs(o * n - total) >= threshold)
        rows.append(
            {
                "delta": d,
                "exceed_count": count,
                "freq": count / n,
                "wilson_hi": wilson_upper(count, n),
            }
        )
    return {
        "t": t,
        "R": n,
        "mean_O": float(stats.mean_olives()),
        "sd_O": stats.sd_olives(),
        "exceedance": rows,
    }


def plate_move_stats(stats: EnsembleStats) -> dict:
    """Plate-move diagnostics, each bound checked per replica.

    Checks per replica: t_plate/t >= 0.30, tau1 >= t/76 (exact integer
    comparisons), and removal fraction among plate moves at >= 3 plates at
    least 3/4 minus four binomial standard errors.
    """
    if stats.n < 1:
        raise ValueError("need at least one replica")
    t = stats.config.t
    recs = stats.records
    t_plate = recs["t_plate"]
    tau1 = recs["tau1"]
    removals = recs["L_ge3"]
    moves = recs["plate_moves_ge3"]

    plate_ratio_min = float(t_plate.min()) / t
    plate_ratio_ok = bool((t_plate * 10 >= 3 * t).all())
    tau1_ok = bool((tau1 * 76 >= t).all())
    removal_ok = True
    removal_min = None
    for Li, mi in zip(removals, moves):
        if mi == 0:
            continue
        frac = Li / mi
        removal_min = frac if removal_min is None else min(removal_min, frac)
        slack = 4 * math.sqrt(0.75 * 0.25 / mi)
        if frac < 0.75 - slack:
            removal_ok = False
    pooled_moves = int(moves.sum())
    pooled_removals = int(removals.sum())
    return {
        "t": t,
        "R": stats.n,
        "plate_move_ratio_min": plate_ratio_min,
        "plate_move_ratio_mean": float(t_plate.mean()) / t,
        "plate_move_ratio_ok": plate_ratio_ok,
        "tau1_min": int(tau1.min()),
        "tau1_over_t_min": float(tau1.min()) / t,
        "tau1_threshold": t / 76,
        "tau1_ok": tau1_ok,
        "two_to_one_rate_mean": float(recs["two_to_one"].mean()) / t,
        "removal_fraction_pooled": (pooled_removals / pooled_moves) if pooled_moves else None,
        "removal_fraction_min": removal_min,
        "removal_fraction_ok": removal_ok,
        "tau1_counts_initial_entry": True,
        "returns_excluding_initial_min": int(recs["two_to_one"].min()),
    }


def _fit_geometric_rate(hist: Counter, k_min: int) -> Optional[float]:
    """Least-squares decay rate of the empirical survival beyond k_min."""
    if not hist:
        return None
    ks = sorted(hist)
    total = sum(hist.values())
    survival = []
    running = total
    for k in ks:
        survival.append((k, running))
        running -= hist[k]
    points = [(k, s) for k, s in survival if k >= k_min and s > 0]
    if len(points) < 3:
        return None
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.log(np.array([p[1] for p in points], dtype=float) / total)
    slope = np.polyfit(xs, ys, 1)[0]
    return float(math.exp(slope))


def xi_tail_report(stats: EnsembleStats, fit_from: int = 50) -> dict:
    """Tail shape of the inter-return olive increments and gaps.

    Requires at least 1000 recorded increments.  Reports the pooled mean
    increment exactly, the minimum gap (always >= 2: leaving and re-reaching
    one plate takes two plate moves), and fitted geometric decay rates of
    the survival functions beyond ``fit_from``.
    """
    n_inc = sum(stats.xi_hist.values())
    if n_inc < 1000:
        raise ValueError(f"need >= 1000 recorded increments, got {n_inc}")
    mean_xi = Fraction(sum(k * c for k, c in stats.xi_hist.items()), n_inc)
    n_gap = sum(stats.gap_hist.values())
    mean_gap = Fraction(sum(k * c for k, c in stats.gap_hist.items()), n_gap)
    return {
        "increments": n_inc,
        "mean_increment": float(mean_xi),
        "mean_increment_exact": f"{mean_xi.numerator}/{mean_xi.denominator}",
        "increment_decay_rate": _fit_geometric_rate(stats.xi_hist, fit_from),
        "min_gap": min(stats.gap_hist),
        "max_gap": max(stats.gap_hist),
        "mean_gap": float(mean_gap),
        "gap_decay_rate": _fit_geometric_rate(stats.gap_hist, fit_from),
    }


def log_growth_check(
    t_list: Sequence[int],
    replicas: int,
    master_seed: int,
    threads: Optional[int] = None,
    ceiling_coefficient: float = 50.0,
) -> dict:
    """Growth of the largest non-first-plate olive count across horizons.

    For each t, reports the max over replicas and time of non-first-plate
    olive counts, the fitted coefficient max/ln(t), and whether the max
    stays below ceiling_coefficient * ln(t); plus the growth ratio between
    the first and last horizon.
    """
    t_list = list(t_list)
    if sorted(t_list) != t_list or len(set(t_list)) != len(t_list):
        raise ValueError(f"t_list must be strictly increasing, got {t_list}")
    rows = []
    for t in t_list:
        config = EnsembleConfig(t=t, replicas=replicas, master_seed=master_seed)
        stats = run_ensemble(config, threads=threads)
        max_other = int(stats.records["max_other_olives"].max())
        rows.append(
            {
                "t": t,
                "max_other": max_other,
                "B_fit": max_other / math.log(t) if t > 1 else None,
                "ceiling": ceiling_coefficient * math.log(t),
                "within_ceiling": max_other <= ceiling_coefficient * math.log(t),
            }
        )
    growth_ratio = (
        rows[-1]["max_other"] / rows[0]["max_other"] if len(rows) > 1 and rows[0]["max_other"] else None
    )
    return {
        "replicas": replicas,
        "master_seed": master_seed,
        "ceiling_coefficient": ceiling_coefficient,
        "rows": rows,
        "growth_ratio": growth_ratio,
    }


# -- bound checks and serialization -------------------------------------------


def bounds_check(stats: EnsembleStats) -> dict:
    """Per-replica O/t band check against config.c_bounds, exactly."""
    lo, hi = stats.config.c_bounds
    t = stats.config.t
    violations = [
        int(r["replica"])
        for r in stats.records
        if not (lo * t <= int(r["O"]) <= hi * t)
    ]
    return {
        "lower": str(lo),
        "upper": str(hi),
        "violations": violations[:20],
        "violation_count": len(violations),
        "bounds_pass": not violations,
    }


def summary_json(stats: EnsembleStats, elapsed_seconds: float, version: str) -> dict:
    """The ensemble summary document (schema is stable; see README)."""
    est = ratio_estimate(stats.records["O"], stats.config.t)
    conc = concentration_report(stats)
    pms = plate_move_stats(stats)
    bc = bounds_check(stats)
    return {
        "config": stats.config.as_dict(),
        "estimates": {
            "mean_O": est["mean_O"],
            "ratio": est["ratio"],
            "ci_low": est["ci_low"],
            "ci_high": est["ci_high"],
            "c_hat": est["ratio"],
        },
        "checks": {
            "bounds_pass": bc["bounds_pass"],
            "bounds_violations": bc["violation_count"],
            "tau1_pass": pms["tau1_ok"],
            "removal_fraction": pms["removal_fraction_pooled"],
            "sd": conc["sd_O"],
            "exceedance": [
                {"delta": r["delta"], "freq": r["freq"], "wilson_hi": r["wilson_hi"]}
                for r in conc["exceedance"]
            ],
            "max_other": int(stats.records["max_other_olives"].max()),
            "B_fit": (
                int(stats.records["max_other_olives"].max()) / math.log(stats.config.t)
                if stats.config.t > 1
                else None
            ),
        },
        "provenance": {"version": version, "elapsed_seconds": elapsed_seconds},
    }


def write_ensemble_csv(stats: EnsembleStats, out: TextIO) -> None:
    """Per-replica rows, sorted by replica index; LF endings, no quoting."""
    out.write(ENSEMBLE_CSV_HEADER + "\n")
    for r in stats.records:
        out.write(
            "%d,%d,%d,%d,%d,%d,%d,%d,%d,%d\n"
            % (
                int(r["replica"]),
                int(r["seed"]),
                int(r["O"]),
                int(r["t_plate"]),
                int(r["tau1"]),
                int(r["two_to_one"]),
                int(r["max_other_olives"]),
                int(r["first_plate_olives"]),
                int(r["L_ge3"]),
                int(r["plate_moves_ge3"]),
            )
        )
