import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olivetable import ensemble
from olivetable.ensemble import (
    ENSEMBLE_CSV_HEADER,
    ConfigMismatchError,
    EnsembleConfig,
    EnsembleStats,
    bounds_check,
    concentration_report,
    empty_stats,
    estimate_c,
    log_growth_check,
    merge,
    plate_move_stats,
    ratio_estimate,
    run_ensemble,
    summary_json,
    wilson_upper,
    write_ensemble_csv,
    xi_tail_report,
)
from olivetable.process import run_trajectory
from olivetable.rng import derive_seed

CFG = EnsembleConfig(t=2000, replicas=12, master_seed=99)


@pytest.fixture(scope="module")
def small_stats():
    return run_ensemble(CFG)


@pytest.fixture(scope="module")
def mid_stats():
    return run_ensemble(EnsembleConfig(t=10_000, replicas=24, master_seed=7))


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(t=0, replicas=1, master_seed=0)
    with pytest.raises(ValueError):
        EnsembleConfig(t=1, replicas=0, master_seed=0)
    with pytest.raises(ValueError):
        EnsembleConfig(t=1, replicas=1, master_seed=0, deltas=(1.5,))
    with pytest.raises(ValueError):
        EnsembleConfig(t=1, replicas=1, master_seed=0, c_bounds=(Fraction(1), Fraction(1, 2)))


def test_single_replica_reduces_to_trajectory(small_stats):
    rec = run_trajectory(CFG.t, derive_seed(CFG.master_seed, 0))
    row = small_stats.records[0]
    assert int(row["O"]) == rec.final_state.total_olives
    assert int(row["t_plate"]) == rec.final_state.plate_moves
    assert int(row["tau1"]) == rec.tau[1]
    assert int(row["two_to_one"]) == rec.num_returns
    assert int(row["max_other_olives"]) == rec.max_other_olives
    assert int(row["first_plate_olives"]) == rec.first_plate_olives
    assert int(row["L_ge3"]) == rec.l_ge3_removals
    assert int(row["plate_moves_ge3"]) == rec.plate_moves_at_ge3
    assert int(row["seed"]) == derive_seed(CFG.master_seed, 0)


def test_determinism_bitwise(small_stats):
    again = run_ensemble(CFG)
    assert small_stats.records.tobytes() == again.records.tobytes()
    assert small_stats.xi_hist == again.xi_hist
    assert small_stats.gap_hist == again.gap_hist
    assert small_stats.tau_hist == again.tau_hist
    assert small_stats.sum_olives == again.sum_olives
    assert small_stats.sum_olives_sq == again.sum_olives_sq


def test_thread_count_does_not_change_results():
    config = EnsembleConfig(t=2000, replicas=600, master_seed=31)
    serial = run_ensemble(config, threads=1)
    pooled = run_ensemble(config, threads=2)
    assert serial.records.tobytes() == pooled.records.tobytes()
    assert serial.xi_hist == pooled.xi_hist
    assert serial.sum_olives == pooled.sum_olives


def _stats_equal(a: EnsembleStats, b: EnsembleStats) -> bool:
    return (
        a.records.tobytes() == b.records.tobytes()
        and a.xi_hist == b.xi_hist
        and a.gap_hist == b.gap_hist
        and a.tau_hist == b.tau_hist
        and a.sum_olives == b.sum_olives
        and a.sum_olives_sq == b.sum_olives_sq
    )


def test_fold_of_single_replica_parts_equals_full_run(small_stats):
    parts = [run_ensemble(CFG, replica_range=(i, i + 1)) for i in range(CFG.replicas)]
    folded = empty_stats(CFG)
    for part in parts:
        folded = merge(folded, part)
    assert _stats_equal(folded, small_stats)


def test_merge_identity_and_exactness(small_stats):
    assert _stats_equal(merge(small_stats, empty_stats(CFG)), small_stats)
    assert _stats_equal(merge(empty_stats(CFG), small_stats), small_stats)
    small_stats.check_invariants()


@given(st.permutations(list(range(6))), st.integers(min_value=1, max_value=5))
@settings(max_examples=20, deadline=None)
def test_merge_is_order_independent(order, split):
    config = EnsembleConfig(t=300, replicas=6, master_seed=5)
    full = run_ensemble(config)
    parts = [run_ensemble(config, replica_range=(i, i + 1)) for i in order]
    left = empty_stats(config)
    for part in parts[:split]:
        left = merge(left, part)
    right = empty_stats(config)
    for part in parts[split:]:
        right = merge(right, part)
    assert _stats_equal(merge(left, right), full)
    assert _stats_equal(merge(right, left), full)


def test_merge_rejects_mismatch_and_overlap(small_stats):
    other = run_ensemble(EnsembleConfig(t=2000, replicas=2, master_seed=100))
    with pytest.raises(ConfigMismatchError):
        merge(small_stats, other)
    with pytest.raises(ConfigMismatchError):
        merge(small_stats, small_stats)


def test_replica_range_validation():
    with pytest.raises(ValueError):
        run_ensemble(CFG, replica_range=(3, 2))
    with pytest.raises(ValueError):
        run_ensemble(CFG, replica_range=(0, CFG.replicas + 1))
    assert run_ensemble(CFG, replica_range=(4, 4)).n == 0


def test_ratio_estimate_synthetic_injection():
    est = ratio_estimate([100] * 50, t=1000)
    assert est["ratio"] == pytest.approx(0.1)
    assert est["ci_low"] == pytest.approx(0.1)
    assert est["ci_high"] == pytest.approx(0.1)
    assert est["sd_O"] == 0.0
    assert est["mean_O_exact"] == "100/1"


def test_wilson_upper_bounds():
    assert wilson_upper(0, 1000) < 0.01
    assert 0 < wilson_upper(0, 10) < 0.5
    assert wilson_upper(10, 10) > 0.9
    with pytest.raises(ValueError):
        wilson_upper(0, 0)


def test_concentration_report(mid_stats):
    report = concentration_report(mid_stats, deltas=(0.02, 1.0))
    rows = {r["delta"]: r for r in report["exceedance"]}
    assert rows[1.0]["exceed_count"] == 0  # |O - mean| >= t is impossible here
    assert rows[1.0]["wilson_hi"] < 0.3
    assert report["sd_O"] > 0
    assert set(rows) == {0.02, 1.0}


def test_plate_move_diagnostics(mid_stats):
    report = plate_move_stats(mid_stats)
    assert report["plate_move_ratio_ok"]
    assert report["plate_move_ratio_min"] >= 0.30
    assert report["tau1_ok"]
    assert report["tau1_min"] * 76 >= mid_stats.config.t
    assert report["removal_fraction_ok"]
    assert 0.70 <= report["removal_fraction_pooled"] <= 1.0
    assert report["two_to_one_rate_mean"] > 0


def test_xi_tail_report(mid_stats):
    report = xi_tail_report(mid_stats, fit_from=10)
    assert report["increments"] >= 1000
    assert report["mean_increment"] > 0
    assert report["min_gap"] >= 2
    assert report["mean_gap"] > 2
    rate = report["gap_decay_rate"]
    assert rate is None or 0 < rate < 1


def test_xi_tail_report_requires_data(small_stats):
    tiny = run_ensemble(EnsembleConfig(t=10, replicas=2, master_seed=1))
    with pytest.raises(ValueError):
        xi_tail_report(tiny)


def test_estimate_c_runs_and_validates():
    report = estimate_c([1000, 2000], replicas=40, master_seed=11)
    assert len(report["rows"]) == 2
    for row in report["rows"]:
        assert row["ci_low"] <= row["ratio"] <= row["ci_high"]
        assert row["within_bounds"]
    assert report["max_ratio_difference"] >= 0
    with pytest.raises(ValueError):
        estimate_c([10], replicas=5, master_seed=0)


def test_log_growth_check():
    report = log_growth_check([1000, 4000], replicas=10, master_seed=3)
    assert [row["t"] for row in report["rows"]] == [1000, 4000]
    for row in report["rows"]:
        assert row["within_ceiling"]
        assert row["B_fit"] == pytest.approx(row["max_other"] / math.log(row["t"]))
    assert report["growth_ratio"] > 0
    with pytest.raises(ValueError):
        log_growth_check([2000, 1000], replicas=5, master_seed=0)


def test_bounds_check_exact(mid_stats):
    report = bounds_check(mid_stats)
    assert report["bounds_pass"]
    corrupted = EnsembleStats(
        config=mid_stats.config,
        records=mid_stats.records.copy(),
        xi_hist=mid_stats.xi_hist,
        gap_hist=mid_stats.gap_hist,
        tau_hist=mid_stats.tau_hist,
        sum_olives=mid_stats.sum_olives,
        sum_olives_sq=mid_stats.sum_olives_sq,
    )
    corrupted.records["O"][0] = 0
    bad = bounds_check(corrupted)
    assert not bad["bounds_pass"]
    assert bad["violation_count"] == 1
    assert bad["violations"] == [int(corrupted.records["replica"][0])]


def test_summary_json_schema(mid_stats):
    doc = summary_json(mid_stats, elapsed_seconds=1.5, version="0.1.0")
    assert set(doc) >= {"config", "estimates", "checks", "provenance"}
    assert set(doc["config"]) >= {"t", "R", "master_seed", "cadence", "deltas"}
    assert set(doc["estimates"]) == {"mean_O", "ratio", "ci_low", "ci_high", "c_hat"}
    checks = doc["checks"]
    assert set(checks) >= {
        "bounds_pass", "tau1_pass", "removal_fraction", "sd", "exceedance", "max_other", "B_fit",
    }
    for row in checks["exceedance"]:
        assert set(row) == {"delta", "freq", "wilson_hi"}
    assert doc["provenance"]["version"] == "0.1.0"
    assert doc["provenance"]["elapsed_seconds"] == 1.5
    assert doc["estimates"]["c_hat"] == doc["estimates"]["ratio"]


def test_ensemble_csv_schema(small_stats):
    buf = io.StringIO()
    write_ensemble_csv(small_stats, buf)
    text = buf.getvalue()
    lines = text.split("\n")
    assert lines[0] == ENSEMBLE_CSV_HEADER
    assert len(lines) == 2 + CFG.replicas  # header + rows + trailing newline
    assert "\r" not in text
    first = lines[1].split(",")
    assert first[0] == "0"
    assert int(first[1]) == derive_seed(CFG.master_seed, 0)


def test_exact_integer_aggregation(small_stats):
    o_vals = [int(v) for v in small_stats.records["O"]]
    assert small_stats.sum_olives == sum(o_vals)
    assert small_stats.sum_olives_sq == sum(v * v for v in o_vals)
    assert small_stats.mean_olives() == Fraction(sum(o_vals), len(o_vals))
    # tau pooled histogram covers every entry recorded by the replicas.
    assert sum(small_stats.tau_hist.values()) == int(small_stats.records["t_plate"].sum())
    assert small_stats.tau_hist[1] == int(small_stats.records["tau1"].sum())
