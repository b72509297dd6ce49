"""Cross-cutting verification suite: every exact identity and oracle pairing.

Each check pits an independent derivation against the implementation it
guards (dynamic program vs closed form vs path enumeration, canonical vs
labeled pushforward, exact transition law vs the live sampler, ...).  The
suite is what ``olivetable verify`` runs; checks resolve their targets
through module attributes so a deliberately broken constant is caught.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

__all__ = ["CheckResult", "build_checks", "run_suite", "suite_report"]

from . import chain, ensemble, oracle, process
from .rng import derive_seed, make_rng


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed_seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28s} ({self.elapsed_seconds:6.2f}s)  {self.detail}"


def _check_catalan_values() -> str:
    known = {0: 1, 1: 1, 2: 2, 3: 5, 4: 14, 10: 16796}
    for k, v in known.items():
        assert chain.catalan(k) == v, f"catalan({k}) = {chain.catalan(k)} != {v}"
    # Segner's recurrence as an independent derivation.
    values = [1]
    for n in range(30):
        values.append(sum(values[i] * values[n - i] for i in range(n + 1)))
    for k, v in enumerate(values):
        assert chain.catalan(k) == v, f"recurrence mismatch at {k}"
    return "closed form matches the convolution recurrence to k = 30"


def _check_pmf_triple(t_hi: int) -> str:
    pmf = chain.first_return_pmf_dp(t_hi)
    pmf.check_invariants()
    assert pmf.mass(2) == Fraction(1, 2)
    assert pmf.mass(4) == Fraction(3, 16)
    assert pmf.mass(6) == Fraction(27, 256)
    for t in range(1, t_hi + 1):
        closed = chain.first_return_pmf_closed(t)
        assert closed == pmf.mass(2 * t), f"closed form != DP at t={t}"
        if t >= 2:
            conv = chain.first_return_pmf_convolution(t)
            assert conv == pmf.mass(2 * t), f"convolution != DP at t={t}"
    return f"DP = closed form = convolution exactly for t <= {t_hi}"


def _check_pmf_published_ratio(t_hi: int) -> str:
    for t in range(2, t_hi + 1):
        ratio = chain.published_first_return_pmf(t) / chain.first_return_pmf_closed(t)
        assert ratio == 4, f"published/validated = {ratio} != 4 at t={t}"
    return f"published closed form = 4 x validated for 2 <= t <= {t_hi}"


def _check_path_enumeration(t_hi: int) -> str:
    enum = oracle.enumerate_chain_paths(t_hi)
    enum.check_invariants()
    dp = chain.first_return_pmf_dp(t_hi)
    assert enum.entries == dp.entries, "path enumeration disagrees with DP"
    return f"exhaustive path enumeration matches the DP for t <= {t_hi}"


def _check_cdf_normalization(t_hi: int) -> str:
    cdf = chain.first_return_cdf(2 * t_hi)
    tail = 2 * Fraction(3, 4) ** t_hi  # sum_{j>T} (1/2)(3/4)^{j-1}
    assert cdf <= 1
    assert cdf + tail >= 1
    assert chain.first_return_cdf(1) == 0
    assert chain.first_return_cdf(6) == Fraction(203, 256)
    return f"F(2T) <= 1 and F(2T) + tail bound >= 1 at T = {t_hi}"


def _check_mean_return(t_hi: int) -> str:
    value, tail = chain.mean_return_time_series(t_hi)
    stationary = chain.mean_return_time_stationary()
    assert value <= stationary <= value + tail, "stationary value not in series interval"
    dist = chain.stationary_distribution(60)
    dist.check_invariants()
    return (
        f"series interval width {float(tail):.2e} contains 1/pi_1 = {stationary} "
        f"(published claim: {chain.PUBLISHED_MEAN_RETURN})"
    )


def _check_olive_oracle() -> str:
    assert oracle.exact_olive_distribution(1) == {0: Fraction(1)}
    assert oracle.exact_olive_distribution(2) == {0: Fraction(1, 2), 1: Fraction(1, 2)}
    assert oracle.exact_expected_olives(1) == 0
    assert oracle.exact_expected_olives(2) == Fraction(1, 2)
    assert oracle.exact_expected_olives(3) == Fraction(3, 4)
    return "exact olive law matches hand enumeration at t = 1, 2, 3"


def _check_lumping(t_hi: int) -> str:
    for t in range(1, t_hi + 1):
        lumped = oracle.exact_olive_distribution(t)
        labeled = oracle.labeled_olive_distribution(t)
        assert lumped == labeled, f"lumping mismatch at t={t}"
    return f"canonical pushforward equals the labeled tree for t <= {t_hi}"


def _check_transition_mass(n_states: int) -> str:
    rng = make_rng(20240917)
    for _ in range(n_states):
        n_others = rng.randrange(0, 6)
        state = oracle.CanonicalState(
            rng.randrange(0, 5), tuple(sorted(rng.randrange(0, 4) for _ in range(n_others)))
        )
        law = oracle.transitions(state)
        assert sum(law.values(), Fraction(0)) == 1, f"mass != 1 from {state}"
    return f"one-step law sums to 1 exactly from {n_states} random states"


def _check_sampler_against_oracle(n_states: int, draws: int) -> str:
    rng = make_rng(77)
    configs = [
        [(1, 0)],
        [(1, 0), (2, 0)],
        [(1, 1)],
        [(1, 2), (2, 0)],
        [(1, 0), (2, 3)],
        [(1, 1), (2, 1), (3, 0)],
        [(1, 0), (2, 0), (3, 0), (4, 2)],
        [(1, 5), (2, 1), (3, 1)],
    ]
    while len(configs) < n_states:
        l = rng.randrange(1, 6)
        configs.append([(i + 1, rng.randrange(0, 4)) for i in range(l)])
    worst = 0.0
    for plates in configs[:n_states]:
        base = process.TableState.from_plates(plates)
        law = oracle.exact_transition_check(base)
        counts = {key: 0 for key in law}
        for _ in range(draws):
            trial = base.copy()
            process.apply_move(trial, process.sample_move(trial, rng))
            counts[oracle.canonical_of(trial)] += 1
        for succ, p in law.items():
            pf = float(p)
            se = (pf * (1 - pf) / draws) ** 0.5
            dev = abs(counts[succ] / draws - pf)
            worst = max(worst, dev / se if se else 0.0)
            assert dev <= 4 * se + 1e-12, (
                f"sampler off from exact law at {plates} -> {succ}: "
                f"freq {counts[succ] / draws} vs {pf} ({dev / se:.1f} se)"
            )
    return f"sampler matches the exact law on {n_states} states (worst {worst:.2f} se)"


def _check_accounting_identity(t_steps: int) -> str:
    rec = process.run_trajectory(t_steps, seed=4242, check_identity=True)
    rec.final_state.check_invariants()
    return f"olive conservation held at every one of {t_steps} steps"


def _check_oracle_vs_mc(replicas: int) -> str:
    t = 12
    exact_mean = oracle.exact_expected_olives(t)
    config = ensemble.EnsembleConfig(t=t, replicas=replicas, master_seed=97531)
    stats = ensemble.run_ensemble(config)
    mc_mean = stats.mean_olives()
    se = stats.sd_olives() / replicas**0.5
    dev = abs(float(mc_mean - exact_mean))
    assert dev <= 4 * se, f"MC mean {float(mc_mean)} vs exact {float(exact_mean)}: {dev / se:.1f} se"
    return (
        f"ensemble mean at t={t} within {dev / se:.2f} se of the exact value "
        f"{float(exact_mean):.9f} over {replicas} replicas"
    )


def _check_walk_structure(steps: int) -> str:
    stats = chain.simulate_walk(steps, seed=11, record_returns=True)
    assert stats.n11 <= steps // 2
    assert all(d % 2 == 0 for d in stats.return_times)
    assert stats.final_state >= 1
    rng = make_rng(5)
    assert chain.chain_step(1, rng) == 2
    assert all(chain.chain_step(7, rng) in (6, 8) for _ in range(100))
    return f"walk parity and support hold over {steps} steps ({stats.n11} returns)"


def _check_seed_derivation(n: int) -> str:
    seeds = [derive_seed(123, i) for i in range(n)]
    assert len(set(seeds)) == n, "derived seeds collide"
    first = [tuple(make_rng(s).getrandbits(32) for _ in range(8)) for s in seeds[:1000]]
    assert len(set(first)) == len(first), "replica streams overlap"
    return f"{n} derived seeds distinct; first draws of 1000 streams all differ"


def build_checks(level: str) -> list[tuple[str, Callable[[], str]]]:
    if level not in ("quick", "full"):
        raise ValueError(f"level must be 'quick' or 'full', got {level!r}")
    full = level == "full"
    return [
        ("catalan_values", _check_catalan_values),
        ("catalan_convolution", lambda: (
            chain.verify_catalan_convolution(12 if full else 9),
            "convolution closed form exact for all (t, i)",
        )[1]),
        ("gould_identity", lambda: (
            chain.verify_gould_identity(60 if full else 25),
            "partial-sum identity exact over the sweep",
        )[1]),
        ("binomial_series", lambda: (
            chain.verify_binomial_series(k_max=200 if full else 100),
            "generating-function values (incl. 12 and 6) reproduced",
        )[1]),
        ("pmf_triple_agreement", lambda: _check_pmf_triple(30 if full else 20)),
        ("pmf_published_ratio", lambda: _check_pmf_published_ratio(30)),
        ("path_enumeration", lambda: _check_path_enumeration(10 if full else 7)),
        ("cdf_normalization", lambda: _check_cdf_normalization(200)),
        ("mean_return_time", lambda: _check_mean_return(200)),
        ("olive_oracle_small_t", _check_olive_oracle),
        ("lumping_soundness", lambda: _check_lumping(6 if full else 5)),
        ("transition_mass", lambda: _check_transition_mass(1000 if full else 200)),
        ("sampler_vs_oracle", lambda: _check_sampler_against_oracle(
            20 if full else 8, 40_000 if full else 20_000
        )),
        ("accounting_identity", lambda: _check_accounting_identity(100_000 if full else 20_000)),
        ("oracle_vs_mc", lambda: _check_oracle_vs_mc(100_000 if full else 20_000)),
        ("walk_structure", lambda: _check_walk_structure(200_000 if full else 50_000)),
        ("seed_derivation", lambda: _check_seed_derivation(100_000 if full else 10_000)),
    ]


def run_suite(level: str = "quick", emit: Optional[Callable[[str], None]] = None) -> list[CheckResult]:
    """Run every check at the given level; never raises on check failure."""
    results = []
    for name, fn in build_checks(level):
        start = time.perf_counter()
        try:
            detail = fn()
            passed = True
        except (AssertionError, chain.VerificationError) as exc:
            detail = str(exc) or exc.__class__.__name__
            passed = False
        elapsed = time.perf_counter() - start
        result = CheckResult(name=name, passed=passed, detail=detail, elapsed_seconds=elapsed)
        if emit is not None:
            emit(result.line())
        results.append(result)
    return results


def suite_report(results: list[CheckResult], level: str) -> dict:
    """Structured JSON document: per-check pass/fail plus identity values
    and the first-return pmf discrepancy table."""

    def frac(value: Fraction) -> str:
        return f"{value.numerator}/{value.denominator}"

    full = level == "full"
    series = chain.verify_binomial_series(k_max=200 if full else 100)
    discrepancy = []
    for t in range(1, 31):
        validated = chain.first_return_pmf_closed(t)
        row = {"t": t, "f_validated": frac(validated)}
        if t >= 2:
            published = chain.published_first_return_pmf(t)
            row["f_published"] = frac(published)
            row["ratio"] = frac(published / validated)
        else:
            row["f_published_conventions"] = {
                name: frac(v) for name, v in chain.published_pmf_t1_conventions().items()
            }
        discrepancy.append(row)
    return {
        "level": level,
        "all_passed": all(r.passed for r in results),
        "checks": [
            {
                "name": r.name,
                "pass": r.passed,
                "detail": r.detail,
                "elapsed_seconds": r.elapsed_seconds,
            }
            for r in results
        ],
        "identities": {
            "catalan_convolution": [
                {"t": row["t"], "i": row["i"], "value": row["value"], "pass": row["pass"]}
                for row in chain.verify_catalan_convolution(12 if full else 9)
            ],
            "binomial_partial_sum": [
                {"x": row["x"], "n": row["n"], "value": row["value"], "pass": row["pass"]}
                for row in chain.verify_gould_identity(60 if full else 25)
            ],
            "binomial_series": {
                name: {
                    "partial": frac(c["partial"]),
                    "closed": frac(c["closed"]),
                    "tail_bound": c["tail_bound"],
                    "pass": c["pass"],
                }
                for name, c in series["checks"].items()
            },
        },
        "pmf_discrepancy_table": discrepancy,
    }
