import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olivetable.process import (
    TRAJECTORY_CSV_HEADER,
    InvalidMoveError,
    Move,
    MoveKind,
    TableState,
    apply_move,
    move_counts,
    new_table,
    run_trajectory,
    sample_move,
    step,
    write_trajectory_csv,
)
from olivetable.rng import make_rng


def test_new_table_is_empty():
    state = new_table()
    assert state.num_plates == 0
    assert state.total_olives == 0
    assert state.t == 0
    assert state.counters() == (0, 0, 0, 0)
    assert move_counts(state) == (1, 0, 0, 0, 1)
    state.check_invariants()


def test_first_step_is_forced():
    state = new_table()
    _, move = step(state, make_rng(0))
    assert move.kind is MoveKind.ADD_PLATE
    assert state.num_plates == 1
    assert state.total_olives == 0
    assert state.plates == [(1, 0)]


@pytest.mark.parametrize(
    "plates,expected",
    [
        ([(1, 0), (2, 0)], (1, 1, 2, 0, 4)),
        ([(1, 1), (2, 2), (3, 3), (4, 0), (5, 0)], (1, 10, 5, 3, 19)),
        ([(1, 0), (2, 0), (3, 0)], (1, 3, 3, 0, 7)),
        ([(1, 0)], (1, 0, 1, 0, 2)),
        ([(1, 2)], (1, 0, 1, 1, 3)),
    ],
)
def test_move_counts_formula(plates, expected):
    state = TableState.from_plates(plates)
    state.check_invariants()
    assert move_counts(state) == expected


def test_plate_move_probability_at_least_one_third():
    # (C(l,2) + 1) / M >= 1/3 for every l >= 1 and every n_e <= l.
    for l in range(1, 1001):
        n_merge = l * (l - 1) // 2
        for n_e in range(0, l + 1):
            m_total = 1 + n_merge + l + n_e
            assert 3 * (n_merge + 1) >= m_total, (l, n_e)
        assert m_total <= 2 * l + n_merge + 1


def test_conditional_merge_probability_at_least_three_quarters():
    for l in range(3, 1001):
        n_merge = l * (l - 1) // 2
        assert 4 * n_merge >= 3 * (n_merge + 1), l


def test_sample_move_empty_table_always_adds_plate():
    state = new_table()
    rng = make_rng(1)
    assert all(sample_move(state, rng).kind is MoveKind.ADD_PLATE for _ in range(100))


def test_sample_move_uniform_two_empty_plates():
    # l=2 both empty: M=4 moves, each frequency within 5 sigma of 1/4.
    state = TableState.from_plates([(1, 0), (2, 0)])
    rng = make_rng(123)
    n = 1_000_000
    counts = {}
    for _ in range(n):
        mv = sample_move(state, rng)
        counts[mv] = counts.get(mv, 0) + 1
    assert len(counts) == 4
    tol = 5 * math.sqrt(n * 0.25 * 0.75)
    chi2 = 0.0
    for mv, c in counts.items():
        assert abs(c - n / 4) <= tol, (mv, c)
        chi2 += (c - n / 4) ** 2 / (n / 4)
    # chi-square with 3 df: mean 3, sd sqrt(6); 5 sigma above the mean.
    assert chi2 <= 3 + 5 * math.sqrt(6)


def test_sample_move_merge_probability_one_in_five():
    # l=2, n_e=1: M = 1 + 1 + 2 + 1 = 5, so Pr(P-) = 1/5.
    state = TableState.from_plates([(1, 1), (2, 0)])
    assert move_counts(state).total == 5
    rng = make_rng(321)
    n = 200_000
    merges = sum(1 for _ in range(n) if sample_move(state, rng).kind is MoveKind.MERGE_PLATES)
    tol = 5 * math.sqrt(n * 0.2 * 0.8)
    assert abs(merges - n / 5) <= tol


def test_apply_merge_conserves_olives_and_keeps_lower_id():
    state = TableState.from_plates([(1, 3), (2, 2)])
    apply_move(state, Move.merge(2, 1))
    assert state.plates == [(1, 5)]
    assert state.total_olives == 5
    assert state.num_nonempty == 1
    state.check_invariants()


def test_merge_of_non_first_plates_keeps_lower_id():
    state = TableState.from_plates([(1, 0), (2, 1), (5, 4)])
    apply_move(state, Move.merge(5, 2))
    assert sorted(state.plates) == [(1, 0), (2, 5)]
    state.check_invariants()


def test_remove_last_olive_updates_nonempty():
    state = TableState.from_plates([(1, 1), (2, 3)])
    assert state.num_nonempty == 2
    apply_move(state, Move.remove_olive(1))
    assert state.num_nonempty == 1
    assert state.olives_of(1) == 0
    state.check_invariants()


def test_invalid_moves_raise():
    state = TableState.from_plates([(1, 0), (2, 1)])
    with pytest.raises(InvalidMoveError):
        apply_move(state.copy(), Move.remove_olive(1))  # empty plate
    with pytest.raises(InvalidMoveError):
        apply_move(state.copy(), Move.add_olive(9))  # no such plate
    with pytest.raises(InvalidMoveError):
        apply_move(TableState.from_plates([(1, 0)]), Move.merge(1, 2))
    with pytest.raises(InvalidMoveError):
        Move.merge(3, 3)


def test_single_move_deltas_are_bounded():
    rng = make_rng(5150)
    state = new_table()
    for _ in range(2000):
        before = (state.total_olives, state.num_plates, state.counters())
        state, _ = step(state, rng)
        after = (state.total_olives, state.num_plates, state.counters())
        assert abs(after[0] - before[0]) <= 1
        assert abs(after[1] - before[1]) <= 1
        bumped = [a - b for a, b in zip(after[2], before[2])]
        assert sorted(bumped) == [0, 0, 0, 1]
    state.check_invariants()


def test_step_from_single_empty_plate_adds_olive_half_the_time():
    # l=1, n_e=0: M = 2 (P+ or O+), so Pr(O=1 after the step) = 1/2.
    base = TableState.from_plates([(1, 0)])
    assert move_counts(base).total == 2
    rng = make_rng(2718)
    n = 100_000
    hits = 0
    for _ in range(n):
        trial = base.copy()
        step(trial, rng)
        hits += trial.total_olives
    tol = 5 * math.sqrt(n * 0.25)
    assert abs(hits - n / 2) <= tol


@given(seed=st.integers(min_value=0, max_value=2**64 - 1), t=st.integers(min_value=1, max_value=300))
@settings(max_examples=25, deadline=None)
def test_accounting_identity_and_structure_hold(seed, t):
    rng = make_rng(seed)
    state = new_table()
    for _ in range(t):
        state, _ = step(state, rng)
        assert state.total_olives == state.t - state.plate_moves - 2 * state.c_remove_olive
        assert state.num_plates >= 1, "table re-emptied"
        assert min(p.id for p in state.plates) == 1, "first plate lost"
    state.check_invariants()


def test_fast_loop_matches_step_by_step():
    t = 5000
    for seed in (0, 1, 910, 2**63):
        record = run_trajectory(t, seed)
        rng = make_rng(seed)
        state = new_table()
        taus = {}
        returns = []
        for _ in range(t):
            before = state.num_plates
            state, move = step(state, rng)
            if state.num_plates != before:
                taus[state.num_plates] = taus.get(state.num_plates, 0) + 1
            if move.kind is MoveKind.MERGE_PLATES and before == 2:
                returns.append(state.t)
        fast = record.final_state
        assert fast == state
        assert fast.counters() == state.counters()
        assert record.tau == taus
        assert record.two_to_one_times == returns
        fast.check_invariants()


def test_trajectory_determinism_and_seed_sensitivity():
    a = run_trajectory(20_000, 42, cadence=1000)
    b = run_trajectory(20_000, 42, cadence=1000)
    c = run_trajectory(20_000, 43, cadence=1000)
    assert a.final_state == b.final_state
    assert a.series == b.series
    assert a.two_to_one_times == b.two_to_one_times
    assert a.olive_increments == b.olive_increments
    assert c.final_state != a.final_state or c.series != a.series


def test_trajectory_t1_conventions():
    rec = run_trajectory(1, 7)
    assert rec.final_state.num_plates == 1
    assert rec.final_state.total_olives == 0
    assert rec.tau == {1: 1}
    assert rec.two_to_one_times == []
    assert rec.olive_increments == []
    assert rec.num_returns == 0


def test_trajectory_record_invariants():
    rec = run_trajectory(100_000, 1234, check_identity=True)
    # Return times strictly increase and tau[1] counts the initial entry.
    assert all(a < b for a, b in zip(rec.two_to_one_times, rec.two_to_one_times[1:]))
    assert rec.tau[1] == rec.num_returns + 1
    assert len(rec.olive_increments) == rec.num_returns
    assert all(g >= 2 for g in rec.return_gaps)
    # Telescoping: increments sum to the olive count at the last return.
    rerun = run_trajectory(rec.two_to_one_times[-1], 1234)
    assert sum(rec.olive_increments) == rerun.final_state.total_olives
    assert rec.final_state.plate_moves == sum(rec.tau.values())


def test_max_other_olives_tracks_non_first_plates():
    t = 3000
    seed = 88
    rec = run_trajectory(t, seed)
    rng = make_rng(seed)
    state = new_table()
    max_other = 0
    for _ in range(t):
        state, _ = step(state, rng)
        max_other = max(
            max_other, max((p.olives for p in state.plates if p.id != 1), default=0)
        )
    assert rec.max_other_olives == max_other
    assert rec.first_plate_olives == state.first_plate_olives


def test_trajectory_series_and_csv_schema():
    rec = run_trajectory(1000, 5, cadence=100)
    assert len(rec.series) == 10
    steps = [row[0] for row in rec.series]
    assert steps == list(range(100, 1001, 100))
    final_row = rec.series[-1]
    assert final_row[1] == rec.final_state.total_olives
    assert final_row[2] == rec.final_state.num_plates
    assert final_row[4] == rec.first_plate_olives
    assert final_row[5] == rec.max_other_olives
    buf = io.StringIO()
    write_trajectory_csv(rec, buf)
    text = buf.getvalue()
    lines = text.split("\n")
    assert lines[0] == TRAJECTORY_CSV_HEADER
    assert len(lines) == 12  # header + 10 rows + trailing newline
    assert "\r" not in text
    assert lines[1].count(",") == 5


def test_trajectory_validation():
    with pytest.raises(ValueError):
        run_trajectory(0, 1)
    with pytest.raises(ValueError):
        run_trajectory(10, 1, cadence=-1)
    with pytest.raises(ValueError):
        run_trajectory(3_000_000, 1, cadence=1)  # too many series rows


def test_bounds_hold_at_moderate_horizon():
    # Olive total grows linearly: O/t within [1/342, 2/3] at t = 1e5.
    rec = run_trajectory(100_000, 777)
    ratio = rec.final_state.total_olives / 100_000
    assert 1 / 342 <= ratio <= 2 / 3
    assert sum(rec.olive_increments) <= rec.final_state.total_olives + 1
