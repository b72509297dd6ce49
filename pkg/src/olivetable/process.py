"""State machine for the random plates-and-olives process.

A table holds distinguishable plates; each plate carries an unordered pile
of olives.  At every step one move is chosen uniformly at random from the
currently available moves:

* add an empty plate (always exactly 1 way),
* merge two plates onto one (one way per unordered pair; the olives are
  combined, the higher-id plate leaves the table),
* add an olive to a plate (one way per plate),
* remove an olive from a plate (one way per non-empty plate).

So with ``l`` plates of which ``n_e`` are non-empty there are
``M = 1 + C(l,2) + l + n_e`` available moves.  The table starts empty and,
because a merge needs two plates, can never re-empty after the first move.
The lower-id plate survives a merge, which makes plate 1 immortal and keeps
"the first plate" well defined; the combined olive count is the same under
either survivor convention.

The per-step work is O(1): plates live in contiguous parallel lists with
swap-removal, non-empty plates are tracked in an index list, and the single
uniform draw in [0, M) is decoded positionally (unbiased via rejection
sampling in :mod:`olivetable.rng`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, TextIO

from .rng import make_rng, randbelow

MAX_SERIES_ROWS = 2_000_000

TRAJECTORY_CSV_HEADER = "step,olives,plates,nonempty,first_plate_olives,max_other_olives"


class InvalidMoveError(ValueError):
    """A move that is not available in the current state (caller bug)."""


class Plate(NamedTuple):
    """Immutable snapshot of one plate: birth id and olive count."""

    id: int
    olives: int


class MoveKind(enum.Enum):
    ADD_PLATE = "P+"
    MERGE_PLATES = "P-"
    ADD_OLIVE = "O+"
    REMOVE_OLIVE = "O-"


@dataclass(frozen=True)
class Move:
    """One process move.

    ``plate_a``/``plate_b`` are plate ids: a merge carries the ordered pair
    (lower id, higher id); the olive moves carry the target plate in
    ``plate_a``; adding a plate carries neither.
    """

    kind: MoveKind
    plate_a: Optional[int] = None
    plate_b: Optional[int] = None

    @staticmethod
    def add_plate() -> "Move":
        return Move(MoveKind.ADD_PLATE)

    @staticmethod
    def merge(id_a: int, id_b: int) -> "Move":
        if id_a == id_b:
            raise InvalidMoveError(f"merge needs two distinct plates, got {id_a} twice")
        lo, hi = (id_a, id_b) if id_a < id_b else (id_b, id_a)
        return Move(MoveKind.MERGE_PLATES, lo, hi)

    @staticmethod
    def add_olive(plate_id: int) -> "Move":
        return Move(MoveKind.ADD_OLIVE, plate_id)

    @staticmethod
    def remove_olive(plate_id: int) -> "Move":
        return Move(MoveKind.REMOVE_OLIVE, plate_id)


class MoveCounts(NamedTuple):
    """Number of available moves of each kind, plus the total M."""

    add_plate: int
    merge: int
    add_olive: int
    remove_olive: int
    total: int


def _unrank_pair(k: int) -> tuple[int, int]:
    """k-th unordered index pair (i, j), i < j, in the order (0,1),(0,2),(1,2),..."""
    j = (1 + math.isqrt(1 + 8 * k)) // 2
    i = k - j * (j - 1) // 2
    return i, j


class TableState:
    """Full mutable process state.

    Tracks the plates, the per-kind move counters, the step count ``t`` and
    the running olive total.  The exact conservation law

        total_olives == t - (plate moves) - 2 * (olive removals)

    holds after every step and is asserted by :meth:`check_invariants`.
    """

    __slots__ = (
        "_ids",
        "_olives",
        "_ne_pos",
        "_ne_idx",
        "_pos1",
        "_next_id",
        "total_olives",
        "t",
        "c_add_plate",
        "c_merge",
        "c_add_olive",
        "c_remove_olive",
    )

    def __init__(self) -> None:
        self._ids: list[int] = []
        self._olives: list[int] = []
        self._ne_pos: list[int] = []
        self._ne_idx: list[int] = []
        self._pos1 = -1
        self._next_id = 1
        self.total_olives = 0
        self.t = 0
        self.c_add_plate = 0
        self.c_merge = 0
        self.c_add_olive = 0
        self.c_remove_olive = 0

    # -- read-only views -------------------------------------------------

    @property
    def num_plates(self) -> int:
        return len(self._ids)

    @property
    def num_nonempty(self) -> int:
        return len(self._ne_pos)

    @property
    def plates(self) -> list[Plate]:
        return [Plate(i, o) for i, o in zip(self._ids, self._olives)]

    @property
    def first_plate_olives(self) -> int:
        """Olives on plate id 1 (0 if the table is still empty)."""
        return self._olives[self._pos1] if self._pos1 >= 0 else 0

    @property
    def plate_moves(self) -> int:
        return self.c_add_plate + self.c_merge

    def olives_of(self, plate_id: int) -> int:
        return self._olives[self._position_of(plate_id)]

    def copy(self) -> "TableState":
        dup = TableState.__new__(TableState)
        dup._ids = self._ids[:]
        dup._olives = self._olives[:]
        dup._ne_pos = self._ne_pos[:]
        dup._ne_idx = self._ne_idx[:]
        dup._pos1 = self._pos1
        dup._next_id = self._next_id
        dup.total_olives = self.total_olives
        dup.t = self.t
        dup.c_add_plate = self.c_add_plate
        dup.c_merge = self.c_merge
        dup.c_add_olive = self.c_add_olive
        dup.c_remove_olive = self.c_remove_olive
        return dup

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TableState):
            return NotImplemented
        return (
            sorted(zip(self._ids, self._olives)) == sorted(zip(other._ids, other._olives))
            and self._next_id == other._next_id
            and self.t == other.t
            and self.counters() == other.counters()
        )

    def counters(self) -> tuple[int, int, int, int]:
        """(P+, P-, O+, O-) move counts so far."""
        return (self.c_add_plate, self.c_merge, self.c_add_olive, self.c_remove_olive)

    @classmethod
    def from_plates(cls, plates: Iterable[tuple[int, int]]) -> "TableState":
        """Build a frozen test state from (plate id, olive count) pairs.

        The move counters are set to one invariant-consistent history
        (all plates added, all olives added); the sampling distribution
        only depends on the plate configuration.
        """
        state = cls()
        seen: set[int] = set()
        for plate_id, olives in plates:
            if plate_id in seen:
                raise ValueError(f"duplicate plate id {plate_id}")
            if plate_id < 1 or olives < 0:
                raise ValueError(f"bad plate ({plate_id}, {olives})")
            seen.add(plate_id)
            pos = len(state._ids)
            state._ids.append(plate_id)
            state._olives.append(olives)
            if olives > 0:
                state._ne_idx.append(len(state._ne_pos))
                state._ne_pos.append(pos)
            else:
                state._ne_idx.append(-1)
            if plate_id == 1:
                state._pos1 = pos
        state._next_id = max(seen, default=0) + 1
        state.total_olives = sum(state._olives)
        state.c_add_plate = len(state._ids)
        state.c_add_olive = state.total_olives
        state.t = state.c_add_plate + state.c_add_olive
        return state

    # -- internal positional mutators -------------------------------------
    # These are the single source of truth for how a move changes the state;
    # run_trajectory inlines equivalent code for speed and a parity test
    # pins the two paths together.

    def _position_of(self, plate_id: int) -> int:
        try:
            return self._ids.index(plate_id)
        except ValueError:
            raise InvalidMoveError(f"no plate with id {plate_id}") from None

    def _ne_add(self, pos: int) -> None:
        self._ne_idx[pos] = len(self._ne_pos)
        self._ne_pos.append(pos)

    def _ne_remove(self, pos: int) -> None:
        slot = self._ne_idx[pos]
        last = self._ne_pos.pop()
        if last != pos:
            self._ne_pos[slot] = last
            self._ne_idx[last] = slot
        self._ne_idx[pos] = -1

    def _apply_add_plate(self) -> None:
        if self._next_id == 1:
            self._pos1 = len(self._ids)
        self._ids.append(self._next_id)
        self._next_id += 1
        self._olives.append(0)
        self._ne_idx.append(-1)
        self.c_add_plate += 1
        self.t += 1

    def _apply_merge(self, pos_a: int, pos_b: int) -> None:
        """Merge the plates at two positions; the lower-id one survives."""
        i, j = pos_a, pos_b
        if self._ids[i] > self._ids[j]:
            i, j = j, i
        moved = self._olives[j]
        if moved:
            if self._olives[i] == 0:
                self._ne_add(i)
            self._olives[i] += moved
            self._ne_remove(j)
        last_pos = len(self._ids) - 1
        if j != last_pos:
            self._ids[j] = self._ids[last_pos]
            self._olives[j] = self._olives[last_pos]
            slot = self._ne_idx[last_pos]
            self._ne_idx[j] = slot
            if slot >= 0:
                self._ne_pos[slot] = j
            if self._pos1 == last_pos:
                self._pos1 = j
        self._ids.pop()
        self._olives.pop()
        self._ne_idx.pop()
        self.c_merge += 1
        self.t += 1

    def _apply_add_olive(self, pos: int) -> None:
        if self._olives[pos] == 0:
            self._ne_add(pos)
        self._olives[pos] += 1
        self.total_olives += 1
        self.c_add_olive += 1
        self.t += 1

    def _apply_remove_olive(self, pos: int) -> None:
        self._olives[pos] -= 1
        if self._olives[pos] == 0:
            self._ne_remove(pos)
        self.total_olives -= 1
        self.c_remove_olive += 1
        self.t += 1

    # -- invariants --------------------------------------------------------

    def check_invariants(self) -> None:
        """Assert every structural invariant; raises AssertionError on a bug."""
        l = len(self._ids)
        assert l == self.c_add_plate - self.c_merge
        assert self.total_olives == self.c_add_olive - self.c_remove_olive
        assert self.t == sum(self.counters())
        assert self.total_olives == self.t - self.plate_moves - 2 * self.c_remove_olive
        assert self.total_olives == sum(self._olives)
        assert sorted(self._ne_pos) == [p for p, o in enumerate(self._olives) if o > 0]
        for pos in range(l):
            slot = self._ne_idx[pos]
            assert (slot >= 0 and self._ne_pos[slot] == pos) or (slot == -1 and self._olives[pos] == 0)
        assert len(set(self._ids)) == l
        assert all(o >= 0 for o in self._olives)
        assert self.total_olives <= self.t and l <= self.t
        if self.t >= 1 and self.c_add_plate >= 1 and min(self._ids, default=0) == 1:
            assert self._ids[self._pos1] == 1
        if self.t >= 1:
            assert l >= 1, "the table can never re-empty"


def new_table() -> TableState:
    """The empty table: no plates, no olives, step 0."""
    return TableState()


def move_counts(state: TableState) -> MoveCounts:
    """Available-move tally (1, C(l,2), l, n_e) and their total."""
    l = state.num_plates
    n_merge = l * (l - 1) // 2
    n_e = state.num_nonempty
    return MoveCounts(1, n_merge, l, n_e, 1 + n_merge + l + n_e)


def sample_move(state: TableState, rng) -> Move:
    """Draw one of the M available moves with probability exactly 1/M each.

    A single rejection-sampled integer u in [0, M) is decoded positionally:
    0 adds a plate, the next C(l,2) values pick an unordered plate pair, the
    next l values pick a plate for an olive, the last n_e values pick a
    non-empty plate for a removal.
    """
    counts = move_counts(state)
    u = randbelow(rng, counts.total)
    if u == 0:
        return Move.add_plate()
    u -= 1
    if u < counts.merge:
        i, j = _unrank_pair(u)
        return Move.merge(state._ids[i], state._ids[j])
    u -= counts.merge
    if u < counts.add_olive:
        return Move.add_olive(state._ids[u])
    u -= counts.add_olive
    return Move.remove_olive(state._ids[state._ne_pos[u]])


def apply_move(state: TableState, move: Move) -> TableState:
    """Apply ``move`` in place and return the state.

    Raises :class:`InvalidMoveError` for a move not available in ``state``
    (nonexistent plate, removal from an empty plate, merge with < 2 plates);
    moves produced by :func:`sample_move` are always valid.
    """
    kind = move.kind
    if kind is MoveKind.ADD_PLATE:
        state._apply_add_plate()
    elif kind is MoveKind.MERGE_PLATES:
        if state.num_plates < 2:
            raise InvalidMoveError("merge needs at least two plates")
        pos_a = state._position_of(move.plate_a)
        pos_b = state._position_of(move.plate_b)
        if pos_a == pos_b:
            raise InvalidMoveError("merge needs two distinct plates")
        state._apply_merge(pos_a, pos_b)
    elif kind is MoveKind.ADD_OLIVE:
        state._apply_add_olive(state._position_of(move.plate_a))
    elif kind is MoveKind.REMOVE_OLIVE:
        pos = state._position_of(move.plate_a)
        if state._olives[pos] < 1:
            raise InvalidMoveError(f"plate {move.plate_a} has no olive to remove")
        state._apply_remove_olive(pos)
    else:  # pragma: no cover - enum is closed
        raise InvalidMoveError(f"unknown move kind {kind!r}")
    return state


def step(state: TableState, rng) -> tuple[TableState, Move]:
    """Advance the state by one uniformly chosen move; returns the move taken."""
    move = sample_move(state, rng)
    return apply_move(state, move), move


@dataclass
class TrajectoryRecord:
    """Everything one trajectory run reports.

    ``two_to_one_times`` are the steps at which a merge took the plate count
    from 2 to 1 (the return times t_1 < ... < t_m).  ``olive_increments``
    holds the olive-count changes between consecutive return times, with the
    initial reference point t_0 = 1 (the forced first plate), so their sum
    is the olive count at t_m.  ``tau`` counts entries into each plate-count
    level, counted only when the plate count changes; the arrival at one
    plate on step 1 is counted, so ``tau[1] == len(two_to_one_times) + 1``.
    ``max_other_olives`` is the maximum, over the whole run and over every
    plate other than plate 1, of that plate's olive count.
    """

    t_max: int
    seed: int
    cadence: int
    final_state: TableState
    two_to_one_times: list[int]
    olive_increments: list[int]
    tau: dict[int, int]
    l_ge3_removals: int
    plate_moves_at_ge3: int
    max_other_olives: int
    first_plate_olives: int
    series: list[tuple[int, int, int, int, int, int]] = field(default_factory=list)

    @property
    def num_returns(self) -> int:
        """m: the number of 2 -> 1 transitions."""
        return len(self.two_to_one_times)

    @property
    def return_gaps(self) -> list[int]:
        """Gaps t_{i+1} - t_i of the return-time sequence, from t_0 = 1."""
        prev = 1
        gaps = []
        for ti in self.two_to_one_times:
            gaps.append(ti - prev)
            prev = ti
        return gaps


def run_trajectory(
    t_max: int,
    seed: int,
    cadence: int = 0,
    check_identity: bool = False,
) -> TrajectoryRecord:
    """Run ``t_max`` steps from the empty table with full diagnostics.

    ``cadence`` > 0 samples a (step, olives, plates, nonempty,
    first_plate_olives, max_other_olives) row every ``cadence`` steps;
    per-step recording of long runs is refused to bound memory.
    ``check_identity`` asserts the olive conservation law after every step.
    Identical (t_max, seed, cadence) always reproduce the identical record.
    """
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if cadence < 0:
        raise ValueError(f"cadence must be >= 0, got {cadence}")
    if cadence and t_max // cadence > MAX_SERIES_ROWS:
        raise ValueError(
            f"cadence {cadence} over {t_max} steps would record "
            f"{t_max // cadence} rows (cap {MAX_SERIES_ROWS})"
        )

    state = TableState()
    rng = make_rng(seed)
    getrandbits = rng.getrandbits
    isqrt = math.isqrt

    # Hot loop: every list is aliased and every scalar is local; the state
    # object is synced at the end.  The decode order matches sample_move
    # exactly (one rejection-sampled draw per step) and a parity test pins
    # this path to the step() path.
    ids = state._ids
    olives = state._olives
    ne_pos = state._ne_pos
    ne_idx = state._ne_idx
    pos1 = -1
    next_id = 1
    O = 0
    num_plates = 0
    c_pp = c_pm = c_op = c_om = 0

    two_to_one: list[int] = []
    increments: list[int] = []
    tau: dict[int, int] = {}
    l_ge3_removals = 0
    plate_moves_ge3 = 0
    max_other = 0
    o_at_last_return = 0
    series: list[tuple[int, int, int, int, int, int]] = []

    for t in range(1, t_max + 1):
        n_e = len(ne_pos)
        n_merge = num_plates * (num_plates - 1) // 2
        m_total = 1 + n_merge + num_plates + n_e
        k = m_total.bit_length()
        u = getrandbits(k)
        while u >= m_total:
            u = getrandbits(k)

        if u == 0:
            # P+: new empty plate
            if num_plates >= 3:
                plate_moves_ge3 += 1
            if next_id == 1:
                pos1 = num_plates
            ids.append(next_id)
            next_id += 1
            olives.append(0)
            ne_idx.append(-1)
            num_plates += 1
            c_pp += 1
            tau[num_plates] = tau.get(num_plates, 0) + 1
        elif u <= n_merge:
            # P-: merge pair rank u-1; lower id survives
            r = u - 1
            j = (1 + isqrt(1 + 8 * r)) // 2
            i = r - j * (j - 1) // 2
            if ids[i] > ids[j]:
                i, j = j, i
            moved = olives[j]
            if moved:
                if olives[i] == 0:
                    ne_idx[i] = len(ne_pos)
                    ne_pos.append(i)
                merged = olives[i] + moved
                olives[i] = merged
                if i != pos1 and merged > max_other:
                    max_other = merged
                slot = ne_idx[j]
                last = ne_pos.pop()
                if last != j:
                    ne_pos[slot] = last
                    ne_idx[last] = slot
            last_pos = num_plates - 1
            if j != last_pos:
                ids[j] = ids[last_pos]
                olives[j] = olives[last_pos]
                slot = ne_idx[last_pos]
                ne_idx[j] = slot
                if slot >= 0:
                    ne_pos[slot] = j
                if pos1 == last_pos:
                    pos1 = j
            ids.pop()
            olives.pop()
            ne_idx.pop()
            if num_plates >= 3:
                plate_moves_ge3 += 1
                l_ge3_removals += 1
            elif num_plates == 2:
                two_to_one.append(t)
                increments.append(O - o_at_last_return)
                o_at_last_return = O
            num_plates -= 1
            c_pm += 1
            tau[num_plates] = tau.get(num_plates, 0) + 1
        elif u <= n_merge + num_plates:
            # O+: add an olive
            p = u - 1 - n_merge
            val = olives[p]
            if val == 0:
                ne_idx[p] = len(ne_pos)
                ne_pos.append(p)
            val += 1
            olives[p] = val
            if p != pos1 and val > max_other:
                max_other = val
            O += 1
            c_op += 1
        else:
            # O-: remove an olive from a non-empty plate
            p = ne_pos[u - 1 - n_merge - num_plates]
            val = olives[p] - 1
            olives[p] = val
            if val == 0:
                slot = ne_idx[p]
                last = ne_pos.pop()
                if last != p:
                    ne_pos[slot] = last
                    ne_idx[last] = slot
                ne_idx[p] = -1
            O -= 1
            c_om += 1

        if check_identity and O != t - c_pp - c_pm - 2 * c_om:
            raise AssertionError(f"olive conservation violated at step {t}")
        if cadence and t % cadence == 0:
            series.append((t, O, num_plates, len(ne_pos), olives[pos1], max_other))

    state._pos1 = pos1
    state._next_id = next_id
    state.total_olives = O
    state.t = t_max
    state.c_add_plate = c_pp
    state.c_merge = c_pm
    state.c_add_olive = c_op
    state.c_remove_olive = c_om

    return TrajectoryRecord(
        t_max=t_max,
        seed=seed,
        cadence=cadence,
        final_state=state,
        two_to_one_times=two_to_one,
        olive_increments=increments,
        tau=tau,
        l_ge3_removals=l_ge3_removals,
        plate_moves_at_ge3=plate_moves_ge3,
        max_other_olives=max_other,
        first_plate_olives=olives[pos1] if pos1 >= 0 else 0,
        series=series,
    )


def write_trajectory_csv(record: TrajectoryRecord, out: TextIO) -> None:
    """Cadence-sampled trajectory rows; LF endings, no quoting."""
    out.write(TRAJECTORY_CSV_HEADER + "\n")
    for row in record.series:
        out.write("%d,%d,%d,%d,%d,%d\n" % row)
