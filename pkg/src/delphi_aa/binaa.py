"""Binary approximate agreement: one instance per checkpoint.

Each round runs a weak binary-value broadcast built from two echo phases.
A node ends round ``r`` once either

1. two values each carry ECHO1 support from ``n - t`` nodes (it adopts their
   midpoint), or
2. one value carries ECHO2 support from ``n - t`` nodes (it adopts that value).

Values are kept as integers on the grid ``2**-r_max`` so halving never rounds.
The round-``r`` value of an honest node always has dyadic depth ``r - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .core import CheckpointId, FixedValue
from .errors import NotTerminated


class MsgKind(IntEnum):
    ECHO1 = 1
    ECHO2 = 2
    VAL = 3


ECHO1 = MsgKind.ECHO1
ECHO2 = MsgKind.ECHO2
VAL = MsgKind.VAL

# VAL movement symbols, in units of 2**-(r-1) for a VAL opening round r.
MOVEMENTS = {"2L": -2, "L": -1, "C": 0, "R": 1, "2R": 2}
SYMBOLS = {v: k for k, v in MOVEMENTS.items()}


@dataclass(frozen=True)
class BinAAMsg:
    instance: CheckpointId
    kind: MsgKind
    round: int
    payload: int  # value units for ECHO1/ECHO2, movement in [-2, 2] for VAL


class _Round:
    __slots__ = ("e1", "e1_sent", "e1_full", "e1_by_sender", "e2", "e2_sent", "e2_by_sender", "e2_winner")

    def __init__(self) -> None:
        self.e1: dict[int, set[int]] = {}
        self.e1_sent: set[int] = set()
        self.e1_full: list[int] = []
        self.e1_by_sender: dict[int, list[int]] = {}
        self.e2: dict[int, set[int]] = {}
        self.e2_sent = False
        self.e2_by_sender: dict[int, int] = {}
        self.e2_winner: int | None = None


class BinAA:
    """State of one BinAA instance at one node.

    Methods append outgoing ``(kind, round, payload)`` triples to a caller
    supplied list; broadcasts implicitly include the node itself, whose own
    echoes are counted locally.
    """

    __slots__ = (
        "instance", "n", "t", "r_max", "node_id", "delta", "one",
        "round", "value", "done", "rounds", "pending",
        "value_history", "bv_history", "equivocations", "dropped",
    )

    def __init__(self, instance: CheckpointId, n: int, t: int, r_max: int, node_id: int, delta: bool = False):
        self.instance = instance
        self.n = n
        self.t = t
        self.r_max = r_max
        self.node_id = node_id
        self.delta = delta
        self.one = 1 << r_max
        self.round = 0
        self.value = 0
        self.done = False
        self.rounds: dict[int, _Round] = {}
        self.pending: dict[int, list[tuple[int, int, int]]] = {}
        self.value_history: list[int] = []
        self.bv_history: list[tuple[int, ...]] = []
        self.equivocations = 0
        self.dropped = 0

    # -- helpers --------------------------------------------------------------
    def _round_state(self, rnd: int) -> _Round:
        rs = self.rounds.get(rnd)
        if rs is None:
            rs = self.rounds[rnd] = _Round()
        return rs

    def _valid_value(self, value: int, rnd: int) -> bool:
        # Honest round-r values are dyadic of depth r-1 inside [0, 1].
        if value < 0 or value > self.one:
            return False
        return value & ((1 << (self.r_max - rnd + 1)) - 1) == 0

    def _echo1(self, rs: _Round, rnd: int, value: int, sender: int, out: list) -> None:
        supporters = rs.e1.get(value)
        if supporters is None:
            supporters = rs.e1[value] = set()
        if sender in supporters:
            return
        seen = rs.e1_by_sender.get(sender)
        if seen is None:
            rs.e1_by_sender[sender] = [value]
        elif len(seen) >= 2:
            # Honest nodes echo at most the two honest values of a round.
            self.equivocations += 1
            return
        else:
            seen.append(value)
        supporters.add(sender)
        count = len(supporters)
        me = self.node_id
        if count >= self.t + 1 and value not in rs.e1_sent:
            rs.e1_sent.add(value)
            out.append((ECHO1, rnd, value))
            if me not in supporters:
                supporters.add(me)
                mine = rs.e1_by_sender.setdefault(me, [])
                mine.append(value)
                count += 1
        if count >= self.n - self.t:
            if value not in rs.e1_full:
                rs.e1_full.append(value)
            if not rs.e2_sent:
                rs.e2_sent = True
                out.append((ECHO2, rnd, value))
                self._echo2(rs, value, me)

    def _echo2(self, rs: _Round, value: int, sender: int) -> None:
        prev = rs.e2_by_sender.get(sender)
        if prev is not None:
            if prev != value:
                self.equivocations += 1
            return
        rs.e2_by_sender[sender] = value
        supporters = rs.e2.get(value)
        if supporters is None:
            supporters = rs.e2[value] = set()
        supporters.add(sender)
        if len(supporters) >= self.n - self.t and rs.e2_winner is None:
            rs.e2_winner = value

    def _open_round(self, out: list, prev: int | None) -> None:
        rnd = self.round
        rs = self._round_state(rnd)
        value = self.value
        if self.delta and rnd > 1:
            step = 1 << (self.r_max - rnd + 1)
            move, rem = divmod(value - prev, step)
            assert rem == 0 and -2 <= move <= 2, "honest movement out of range"
            out.append((VAL, rnd, move))
        else:
            out.append((ECHO1, rnd, value))
        rs.e1_sent.add(value)
        self._echo1(rs, rnd, value, self.node_id, out)
        queued = self.pending.pop(rnd, None)
        if queued:
            for kind, payload, sender in queued:
                self._dispatch(kind, rnd, payload, sender, out)

    def _dispatch(self, kind: int, rnd: int, value: int, sender: int, out: list) -> None:
        rs = self._round_state(rnd)
        if kind == ECHO1:
            self._echo1(rs, rnd, value, sender, out)
        else:
            self._echo2(rs, value, sender)

    # -- public transitions -----------------------------------------------
    def start(self, bit: int, out: list) -> None:
        if bit not in (0, 1):
            raise ValueError(f"BinAA input must be 0 or 1, got {bit!r}")
        self.round = 1
        self.value = bit * self.one
        self.value_history.append(self.value)
        self._open_round(out, None)

    def handle(self, kind: int, rnd: int, value: int, sender: int, out: list) -> None:
        """Record one ECHO1/ECHO2 from ``sender``. VALs must be resolved first."""
        if rnd < 1 or rnd > self.r_max or not self._valid_value(value, rnd):
            self.dropped += 1
            return
        if rnd > self.round:
            self.pending.setdefault(rnd, []).append((kind, value, sender))
            return
        self._dispatch(kind, rnd, value, sender, out)

    def try_end_round(self, out: list) -> tuple[tuple[int, ...], int] | None:
        """End the current round if a termination condition holds.

        ECHO2 support (condition 2) wins when both conditions hold.
        """
        if self.done or self.round == 0:
            return None
        rs = self.rounds[self.round]
        if rs.e2_winner is not None:
            bv: tuple[int, ...] = (rs.e2_winner,)
            nxt = rs.e2_winner
        elif len(rs.e1_full) >= 2:
            lo, hi = min(rs.e1_full), max(rs.e1_full)
            bv = (lo, hi)
            nxt = (lo + hi) >> 1
        else:
            return None
        prev = self.value
        self.bv_history.append(bv)
        self.value = nxt
        self.value_history.append(nxt)
        self.round += 1
        if self.round > self.r_max:
            self.done = True
        else:
            self._open_round(out, prev)
        return bv, nxt

    def advance(self, out: list) -> bool:
        """End as many rounds as currently possible; True if any ended."""
        progressed = False
        while self.try_end_round(out) is not None:
            progressed = True
        return progressed

    def output(self) -> FixedValue:
        if not self.done:
            raise NotTerminated(f"instance {self.instance} is in round {self.round}")
        return FixedValue(self.value, self.r_max)

    def fixed(self, units: int) -> FixedValue:
        return FixedValue(units, self.r_max)


# Functional surface mirroring the message-in/messages-out contract.

def _wrap(state: BinAA, out: list) -> list[BinAAMsg]:
    return [BinAAMsg(state.instance, MsgKind(k), r, p) for k, r, p in out]


def binaa_init(instance: CheckpointId, input_bit: int, r_max: int, *, n: int, t: int,
               node_id: int = 0, delta: bool = False) -> tuple[BinAA, list[BinAAMsg]]:
    state = BinAA(instance, n, t, r_max, node_id, delta)
    out: list = []
    state.start(input_bit, out)
    return state, _wrap(state, out)


def binaa_handle(state: BinAA, msg: BinAAMsg, sender: int) -> tuple[BinAA, list[BinAAMsg]]:
    if msg.kind == VAL:
        raise ValueError("VAL messages must be resolved to ECHO1 before dispatch")
    out: list = []
    state.handle(msg.kind, msg.round, msg.payload, sender, out)
    return state, _wrap(state, out)


def binaa_try_end_round(state: BinAA) -> tuple[tuple[FixedValue, ...], FixedValue, list[BinAAMsg]] | None:
    out: list = []
    ended = state.try_end_round(out)
    if ended is None:
        return None
    bv, nxt = ended
    return tuple(state.fixed(v) for v in bv), state.fixed(nxt), _wrap(state, out)


def binaa_output(state: BinAA) -> FixedValue:
    return state.output()
