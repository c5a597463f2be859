"""Wire format for bundled BinAA traffic.

A node flushes every message produced while handling one delivery as a single
:class:`WireBatch`. Two encodings exist:

``plain``
    one point record per message, every round opened by an explicit ECHO1.
``compact``
    identical messages over contiguous checkpoints collapse into run records
    (whole levels into span records) and rounds after the first are opened by
    a VAL movement symbol instead of an explicit value.

Byte layout, little-endian::

    header      sender:u16 count:u32
    0x01 point  level:u8 k:i32 kind:u8 round:u16 payload
    0x02 run    level:u8 k_from:i32 k_to:i32 kind:u8 round:u16 payload
    0x03 span   level_from:u8 level_to:u8 kind:u8 round:u16 payload

``payload`` is ``numer:i64 scale:u8`` for ECHO1/ECHO2 and ``movement:i8`` for
VAL.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from itertools import groupby
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence, Union

from .binaa import ECHO1, ECHO2, MOVEMENTS, VAL, BinAAMsg, MsgKind
from .core import CheckpointId, FixedValue
from .errors import (
    MalformedBatch,
    MixedSender,
    OutOfUnitInterval,
    OverlappingRuns,
    TruncatedRecord,
    UnknownKind,
)

HEADER = struct.Struct("<HI")
POINT = struct.Struct("<BiBH")
RUN = struct.Struct("<BiiBH")
SPAN = struct.Struct("<BBBH")
VALUE = struct.Struct("<qB")
MOVE = struct.Struct("<b")

TAG_POINT, TAG_RUN, TAG_SPAN = 0x01, 0x02, 0x03
HEADER_BYTES = HEADER.size
VALUE_BYTES = VALUE.size
MOVE_BYTES = MOVE.size
POINT_BYTES = 1 + POINT.size
RUN_BYTES = 1 + RUN.size
SPAN_BYTES = 1 + SPAN.size

PLAIN = "plain"
COMPACT = "compact"

# (level, k, kind, round, payload)
Message = tuple


class PointRecord(NamedTuple):
    level: int
    k: int
    kind: int
    round: int
    payload: int


class RunRecord(NamedTuple):
    level: int
    k_from: int
    k_to: int
    kind: int
    round: int
    payload: int


class SpanRecord(NamedTuple):
    level_from: int
    level_to: int
    kind: int
    round: int
    payload: int


Record = Union[PointRecord, RunRecord, SpanRecord]
LevelLayout = Mapping[int, tuple[int, int]]


def payload_bytes(kind: int) -> int:
    return MOVE_BYTES if kind == VAL else VALUE_BYTES


def record_bytes(rec: Record) -> int:
    if type(rec) is PointRecord:
        base = POINT_BYTES
    elif type(rec) is RunRecord:
        base = RUN_BYTES
    else:
        base = SPAN_BYTES
    return base + payload_bytes(rec.kind)


@dataclass(eq=False)
class WireBatch:
    """Bundle of one sender's messages for one flush.

    Value payloads are integers on the grid ``2**-scale_exp``.
    """

    sender: int
    round_tag: int
    records: list[Record]
    scale_exp: int
    layout: LevelLayout | None = None
    _nbytes: int | None = field(default=None, repr=False)
    _messages: list | None = field(default=None, repr=False)

    @property
    def nbytes(self) -> int:
        if self._nbytes is None:
            self._nbytes = HEADER_BYTES + sum(record_bytes(r) for r in self.records)
        return self._nbytes

    def messages(self) -> list[Message]:
        """Expanded ``(level, k, kind, round, payload)`` tuples, cached."""
        if self._messages is None:
            self._messages = list(expand_records(self.records, self.layout))
        return self._messages

    def __len__(self) -> int:
        return len(self.records)

    def to_bytes(self) -> bytes:
        parts = [HEADER.pack(self.sender, len(self.records))]
        for rec in self.records:
            if type(rec) is PointRecord:
                parts.append(bytes([TAG_POINT]) + POINT.pack(rec.level, rec.k, rec.kind, rec.round))
            elif type(rec) is RunRecord:
                parts.append(bytes([TAG_RUN]) + RUN.pack(rec.level, rec.k_from, rec.k_to, rec.kind, rec.round))
            else:
                parts.append(bytes([TAG_SPAN]) + SPAN.pack(rec.level_from, rec.level_to, rec.kind, rec.round))
            parts.append(_pack_payload(rec.kind, rec.payload, self.scale_exp))
        return b"".join(parts)


def _pack_payload(kind: int, payload: int, scale_exp: int) -> bytes:
    if kind == VAL:
        return MOVE.pack(payload)
    fv = FixedValue(payload, scale_exp)
    return VALUE.pack(fv.numer, fv.scale_exp)


def expand_records(records: Iterable[Record], layout: LevelLayout | None = None) -> Iterator[Message]:
    for rec in records:
        if type(rec) is PointRecord:
            yield rec
        elif type(rec) is RunRecord:
            for k in range(rec.k_from, rec.k_to + 1):
                yield (rec.level, k, rec.kind, rec.round, rec.payload)
        else:
            if layout is None:
                raise MalformedBatch("span record needs the level layout to expand")
            for level in range(rec.level_from, rec.level_to + 1):
                lo, hi = layout[level]
                for k in range(lo, hi + 1):
                    yield (level, k, rec.kind, rec.round, rec.payload)


def _as_tuple(msg) -> Message:
    if isinstance(msg, BinAAMsg):
        return (msg.instance.level, msg.instance.k, int(msg.kind), msg.round, msg.payload)
    return tuple(msg)


def plain_size(msgs: Sequence) -> int:
    """Bytes of the one-point-record-per-message layout."""
    return HEADER_BYTES + sum(POINT_BYTES + payload_bytes(_as_tuple(m)[2]) for m in msgs)


def encode_batch(
    msgs: Sequence,
    sender: int,
    scale_exp: int,
    mode: str = COMPACT,
    layout: LevelLayout | None = None,
    round_tag: int = 0,
    senders: Iterable[int] | None = None,
) -> WireBatch:
    """Bundle messages of one sender into a batch.

    ``msgs`` holds ``(level, k, kind, round, payload)`` tuples or
    :class:`BinAAMsg`. ``senders``, when given, lists the claimed origin of
    every message; anything other than ``sender`` is rejected. With a
    ``layout`` (level -> inclusive k range) runs covering whole levels become
    span records.
    """
    if senders is not None and any(s != sender for s in senders):
        raise MixedSender(f"batch for sender {sender} contains foreign messages")
    tuples = [_as_tuple(m) for m in msgs]
    if mode == PLAIN:
        records: list[Record] = [PointRecord(*m) for m in tuples]
        return WireBatch(sender, round_tag, records, scale_exp, layout)
    if mode != COMPACT:
        raise ValueError(f"unknown encoding mode {mode!r}")
    return WireBatch(sender, round_tag, _compact_records(tuples, layout), scale_exp, layout)


def _compact_records(tuples: list[Message], layout: LevelLayout | None) -> list[Record]:
    records: list[Record] = []
    # group by (kind, round, payload), then by level, collapsing contiguous k.
    ordered = sorted(tuples, key=lambda m: (m[2], m[3], m[4], m[0], m[1]))
    for (kind, rnd, payload), group in groupby(ordered, key=lambda m: (m[2], m[3], m[4])):
        full_levels: list[int] = []
        level_records: list[Record] = []
        for level, items in groupby(group, key=lambda m: m[0]):
            ks = [m[1] for m in items]
            runs, extras = _runs(ks)
            if layout is not None and len(runs) == 1 and runs[0] == layout.get(level):
                full_levels.append(level)
                runs = []
            for lo, hi in runs:
                if lo == hi:
                    level_records.append(PointRecord(level, lo, kind, rnd, payload))
                else:
                    level_records.append(RunRecord(level, lo, hi, kind, rnd, payload))
            for k in extras:
                level_records.append(PointRecord(level, k, kind, rnd, payload))
        for lo, hi in _consecutive(full_levels):
            records.append(SpanRecord(lo, hi, kind, rnd, payload))
        records.extend(level_records)
    return records


def _runs(ks: list[int]) -> tuple[list[tuple[int, int]], list[int]]:
    """Maximal runs over the distinct ks; repeated ks are returned as extras."""
    runs: list[tuple[int, int]] = []
    extras: list[int] = []
    prev = None
    for k in ks:  # sorted
        if k == prev:
            extras.append(k)
            continue
        if runs and k == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], k)
        else:
            runs.append((k, k))
        prev = k
    return runs, extras


def _consecutive(levels: list[int]) -> list[tuple[int, int]]:
    spans: list[tuple[int, int]] = []
    for level in levels:
        if spans and level == spans[-1][1] + 1:
            spans[-1] = (spans[-1][0], level)
        else:
            spans.append((level, level))
    return spans


def decode_batch(data: bytes, scale_exp: int, layout: LevelLayout | None = None) -> WireBatch:
    """Parse and validate bytes produced by :meth:`WireBatch.to_bytes`."""
    if len(data) < HEADER_BYTES:
        raise TruncatedRecord("missing batch header")
    sender, count = HEADER.unpack_from(data, 0)
    pos = HEADER_BYTES
    records: list[Record] = []
    for _ in range(count):
        if pos >= len(data):
            raise TruncatedRecord(f"expected {count} records, got {len(records)}")
        tag = data[pos]
        pos += 1
        if tag == TAG_POINT:
            fmt, cls = POINT, PointRecord
        elif tag == TAG_RUN:
            fmt, cls = RUN, RunRecord
        elif tag == TAG_SPAN:
            fmt, cls = SPAN, SpanRecord
        else:
            raise MalformedBatch(f"unknown record tag {tag:#x}")
        if pos + fmt.size > len(data):
            raise TruncatedRecord("record body cut short")
        fields = fmt.unpack_from(data, pos)
        pos += fmt.size
        kind = fields[-2]
        if kind not in (ECHO1, ECHO2, VAL):
            raise UnknownKind(f"message kind {kind}")
        payload, pos = _unpack_payload(data, pos, kind, scale_exp)
        records.append(cls(*fields, payload))
    if pos != len(data):
        raise MalformedBatch(f"{len(data) - pos} trailing bytes")
    _check_overlaps(records, layout)
    return WireBatch(sender, 0, records, scale_exp, layout)


def _unpack_payload(data: bytes, pos: int, kind: int, scale_exp: int) -> tuple[int, int]:
    if kind == VAL:
        if pos + MOVE.size > len(data):
            raise TruncatedRecord("movement payload cut short")
        (move,) = MOVE.unpack_from(data, pos)
        if not -2 <= move <= 2:
            raise MalformedBatch(f"movement {move} outside [-2, 2]")
        return move, pos + MOVE.size
    if pos + VALUE.size > len(data):
        raise TruncatedRecord("value payload cut short")
    numer, scale = VALUE.unpack_from(data, pos)
    fv = FixedValue(numer, scale)
    if fv.scale_exp > scale_exp:
        raise MalformedBatch(f"value {fv} finer than the 2^-{scale_exp} grid")
    return fv.to_units(scale_exp), pos + VALUE.size


def _check_overlaps(records: list[Record], layout: LevelLayout | None) -> None:
    spans: dict[tuple, list[tuple[int, int]]] = {}
    for rec in records:
        if type(rec) is RunRecord:
            if rec.k_from > rec.k_to:
                raise MalformedBatch(f"empty run {rec}")
            spans.setdefault((rec.level, rec.kind, rec.round, rec.payload), []).append((rec.k_from, rec.k_to))
        elif type(rec) is SpanRecord:
            if rec.level_from > rec.level_to:
                raise MalformedBatch(f"empty span {rec}")
            if layout is None:
                continue
            for level in range(rec.level_from, rec.level_to + 1):
                if level not in layout:
                    raise MalformedBatch(f"span covers unknown level {level}")
                spans.setdefault((level, rec.kind, rec.round, rec.payload), []).append(layout[level])
    for key, ranges in spans.items():
        ranges.sort()
        for (a_lo, a_hi), (b_lo, b_hi) in zip(ranges, ranges[1:]):
            if b_lo <= a_hi:
                raise OverlappingRuns(f"runs {a_lo}..{a_hi} and {b_lo}..{b_hi} overlap for {key}")


def decoded_messages(batch: WireBatch) -> list[tuple[CheckpointId, BinAAMsg]]:
    out = []
    for level, k, kind, rnd, payload in batch.messages():
        cp = CheckpointId(level, k)
        out.append((cp, BinAAMsg(cp, MsgKind(kind), rnd, payload)))
    return out


# -- movement symbols -------------------------------------------------------

def apply_movement(prev_value: FixedValue, symbol: str | int, r: int) -> FixedValue:
    """Value after one movement: ``prev + m * 2**-r``.

    ``prev_value`` is the sender's value of depth at most ``r - 1``; the result
    opens round ``r + 1``. Leaving [0, 1] can only come from a faulty sender.
    """
    move = MOVEMENTS[symbol] if isinstance(symbol, str) else int(symbol)
    if not -2 <= move <= 2:
        raise ValueError(f"movement {move} outside [-2, 2]")
    result = prev_value + FixedValue(move, r)
    if result < 0 or result > 1:
        raise OutOfUnitInterval(f"{prev_value} moved by {move}/2^{r} leaves [0, 1]")
    return result


class _Stream:
    __slots__ = ("last_round", "last_value", "pending", "quarantined")

    def __init__(self) -> None:
        self.last_round = 0
        self.last_value = 0
        self.pending: dict[int, int] = {}
        self.quarantined = False


class MovementTracker:
    """Receiver-side reconstruction of every sender's per-instance value stream.

    The first round-1 ECHO1 of a stream anchors it; each VAL for round ``r``
    then moves the round ``r - 1`` value by ``movement * 2**-(r-1)``. VALs that
    arrive ahead of their predecessor wait; a stream that leaves [0, 1] is
    quarantined and its later VALs are ignored.
    """

    def __init__(self, r_max: int) -> None:
        self.r_max = r_max
        self.one = 1 << r_max
        self.streams: dict[tuple[int, int, int], _Stream] = {}
        self.quarantines = 0

    def _stream(self, key: tuple[int, int, int]) -> _Stream:
        st = self.streams.get(key)
        if st is None:
            st = self.streams[key] = _Stream()
        return st

    def anchor(self, sender: int, level: int, k: int, value: int) -> list[tuple[int, int]]:
        st = self._stream((sender, level, k))
        if st.last_round or st.quarantined:
            return []
        st.last_round = 1
        st.last_value = value
        return self._drain(st)

    def movement(self, sender: int, level: int, k: int, rnd: int, move: int) -> list[tuple[int, int]]:
        """Returns the (round, value) pairs that became known."""
        st = self._stream((sender, level, k))
        if st.quarantined or rnd <= st.last_round or rnd in st.pending:
            return []
        st.pending[rnd] = move
        return self._drain(st) if st.last_round else []

    def _drain(self, st: _Stream) -> list[tuple[int, int]]:
        out = []
        while st.last_round + 1 in st.pending:
            rnd = st.last_round + 1
            move = st.pending.pop(rnd)
            if rnd > self.r_max:
                value = -1
            else:
                value = st.last_value + move * (1 << (self.r_max - rnd + 1))
            if not 0 <= value <= self.one:
                st.quarantined = True
                st.pending.clear()
                self.quarantines += 1
                break
            st.last_round = rnd
            st.last_value = value
            out.append((rnd, value))
        return out
