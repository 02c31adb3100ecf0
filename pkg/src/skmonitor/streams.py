"""Line-delimited text records for objects and subscription churn.

    O  <id> <t> <x> <y> <kw1,kw2,...>
    S+ <id> <t> <x> <y> <k> <kw1,kw2,...>
    S- <id> <t>

Blank lines and lines starting with ``#`` are ignored.  Timestamps must be
non-decreasing across the file.  Records at ``t = 0`` form the warm-up set and
the initial subscriptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, List, Optional, Union

from .core import IngestError, SKObject, Subscription, Vocabulary
from .runtime import Tick, Workload


class StreamFormatError(ValueError):
    def __init__(self, line_no: int, message: str, source: str = "<stream>"):
        super().__init__(f"{source}:{line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Delete:
    id: str
    t: int


Record = Union[SKObject, Subscription, Delete]


def _float(tok: str, what: str) -> float:
    v = float(tok)
    if not math.isfinite(v):
        raise ValueError(f"{what} is not finite: {tok}")
    return v


def _int(tok: str, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ValueError(f"{what} is not an integer: {tok}") from None


def _keywords(tok: str, vocab: Vocabulary):
    parts = tok.split(",")
    if any(not p for p in parts):
        raise ValueError(f"empty keyword in list {tok!r}")
    return vocab.intern_all(parts)


def parse_line(line: str, vocab: Vocabulary) -> Optional[Record]:
    f = line.split()
    if not f or f[0].startswith("#"):
        return None
    tag = f[0]
    if tag == "O":
        if len(f) != 6:
            raise ValueError(f"object record needs 6 fields, got {len(f)}")
        return SKObject(f[1], _float(f[3], "x"), _float(f[4], "y"), _keywords(f[5], vocab), _int(f[2], "t"))
    if tag == "S+":
        if len(f) != 7:
            raise ValueError(f"subscription record needs 7 fields, got {len(f)}")
        return Subscription(f[1], _float(f[3], "x"), _float(f[4], "y"), _keywords(f[6], vocab),
                            _int(f[5], "k"), _int(f[2], "t"))
    if tag == "S-":
        if len(f) != 3:
            raise ValueError(f"delete record needs 3 fields, got {len(f)}")
        return Delete(f[1], _int(f[2], "t"))
    raise ValueError(f"unknown record tag {tag!r}")


def parse_records(lines: Iterable[str], vocab: Vocabulary, source: str = "<stream>") -> Iterator[Record]:
    last_t = 0
    for no, line in enumerate(lines, 1):
        try:
            rec = parse_line(line, vocab)
        except (ValueError, IngestError) as exc:
            raise StreamFormatError(no, str(exc), source) from None
        if rec is None:
            continue
        if rec.t < last_t:
            raise StreamFormatError(no, f"timestamp {rec.t} precedes {last_t}", source)
        last_t = rec.t
        yield rec


def format_record(rec: Record, vocab: Vocabulary) -> str:
    if isinstance(rec, Delete):
        return f"S- {rec.id} {rec.t}"
    kws = ",".join(vocab.token(k) for k in sorted(rec.psi))
    if isinstance(rec, SKObject):
        return f"O {rec.id} {rec.t} {rec.x!r} {rec.y!r} {kws}"
    return f"S+ {rec.id} {rec.t} {rec.x!r} {rec.y!r} {rec.k} {kws}"


def write_records(records: Iterable[Record], vocab: Vocabulary, fh: IO[str]) -> int:
    n = 0
    for rec in records:
        fh.write(format_record(rec, vocab))
        fh.write("\n")
        n += 1
    return n


def workload_records(wl: Workload) -> List[Record]:
    recs: List[Record] = list(wl.warmup)
    recs.extend(wl.initial_subs)
    for tick in wl.ticks:
        recs.extend(Delete(sid, tick.t) for sid in tick.deletes)
        recs.extend(tick.inserts)
        recs.extend(tick.objects)
    return recs


def records_to_workload(records: Iterable[Record], objects_per_tick: Optional[int] = None) -> Workload:
    """Group records: ``t = 0`` is the initial state, each later timestamp one tick.

    With ``objects_per_tick`` set, a final tick holding fewer objects is flagged partial.
    """
    warmup: List[SKObject] = []
    initial: dict = {}
    ticks: List[Tick] = []
    for rec in records:
        if rec.t == 0:
            if isinstance(rec, SKObject):
                warmup.append(rec)
            elif isinstance(rec, Subscription):
                initial[rec.id] = rec
            else:
                initial.pop(rec.id, None)
            continue
        if not ticks or ticks[-1].t != rec.t:
            ticks.append(Tick(rec.t))
        tick = ticks[-1]
        if isinstance(rec, SKObject):
            tick.objects.append(rec)
        elif isinstance(rec, Subscription):
            tick.inserts.append(rec)
        else:
            tick.deletes.append(rec.id)
    if objects_per_tick and ticks and len(ticks[-1].objects) < objects_per_tick:
        ticks[-1].partial = True
    return Workload(warmup, list(initial.values()), ticks)
