"""Geometry primitives and the domain vocabulary shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

UNBOUNDED = math.inf


class IngestError(ValueError):
    """Raised when an input record violates a data invariant."""


class ConfigurationError(RuntimeError):
    """Raised when a structure is used before it is usable (e.g. empty warm-up)."""


class Point(NamedTuple):
    x: float
    y: float


class Rect(NamedTuple):
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def center(self) -> Point:
        return Point((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def contains_point(self, x: float, y: float) -> bool:
        # closed on every edge: pruning must never lose a boundary object
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def contains_rect(self, other: "Rect") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and other.x1 <= self.x1 and other.y1 <= self.y1)

    def clamp(self, x: float, y: float) -> Point:
        return Point(min(max(x, self.x0), self.x1), min(max(y, self.y0), self.y1))

    def quadrants(self) -> List["Rect"]:
        """Four equal sub-rectangles: SW, SE, NW, NE."""
        mx = (self.x0 + self.x1) / 2.0
        my = (self.y0 + self.y1) / 2.0
        return [Rect(self.x0, self.y0, mx, my), Rect(mx, self.y0, self.x1, my),
                Rect(self.x0, my, mx, self.y1), Rect(mx, my, self.x1, self.y1)]

    def quadrant_of(self, x: float, y: float) -> int:
        """Index into :meth:`quadrants`; min edges closed, max edges open."""
        mx = (self.x0 + self.x1) / 2.0
        my = (self.y0 + self.y1) / 2.0
        return (1 if x >= mx else 0) + (2 if y >= my else 0)


def mbr(rects: Iterable[Rect]) -> Optional[Rect]:
    """Minimum bounding rectangle of ``rects``; None when empty."""
    it = iter(rects)
    try:
        x0, y0, x1, y1 = next(it)
    except StopIteration:
        return None
    for r in it:
        if r.x0 < x0:
            x0 = r.x0
        if r.y0 < y0:
            y0 = r.y0
        if r.x1 > x1:
            x1 = r.x1
        if r.y1 > y1:
            y1 = r.y1
    return Rect(x0, y0, x1, y1)


class Ball(NamedTuple):
    center: Point
    radius: float  # UNBOUNDED until k qualified objects exist

    @property
    def bounded(self) -> bool:
        return self.radius != UNBOUNDED


@dataclass(frozen=True)
class SKObject:
    """A timestamped point carrying a non-empty keyword set."""

    id: str
    x: float
    y: float
    psi: FrozenSet[int]
    t: int

    def __post_init__(self):
        _check_common(self.id, self.x, self.y, self.psi, self.t)

    @property
    def p(self) -> Point:
        return Point(self.x, self.y)


@dataclass(frozen=True)
class Subscription:
    """A continuous spatial-keyword kNN query registered at time ``t``."""

    id: str
    x: float
    y: float
    psi: FrozenSet[int]
    k: int
    t: int

    def __post_init__(self):
        _check_common(self.id, self.x, self.y, self.psi, self.t)
        if self.k < 1:
            raise IngestError(f"subscription {self.id}: k must be >= 1, got {self.k}")

    @property
    def p(self) -> Point:
        return Point(self.x, self.y)


def _check_common(ident, x, y, psi, t):
    if not (math.isfinite(x) and math.isfinite(y)):
        raise IngestError(f"{ident}: non-finite coordinate ({x}, {y})")
    if not psi:
        raise IngestError(f"{ident}: empty keyword set")
    if t < 0:
        raise IngestError(f"{ident}: negative timestamp {t}")


# A result entry is (distance, object id); tuples order by distance, then id.
Entry = Tuple[float, str]
ResultSet = Tuple[Entry, ...]


def dist(ax: float, ay: float, bx: float, by: float) -> float:
    """Euclidean distance. Every exactness check in the package goes through here."""
    return math.hypot(ax - bx, ay - by)


def rect_overlap_area(a: Rect, b: Rect) -> float:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def ball_bounding_rect(ball: Ball, space: Rect) -> Rect:
    """Bounding square of ``ball`` clipped to ``space``; the whole space if unbounded."""
    if ball.radius == UNBOUNDED:
        return space
    cx, cy = ball.center
    r = ball.radius
    return Rect(max(cx - r, space.x0), max(cy - r, space.y0),
                min(cx + r, space.x1), min(cy + r, space.y1))


def result_ball(s: Subscription, result: ResultSet) -> Ball:
    """Current ball of ``s``: radius is the k-th result distance once the result is full."""
    if len(result) < s.k:
        return Ball(s.p, UNBOUNDED)
    return Ball(s.p, result[s.k - 1][0])


class Vocabulary:
    """Interns opaque, case-sensitive keyword tokens to dense integer ids."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._ids: Dict[str, int] = {}
        self._tokens: List[str] = []
        for tok in tokens:
            self.intern(tok)

    def intern(self, token: str) -> int:
        kid = self._ids.get(token)
        if kid is None:
            kid = len(self._tokens)
            self._ids[token] = kid
            self._tokens.append(token)
        return kid

    def intern_all(self, tokens: Iterable[str]) -> FrozenSet[int]:
        return frozenset(self.intern(t) for t in tokens)

    def token(self, kid: int) -> str:
        return self._tokens[kid]

    def lookup(self, token: str) -> Optional[int]:
        return self._ids.get(token)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids
