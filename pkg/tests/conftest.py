import math
import random

import pytest

from skmonitor.core import Rect, SKObject, Subscription

SPACE = Rect(0.0, 0.0, 100.0, 100.0)


def random_objects(rng, n, vocab=8, t=0, prefix="o", space=SPACE, grid=None, start=0):
    """Objects with 1-3 keywords; ``grid`` snaps coordinates to force distance ties."""
    out = []
    for i in range(n):
        if grid:
            x = space.x0 + rng.randrange(grid + 1) * space.width / grid
            y = space.y0 + rng.randrange(grid + 1) * space.height / grid
        else:
            x = rng.uniform(space.x0, space.x1)
            y = rng.uniform(space.y0, space.y1)
        psi = frozenset(rng.sample(range(vocab), rng.randint(1, min(3, vocab))))
        out.append(SKObject(f"{prefix}{start + i}", x, y, psi, t))
    return out


def random_subs(rng, n, vocab=8, k_max=4, t=0, prefix="s", space=SPACE, start=0):
    out = []
    for i in range(n):
        psi = frozenset(rng.sample(range(vocab), rng.randint(1, min(2, vocab))))
        out.append(Subscription(f"{prefix}{start + i}", rng.uniform(space.x0, space.x1),
                                rng.uniform(space.y0, space.y1), psi, rng.randint(1, k_max), t))
    return out


def scan_knn(s, objects):
    """Linear-scan top-k: keyword overlap, s.t <= o.t, ordered by (distance, id)."""
    hits = [(math.hypot(o.x - s.x, o.y - s.y), o.id) for o in objects
            if o.t >= s.t and set(o.psi) & set(s.psi)]
    hits.sort()
    return tuple(hits[: s.k])


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
