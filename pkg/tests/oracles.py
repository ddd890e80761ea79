"""Independent reference computations used by the test-suite.

None of these import the code paths they check.
"""

from __future__ import annotations

import math

import numpy as np


def closed_form_score(p1, n1, p2, n2):
    """1.1 - ceil(10 * max(tan t1, tan t2)) / 10, or None when beyond mu = 1."""
    p1, n1, p2, n2 = (np.asarray(x, dtype=float) for x in (p1, n1, p2, n2))
    u = (p2 - p1) / np.linalg.norm(p2 - p1)
    t1 = math.acos(max(-1.0, min(1.0, float(u @ -n1))))
    t2 = math.acos(max(-1.0, min(1.0, float(-u @ -n2))))
    worst = max(t1, t2)
    if worst >= math.pi / 2:
        return None
    needed = math.ceil(10 * math.tan(worst) - 1e-12) / 10
    needed = max(needed, 0.1)
    if needed > 1.0:
        return None
    return round(1.1 - needed, 10)


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_contact_pair(rng, max_tilt=math.radians(60)):
    """Contact pair whose normals are tilted away from the ideal by up to max_tilt."""
    p1 = rng.uniform(-0.1, 0.1, 3)
    u = random_unit(rng)
    p2 = p1 + u * rng.uniform(0.005, 0.08)

    def tilt(axis, angle):
        w = random_unit(rng)
        w = w - (w @ axis) * axis
        w /= np.linalg.norm(w)
        return math.cos(angle) * axis + math.sin(angle) * w

    n1 = tilt(-u, rng.uniform(0, max_tilt))
    n2 = tilt(u, rng.uniform(0, max_tilt))
    return p1, n1, p2, n2


def exhaustive_select(centers, scores, target, k):
    """Sort every candidate by (distance, index), keep k, best by (-score, distance, index)."""
    items = []
    for i, (c, s) in enumerate(zip(centers, scores)):
        d = math.dist(tuple(c), tuple(target))
        items.append((d, i, s))
    items.sort(key=lambda t: (t[0], t[1]))
    top = items[:k]
    best = min(top, key=lambda t: (-t[2], t[0], t[1]))
    return best[1]
