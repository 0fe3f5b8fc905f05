"""Independent reference implementations used by the tests."""

import math

import numpy as np

PHI = (1 + 5 ** 0.5) / 2

CUBE_OBJ = """\
# unit cube
v -1 -1 -1
v 1 -1 -1
v 1 1 -1
v -1 1 -1
v -1 -1 1
v 1 -1 1
v 1 1 1
v -1 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def icosahedron():
    v = [(-1, PHI, 0), (1, PHI, 0), (-1, -PHI, 0), (1, -PHI, 0),
         (0, -1, PHI), (0, 1, PHI), (0, -1, -PHI), (0, 1, -PHI),
         (PHI, 0, -1), (PHI, 0, 1), (-PHI, 0, -1), (-PHI, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = np.array(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), np.array(f)


def icosphere(subdivisions: int = 3):
    """Unit icosphere by repeated midpoint subdivision with re-projection."""
    verts, faces = icosahedron()
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (np.array(verts[a]) + np.array(verts[b])) / 2
                verts.append(tuple(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces)


def icosahedron_face_centres():
    v, f = icosahedron()
    c = v[f].mean(axis=1)
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def ray_sphere_normal(origin, direction, centre, radius):
    """Outward unit normal at the first intersection, or None for a miss."""
    d = direction / np.linalg.norm(direction)
    oc = origin - centre
    b = float(oc @ d)
    disc = b * b - (float(oc @ oc) - radius * radius)
    if disc < 0:
        return None
    t = -b - math.sqrt(disc)
    p = origin + t * d
    return (p - centre) / radius


def brute_stats(errors):
    """Six statistics by plain Python loops."""
    e = sorted(float(x) for x in errors)
    n = len(e)
    mean = sum(e) / n
    median = e[n // 2] if n % 2 else (e[n // 2 - 1] + e[n // 2]) / 2
    rmse = math.sqrt(sum(x * x for x in e) / n)
    pct = [100.0 * sum(1 for x in e if x <= t) / n for t in (11.25, 22.5, 30.0)]
    return (mean, median, rmse, *pct)


def brute_fraction(errors, grid):
    n = len(errors)
    return [sum(1 for e in errors if e <= g) / n for g in grid]


def brute_auc(grid, fraction, delta_max):
    total = 0.0
    for i in range(len(grid) - 1):
        a, b = grid[i], grid[i + 1]
        if b > delta_max:
            break
        total += (b - a) * (fraction[i] + fraction[i + 1]) / 2
    return total / delta_max
