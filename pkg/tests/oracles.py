"""Independent brute-force oracles used to check the library's fast paths.

Everything here is deliberately written the slow, obvious way (plain Python
loops) so it shares no code with the implementations it validates.
"""

from __future__ import annotations

import math


def moments_fit(pixels) -> dict:
    """Ellipse fit from raw second central moments, computed by loops."""
    n = len(pixels)
    sum_r = sum(p[0] for p in pixels)
    sum_c = sum(p[1] for p in pixels)
    cy = sum_r / n
    cx = sum_c / n
    mu20 = mu02 = mu11 = 0.0
    for r, c in pixels:
        dr = r - cy
        dc = c - cx
        mu20 += dc * dc
        mu02 += dr * dr
        mu11 += dc * dr
    mu20 /= n
    mu02 /= n
    mu11 /= n
    # Principal variances via the quadratic eigenvalue formula.
    tr = mu20 + mu02
    det = mu20 * mu02 - mu11 * mu11
    disc = math.sqrt(max(tr * tr / 4.0 - det, 0.0))
    lam1 = tr / 2.0 + disc
    lam2 = tr / 2.0 - disc
    a = 2.0 * math.sqrt(max(lam1, 0.0))
    b = 2.0 * math.sqrt(max(lam2, 0.0))
    ecc = math.sqrt(max(1.0 - (b / a) ** 2, 0.0)) if a > 0 else 0.0
    return {
        "centroid": (cx, cy),
        "axes": (a, b),
        "area": n,
        "eccentricity": ecc,
    }


def point_in_polygon(x: float, y: float, vertices) -> bool:
    """Crossing-number point-in-polygon test."""
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            if x < x1 + t * (x2 - x1):
                inside = not inside
    return inside


def capture_oracle(scene, camera_xyz, footprint_vertices, occlusion_fn) -> set:
    """Brute-force captured-id set: containment plus caller-supplied occlusion."""
    captured = set()
    for item in scene.evidence:
        px, py = item.position_m
        if point_in_polygon(px, py, footprint_vertices) and occlusion_fn(item):
            captured.add(item.id)
    return captured


def segment_occlusion_clear(scene, camera_xyz, target_xy, samples: int = 400) -> bool:
    """Dense sampling along the sight line instead of grid traversal."""
    cx, cy, cz = camera_xyz
    tx, ty = target_xy
    plan = scene.floor_plan
    for i in range(samples + 1):
        t = i / samples
        x = cx + (tx - cx) * t
        y = cy + (ty - cy) * t
        z = cz * (1.0 - t)
        kind = plan.cell_kind(x, y)
        if kind == 1:  # wall
            return False
        if kind == 2 and plan.surface_height(x, y) >= z:
            return False
    return True


def best_tour_length(start, stops) -> float:
    """Exhaustive shortest open tour from start through all stops."""
    import itertools

    best = math.inf
    for perm in itertools.permutations(stops):
        total = 0.0
        cur = start
        for p in perm:
            total += math.hypot(p[0] - cur[0], p[1] - cur[1])
            cur = p
        best = min(best, total)
    return best
