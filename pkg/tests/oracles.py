"""Independent brute-force reference implementations used to check the
package: per-pixel projection, sort-based quantiles, midrank rank tests,
and cosine retrieval. Deliberately written without numpy vectorization or
any call into the code under test."""

from __future__ import annotations

import math


def brute_force_project(flat_indices, depth_rows, cam, calib_matrix):
    """Per-pixel pinhole back-projection plus a 4x4 transform.

    flat_indices: row-major pixel indices; depth_rows: list of rows in
    meters; calib_matrix: nested 4x4 list. Returns a list of [x, y, z].
    """
    points = []
    for idx in flat_indices:
        v = idx // cam.width
        u = idx % cam.width
        d = depth_rows[v][u]
        if d <= 0:
            continue
        x = (u - cam.cx) * d / cam.fx
        y = (v - cam.cy) * d / cam.fy
        z = d
        out = []
        for row in range(3):
            m = calib_matrix[row]
            out.append(m[0] * x + m[1] * y + m[2] * z + m[3])
        points.append(out)
    return points


def quantile(sorted_values, q):
    """Linear-interpolation quantile of an ascending list."""
    n = len(sorted_values)
    if n == 1:
        return sorted_values[0]
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


def brute_force_bbox(points, clip_fraction):
    """Per-axis clipped bounds computed by explicit sorting."""
    lo, hi = [], []
    for axis in range(3):
        values = sorted(p[axis] for p in points)
        if clip_fraction == 0:
            lo.append(values[0])
            hi.append(values[-1])
        else:
            lo.append(quantile(values, clip_fraction))
            hi.append(quantile(values, 1 - clip_fraction))
    return lo, hi


def midranks(values):
    """Rank each value 1..n, ties sharing the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def brute_force_kruskal_h(groups):
    """Tie-corrected Kruskal-Wallis H computed straight from the formula."""
    pooled = [v for g in groups for v in g]
    n = len(pooled)
    ranks = midranks(pooled)
    h = 0.0
    start = 0
    for g in groups:
        r_sum = sum(ranks[start : start + len(g)])
        h += r_sum * r_sum / len(g)
        start += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3 * (n + 1)

    tie_term = 0.0
    seen = {}
    for v in pooled:
        seen[v] = seen.get(v, 0) + 1
    for count in seen.values():
        tie_term += count**3 - count
    correction = 1 - tie_term / (n**3 - n)
    if correction == 0:
        return None  # all values identical
    return h / correction


def cosine(a, b):
    num = sum(x * y for x, y in zip(a, b))
    da = math.sqrt(sum(x * x for x in a))
    db = math.sqrt(sum(y * y for y in b))
    return num / (da * db)


def brute_force_best_match(query, candidates, threshold):
    """Highest-cosine candidate id, lexicographic on ties, None below threshold.

    candidates: mapping of id -> vector.
    """
    best_id = None
    best_sim = None
    for cid in sorted(candidates):
        sim = cosine(query, candidates[cid])
        if best_sim is None or sim > best_sim:
            best_id = cid
            best_sim = sim
    if best_sim is None or best_sim < threshold:
        return None, best_sim
    return best_id, best_sim
