"""Independent reference implementations used by the unit and acceptance tests."""
import math

from shapely.geometry import Polygon


def deviation_ratio(u, s, st_):
    """Direct substitution, written independently of the library."""
    a = st_.mu_u / (st_.mu_u + max(0.0, u - st_.mu_u - st_.sigma_u))
    b = st_.mu_s / (st_.mu_s + max(0.0, st_.mu_s + st_.sigma_s - s))
    return a * b


def shapely_iou(a, b):
    pa, pb = Polygon(a.corners()), Polygon(b.corners())
    return pa.intersection(pb).area / pa.union(pb).area


def greedy_oracle(prev, curr, tau):
    """Repeatedly take the globally smallest remaining (distance, i, j)."""
    cand = {(i, j): math.hypot(p.x - c.x, p.y - c.y)
            for i, p in enumerate(prev) for j, c in enumerate(curr)}
    out = []
    while True:
        live = [(d, i, j) for (i, j), d in cand.items() if d <= tau]
        if not live:
            return sorted(out)
        d, i, j = min(live)
        out.append((i, j))
        cand = {k: v for k, v in cand.items() if k[0] != i and k[1] != j}


def brute_optimal(prev, curr, tau):
    """(pair count, total distance) of the best gated matching: most pairs, then least cost.

    Depth-first over every partial injection of prev into curr.
    """
    dist = [[math.hypot(p.x - c.x, p.y - c.y) for c in curr] for p in prev]
    best = [0, 0.0]

    def walk(i, used, n, cost):
        if i == len(prev):
            if n > best[0] or (n == best[0] and cost < best[1]):
                best[0], best[1] = n, cost
            return
        walk(i + 1, used, n, cost)
        for j in range(len(curr)):
            if j not in used and dist[i][j] <= tau:
                walk(i + 1, used | {j}, n + 1, cost + dist[i][j])

    walk(0, frozenset(), 0, 0.0)
    return best[0], best[1]


def ap_oracle(dets, gts, thr):
    """Rank, match with shapely IoU, then integrate max precision at recall >= r."""
    if not gts:
        return 1.0 if not dets else 0.0
    ranked = sorted(dets, key=lambda d: -d.score)
    free = list(range(len(gts)))
    flags = []
    for d in ranked:
        cands = [(shapely_iou(d.box, gts[j]), j) for j in free]
        cands = [(iou, j) for iou, j in cands if iou >= thr]
        if cands:
            free.remove(max(cands, key=lambda c: (c[0], -c[1]))[1])
        flags.append(bool(cands))
    points = []
    tp = 0
    for k, f in enumerate(flags, 1):
        tp += f
        points.append((tp / len(gts), tp / k))
    area, last_r = 0.0, 0.0
    for r in sorted({r for r, _ in points}):
        p = max(pp for rr, pp in points if rr >= r)
        area += (r - last_r) * p
        last_r = r
    return area
