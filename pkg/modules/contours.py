"""
Marching squares for zero-level contours of a sampled 2-D field
Segments are stitched into ordered polylines through shared cell edges
"""

from collections import defaultdict
from typing import Dict, List, Tuple

import numpy as np

# corner order: 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1); edges named by their corner pair
_EDGES = {
    (0, 1): lambda i, j: ('a', i, j),
    (1, 2): lambda i, j: ('b', i + 1, j),
    (3, 2): lambda i, j: ('a', i, j + 1),
    (0, 3): lambda i, j: ('b', i, j),
}

# case index bit k set when corner k is above the level
_CASES = {
    0: [], 15: [],
    1: [((0, 1), (0, 3))], 14: [((0, 1), (0, 3))],
    2: [((0, 1), (1, 2))], 13: [((0, 1), (1, 2))],
    4: [((1, 2), (3, 2))], 11: [((1, 2), (3, 2))],
    8: [((0, 3), (3, 2))], 7: [((0, 3), (3, 2))],
    3: [((0, 3), (1, 2))], 12: [((0, 3), (1, 2))],
    6: [((0, 1), (3, 2))], 9: [((0, 1), (3, 2))],
}

# saddles: choice depends on whether the cell centre is above the level
_SADDLES = {
    5: ([((0, 1), (1, 2)), ((0, 3), (3, 2))], [((0, 1), (0, 3)), ((1, 2), (3, 2))]),
    10: ([((0, 1), (0, 3)), ((1, 2), (3, 2))], [((0, 1), (1, 2)), ((0, 3), (3, 2))]),
}


def _edge_point(edge_id, values, xs, ys, level):
    kind, i, j = edge_id
    if kind == 'a':
        p0, p1 = (i, j), (i + 1, j)
    else:
        p0, p1 = (i, j), (i, j + 1)
    v0, v1 = values[p0] - level, values[p1] - level
    t = v0 / (v0 - v1)
    t = min(max(t, 0.0), 1.0)
    x = xs[p0[0]] * (1 - t) + xs[p1[0]] * t
    y = ys[p0[1]] * (1 - t) + ys[p1[1]] * t
    return x, y


def marching_squares(values: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float = 0.0) -> List[np.ndarray]:
    """
    Extract the `level` contour of values[i, j] sampled at (xs[i], ys[j])

    Returns ordered (n, 2) vertex arrays; closed loops repeat their first vertex.
    A corner counts as above the level when strictly greater than it.
    """
    values = np.asarray(values, dtype=float)
    above = values > level
    nx, ny = values.shape

    links: Dict[Tuple, List[Tuple]] = defaultdict(list)
    segments = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            corners = (above[i, j], above[i + 1, j], above[i + 1, j + 1], above[i, j + 1])
            case = sum(int(c) << k for k, c in enumerate(corners))
            if case in _SADDLES:
                centre = values[i:i + 2, j:j + 2].mean() > level
                # centre agrees with corners 0/2 in case 5, corners 1/3 in case 10
                pairs = _SADDLES[case][0 if centre else 1]
            else:
                pairs = _CASES[case]
            for e0, e1 in pairs:
                a, b = _EDGES[e0](i, j), _EDGES[e1](i, j)
                seg = len(segments)
                segments.append((a, b))
                links[a].append(seg)
                links[b].append(seg)

    used = [False] * len(segments)
    polylines = []

    def walk(start_seg, start_edge):
        chain = [start_edge]
        seg, edge = start_seg, start_edge
        while True:
            used[seg] = True
            a, b = segments[seg]
            edge = b if edge == a else a
            chain.append(edge)
            nxt = [s for s in links[edge] if not used[s]]
            if not nxt:
                return chain
            seg = nxt[0]

    # open chains start at edges touched once (domain border)
    for edge, segs in sorted(links.items()):
        if len(segs) == 1 and not used[segs[0]]:
            polylines.append(walk(segs[0], edge))
    for seg in range(len(segments)):
        if not used[seg]:
            polylines.append(walk(seg, segments[seg][0]))

    return [
        np.array([_edge_point(e, values, xs, ys, level) for e in chain], dtype=float)
        for chain in polylines
    ]
