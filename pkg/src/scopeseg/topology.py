"""Topological and pixel-wise evaluation of binary segmentation maps.

Connectivity convention throughout: foreground 8-connected, background
4-connected.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .imaging import as_binary


def _find(parent: list[int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row, start and stop (exclusive) of every horizontal run, row-major."""
    edges = np.diff(np.pad(mask.view(np.int8), ((0, 0), (1, 1))), axis=1)
    rows, starts = np.nonzero(edges == 1)
    _, stops = np.nonzero(edges == -1)
    return rows, starts, stops


def connected_components(mask, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Two-pass union-find labelling over row runs.

    The first pass gives every horizontal run a provisional label and
    unions it with the touching runs of the row above (diagonal contact
    counts for 8-connectivity). The second pass resolves roots. Labels are
    ``1..count`` numbered in order of first appearance in a row-major scan;
    background is 0.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.ascontiguousarray(np.asarray(mask).astype(bool))
    h, w = mask.shape
    reach = 1 if connectivity == 8 else 0
    rows, starts, stops = (a.tolist() for a in _runs(mask))
    parent = list(range(len(rows)))
    lo = hi = 0  # runs [lo, hi) belong to the row above the current one
    for label, (i, start, stop) in enumerate(zip(rows, starts, stops)):
        if label and rows[label - 1] != i:
            lo, hi = (hi, label) if rows[label - 1] == i - 1 else (label, label)
        k = lo
        # runs above are sorted; skip those ending too far left
        while k < hi and stops[k] + reach <= start:
            k += 1
        while k < hi and starts[k] < stop + reach:
            a, b = _find(parent, k), _find(parent, label)
            if a != b:
                parent[max(a, b)] = min(a, b)
            k += 1

    final: dict[int, int] = {}
    run_label = []
    for label in range(len(rows)):
        root = _find(parent, label)
        run_label.append(final.setdefault(root, len(final) + 1))
    # paint runs with +label at start and -label at stop, then prefix-sum each row
    marks = np.zeros((h, w + 1), dtype=np.int64)
    vals = np.asarray(run_label, dtype=np.int64)
    marks[rows, starts] += vals
    marks[rows, stops] -= vals
    return np.cumsum(marks, axis=1)[:, :w], len(final)


def betti_numbers(mask) -> tuple[int, int]:
    """``(beta0, beta1)``: 8-connected components and bounded 4-connected holes."""
    mask = as_binary(mask)
    _, b0 = connected_components(mask, 8)
    background = np.pad(mask == 0, 1, constant_values=True)
    _, n_bg = connected_components(background, 4)
    return b0, n_bg - 1


def euler_cubical(mask) -> int:
    """Euler characteristic as V - E + F of the union of closed pixel squares."""
    m = np.pad(np.asarray(mask).astype(bool), 1)
    faces = int(m.sum())
    # vertex (i, j) is the top-left corner of padded pixel (i, j)
    verts = m[:-1, :-1] | m[:-1, 1:] | m[1:, :-1] | m[1:, 1:]
    h_edges = m[:-1, 1:-1] | m[1:, 1:-1]
    v_edges = m[1:-1, :-1] | m[1:-1, 1:]
    return int(verts.sum()) - int(h_edges.sum()) - int(v_edges.sum()) + faces


# Weights per 2x2 window class, scaled by 4. Fixed against euler_cubical in
# the test suite; these are the 8-connectivity values.
QUAD_WEIGHTS = {"q1": 1, "q3": -1, "qd": -2}


def euler_quads(mask, weights: dict[str, int] | None = None) -> int:
    """Euler characteristic from counts of 2x2 bit quads."""
    weights = QUAD_WEIGHTS if weights is None else weights
    m = np.pad(np.asarray(mask).astype(np.int64), 1)
    a, b, c, d = m[:-1, :-1], m[:-1, 1:], m[1:, :-1], m[1:, 1:]
    total = a + b + c + d
    q1 = int((total == 1).sum())
    q3 = int((total == 3).sum())
    qd = int(((total == 2) & (a == d)).sum())
    value = weights["q1"] * q1 + weights["q3"] * q3 + weights["qd"] * qd
    if value % 4:
        raise ArithmeticError("quad counts not divisible by 4")
    return value // 4


euler_characteristic = euler_quads


def _neighbours(m: np.ndarray):
    """P2..P9 clockwise from north, as shifted views of the padded image."""
    p = np.pad(m, 1)
    return [
        p[:-2, 1:-1], p[:-2, 2:], p[1:-1, 2:], p[2:, 2:],
        p[2:, 1:-1], p[2:, :-2], p[1:-1, :-2], p[:-2, :-2],
    ]


def _is_simple(img: np.ndarray, i: int, j: int) -> bool:
    """8-connectivity simple point test via the Yokoi connectivity number."""
    h, w = img.shape
    ring = []
    for di, dj in ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)):
        ni, nj = i + di, j + dj
        ring.append(1 - int(0 <= ni < h and 0 <= nj < w and img[ni, nj]))
    n8 = 0
    for k in (0, 2, 4, 6):
        n8 += ring[k] - ring[k] * ring[k + 1] * ring[(k + 2) % 8]
    return n8 == 1


def skeletonize(mask) -> np.ndarray:
    """Zhang-Suen thinning to a one-pixel-wide skeleton.

    Each subiteration marks candidates with the usual parallel conditions,
    then removes them in row-major order, skipping any that are no longer
    simple points. The guard keeps 2x2 blocks and two-pixel diagonals from
    vanishing, so both Betti numbers of the input are preserved.
    """
    img = as_binary(mask).astype(bool).copy()
    while True:
        changed = False
        for step in (0, 1):
            p2, p3, p4, p5, p6, p7, p8, p9 = _neighbours(img)
            nb = [p2, p3, p4, p5, p6, p7, p8, p9]
            count = sum(x.astype(np.int8) for x in nb)
            trans = sum(
                (~nb[k] & nb[(k + 1) % 8]).astype(np.int8) for k in range(8)
            )
            if step == 0:
                cond = ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
            else:
                cond = ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
            cand = img & (count >= 2) & (count <= 6) & (trans == 1) & cond
            for i, j in zip(*np.nonzero(cand)):
                if _is_simple(img, i, j):
                    img[i, j] = False
                    changed = True
        if not changed:
            return img.astype(np.uint8)


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = as_binary(pred), as_binary(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def cldice_metric(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    sp = skeletonize(pred).astype(bool)
    sg = skeletonize(gt).astype(bool)
    n_sp, n_sg = int(sp.sum()), int(sg.sum())
    if n_sp == 0 and n_sg == 0:
        return 1.0
    if n_sp == 0 or n_sg == 0:
        return 0.0
    tprec = (sp & gt).sum() / n_sp
    tsens = (sg & pred).sum() / n_sg
    if tprec + tsens == 0:
        return 0.0
    return float(2 * tprec * tsens / (tprec + tsens))


def pixel_metrics(pred, gt) -> tuple[float, float, float]:
    """``(precision, recall, dice)``; every 0/0 ratio is taken as 1."""
    pred, gt = _check_pair(pred, gt)
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt).sum())
    fn = int((~pred & gt).sum())

    def ratio(num, den):
        return 1.0 if den == 0 else num / den

    return ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(2 * tp, 2 * tp + fp + fn)


@dataclass
class TopologySummary:
    beta0: int
    beta1: int
    euler: int
    err_b0: int
    err_b1: int
    err_chi: int
    cldice: float
    precision: float
    recall: float
    dice: float

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_pair(pred, gt) -> TopologySummary:
    """Full comparison of one prediction against its ground truth.

    ``beta0``, ``beta1`` and ``euler`` describe the prediction.
    """
    pred, gt = _check_pair(pred, gt)
    pb0, pb1 = betti_numbers(pred)
    gb0, gb1 = betti_numbers(gt)
    pchi, gchi = euler_characteristic(pred), euler_characteristic(gt)
    precision, recall, dice = pixel_metrics(pred, gt)
    return TopologySummary(
        beta0=pb0,
        beta1=pb1,
        euler=pchi,
        err_b0=abs(pb0 - gb0),
        err_b1=abs(pb1 - gb1),
        err_chi=abs(pchi - gchi),
        cldice=cldice_metric(pred, gt),
        precision=precision,
        recall=recall,
        dice=dice,
    )


def mean_summary(rows: list[TopologySummary]) -> dict[str, float]:
    """Arithmetic mean of every field over a list of per-pair summaries."""
    if not rows:
        raise ValueError("no rows to average")
    return {f.name: float(np.mean([getattr(r, f.name) for r in rows])) for f in fields(TopologySummary)}
