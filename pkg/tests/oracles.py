"""Slow, obviously-correct reference implementations used only by tests."""
import itertools
import math

import numpy as np


def boundary_by_definition(mask):
    h, w = len(mask), len(mask[0])
    pts = []
    for i in range(h):
        for j in range(w):
            if not mask[i][j]:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if not (0 <= a < h and 0 <= b < w) or not mask[a][b]:
                    pts.append((i, j))
                    break
    return pts


def directed(a, b):
    return [min(math.dist(p, q) for q in b) for p in a]


def hausdorff_ref(m1, m2):
    a, b = boundary_by_definition(m1), boundary_by_definition(m2)
    return max(max(directed(a, b)), max(directed(b, a)))


def msd_ref(m1, m2):
    a, b = boundary_by_definition(m1), boundary_by_definition(m2)
    d = directed(a, b) + directed(b, a)
    return sum(d) / len(d)


def dice_ref(m1, m2):
    a = {(i, j) for i, row in enumerate(m1) for j, v in enumerate(row) if v}
    b = {(i, j) for i, row in enumerate(m2) for j, v in enumerate(row) if v}
    if not a and not b:
        return 1.0
    return 2 * len(a & b) / (len(a) + len(b))


def small_masks(side=4, max_on=3):
    """Every ``side x side`` binary mask with at most ``max_on`` pixels set."""
    cells = list(itertools.product(range(side), range(side)))
    out = []
    for k in range(max_on + 1):
        for on in itertools.combinations(cells, k):
            m = np.zeros((side, side), dtype=bool)
            for c in on:
                m[c] = True
            out.append(m)
    return out


def check_all_pairs(masks, dice_fn, hd_fn, msd_fn, tol=1e-12, ordered=True):
    """Compare metric functions to the oracles on every pair; returns the number of pairs checked.

    With ``ordered=False`` only pairs ``i <= j`` are visited (for symmetric metrics).
    """
    lists = [m.tolist() for m in masks]
    bpts = [boundary_by_definition(m) for m in lists]
    n = 0
    for i, a in enumerate(masks):
        for j in range(0 if ordered else i, len(masks)):
            b = masks[j]
            n += 1
            assert abs(dice_fn(a, b) - dice_ref(lists[i], lists[j])) <= tol, (i, j)
            if not bpts[i] or not bpts[j]:
                continue
            ab, ba = directed(bpts[i], bpts[j]), directed(bpts[j], bpts[i])
            assert abs(hd_fn(a, b) - max(max(ab), max(ba))) <= tol, (i, j)
            assert abs(msd_fn(a, b) - sum(ab + ba) / len(ab + ba)) <= tol, (i, j)
    return n
