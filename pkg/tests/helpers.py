"""Shared test utilities: matrix builders and an implementation-independent
brute-force sequence-search oracle."""

import math

import numpy as np

from seqmatch.matching import DifferenceMatrix


def build_matrix(columns, first_index=0):
    """DifferenceMatrix holding exactly the given columns (oldest first)."""
    m = DifferenceMatrix(len(columns))
    for j, col in enumerate(columns):
        m.push(np.asarray(col, dtype=np.float64), first_index + j)
    return m


def random_growing_columns(rng, n_cols, max_rows, dyadic=True):
    """Random column list with non-decreasing lengths, newest longest.

    Dyadic (k/4) values keep trajectory means exactly representable, so
    oracle and implementation scores compare bitwise and ties are common.
    """
    lengths = np.sort(rng.integers(max(2, max_rows // 2), max_rows + 1, size=n_cols))
    lengths[-1] = max_rows
    cols = []
    for ln in lengths:
        if dyadic:
            cols.append(rng.integers(-8, 9, size=int(ln)).astype(np.float64) / 4.0)
        else:
            cols.append(rng.normal(size=int(ln)))
    return cols


def slope_grid(v_min, v_max, v_step):
    slopes = []
    k = 0
    while v_min + k * v_step <= v_max + 1e-9:
        slopes.append(v_min + k * v_step)
        k += 1
    return slopes


def oracle_best_match(columns, v_min, v_max, v_step, v_av):
    """Exhaustive enumeration over every (start_row, slope) pair.

    Returns (score, start_row, slope_index); (inf, -1, -1) when no
    trajectory stays inside the matrix. Ties break to the lowest start row,
    then the lowest slope. Pure Python on purpose: no shared code with the
    search kernel.
    """
    n = len(columns)
    lengths = [len(c) for c in columns]
    slopes = slope_grid(v_min, v_max, v_step)
    best = (math.inf, -1, -1)
    for start in range(lengths[0]):
        for si, slope in enumerate(slopes):
            total = 0.0
            ok = True
            for t in range(n):
                r = math.floor(start + slope * v_av * t + 0.5)
                if r >= lengths[t]:
                    ok = False
                    break
                total += columns[t][r]
            if not ok:
                continue
            score = total / n
            if score < best[0] or (
                score == best[0]
                and (start, si) < (best[1], best[2])
            ):
                best = (score, start, si)
    return best


def oracle_trajectory_score(columns, start, slope, v_av):
    n = len(columns)
    total = 0.0
    for t in range(n):
        r = math.floor(start + slope * v_av * t + 0.5)
        if r >= len(columns[t]):
            return math.nan
        total += columns[t][r]
    return total / n
