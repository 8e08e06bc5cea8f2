"""Slope-constrained search for low-mean-score linear trajectories through
the difference matrix.

A trajectory starts at a row of the oldest column and advances one column per
step while the sampled row follows a line of fixed slope. The best (lowest
mean score) trajectory over all start rows and slopes becomes the sequence
match; it is accepted when its score falls below the decision threshold.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .matching import DifferenceMatrix


class NotReadyError(RuntimeError):
    """Raised when a full-length sequence window is not yet available."""


@dataclass(frozen=True)
class SlopeConfig:
    """Allowed trajectory slopes, as ratios relative to ``v_av``.

    ``v_av`` is the reference-to-query frame-rate ratio: the number of
    reference frames the route advances per query frame when both traverses
    run at their nominal speeds.
    """

    v_min: float = 0.84
    v_max: float = 1.19
    v_step: float = 0.04
    v_av: float = 1.0

    def __post_init__(self):
        if not (0 < self.v_min <= self.v_max):
            raise ValueError("need 0 < v_min <= v_max")
        if self.v_step <= 0:
            raise ValueError("v_step must be positive")
        if self.v_av <= 0:
            raise ValueError("v_av must be positive")

    def slopes(self) -> np.ndarray:
        """Grid v_min, v_min + v_step, ... capped at v_max, ascending."""
        count = int(math.floor((self.v_max - self.v_min) / self.v_step + 1e-9)) + 1
        return self.v_min + self.v_step * np.arange(count)


@dataclass(frozen=True)
class SequenceMatch:
    """Accepted or rejected localization hypothesis for one sequence window.

    Indices refer to the window midpoint. A window with no valid trajectory
    carries ``reference_center_index`` -1, a NaN slope, and an infinite score.
    """

    query_center_index: int
    reference_center_index: int
    slope: float
    score: float
    accepted: bool


def _row_offsets(slope: float, v_av: float, length: int) -> np.ndarray:
    """Row displacement at each column offset, rounded half-up."""
    t = np.arange(length, dtype=np.float64)
    return np.floor(slope * v_av * t + 0.5).astype(np.intp)


def trajectory_score(
    matrix: DifferenceMatrix, start_row: int, slope: float, v_av: float = 1.0
) -> float:
    """Mean of the scores sampled along one trajectory.

    Returns NaN when the trajectory leaves the matrix or samples a padded
    cell; that is a value, not a fault.
    """
    if not (0 <= start_row < matrix.oldest_length):
        raise ValueError(
            f"start_row {start_row} outside oldest column "
            f"[0, {matrix.oldest_length})"
        )
    arr = matrix.to_array()
    rows = start_row + _row_offsets(slope, v_av, len(matrix))
    if rows[-1] >= arr.shape[0]:
        return float("nan")
    return float(arr[rows, np.arange(len(matrix))].mean())


def best_match(
    matrix: DifferenceMatrix,
    cfg: SlopeConfig,
    score_threshold: float,
    n_jobs: int = 1,
) -> SequenceMatch:
    """Exhaustive argmin over every start row of the oldest column and every
    slope of the grid.

    Ties break toward the lowest start row, then the lowest slope, so the
    result does not depend on how the search grid is partitioned. Raises
    :class:`NotReadyError` until the matrix holds a full window.
    """
    if not matrix.is_full:
        raise NotReadyError(
            f"difference matrix holds {len(matrix)} of {matrix.window} columns"
        )
    arr = matrix.to_array()
    n_rows, n_cols = arr.shape
    mid = (n_cols - 1) // 2
    query_center = matrix.query_indices[mid]
    if matrix.oldest_length == 0:
        return SequenceMatch(query_center, -1, float("nan"), math.inf, False)
    starts = np.arange(matrix.oldest_length, dtype=np.intp)
    cols = np.arange(n_cols, dtype=np.intp)
    slopes = cfg.slopes()
    offsets = [_row_offsets(s, cfg.v_av, n_cols) for s in slopes]

    def _grid_best(slope_idx: int, lo: int, hi: int):
        """(score, start_row, slope_idx) minimum over one start-row chunk."""
        sub = starts[lo:hi]
        rows = sub[:, None] + offsets[slope_idx][None, :]
        oob = rows[:, -1] >= n_rows
        scores = arr[np.minimum(rows, n_rows - 1), cols].mean(axis=1)
        scores[oob] = np.inf
        scores = np.where(np.isnan(scores), np.inf, scores)
        k = int(np.argmin(scores))
        return float(scores[k]), int(sub[k]), slope_idx

    tasks = []
    if n_jobs <= 1 or len(starts) < 2 * n_jobs:
        chunks = [(0, len(starts))]
    else:
        bounds = np.linspace(0, len(starts), n_jobs + 1, dtype=int)
        chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    for si in range(len(slopes)):
        for lo, hi in chunks:
            tasks.append((si, lo, hi))

    if n_jobs <= 1 or len(tasks) == 1:
        results = [_grid_best(*t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda t: _grid_best(*t), tasks))

    best_score, best_start, best_slope_idx = math.inf, -1, -1
    for score, start, si in results:
        if score < best_score or (
            score == best_score
            and (start < best_start or (start == best_start and si < best_slope_idx))
        ):
            best_score, best_start, best_slope_idx = score, start, si

    if not math.isfinite(best_score):
        return SequenceMatch(query_center, -1, float("nan"), math.inf, False)
    slope = float(slopes[best_slope_idx])
    ref_center = best_start + int(offsets[best_slope_idx][mid])
    return SequenceMatch(
        query_center_index=query_center,
        reference_center_index=ref_center,
        slope=slope,
        score=best_score,
        accepted=bool(best_score < score_threshold),
    )


MATCH_CSV_FIELDS = ("query_index", "reference_index", "slope", "score", "accepted")


def save_matches_csv(matches, path: str | Path) -> None:
    """One record per processed frame: query center, reference center, slope,
    score, accepted flag."""
    from ._util import fmt_float

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MATCH_CSV_FIELDS)
        for m in matches:
            writer.writerow(
                [
                    m.query_center_index,
                    m.reference_center_index,
                    fmt_float(m.slope),
                    fmt_float(m.score),
                    int(m.accepted),
                ]
            )


def load_matches_csv(path: str | Path) -> list[SequenceMatch]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            SequenceMatch(
                query_center_index=int(row["query_index"]),
                reference_center_index=int(row["reference_index"]),
                slope=float(row["slope"]),
                score=float(row["score"]),
                accepted=bool(int(row["accepted"])),
            )
            for row in reader
        ]
