"""Ground-truth interpolation, recall and localization-error scoring,
threshold sweeps, and the normalization-ablation ranking analysis.

Ground truth is a sparse set of (query frame, reference frame) anchor pairs;
linear interpolation supplies correspondences in between. Frame errors turn
into metric errors through the mean inter-frame distance of the reference
traverse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import fmt_float
from .imaging import round_half_up
from .matching import neighborhood_normalize, sad_difference
from .sequence import SequenceMatch

RANKING_VARIANTS = ("raw", "patch_only", "neighborhood_only", "both")


@dataclass(frozen=True)
class GroundTruth:
    """Sparse frame-correspondence anchors with linear interpolation.

    ``anchors`` is an (m, 2) array of (query_frame, reference_frame) pairs,
    strictly increasing in both coordinates; spacings are the mean metric
    distance between consecutive frames of each traverse.
    """

    anchors: np.ndarray
    mean_frame_spacing_query: float = 1.0
    mean_frame_spacing_reference: float = 1.0

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=np.float64)
        if anchors.ndim != 2 or anchors.shape[1] != 2 or anchors.shape[0] < 2:
            raise ValueError("ground truth needs at least 2 (query, reference) anchors")
        if not (np.all(np.diff(anchors[:, 0]) > 0) and np.all(np.diff(anchors[:, 1]) > 0)):
            raise ValueError("anchors must be strictly increasing in both coordinates")
        object.__setattr__(self, "anchors", anchors)

    @property
    def query_range(self) -> tuple[float, float]:
        return float(self.anchors[0, 0]), float(self.anchors[-1, 0])

    def covers(self, query_frame: float) -> bool:
        lo, hi = self.query_range
        return lo <= query_frame <= hi

    def interpolate(self, query_frame: float) -> float:
        """Reference frame position for a query frame inside the anchor range."""
        if not self.covers(query_frame):
            lo, hi = self.query_range
            raise ValueError(
                f"query frame {query_frame} outside ground-truth range [{lo}, {hi}]"
            )
        return float(np.interp(query_frame, self.anchors[:, 0], self.anchors[:, 1]))

    def shifted(self, query_offset: float) -> "GroundTruth":
        """Same correspondences with query coordinates shifted by
        ``query_offset`` (used to re-index blurred sequences)."""
        anchors = self.anchors.copy()
        anchors[:, 0] += query_offset
        return GroundTruth(
            anchors, self.mean_frame_spacing_query, self.mean_frame_spacing_reference
        )

    @classmethod
    def from_csv(
        cls,
        path: str | Path,
        mean_frame_spacing_query: float = 1.0,
        mean_frame_spacing_reference: float = 1.0,
    ) -> "GroundTruth":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [
                (float(r["query_frame"]), float(r["reference_frame"])) for r in reader
            ]
        return cls(np.array(rows), mean_frame_spacing_query, mean_frame_spacing_reference)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_frame", "reference_frame"])
            for q, r in self.anchors:
                writer.writerow([fmt_float(q), fmt_float(r)])


@dataclass(frozen=True)
class EvalReport:
    """Recall and localization-error summary of one match run."""

    recall: float
    mean_error_frames: float
    max_error_frames: float
    mean_error_meters: float
    max_error_meters: float
    warm_up_frames: int
    false_positive_count: int
    total_query_frames: int
    matched_count: int

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("recall", fmt_float(self.recall)),
            ("mean_error_frames", fmt_float(self.mean_error_frames)),
            ("max_error_frames", fmt_float(self.max_error_frames)),
            ("mean_error_meters", fmt_float(self.mean_error_meters)),
            ("max_error_meters", fmt_float(self.max_error_meters)),
            ("warm_up_frames", str(self.warm_up_frames)),
            ("false_positive_count", str(self.false_positive_count)),
            ("total_query_frames", str(self.total_query_frames)),
            ("matched_count", str(self.matched_count)),
        ]


def write_report_csv(report: EvalReport, path: str | Path, extra=()) -> None:
    """One metric per row, plus optional extra (name, value) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in list(report.rows()) + list(extra):
            writer.writerow([name, value])


def score_matches(
    matches: list[SequenceMatch],
    gt: GroundTruth,
    fp_tolerance: float = 10.0,
    total_query_frames: int | None = None,
    warm_up_frames: int = 0,
) -> EvalReport:
    """Score accepted matches against interpolated ground truth.

    An accepted match whose frame error exceeds ``fp_tolerance`` is a false
    positive and is excluded from the error statistics. Recall divides the
    accepted-and-correct count by the total number of query frames, warm-up
    included; when ``total_query_frames`` is omitted it is taken as the match
    count plus ``warm_up_frames``.
    """
    if total_query_frames is None:
        total_query_frames = len(matches) + warm_up_frames
    errors = []
    false_positives = 0
    for m in matches:
        if not m.accepted or not gt.covers(m.query_center_index):
            continue
        err = abs(m.reference_center_index - gt.interpolate(m.query_center_index))
        if err > fp_tolerance:
            false_positives += 1
        else:
            errors.append(err)
    spacing = gt.mean_frame_spacing_reference
    mean_f = float(np.mean(errors)) if errors else math.nan
    max_f = float(np.max(errors)) if errors else math.nan
    recall = len(errors) / total_query_frames if total_query_frames else 0.0
    return EvalReport(
        recall=recall,
        mean_error_frames=mean_f,
        max_error_frames=max_f,
        mean_error_meters=mean_f * spacing,
        max_error_meters=max_f * spacing,
        warm_up_frames=warm_up_frames,
        false_positive_count=false_positives,
        total_query_frames=total_query_frames,
        matched_count=len(errors),
    )


def rethreshold(matches: list[SequenceMatch], score_threshold: float) -> list[SequenceMatch]:
    """Re-derive acceptance flags at a different decision threshold."""
    return [
        SequenceMatch(
            m.query_center_index,
            m.reference_center_index,
            m.slope,
            m.score,
            bool(m.score < score_threshold),
        )
        for m in matches
    ]


@dataclass(frozen=True)
class ThresholdSweep:
    """Reports over a threshold grid plus the best zero-false-positive pick."""

    rows: list[tuple[float, EvalReport]]
    zero_fp_threshold: float
    zero_fp_report: EvalReport


def sweep_threshold(
    matches: list[SequenceMatch],
    gt: GroundTruth,
    thresholds=None,
    fp_tolerance: float = 10.0,
    total_query_frames: int | None = None,
    warm_up_frames: int = 0,
) -> ThresholdSweep:
    """Evaluate a run at many decision thresholds.

    The zero-false-positive threshold is the largest one admitting no match
    with frame error above ``fp_tolerance``; it maximizes recall subject to
    that constraint because acceptance is monotone in the threshold.
    """

    def _score(ms):
        return score_matches(ms, gt, fp_tolerance, total_query_frames, warm_up_frames)

    scores_bad = [
        m.score
        for m in matches
        if math.isfinite(m.score)
        and gt.covers(m.query_center_index)
        and abs(m.reference_center_index - gt.interpolate(m.query_center_index))
        > fp_tolerance
    ]
    zero_fp = min(scores_bad) if scores_bad else math.inf
    if thresholds is None:
        finite = sorted({m.score for m in matches if math.isfinite(m.score)})
        if finite:
            qs = np.linspace(0, 1, 21)
            thresholds = sorted({float(np.quantile(finite, q)) for q in qs})
        else:
            thresholds = []
        thresholds.append(math.inf)
    rows = [(float(t), _score(rethreshold(matches, t))) for t in thresholds]
    return ThresholdSweep(rows, zero_fp, _score(rethreshold(matches, zero_fp)))


@dataclass
class RankingDistribution:
    """Where the ground-truth-correct reference lands in each query's ranked
    score list, for one preprocessing variant."""

    variant: str
    ranks: np.ndarray
    percentiles: np.ndarray
    histogram: np.ndarray
    bin_edges: np.ndarray
    cumulative: np.ndarray  # fraction of queries in the top x% for x = 1..100
    n_references: int
    skipped: int = 0

    @property
    def mean_percentile(self) -> float:
        return float(self.percentiles.mean()) if len(self.percentiles) else math.nan

    @property
    def top1_rate(self) -> float:
        return float(np.mean(self.ranks == 1)) if len(self.ranks) else math.nan

    def top_fraction(self, percent: float) -> float:
        """Fraction of queries whose correct match ranks within the top
        ``percent`` % of references."""
        if not len(self.ranks):
            return math.nan
        return float(np.mean(self.ranks / self.n_references * 100.0 <= percent))


def variant_flags(variant: str) -> tuple[bool, bool]:
    """(patch, neighborhood) normalization switches for a variant name."""
    table = {
        "raw": (False, False),
        "patch_only": (True, False),
        "neighborhood_only": (False, True),
        "both": (True, True),
    }
    if variant not in table:
        raise ValueError(f"unknown variant {variant!r}; expected one of {RANKING_VARIANTS}")
    return table[variant]


def ranking_analysis(
    reference_images: np.ndarray,
    query_images: np.ndarray,
    gt: GroundTruth,
    variant: str = "both",
    patch_size: int = 8,
    half_window: int = 10,
    bins: int = 100,
) -> RankingDistribution:
    """Rank the correct reference within each query's single-image scores.

    Inputs are resolution-reduced grayscale stacks (count, ry, rx), before
    patch normalization; the variant decides which normalizations apply.
    The correct reference is the integer frame nearest the interpolated
    ground truth; score ties resolve to the best (lowest) rank. Queries
    without in-range ground truth are skipped and counted.
    """
    from .imaging import patch_normalize

    use_patch, use_neighborhood = variant_flags(variant)
    refs = np.asarray(reference_images, dtype=np.float64)
    queries = np.asarray(query_images, dtype=np.float64)
    if refs.ndim != 3 or queries.ndim != 3 or refs.shape[1:] != queries.shape[1:]:
        raise ValueError("reference and query stacks must share (ry, rx) geometry")
    if use_patch:
        refs = np.stack([patch_normalize(r, patch_size) for r in refs])
        queries = np.stack([patch_normalize(q, patch_size) for q in queries])
    n_refs = refs.shape[0]
    flat_refs = refs.reshape(n_refs, -1)

    ranks = []
    percentiles = []
    skipped = 0
    for qi, q in enumerate(queries):
        if not gt.covers(qi):
            skipped += 1
            continue
        correct = int(round_half_up(gt.interpolate(qi)))
        if not (0 <= correct < n_refs):
            skipped += 1
            continue
        scores = np.abs(flat_refs - q.reshape(-1)).mean(axis=1)
        if use_neighborhood:
            scores = neighborhood_normalize(scores, half_window)
        rank = 1 + int(np.sum(scores < scores[correct]))
        ranks.append(rank)
        percentiles.append((rank - 1) / (n_refs - 1) if n_refs > 1 else 0.0)

    ranks = np.asarray(ranks, dtype=np.int64)
    percentiles = np.asarray(percentiles, dtype=np.float64)
    histogram, bin_edges = np.histogram(percentiles, bins=bins, range=(0.0, 1.0))
    if len(ranks):
        top = ranks / n_refs * 100.0
        cumulative = np.array([np.mean(top <= p) for p in range(1, 101)])
    else:
        cumulative = np.full(100, math.nan)
    return RankingDistribution(
        variant=variant,
        ranks=ranks,
        percentiles=percentiles,
        histogram=histogram,
        bin_edges=bin_edges,
        cumulative=cumulative,
        n_references=n_refs,
        skipped=skipped,
    )


def write_rank_histogram_csv(dist: RankingDistribution, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, count in zip(dist.bin_edges[:-1], dist.bin_edges[1:], dist.histogram):
            writer.writerow([fmt_float(lo), fmt_float(hi), int(count)])


def write_rank_cumulative_csv(dist: RankingDistribution, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["top_percent", "fraction"])
        for p, frac in zip(range(1, 101), dist.cumulative):
            writer.writerow([p, fmt_float(frac)])


def write_matches_vs_truth_csv(
    matches: list[SequenceMatch], gt: GroundTruth, path: str | Path
) -> None:
    """Accepted matches next to interpolated truth, for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "reported", "truth"])
        for m in matches:
            if not m.accepted or not gt.covers(m.query_center_index):
                continue
            writer.writerow(
                [
                    m.query_center_index,
                    m.reference_center_index,
                    fmt_float(gt.interpolate(m.query_center_index)),
                ]
            )
