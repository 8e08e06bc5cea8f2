"""Batch command-line driver.

Subcommands wire frame directories through the pipeline: ``preprocess``
builds a template store, ``match`` localizes a query traverse against a
reference traverse, ``blur-sweep`` repeats matching over synthetic exposure
durations, ``rank-analysis`` produces the normalization-ablation ranking
distributions, and ``eval`` re-scores a match CSV against ground truth.

Configuration is a flat ``key = value`` text file; every key has a matching
command-line flag that overrides the file. Each run writes its outputs plus a
``manifest.txt`` holding the fully resolved configuration (itself a valid
config file) under the ``--out`` directory.
"""

import argparse
import csv
import dataclasses
import math
import sys
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import fmt_float
from .blur import BlurSpec, expected_lag, temporal_blur
from .estimators import SequenceMatcher, TemplateTransformer
from .evaluate import (
    RANKING_VARIANTS,
    GroundTruth,
    ranking_analysis,
    score_matches,
    sweep_threshold,
    write_matches_vs_truth_csv,
    write_rank_cumulative_csv,
    write_rank_histogram_csv,
    write_report_csv,
)
from .imaging import load_frames, to_grayscale, write_frames
from .matching import TemplateStore
from .sequence import load_matches_csv, save_matches_csv


class ConfigError(ValueError):
    """Configuration violates an invariant; nothing has been processed."""


@dataclass
class RunConfig:
    """Resolved run parameters. Paths left empty are simply unset."""

    reference_dir: str = ""
    query_dir: str = ""
    ground_truth: str = ""
    crop_reference: str = ""
    crop_query: str = ""
    rx: int = 64
    ry: int = 32
    patch_size: int = 8
    sequence_length: int = 50
    neighborhood: int = 10
    v_min: float = 0.84
    v_max: float = 1.19
    v_step: float = 0.04
    v_av: float = 0.0  # 0 = derive from the frame spacings
    score_threshold: float = math.inf
    fp_tolerance: float = 10.0
    frame_spacing_reference: float = 1.0
    frame_spacing_query: float = 1.0
    learn_queries: bool = False
    n_jobs: int = 1

    def validate(self) -> None:
        if self.rx < 1 or self.ry < 1 or self.patch_size < 1:
            raise ConfigError("template geometry must be positive")
        if self.rx % self.patch_size or self.ry % self.patch_size:
            raise ConfigError(
                f"rx={self.rx}, ry={self.ry} must be divisible by "
                f"patch_size={self.patch_size}"
            )
        if self.sequence_length < 1:
            raise ConfigError("sequence_length must be >= 1")
        if self.neighborhood < 1:
            raise ConfigError("neighborhood must be >= 1")
        if not (0 < self.v_min <= self.v_max) or self.v_step <= 0:
            raise ConfigError("need 0 < v_min <= v_max and v_step > 0")
        if self.frame_spacing_reference <= 0 or self.frame_spacing_query <= 0:
            raise ConfigError("frame spacings must be positive")
        if self.v_av < 0:
            raise ConfigError("v_av must be positive (or 0 for automatic)")

    @property
    def v_av_effective(self) -> float:
        if self.v_av > 0:
            return self.v_av
        return self.frame_spacing_query / self.frame_spacing_reference

    def serialize(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        hints = typing.get_type_hints(cls)
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kind = hints[key]
            if kind is bool:
                if value.lower() in ("true", "1", "yes"):
                    values[key] = True
                elif value.lower() in ("false", "0", "no"):
                    values[key] = False
                else:
                    raise ConfigError(f"line {lineno}: bad boolean {value!r}")
            elif kind is int:
                values[key] = int(value)
            elif kind is float:
                values[key] = float(value)
            else:
                values[key] = value
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())


def _write_manifest(out_dir: Path, cfg: RunConfig, command: str) -> None:
    text = f"# seqmatch {command}\n" + cfg.serialize()
    (out_dir / "manifest.txt").write_text(text)


def _require_dir(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is not set")
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} {p} is not a directory")
    return p


def _transformer(cfg: RunConfig, which: str) -> TemplateTransformer:
    crop = cfg.crop_reference if which == "reference" else cfg.crop_query
    return TemplateTransformer(cfg.rx, cfg.ry, cfg.patch_size, crop or None)


def _load_ground_truth(cfg: RunConfig) -> GroundTruth:
    if not cfg.ground_truth:
        raise ConfigError("ground_truth is not set")
    return GroundTruth.from_csv(
        cfg.ground_truth,
        mean_frame_spacing_query=cfg.frame_spacing_query,
        mean_frame_spacing_reference=cfg.frame_spacing_reference,
    )


def _matcher(cfg: RunConfig) -> SequenceMatcher:
    return SequenceMatcher(
        sequence_length=cfg.sequence_length,
        neighborhood=cfg.neighborhood,
        v_min=cfg.v_min,
        v_max=cfg.v_max,
        v_step=cfg.v_step,
        v_av=cfg.v_av_effective,
        score_threshold=cfg.score_threshold,
        patch_size=cfg.patch_size,
        learn_queries=cfg.learn_queries,
        n_jobs=cfg.n_jobs,
    )


def cmd_preprocess(cfg: RunConfig, out_dir: Path, role: str) -> int:
    src = cfg.reference_dir if role == "reference" else cfg.query_dir
    frames = load_frames(_require_dir(src, f"{role}_dir"))
    stack = _transformer(cfg, role).transform(frames)
    store = TemplateStore(cfg.rx, cfg.ry, cfg.patch_size)
    store.extend(stack)
    store.save(out_dir / "templates.sqsm")
    _write_manifest(out_dir, cfg, f"preprocess --role {role}")
    print(f"stored {len(store)} templates from {src}")
    return 0


def _run_match(cfg: RunConfig):
    ref_frames = load_frames(_require_dir(cfg.reference_dir, "reference_dir"))
    query_frames = load_frames(_require_dir(cfg.query_dir, "query_dir"))
    if len(ref_frames) < cfg.sequence_length or len(query_frames) < cfg.sequence_length:
        raise ConfigError(
            f"need at least sequence_length={cfg.sequence_length} frames per "
            f"dataset (have {len(ref_frames)} reference, {len(query_frames)} query)"
        )
    ref = _transformer(cfg, "reference").transform(ref_frames)
    query = _transformer(cfg, "query").transform(query_frames)
    matcher = _matcher(cfg).fit(ref)
    return matcher.match(query), len(query_frames)


def cmd_match(cfg: RunConfig, out_dir: Path) -> int:
    matches, n_query = _run_match(cfg)
    save_matches_csv(matches, out_dir / "matches.csv")
    if cfg.ground_truth:
        gt = _load_ground_truth(cfg)
        report = score_matches(
            matches,
            gt,
            fp_tolerance=cfg.fp_tolerance,
            total_query_frames=n_query,
            warm_up_frames=min(n_query, cfg.sequence_length - 1),
        )
        write_report_csv(report, out_dir / "report.csv")
        write_matches_vs_truth_csv(matches, gt, out_dir / "matches_vs_truth.csv")
    _write_manifest(out_dir, cfg, "match")
    print(f"matched {n_query} query frames -> {out_dir / 'matches.csv'}")
    return 0


def cmd_eval(cfg: RunConfig, out_dir: Path, matches_path: str) -> int:
    matches = load_matches_csv(matches_path)
    gt = _load_ground_truth(cfg)
    warm_up = cfg.sequence_length - 1
    total = warm_up + len(matches)
    report = score_matches(
        matches, gt, cfg.fp_tolerance, total_query_frames=total, warm_up_frames=warm_up
    )
    write_report_csv(report, out_dir / "report.csv")
    write_matches_vs_truth_csv(matches, gt, out_dir / "matches_vs_truth.csv")
    sweep = sweep_threshold(
        matches, gt, fp_tolerance=cfg.fp_tolerance,
        total_query_frames=total, warm_up_frames=warm_up,
    )
    with open(out_dir / "threshold_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["score_threshold", "recall", "mean_error_frames", "max_error_frames",
             "mean_error_meters", "max_error_meters", "false_positive_count"]
        )
        for threshold, rep in sweep.rows:
            writer.writerow(
                [fmt_float(threshold), fmt_float(rep.recall),
                 fmt_float(rep.mean_error_frames), fmt_float(rep.max_error_frames),
                 fmt_float(rep.mean_error_meters), fmt_float(rep.max_error_meters),
                 rep.false_positive_count]
            )
    write_report_csv(
        sweep.zero_fp_report,
        out_dir / "report_zero_fp.csv",
        extra=[("zero_fp_threshold", fmt_float(sweep.zero_fp_threshold))],
    )
    _write_manifest(out_dir, cfg, "eval")
    print(
        f"recall {fmt_float(report.recall)} as recorded; zero-FP threshold "
        f"{fmt_float(sweep.zero_fp_threshold)} gives recall "
        f"{fmt_float(sweep.zero_fp_report.recall)}"
    )
    return 0


def cmd_blur_sweep(
    cfg: RunConfig,
    out_dir: Path,
    exposures_ms: list[float],
    source_fps: float,
    save_frames: bool,
) -> int:
    ref_frames = load_frames(_require_dir(cfg.reference_dir, "reference_dir"))
    query_frames = load_frames(_require_dir(cfg.query_dir, "query_dir"))
    gray = np.stack([to_grayscale(f) for f in query_frames])
    ref = _transformer(cfg, "reference").transform(ref_frames)
    matcher = _matcher(cfg).fit(ref)
    gt = _load_ground_truth(cfg) if cfg.ground_truth else None
    query_tf = _transformer(cfg, "query")

    summary = []
    for exposure in exposures_ms:
        spec = BlurSpec(exposure, source_fps)
        window = spec.window
        if window > len(gray):
            raise ConfigError(
                f"exposure {exposure} ms needs a {window}-frame window but the "
                f"query has only {len(gray)} frames"
            )
        blurred = temporal_blur(gray, window)
        tag = f"exposure_{int(exposure)}ms"
        run_dir = out_dir / tag
        run_dir.mkdir(parents=True, exist_ok=True)
        if save_frames:
            # File names align each output with its newest contributing frame.
            write_frames(run_dir / "frames", blurred, start_index=window - 1)
        matches = matcher.match(query_tf.transform(blurred))
        save_matches_csv(matches, run_dir / "matches.csv")
        row = {
            "exposure_ms": exposure,
            "window_frames": window,
            "expected_lag_frames": expected_lag(spec),
        }
        if gt is not None:
            # Blurred frame j holds input frames j..j+window-1, so ground
            # truth shifts into the blurred frame numbering.
            gt_b = gt.shifted(-(window - 1))
            report = score_matches(
                matches,
                gt_b,
                fp_tolerance=cfg.fp_tolerance,
                total_query_frames=len(blurred),
                warm_up_frames=min(len(blurred), cfg.sequence_length - 1),
            )
            lags = [
                gt_b.interpolate(m.query_center_index) - m.reference_center_index
                for m in matches
                if m.accepted and gt_b.covers(m.query_center_index)
            ]
            row.update(
                measured_lag_frames=float(np.mean(lags)) if lags else math.nan,
                recall=report.recall,
                mean_error_frames=report.mean_error_frames,
                max_error_frames=report.max_error_frames,
                mean_error_meters=report.mean_error_meters,
                max_error_meters=report.max_error_meters,
                false_positive_count=report.false_positive_count,
            )
        summary.append(row)

    fields = list(summary[0].keys())
    with open(out_dir / "blur_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in summary:
            writer.writerow(
                [
                    fmt_float(row[k]) if isinstance(row[k], float) else row[k]
                    for k in fields
                ]
            )
    _write_manifest(out_dir, cfg, "blur-sweep")
    print(f"swept {len(exposures_ms)} exposures -> {out_dir / 'blur_sweep.csv'}")
    return 0


def cmd_rank_analysis(cfg: RunConfig, out_dir: Path) -> int:
    ref_frames = load_frames(_require_dir(cfg.reference_dir, "reference_dir"))
    query_frames = load_frames(_require_dir(cfg.query_dir, "query_dir"))
    gt = _load_ground_truth(cfg)
    refs = _transformer(cfg, "reference").resize_only(ref_frames)
    queries = _transformer(cfg, "query").resize_only(query_frames)

    rows = []
    for variant in RANKING_VARIANTS:
        dist = ranking_analysis(
            refs, queries, gt, variant,
            patch_size=cfg.patch_size, half_window=cfg.neighborhood,
        )
        write_rank_histogram_csv(dist, out_dir / f"rank_histogram_{variant}.csv")
        write_rank_cumulative_csv(dist, out_dir / f"rank_cumulative_{variant}.csv")
        rows.append(
            [
                variant,
                len(dist.ranks),
                dist.skipped,
                fmt_float(dist.mean_percentile),
                fmt_float(dist.top1_rate),
                fmt_float(dist.top_fraction(10)),
                fmt_float(dist.top_fraction(20)),
                fmt_float(dist.top_fraction(50)),
            ]
        )
    with open(out_dir / "rank_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variant", "queries", "skipped", "mean_percentile",
             "top1_rate", "top10pct", "top20pct", "top50pct"]
        )
        writer.writerows(rows)
    _write_manifest(out_dir, cfg, "rank-analysis")
    print(f"wrote ranking distributions for {len(RANKING_VARIANTS)} variants")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--out", required=True, help="run output directory")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar="V")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    hints = typing.get_type_hints(RunConfig)
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is None:
            continue
        kind = hints[f.name]
        if kind is bool:
            overrides[f.name] = raw.lower() in ("true", "1", "yes")
        else:
            overrides[f.name] = kind(raw)
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqmatch",
        description="Sequence-based visual place recognition over "
        "low-resolution normalized images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build a template store from a frame directory")
    _add_config_flags(p)
    p.add_argument("--role", choices=("reference", "query"), default="reference")

    p = sub.add_parser("match", help="match a query traverse against a reference traverse")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score a match CSV against ground truth")
    _add_config_flags(p)
    p.add_argument("--matches", required=True, help="match CSV produced by `match`")

    p = sub.add_parser("blur-sweep", help="repeat matching over synthetic exposures")
    _add_config_flags(p)
    p.add_argument(
        "--exposures", default="66,500,1000,2000,5000",
        help="comma-separated simulated exposure durations in ms",
    )
    p.add_argument("--source-fps", type=float, default=15.0)
    p.add_argument(
        "--save-frames", action="store_true",
        help="also write each blurred frame directory",
    )

    p = sub.add_parser("rank-analysis", help="normalization-ablation ranking distributions")
    _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "preprocess":
            return cmd_preprocess(cfg, out_dir, args.role)
        if args.command == "match":
            return cmd_match(cfg, out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir, args.matches)
        if args.command == "blur-sweep":
            exposures = [float(x) for x in args.exposures.split(",") if x.strip()]
            return cmd_blur_sweep(cfg, out_dir, exposures, args.source_fps, args.save_frames)
        if args.command == "rank-analysis":
            return cmd_rank_analysis(cfg, out_dir)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
