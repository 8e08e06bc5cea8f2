"""Synthetic long-exposure imagery via moving-average temporal blur.

A simulated exposure of E milliseconds over a source stream captured at F
frames per second is the per-pixel mean of a trailing window of
round(E * F / 1000) consecutive frames. The window is trailing (causal): a
real exposure integrates light up to the capture instant, so blurred content
lags the capture timestamp by half a window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import round_half_up


@dataclass(frozen=True)
class BlurSpec:
    """Exposure duration to simulate and the frame rate of the source."""

    simulated_exposure_ms: float
    source_fps: float

    def __post_init__(self):
        if self.simulated_exposure_ms <= 0:
            raise ValueError("exposure must be positive")
        if self.source_fps <= 0:
            raise ValueError("source fps must be positive")

    @property
    def window(self) -> int:
        """Averaging window in frames, at least 1."""
        frames = self.simulated_exposure_ms * self.source_fps / 1000.0
        return max(1, int(round_half_up(frames)))


def expected_lag(spec: BlurSpec | int) -> float:
    """Centroid offset of a trailing window: (window - 1) / 2 frames.

    This is the frame lag a matcher should exhibit against ground truth taken
    at the capture instant.
    """
    window = spec.window if isinstance(spec, BlurSpec) else int(spec)
    return (window - 1) / 2.0


def temporal_blur(frames, spec: BlurSpec | int) -> np.ndarray:
    """Blur a frame stack with a trailing moving-average window.

    ``frames`` is a (count, h, w) stack or a list of equal-shape grayscale
    images. Output frame ``j`` is the rounded per-pixel mean of input frames
    ``j .. j + window - 1``, i.e. it aligns with input frame
    ``j + window - 1``; the output is ``window - 1`` frames shorter.
    """
    window = spec.window if isinstance(spec, BlurSpec) else int(spec)
    if window < 1:
        raise ValueError("window must be >= 1")
    stack = np.asarray(frames)
    if stack.ndim != 3:
        raise ValueError("expected a stack of single-channel frames")
    count = stack.shape[0]
    if window > count:
        raise ValueError(f"window {window} exceeds sequence length {count}")
    if window == 1:
        return stack.copy()
    # Prefix sums keep the window means free of accumulation bias; integer
    # frames get exact sums, and the single float64 division rounds once.
    acc = np.int64 if np.issubdtype(stack.dtype, np.integer) else np.float64
    csum = np.zeros((count + 1,) + stack.shape[1:], dtype=acc)
    np.cumsum(stack, axis=0, dtype=acc, out=csum[1:])
    sums = csum[window:] - csum[:-window]
    means = sums / float(window)
    return np.clip(round_half_up(means), 0, 255).astype(np.uint8)
