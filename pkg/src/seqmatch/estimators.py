"""Scikit-learn style estimators wrapping the matching pipeline.

``TemplateTransformer`` turns raw frames into comparison templates,
``TemporalBlur`` synthesizes long exposures, and ``SequenceMatcher`` learns a
reference traverse with ``fit`` and localizes query traverses with
``predict``/``match``. All three follow the get_params/set_params contract,
so they compose with pipelines and grid search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .blur import BlurSpec, temporal_blur
from .imaging import CropRect, preprocess_frame
from .matching import DifferenceMatrix, TemplateStore, difference_vector, neighborhood_normalize
from .sequence import SequenceMatch, SlopeConfig, best_match


def _as_frame_list(X) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim in (3, 4):
        return [X[i] for i in range(X.shape[0])]
    if isinstance(X, (list, tuple)):
        return [np.asarray(f) for f in X]
    raise ValueError("expected a frame stack or a sequence of frames")


class TemplateTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer: raw frames to patch-normalized templates.

    Each frame is converted to grayscale, optionally cropped, area-downsampled
    to ``rx`` x ``ry``, and patch-normalized with ``patch_size`` blocks.

    Parameters
    ----------
    rx, ry : int
        Template width and height in pixels; both divisible by ``patch_size``.
    patch_size : int
        Side length of the normalization patches.
    crop : CropRect, str or None
        Optional crop applied after grayscale conversion, either a
        :class:`CropRect` or an ``"x0,y0,width,height"`` string.
    """

    def __init__(self, rx: int = 64, ry: int = 32, patch_size: int = 8, crop=None):
        self.rx = rx
        self.ry = ry
        self.patch_size = patch_size
        self.crop = crop

    def _crop_rect(self) -> CropRect | None:
        if self.crop is None or isinstance(self.crop, CropRect):
            return self.crop
        return CropRect.parse(self.crop)

    def _validate(self):
        if self.rx % self.patch_size or self.ry % self.patch_size:
            raise ValueError(
                f"template dims {self.rx}x{self.ry} not divisible by "
                f"patch size {self.patch_size}"
            )

    def fit(self, X=None, y=None):
        self._validate()
        return self

    def transform(self, X) -> np.ndarray:
        """Return a (n_frames, ry, rx) float64 template stack."""
        self._validate()
        rect = self._crop_rect()
        frames = _as_frame_list(X)
        return np.stack(
            [
                preprocess_frame(f, self.rx, self.ry, self.patch_size, rect)
                for f in frames
            ]
        )

    def resize_only(self, X) -> np.ndarray:
        """Grayscale + crop + downsample without patch normalization, for
        the ranking ablation's raw variants."""
        self._validate()
        from .imaging import crop as crop_op, downsample, to_grayscale

        rect = self._crop_rect()
        out = []
        for f in _as_frame_list(X):
            g = to_grayscale(f)
            if rect is not None:
                g = crop_op(g, rect)
            out.append(downsample(g, self.rx, self.ry))
        return np.stack(out).astype(np.float64)


class TemporalBlur(TransformerMixin, BaseEstimator):
    """Transformer applying moving-average temporal blur to a frame stack."""

    def __init__(self, exposure_ms: float = 1000.0, source_fps: float = 15.0):
        self.exposure_ms = exposure_ms
        self.source_fps = source_fps

    @property
    def spec_(self) -> BlurSpec:
        return BlurSpec(self.exposure_ms, self.source_fps)

    def fit(self, X=None, y=None):
        self.spec_  # validates
        return self

    def transform(self, X) -> np.ndarray:
        return temporal_blur(np.asarray(X), self.spec_)


class SequenceMatcher(BaseEstimator):
    """Sequence-based place recognizer.

    ``fit`` learns one template per reference frame; ``match`` slides a
    window of ``sequence_length`` query frames, building neighborhood-
    normalized difference vectors and searching the resulting matrix for the
    lowest-mean-score trajectory within the slope bounds. ``predict`` reduces
    each match to the reference index at the window midpoint.

    Parameters
    ----------
    sequence_length : int
        Frames per matched sequence (the difference-matrix width).
    neighborhood : int
        Half-window (in templates) of the difference-vector normalization.
    v_min, v_max, v_step : float
        Trajectory slope bounds and grid step, as ratios of ``v_av``.
    v_av : float
        Reference-to-query frame-rate ratio.
    score_threshold : float
        Decision threshold: a window's best trajectory is accepted when its
        mean score is below this. The default accepts every valid trajectory,
        which suits threshold sweeps.
    patch_size : int
        Template patch geometry, recorded in persisted stores.
    learn_queries : bool
        When True, each query template is appended to the (copied) store
        after its difference vector is computed, so later queries also match
        against earlier ones and difference vectors grow over time.
    n_jobs : int
        Worker threads for the difference and search kernels. Results are
        bit-identical for any value.
    """

    def __init__(
        self,
        sequence_length: int = 50,
        neighborhood: int = 10,
        v_min: float = 0.84,
        v_max: float = 1.19,
        v_step: float = 0.04,
        v_av: float = 1.0,
        score_threshold: float = np.inf,
        patch_size: int = 8,
        learn_queries: bool = False,
        n_jobs: int = 1,
    ):
        self.sequence_length = sequence_length
        self.neighborhood = neighborhood
        self.v_min = v_min
        self.v_max = v_max
        self.v_step = v_step
        self.v_av = v_av
        self.score_threshold = score_threshold
        self.patch_size = patch_size
        self.learn_queries = learn_queries
        self.n_jobs = n_jobs

    def slope_config(self) -> SlopeConfig:
        return SlopeConfig(self.v_min, self.v_max, self.v_step, self.v_av)

    def fit(self, X, y=None):
        """Learn reference templates from a (n, ry, rx) stack or a
        pre-built :class:`TemplateStore`."""
        if self.sequence_length < 1:
            raise ValueError("sequence_length must be >= 1")
        if self.neighborhood < 1:
            raise ValueError("neighborhood must be >= 1")
        self.slope_config()  # validates slope params
        if isinstance(X, TemplateStore):
            self.store_ = X
        else:
            stack = np.asarray(X, dtype=np.float64)
            if stack.ndim != 3:
                raise ValueError("expected a (n_frames, ry, rx) template stack")
            store = TemplateStore(stack.shape[2], stack.shape[1], self.patch_size)
            store.extend(stack)
            self.store_ = store
        self.n_reference_templates_ = len(self.store_)
        return self

    def match(self, X) -> list[SequenceMatch]:
        """Run the full pipeline over query templates.

        Returns one :class:`SequenceMatch` per query frame from index
        ``sequence_length - 1`` on; earlier frames are warm-up and produce no
        record.
        """
        check_is_fitted(self, "store_")
        queries = np.asarray(X, dtype=np.float64)
        if queries.ndim != 3 or queries.shape[1:] != (self.store_.ry, self.store_.rx):
            raise ValueError(
                f"query stack shape {queries.shape} does not match store "
                f"geometry ({self.store_.ry}, {self.store_.rx})"
            )
        store = self.store_.copy() if self.learn_queries else self.store_
        cfg = self.slope_config()
        matrix = DifferenceMatrix(self.sequence_length)
        matches = []
        for i, query in enumerate(queries):
            vec = difference_vector(store, query, n_jobs=self.n_jobs)
            matrix.push(neighborhood_normalize(vec, self.neighborhood), i)
            if self.learn_queries:
                store.append(query)
            if matrix.is_full:
                matches.append(
                    best_match(matrix, cfg, self.score_threshold, n_jobs=self.n_jobs)
                )
        return matches

    def predict(self, X) -> np.ndarray:
        """Reference center index per query frame; -1 where the frame is
        warm-up or its window was rejected."""
        queries = np.asarray(X, dtype=np.float64)
        out = np.full(queries.shape[0], -1, dtype=np.int64)
        for m in self.match(queries):
            if m.accepted:
                out[m.query_center_index] = m.reference_center_index
        return out
