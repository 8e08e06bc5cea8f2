"""Template storage and image-difference machinery.

A query frame is compared against every stored template with a mean sum of
absolute differences, the resulting difference vector is contrast-enhanced
against its local neighborhood, and the most recent vectors are stacked into
a padded matrix that the sequence search consumes.

Stored template values are float32, matching the on-disk format exactly so
that a save/load round trip is bit-exact. Comparisons are evaluated in
float64.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

STORE_MAGIC = b"SQSM"
STORE_VERSION = 1

#: Padding marker for difference-matrix entries that carry no score. Any
#: trajectory that samples a padded cell is invalid, so the marker must
#: poison arithmetic rather than bias it.
PAD = np.nan


class TemplateStore:
    """Append-only ordered collection of equal-geometry templates.

    The template appended ``i``-th has source index ``i``. Values are kept as
    float32, the same precision as the serialized form.
    """

    def __init__(self, rx: int, ry: int, patch_size: int):
        if rx < 1 or ry < 1 or patch_size < 1:
            raise ValueError("template geometry must be positive")
        if rx % patch_size or ry % patch_size:
            raise ValueError(
                f"template dims {rx}x{ry} not divisible by patch size {patch_size}"
            )
        self.rx = rx
        self.ry = ry
        self.patch_size = patch_size
        self._templates: list[np.ndarray] = []
        self._stack: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._templates)

    def __getitem__(self, index: int) -> np.ndarray:
        return self._templates[index]

    def append(self, template: np.ndarray) -> int:
        """Store one template; returns its assigned source index."""
        template = np.asarray(template)
        if template.shape != (self.ry, self.rx):
            raise ValueError(
                f"template shape {template.shape} does not match store "
                f"geometry ({self.ry}, {self.rx})"
            )
        self._templates.append(template.astype(np.float32))
        self._stack = None
        return len(self._templates) - 1

    def extend(self, templates) -> None:
        for t in templates:
            self.append(t)

    @property
    def values(self) -> np.ndarray:
        """All templates as one (count, ry, rx) float32 array."""
        if self._stack is None:
            if self._templates:
                self._stack = np.stack(self._templates)
            else:
                self._stack = np.empty((0, self.ry, self.rx), dtype=np.float32)
        return self._stack

    def copy(self) -> "TemplateStore":
        dup = TemplateStore(self.rx, self.ry, self.patch_size)
        dup._templates = list(self._templates)
        return dup

    def save(self, path: str | Path) -> None:
        """Write the versioned binary store file."""
        header = STORE_MAGIC + struct.pack(
            "<5I", STORE_VERSION, self.rx, self.ry, self.patch_size, len(self)
        )
        body = np.ascontiguousarray(self.values, dtype="<f4").tobytes()
        Path(path).write_bytes(header + body)

    @classmethod
    def load(cls, path: str | Path) -> "TemplateStore":
        raw = Path(path).read_bytes()
        if raw[:4] != STORE_MAGIC:
            raise ValueError(f"{path}: not a template store file")
        version, rx, ry, patch_size, count = struct.unpack("<5I", raw[4:24])
        if version != STORE_VERSION:
            raise ValueError(f"{path}: unsupported store version {version}")
        expected = 24 + count * rx * ry * 4
        if len(raw) != expected:
            raise ValueError(
                f"{path}: truncated store (expected {expected} bytes, got {len(raw)})"
            )
        values = np.frombuffer(raw, dtype="<f4", offset=24).reshape(count, ry, rx)
        store = cls(rx, ry, patch_size)
        store._templates = [np.ascontiguousarray(v) for v in values]
        return store


def sad_difference(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference between two equal-shape templates.

    Symmetric, non-negative, and zero exactly when the inputs are identical.
    Differences are taken in the inputs' floating precision (integer inputs
    are promoted to float64); the mean always accumulates in float64.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"template shapes differ: {a.shape} vs {b.shape}")
    if not (np.issubdtype(a.dtype, np.floating) and np.issubdtype(b.dtype, np.floating)):
        a = a.astype(np.float64)
        b = b.astype(np.float64)
    return float(np.abs(a - b).mean(dtype=np.float64))


def difference_vector(
    store: TemplateStore, query: np.ndarray, n_jobs: int = 1
) -> np.ndarray:
    """Differences of ``query`` against every stored template, in store order.

    ``scores[k]`` equals ``sad_difference(store[k], query32)`` exactly, where
    ``query32`` is the query at store precision; chunked (parallel) evaluation
    produces bit-identical output because every slot is written independently.
    An empty store yields an empty vector.
    """
    query = np.asarray(query)
    if query.shape != (store.ry, store.rx):
        raise ValueError(
            f"query shape {query.shape} does not match store geometry "
            f"({store.ry}, {store.rx})"
        )
    if len(store) == 0:
        return np.empty(0, dtype=np.float64)
    stack = store.values.reshape(len(store), -1)
    q = query.astype(np.float32).reshape(-1)

    def _chunk(lo: int, hi: int) -> np.ndarray:
        return np.abs(stack[lo:hi] - q).mean(axis=1, dtype=np.float64)

    if n_jobs <= 1 or len(store) < 2 * n_jobs:
        return _chunk(0, len(store))
    bounds = np.linspace(0, len(store), n_jobs + 1, dtype=int)
    out = np.empty(len(store), dtype=np.float64)
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        futures = [
            (lo, pool.submit(_chunk, lo, hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for lo, fut in futures:
            part = fut.result()
            out[lo : lo + len(part)] = part
    return out


def neighborhood_normalize(vec: np.ndarray, half_window: int) -> np.ndarray:
    """Standardize each entry against its +-``half_window`` neighborhood.

    Windows are clipped at the vector ends, statistics use the sample
    standard deviation (divisor ``window_size - 1``), and a window whose
    values are all equal maps its element to 0. Vectors shorter than 2
    elements are returned unchanged.
    """
    if half_window < 1:
        raise ValueError("half_window must be >= 1")
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError("difference vector must be one-dimensional")
    n = len(vec)
    if n < 2:
        return vec.copy()

    out = np.empty_like(vec)
    full = 2 * half_window + 1

    def _edge(k: int) -> float:
        lo = max(0, k - half_window)
        hi = min(n, k + half_window + 1)
        win = vec[lo:hi]
        if win.max() == win.min():
            return 0.0
        mean = win.mean()
        std = np.sqrt(((win - mean) ** 2).sum() / (len(win) - 1))
        return (vec[k] - mean) / std

    if n >= full:
        windows = np.lib.stride_tricks.sliding_window_view(vec, full)
        mean = windows.mean(axis=1)
        centered = windows - mean[:, None]
        std = np.sqrt((centered**2).sum(axis=1) / (full - 1))
        flat = windows.max(axis=1) == windows.min(axis=1)
        interior = slice(half_window, n - half_window)
        with np.errstate(invalid="ignore", divide="ignore"):
            z = (vec[interior] - mean) / std
        out[interior] = np.where(flat, 0.0, z)
        edge_ranges = list(range(half_window)) + list(range(n - half_window, n))
    else:
        edge_ranges = range(n)
    for k in edge_ranges:
        out[k] = _edge(k)
    return out


class DifferenceMatrix:
    """Sliding window of the ``window`` most recent normalized vectors.

    Columns are consecutive query frames, rows are template indices. Older
    (shorter) columns are padded at the tail with :data:`PAD` up to the length
    of the newest column.
    """

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._columns: list[np.ndarray] = []
        self._indices: list[int] = []
        self._array: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._columns)

    @property
    def is_full(self) -> bool:
        return len(self._columns) == self.window

    @property
    def query_indices(self) -> list[int]:
        return list(self._indices)

    @property
    def column_lengths(self) -> list[int]:
        return [len(c) for c in self._columns]

    @property
    def oldest_length(self) -> int:
        if not self._columns:
            raise ValueError("matrix is empty")
        return len(self._columns[0])

    def push(self, scores: np.ndarray, query_index: int) -> None:
        """Append the normalized vector of the next consecutive frame,
        evicting the oldest column once ``window`` are held."""
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ValueError("column must be one-dimensional")
        if self._indices:
            expected = self._indices[-1] + 1
            if query_index != expected:
                raise ValueError(
                    f"out-of-order column: expected frame {expected}, "
                    f"got {query_index}"
                )
            if len(scores) < len(self._columns[-1]):
                raise ValueError("columns may not shrink")
        self._columns.append(scores.copy())
        self._indices.append(query_index)
        if len(self._columns) > self.window:
            self._columns.pop(0)
            self._indices.pop(0)
        self._array = None

    def to_array(self) -> np.ndarray:
        """Dense (rows, columns) view; padded cells hold :data:`PAD`."""
        if self._array is None:
            if not self._columns:
                raise ValueError("matrix is empty")
            rows = len(self._columns[-1])
            arr = np.full((rows, len(self._columns)), PAD, dtype=np.float64)
            for j, col in enumerate(self._columns):
                arr[: len(col), j] = col
            self._array = arr
        return self._array
