"""Per-frame similarity curves between a source and an edited motion.

Pipeline: sliding-window raw similarity in rotation and location space,
weighted combination, min-max normalization, MotionSNR on the combined
curve, and quantization into ``K`` classes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from .errors import ConsistencyError, InputError, ValidationError
from .motion import DatasetManifest, EditTriplet, ManifestEntry, slice_block


def _euclidean(diff: np.ndarray) -> np.ndarray:
    return np.sqrt((diff * diff).sum(axis=-1))


def _sqeuclidean(diff: np.ndarray) -> np.ndarray:
    return (diff * diff).sum(axis=-1)


def _cityblock(diff: np.ndarray) -> np.ndarray:
    return np.abs(diff).sum(axis=-1)


def _chebyshev(diff: np.ndarray) -> np.ndarray:
    return np.abs(diff).max(axis=-1)


METRICS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "euclidean": _euclidean,
    "sqeuclidean": _sqeuclidean,
    "cityblock": _cityblock,
    "chebyshev": _chebyshev,
}


@dataclass(frozen=True)
class SimilarityConfig:
    window: int = 2
    w1: float = 0.5
    w2: float = 0.5
    K: int = 3
    kappa: int = 5
    snr_threshold: float = 2.0
    metric: str = "euclidean"

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 0:
            raise ValidationError(f"window must be a non-negative integer, got {self.window}")
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValidationError("weights must be non-negative with a positive sum")
        if self.K < 2:
            raise ValidationError(f"K must be at least 2, got {self.K}")
        if self.kappa < 1:
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        if not self.snr_threshold > 0:
            raise ValidationError("snr_threshold must be positive")
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}; choose from {sorted(METRICS)}")


@dataclass(frozen=True, eq=False)
class SimilarityCurve:
    raw_rotation: np.ndarray
    raw_location: np.ndarray
    combined: np.ndarray
    normalized: np.ndarray
    labels: np.ndarray
    snr: float

    @property
    def F(self) -> int:
        return len(self.combined)

    def to_record(self, triplet_id: str | None = None) -> dict:
        rec = {} if triplet_id is None else {"id": triplet_id}
        rec.update({
            "raw_rotation": self.raw_rotation.tolist(),
            "raw_location": self.raw_location.tolist(),
            "combined": self.combined.tolist(),
            "normalized": self.normalized.tolist(),
            "labels": self.labels.tolist(),
            "snr": "inf" if math.isinf(self.snr) else float(self.snr),
        })
        return rec


def raw_similarity(src_view, tgt_view, window: int, metric: str = "euclidean") -> np.ndarray:
    """Negated minimum distance from each source frame to a target window.

    For source frame ``i`` the candidate target frames are
    ``clip(i - W, 0, F'-1) .. clip(i + W, 0, F'-1)``; clamping the bounds keeps
    the window non-empty when ``F != F'``.

    Args:
        src_view: ``(F, d)`` source features.
        tgt_view: ``(F', d)`` target features.
        window: half-width ``W`` of the window in frames.
        metric: key of :data:`METRICS`.

    Returns:
        Length-``F`` vector of values ``<= 0``.
    """
    src = np.asarray(src_view, dtype=np.float64)
    tgt = np.asarray(tgt_view, dtype=np.float64)
    if src.ndim != 2 or tgt.ndim != 2 or src.shape[1] != tgt.shape[1]:
        raise InputError(f"views must be matrices with equal column count, got {src.shape}, {tgt.shape}")
    if int(window) != window or window < 0:
        raise InputError(f"window must be a non-negative integer, got {window}")
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}")
    n_src, n_tgt = src.shape[0], tgt.shape[0]
    if n_tgt == 0:
        raise InputError("target has no frames; every window is empty")
    dist = METRICS[metric]
    idx = np.arange(n_src)
    best = np.full(n_src, np.inf)
    for offset in range(-window, window + 1):
        j = np.clip(idx + offset, 0, n_tgt - 1)
        best = np.minimum(best, dist(src - tgt[j]))
    return -best


def combine(raw_rot, raw_loc, w1: float, w2: float) -> np.ndarray:
    raw_rot = np.asarray(raw_rot, dtype=np.float64)
    raw_loc = np.asarray(raw_loc, dtype=np.float64)
    if raw_rot.shape != raw_loc.shape:
        raise InputError(f"length mismatch: {raw_rot.shape} vs {raw_loc.shape}")
    if w1 < 0 or w2 < 0 or w1 + w2 <= 0:
        raise InputError(f"weights must be non-negative with positive sum, got w1={w1}, w2={w2}")
    return w1 * raw_rot + w2 * raw_loc


def min_max_normalize(combined) -> np.ndarray:
    """Rescale to ``[0, 1]``; a constant curve maps to all ones."""
    s = np.asarray(combined, dtype=np.float64)
    if s.size < 1:
        raise InputError("cannot normalize an empty curve")
    if not np.all(np.isfinite(s)):
        raise InputError("curve contains non-finite values")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.ones_like(s)
    return np.clip((s - lo) / (hi - lo), 0.0, 1.0)


def motion_snr(combined, kappa: int = 5) -> float:
    """Ratio of the ``kappa`` largest to the ``kappa`` smallest dissimilarities.

    Dissimilarity is ``-combined``. Ties are broken by value, then frame index.
    ``kappa`` is reduced to ``F // 2`` if the two sets would overlap.
    """
    if kappa < 1:
        raise InputError(f"kappa must be positive, got {kappa}")
    d = -np.asarray(combined, dtype=np.float64)
    if d.size < 1:
        raise InputError("cannot compute MotionSNR of an empty curve")
    n = d.size
    if 2 * kappa > n:
        warnings.warn(f"kappa={kappa} too large for {n} frames; using {n // 2}", stacklevel=2)
        kappa = n // 2
    if kappa == 0:
        return 1.0
    order = np.argsort(d, kind="stable")
    bottom = float(d[order[:kappa]].sum())
    top = float(d[order[-kappa:]].sum())
    if bottom == 0.0:
        return math.inf if top > 0.0 else 1.0
    return top / bottom


def quantize(normalized, K: int = 3) -> np.ndarray:
    """Class index of each value for ``K`` equal-width, lower-closed bins.

    The bin edges are ``(k + 1) / K`` for ``k = 0 .. K-2``; the last bin is
    closed at 1.
    """
    v = np.asarray(normalized, dtype=np.float64)
    if K < 2:
        raise InputError(f"K must be at least 2, got {K}")
    if np.any(~np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
        raise InputError("quantize expects values in [0, 1]")
    edges = np.arange(1, K, dtype=np.float64) / K
    return np.searchsorted(edges, v, side="right").astype(np.int64)


def build_curve(triplet: EditTriplet, config: SimilarityConfig = SimilarityConfig()) -> SimilarityCurve:
    rot = raw_similarity(slice_block(triplet.source, "rotation"),
                         slice_block(triplet.target, "rotation"), config.window, config.metric)
    loc = raw_similarity(slice_block(triplet.source, "position"),
                         slice_block(triplet.target, "position"), config.window, config.metric)
    combined = combine(rot, loc, config.w1, config.w2)
    normalized = min_max_normalize(combined)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        snr = motion_snr(combined, config.kappa)
    return SimilarityCurve(rot, loc, combined, normalized, quantize(normalized, config.K), snr)


CurveLike = Union[SimilarityCurve, float]


def filter_dataset(manifest: DatasetManifest, curves: Mapping[str, CurveLike],
                   threshold: float) -> DatasetManifest:
    """Mark entries whose MotionSNR is below ``threshold`` as excluded.

    ``curves`` maps ids to curves (or directly to SNR values).
    """
    entries = []
    for e in manifest.entries:
        if e.id not in curves:
            raise ConsistencyError(f"no similarity curve for manifest id {e.id!r}")
        c = curves[e.id]
        snr = float(c.snr if isinstance(c, SimilarityCurve) else c)
        entries.append(ManifestEntry(e.id, e.path, snr, bool(snr >= threshold)))
    return DatasetManifest(tuple(entries), manifest.split, float(threshold), manifest.config_hash)
