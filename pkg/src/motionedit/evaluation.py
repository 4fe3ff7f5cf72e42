"""Retrieval and fidelity metrics for edited motions.

Motions are compared through a pluggable featurizer. The default
:func:`featurize` is a statistical summary standing in for a learned motion
encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, NumericalError
from .motion import BLOCKS, MotionSequence, slice_block

Featurizer = Callable[[MotionSequence], np.ndarray]


def featurize(motion: MotionSequence) -> np.ndarray:
    """Per-block channel means, standard deviations and mean absolute deltas."""
    parts = []
    for block, size in zip(BLOCKS, motion.layout.sizes):
        if size == 0:
            continue
        x = slice_block(motion, block)
        delta = np.abs(np.diff(x, axis=0)).mean(axis=0) if motion.F > 1 else np.zeros(size)
        parts += [x.mean(axis=0), x.std(axis=0), delta]
    return np.concatenate(parts)


@dataclass
class RetrievalReport:
    r_at: dict[int, float]
    avg_rank: float
    batch_size: int
    scope: str
    n_queries: int
    ranks: list[int] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"r_at": {str(k): v for k, v in self.r_at.items()}, "avg_rank": self.avg_rank,
                "batch_size": self.batch_size, "scope": self.scope, "n_queries": self.n_queries}


def _unit_rows(feats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return np.divide(feats, norms, out=np.zeros_like(feats), where=norms > 0)


def rank_of_true(sim_row: np.ndarray, true_idx: int, tiebreak: np.ndarray) -> int:
    """1-based rank of ``true_idx`` by descending similarity.

    Candidates with equal similarity are ordered by their position in the
    shuffled ``tiebreak`` permutation.
    """
    s = sim_row[true_idx]
    better = int((sim_row > s).sum())
    pos = np.empty_like(tiebreak)
    pos[tiebreak] = np.arange(len(tiebreak))
    tied_ahead = int(((sim_row == s) & (pos < pos[true_idx])).sum())
    return 1 + better + tied_ahead


def retrieval_metrics(generated: Sequence[MotionSequence], targets: Sequence[MotionSequence],
                      scope: str = "batch", batch_size: int = 32,
                      featurizer: Featurizer = featurize, seed: int = 0,
                      ks: Sequence[int] = (1, 2, 3)) -> RetrievalReport:
    """Rank each generated motion's own target among a candidate set.

    With ``scope="batch"`` the items are shuffled with ``seed`` and split
    into batches of ``batch_size``; items left over after the last full batch
    are not scored. With ``scope="full_set"`` all targets are candidates.
    """
    n = len(generated)
    if n == 0 or len(targets) != n:
        raise InputError("need equal, non-zero numbers of generated and target motions")
    if scope not in ("batch", "full_set"):
        raise InputError(f"scope must be 'batch' or 'full_set', got {scope!r}")
    g = _unit_rows(np.stack([np.asarray(featurizer(m), dtype=np.float64) for m in generated]))
    t = _unit_rows(np.stack([np.asarray(featurizer(m), dtype=np.float64) for m in targets]))
    rng = np.random.default_rng(seed)
    if scope == "batch":
        if batch_size < 1 or batch_size > n:
            raise InputError(f"batch_size must lie in [1, {n}], got {batch_size}")
        perm = rng.permutation(n)
        groups = [perm[i: i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]
    else:
        groups = [np.arange(n)]
        batch_size = n
    ranks = []
    for group in groups:
        sim = g[group] @ t[group].T
        for q in range(len(group)):
            ranks.append(rank_of_true(sim[q], q, rng.permutation(len(group))))
    ranks_arr = np.array(ranks)
    r_at = {k: 100.0 * float((ranks_arr <= k).mean()) for k in ks}
    return RetrievalReport(r_at, float(ranks_arr.mean()), batch_size, scope, len(ranks), ranks)


def _common_length(a: MotionSequence, b: MotionSequence, truncate: bool) -> int:
    if a.F == b.F:
        return a.F
    if not truncate:
        raise InputError(f"lengths differ ({a.F} vs {b.F}) and truncation is disabled")
    return min(a.F, b.F)


def l2_distance(generated: MotionSequence, target: MotionSequence, truncate: bool = True,
                frames: Optional[np.ndarray] = None) -> float:
    """Mean per-frame Euclidean distance over the position block.

    Args:
        truncate: compare the common prefix when lengths differ.
        frames: optional boolean selector over the compared frames.
    """
    if generated.layout != target.layout:
        raise InputError("motions have different layouts")
    n = _common_length(generated, target, truncate)
    diff = slice_block(generated, "position")[:n] - slice_block(target, "position")[:n]
    per_frame = np.sqrt((diff * diff).sum(axis=1))
    if frames is not None:
        frames = np.asarray(frames, dtype=bool)[:n]
        if not frames.any():
            raise InputError("frame selector is empty")
        per_frame = per_frame[frames]
    return float(per_frame.mean())


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray, eps: float = 1e-6) -> float:
    """Fréchet distance between Gaussians fitted to two feature sets."""
    a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if a.shape[0] == 1 and np.asarray(feats_a).ndim == 1:
        a, b = a.T, b.T
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InputError("each set needs at least two items")
    if a.shape[1] != b.shape[1]:
        raise InputError("feature widths differ")
    mu_a, mu_b = a.mean(0), b.mean(0)
    eye = eps * np.eye(a.shape[1])
    cov_a = np.atleast_2d(np.cov(a, rowvar=False)) + eye
    cov_b = np.atleast_2d(np.cov(b, rowvar=False)) + eye
    root_a = _sqrtm_psd(cov_a)
    inner = np.linalg.eigvalsh(root_a @ cov_b @ root_a)
    if not np.all(np.isfinite(inner)) or inner.min() < -1e-8 * max(1.0, abs(inner).max()):
        raise NumericalError("covariance product is not positive semi-definite")
    tr_sqrt = np.sqrt(np.clip(inner, 0.0, None)).sum()
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2 * tr_sqrt)
    if not np.isfinite(value):
        raise NumericalError("Fréchet distance is not finite")
    return max(value, 0.0)


def fid_like(generated_set: Sequence[MotionSequence], reference_set: Sequence[MotionSequence],
             featurizer: Featurizer = featurize, eps: float = 1e-6) -> float:
    fa = np.stack([featurizer(m) for m in generated_set])
    fb = np.stack([featurizer(m) for m in reference_set])
    return frechet_distance(fa, fb, eps)
