"""Synthetic edit triplets with exact ground-truth edit masks.

Sources are sums of sinusoids per feature block. Each target copies its
source except on one contiguous window ``[a, b)`` where a single edit is
applied. The window sits in the early, middle or late part of the sequence,
and the instruction names both the edit kind and that coarse location.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError
from .motion import BLOCKS, SMALL_LAYOUT, DatasetManifest, EditTriplet, FeatureLayout, ManifestEntry, MotionSequence

EDIT_KINDS = ("amplitude", "speed", "freeze", "mirror", "phase")
LOCATIONS = ("early", "middle", "late")

TEMPLATES = {
    "amplitude": "make the movement bigger {loc}",
    "speed": "move faster {loc}",
    "freeze": "hold still {loc}",
    "mirror": "mirror the motion {loc}",
    "phase": "shift the timing {loc}",
}
LOCATION_PHRASES = {"early": "early on", "middle": "in the middle", "late": "near the end"}


@dataclass(frozen=True)
class SynthSpec:
    n_triplets: int = 100
    F: int = 32
    layout: FeatureLayout = SMALL_LAYOUT
    edit_kinds: tuple[str, ...] = EDIT_KINDS
    seed: int = 0
    magnitude: float = 1.0
    window_frac: float = 0.25
    jitter: int = 1
    frame_rate: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "edit_kinds", tuple(self.edit_kinds))
        if not self.edit_kinds:
            raise ValidationError("need at least one edit kind")
        unknown = set(self.edit_kinds) - set(EDIT_KINDS)
        if unknown:
            raise ValidationError(f"unknown edit kinds {sorted(unknown)}")
        if self.F < 8:
            raise ValidationError(f"F must be at least 8, got {self.F}")
        if self.n_triplets < 1:
            raise ValidationError("n_triplets must be positive")
        if not 0 < self.window_frac < 1:
            raise ValidationError("window_frac must lie in (0, 1)")
        if self.magnitude < 0:
            raise ValidationError("magnitude must be non-negative")


def base_motion(rng: np.random.Generator, F: int, layout: FeatureLayout) -> np.ndarray:
    """Per-block sinusoids: each block shares two frequencies, channels vary phase and gain."""
    t = np.arange(F) / F
    cols = []
    for block, size in zip(BLOCKS, layout.sizes):
        if size == 0:
            continue
        freqs = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0.0, 2 * np.pi, size=(2, size))
        gain = rng.uniform(0.3, 1.0, size=(2, size))
        offset = rng.normal(0.0, 0.2, size=size)
        x = offset + sum(gain[k] * np.sin(2 * np.pi * freqs[k] * t[:, None] + phase[k]) for k in range(2))
        cols.append(x)
    return np.concatenate(cols, axis=1)


def edit_window(rng: np.random.Generator, F: int, location: str, frac: float, jitter: int) -> tuple[int, int]:
    width = max(2, int(round(F * frac)))
    centre = {"early": F / 6, "middle": F / 2, "late": 5 * F / 6}[location]
    start = int(round(centre - width / 2)) + (int(rng.integers(-jitter, jitter + 1)) if jitter else 0)
    start = int(np.clip(start, 0, F - width))
    return start, start + width


def apply_edit(src: np.ndarray, kind: str, a: int, b: int, magnitude: float,
               layout: FeatureLayout) -> np.ndarray:
    """Return a copy of ``src`` with frames ``[a, b)`` edited; magnitude 0 is the identity."""
    tgt = src.copy()
    if magnitude == 0:
        return tgt
    F = src.shape[0]
    idx = np.arange(a, b)
    if kind == "amplitude":
        mean = src.mean(axis=0)
        tgt[a:b] = mean + (1.0 + magnitude) * (src[a:b] - mean)
    elif kind == "freeze":
        w = min(magnitude, 1.0)
        tgt[a:b] = src[a] + (1.0 - w) * (src[a:b] - src[a])
    elif kind == "speed":
        pos = np.clip(a + (1.0 + magnitude) * (idx - a), 0, F - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, F - 1)
        frac = (pos - lo)[:, None]
        tgt[a:b] = (1 - frac) * src[lo] + frac * src[hi]
    elif kind == "phase":
        shift = max(1, int(round(magnitude * F / 8)))
        tgt[a:b] = src[np.clip(idx + shift, 0, F - 1)]
    elif kind == "mirror":
        mean = src.mean(axis=0)
        cols = np.zeros(src.shape[1], dtype=bool)
        for block in ("rotation", "position"):
            try:
                sl = layout.block_slice(block)
            except ConfigurationError:
                continue
            cols[sl.start:sl.stop:2] = True
        w = min(magnitude, 1.0)
        tgt[a:b, cols] = src[a:b, cols] - 2.0 * w * (src[a:b, cols] - mean[cols])
    else:
        raise ValidationError(f"unknown edit kind {kind!r}")
    return tgt


def instruction_for(kind: str, location: str) -> str:
    return TEMPLATES[kind].format(loc=LOCATION_PHRASES[location])


def generate_one(spec: SynthSpec, index: int, seed_seq: np.random.SeedSequence) -> EditTriplet:
    rng = np.random.default_rng(seed_seq)
    src = base_motion(rng, spec.F, spec.layout)
    kind = spec.edit_kinds[int(rng.integers(len(spec.edit_kinds)))]
    location = LOCATIONS[int(rng.integers(len(LOCATIONS)))]
    a, b = edit_window(rng, spec.F, location, spec.window_frac, spec.jitter)
    tgt = apply_edit(src, kind, a, b, spec.magnitude, spec.layout)
    mask = np.zeros(spec.F, dtype=bool)
    if spec.magnitude > 0:
        mask[a:b] = True
    return EditTriplet(
        id=f"syn{spec.seed:04d}_{index:05d}",
        source=MotionSequence(src, spec.layout, spec.frame_rate),
        target=MotionSequence(tgt, spec.layout, spec.frame_rate),
        instruction=instruction_for(kind, location),
        edit_mask=mask,
    )


def generate(spec: SynthSpec, path_prefix: str = "triplets") -> tuple[list[EditTriplet], DatasetManifest]:
    """Build ``spec.n_triplets`` triplets and a manifest listing them.

    Each triplet draws from its own child seed, so generation order does
    not affect the result.
    """
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_triplets)
    triplets = [generate_one(spec, i, s) for i, s in enumerate(children)]
    entries = tuple(ManifestEntry(t.id, f"{path_prefix}/{t.id}.json") for t in triplets)
    return triplets, DatasetManifest(entries, "all")


def split_manifest(manifest: DatasetManifest, ratios: Sequence[float] = (0.8, 0.1, 0.1),
                   seed: int = 0) -> dict[str, DatasetManifest]:
    """Seeded disjoint train/val/test partition preserving entry order within each split."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(manifest)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_test = n - n_train - n_val
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    empty = [k for k, v in sizes.items() if v <= 0]
    if empty:
        raise ConfigurationError(f"split(s) {empty} would be empty for n={n} and ratios {tuple(ratios)}")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = {"train": perm[:n_train], "val": perm[n_train:n_train + n_val],
              "test": perm[n_train + n_val:]}
    return {name: DatasetManifest(tuple(manifest.entries[i] for i in sorted(idx)), name,
                                  None, manifest.config_hash)
            for name, idx in bounds.items()}
