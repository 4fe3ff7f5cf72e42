"""Motion data model, feature layout and on-disk formats.

A motion is an ``F x D`` matrix of per-frame pose features. The ``D`` columns
are split into four contiguous blocks, always in the order velocity,
orientation, rotation, position.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import ConfigurationError, FormatError, LayoutError, ValidationError

PathLike = Union[str, os.PathLike]

BLOCKS = ("velocity", "orientation", "rotation", "position")
SPLITS = ("train", "val", "test", "all")


@dataclass(frozen=True)
class FeatureLayout:
    velocity_dims: int = 3
    orientation_dims: int = 6
    rotation_dims: int = 126
    position_dims: int = 72

    def __post_init__(self):
        sizes = self.sizes
        if any(int(s) != s or s < 0 for s in sizes):
            raise ValidationError(f"block sizes must be non-negative integers, got {sizes}")
        if sum(sizes) < 1:
            raise ValidationError("layout must have at least one feature dimension")

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.velocity_dims, self.orientation_dims, self.rotation_dims, self.position_dims)

    @property
    def D(self) -> int:
        return sum(self.sizes)

    def offsets(self) -> dict[str, tuple[int, int]]:
        """Half-open ``[start, stop)`` column range of every block."""
        out, start = {}, 0
        for name, size in zip(BLOCKS, self.sizes):
            out[name] = (start, start + size)
            start += size
        return out

    def block_slice(self, block: str) -> slice:
        if block not in BLOCKS:
            raise ConfigurationError(f"unknown block {block!r}; expected one of {BLOCKS}")
        start, stop = self.offsets()[block]
        if stop == start:
            raise ConfigurationError(f"block {block!r} has zero size in layout {self.sizes}")
        return slice(start, stop)

    def to_dict(self) -> dict:
        return {"v": self.velocity_dims, "o": self.orientation_dims,
                "r": self.rotation_dims, "p": self.position_dims}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        try:
            return cls(int(d["v"]), int(d["o"]), int(d["r"]), int(d["p"]))
        except KeyError as exc:
            raise FormatError(f"layout is missing field {exc.args[0]!r}") from None


DEFAULT_LAYOUT = FeatureLayout(3, 6, 126, 72)
# Reduced layout for desk-scale training runs.
SMALL_LAYOUT = FeatureLayout(3, 0, 6, 6)


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """``F x D`` frame matrix tagged with its layout and frame rate."""

    frames: np.ndarray
    layout: FeatureLayout = DEFAULT_LAYOUT
    frame_rate: float = 20.0

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2:
            raise LayoutError(f"frames must be a 2-D matrix, got shape {frames.shape}")
        if frames.shape[0] < 1:
            raise ValidationError("a motion needs at least one frame")
        if frames.shape[1] != self.layout.D:
            raise LayoutError(
                f"frames have {frames.shape[1]} features but layout has D={self.layout.D}")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("motion frames contain non-finite values")
        if not (self.frame_rate > 0 and math.isfinite(self.frame_rate)):
            raise ValidationError(f"frame_rate must be positive, got {self.frame_rate}")
        object.__setattr__(self, "frames", _frozen_array(frames))

    @property
    def F(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def block(self, name: str) -> np.ndarray:
        return slice_block(self, name)

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (self.layout == other.layout and self.frame_rate == other.frame_rate
                and np.array_equal(self.frames, other.frames))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EditTriplet:
    id: str
    source: MotionSequence
    target: MotionSequence
    instruction: str
    edit_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.source.layout != self.target.layout:
            raise LayoutError("source and target layouts differ")
        if not isinstance(self.instruction, str):
            raise ValidationError("instruction must be a string")
        if self.edit_mask is not None:
            mask = np.asarray(self.edit_mask)
            if mask.ndim != 1 or mask.shape[0] != self.target.F:
                raise ValidationError(
                    f"edit_mask length {mask.shape} does not match target F'={self.target.F}")
            object.__setattr__(self, "edit_mask", _frozen_array(mask, dtype=bool))

    @property
    def layout(self) -> FeatureLayout:
        return self.source.layout

    def __eq__(self, other):
        if not isinstance(other, EditTriplet):
            return NotImplemented
        if (self.edit_mask is None) != (other.edit_mask is None):
            return False
        masks_equal = self.edit_mask is None or np.array_equal(self.edit_mask, other.edit_mask)
        return (self.id == other.id and self.instruction == other.instruction
                and self.source == other.source and self.target == other.target and masks_equal)

    __hash__ = None


def slice_block(seq: MotionSequence, block: str) -> np.ndarray:
    """Columns of one feature block, as a view into ``seq.frames``."""
    return seq.frames[:, seq.layout.block_slice(block)]


# -- triplet files ----------------------------------------------------------

def triplet_to_dict(triplet: EditTriplet) -> dict:
    for name, seq in (("source", triplet.source), ("target", triplet.target)):
        if not np.all(np.isfinite(seq.frames)):
            raise ValidationError(f"{name} contains non-finite values")
    if triplet.source.frame_rate != triplet.target.frame_rate:
        raise ValidationError("source and target frame rates differ")
    doc = {
        "id": triplet.id,
        "instruction": triplet.instruction,
        "frame_rate": float(triplet.source.frame_rate),
        "layout": triplet.layout.to_dict(),
        "source": triplet.source.frames.tolist(),
        "target": triplet.target.frames.tolist(),
    }
    if triplet.edit_mask is not None:
        doc["edit_mask"] = [int(b) for b in triplet.edit_mask]
    return doc


def save_triplet(triplet: EditTriplet, path: PathLike) -> None:
    """Write a triplet as one JSON document.

    Floats are written with ``repr`` precision so a load reproduces every
    value bit for bit.
    """
    doc = triplet_to_dict(triplet)
    text = json.dumps(doc, separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _require(doc: dict, key: str):
    if key not in doc:
        raise FormatError(f"triplet file is missing field {key!r}")
    return doc[key]


def _frame_matrix(rows, name: str, layout: FeatureLayout) -> np.ndarray:
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise FormatError(f"field {name!r} must be a non-empty list of frame rows")
    for k, row in enumerate(rows):
        if len(row) != layout.D:
            raise LayoutError(
                f"{name} frame {k} has {len(row)} entries but layout has D={layout.D}")
    try:
        return np.array(rows, dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError(f"field {name!r} contains non-numeric entries") from None


def triplet_from_dict(doc: dict, layout: Optional[FeatureLayout] = None) -> EditTriplet:
    if not isinstance(doc, dict):
        raise FormatError("triplet document must be a JSON object")
    tid = _require(doc, "id")
    instruction = _require(doc, "instruction")
    if not isinstance(instruction, str):
        raise FormatError("field 'instruction' must be a string")
    frame_rate = float(_require(doc, "frame_rate"))
    file_layout = FeatureLayout.from_dict(_require(doc, "layout"))
    if layout is not None and file_layout != layout:
        raise LayoutError(f"file layout {file_layout.sizes} differs from expected {layout.sizes}")
    layout = file_layout
    src = _frame_matrix(_require(doc, "source"), "source", layout)
    tgt = _frame_matrix(_require(doc, "target"), "target", layout)
    mask = doc.get("edit_mask")
    if mask is not None:
        if not isinstance(mask, list) or any(v not in (0, 1) for v in mask):
            raise FormatError("field 'edit_mask' must be a list of 0/1 values")
        mask = np.array(mask, dtype=bool)
    return EditTriplet(
        id=str(tid),
        source=MotionSequence(src, layout, frame_rate),
        target=MotionSequence(tgt, layout, frame_rate),
        instruction=instruction,
        edit_mask=mask,
    )


def load_triplet(path: PathLike, layout: Optional[FeatureLayout] = DEFAULT_LAYOUT) -> EditTriplet:
    """Read and validate a triplet file.

    Pass ``layout=None`` to accept whatever layout the file declares.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc.msg})") from None
    return triplet_from_dict(doc, layout)


def save_motion(seq: MotionSequence, path: PathLike, extra: Optional[dict] = None) -> None:
    doc = {"frame_rate": float(seq.frame_rate), "layout": seq.layout.to_dict(),
           "frames": seq.frames.tolist()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n",
                          encoding="utf-8")


def load_motion(path: PathLike) -> MotionSequence:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    layout = FeatureLayout.from_dict(_require(doc, "layout"))
    frames = _frame_matrix(_require(doc, "frames"), "frames", layout)
    return MotionSequence(frames, layout, float(doc.get("frame_rate", 20.0)))


# -- manifests --------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    snr: Optional[float] = None
    included: bool = True


def _snr_to_json(snr: Optional[float]):
    if snr is None:
        return None
    return "inf" if math.isinf(snr) else float(snr)


def _snr_from_json(value) -> Optional[float]:
    if value is None:
        return None
    if value == "inf":
        return math.inf
    return float(value)


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered list of triplet entries for one split.

    ``snr_threshold`` is ``None`` until the manifest has been filtered.
    """

    entries: tuple[ManifestEntry, ...] = ()
    split: str = "all"
    snr_threshold: Optional[float] = None
    config_hash: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("manifest ids must be unique")
        if self.snr_threshold is not None:
            for e in self.entries:
                if e.snr is None:
                    raise ValidationError(f"entry {e.id!r} has no SNR but manifest is filtered")
                if e.included != (e.snr >= self.snr_threshold):
                    raise ValidationError(
                        f"entry {e.id!r} included flag disagrees with threshold {self.snr_threshold}")

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def included_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.included]

    def __len__(self):
        return len(self.entries)


def save_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    """JSON-lines: a header line, then one line per entry."""
    header = {"split": manifest.split, "snr_threshold": manifest.snr_threshold}
    if manifest.config_hash is not None:
        header["config_hash"] = manifest.config_hash
    lines = [json.dumps(header, sort_keys=True)]
    for e in manifest.entries:
        lines.append(json.dumps({"id": e.id, "path": e.path, "snr": _snr_to_json(e.snr),
                                 "included": bool(e.included)}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: PathLike) -> DatasetManifest:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON-lines ({exc.msg})") from None
    if "split" not in header:
        raise FormatError(f"{path}: header is missing field 'split'")
    entries = []
    for row in rows:
        for key in ("id", "path"):
            if key not in row:
                raise FormatError(f"{path}: manifest entry is missing field {key!r}")
        entries.append(ManifestEntry(str(row["id"]), str(row["path"]),
                                     _snr_from_json(row.get("snr")), bool(row.get("included", True))))
    return DatasetManifest(tuple(entries), header["split"], header.get("snr_threshold"),
                           header.get("config_hash"))


def resolve_entry_path(manifest_path: PathLike, entry: ManifestEntry) -> Path:
    """Entry paths are relative to the manifest's directory."""
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def load_manifest_triplets(manifest_path: PathLike, included_only: bool = True,
                           layout: Optional[FeatureLayout] = None) -> list[EditTriplet]:
    manifest = load_manifest(manifest_path)
    entries: Iterable[ManifestEntry] = (
        manifest.included_entries() if included_only else manifest.entries)
    return [load_triplet(resolve_entry_path(manifest_path, e), layout) for e in entries]
