"""Instruction-guided motion editing with similarity-curve supervision."""

__version__ = "0.1.0"

from .diffusion import GuidanceConfig, NoiseSchedule, guided_sample, make_cosine_schedule
from .errors import MotionEditError
from .evaluation import fid_like, l2_distance, retrieval_metrics
from .model import ModelConfig, MotionDiffusionTransformer, build_bundle, load_bundle, save_bundle
from .motion import (
    DEFAULT_LAYOUT,
    SMALL_LAYOUT,
    DatasetManifest,
    EditTriplet,
    FeatureLayout,
    ManifestEntry,
    MotionSequence,
    load_manifest,
    load_triplet,
    save_manifest,
    save_triplet,
)
from .similarity import SimilarityConfig, SimilarityCurve, build_curve, filter_dataset, motion_snr
from .synth import SynthSpec, generate
from .text import HashedTextEncoder, TextFeatures
from .training import Trainer, TrainConfig

__all__ = [
    "DEFAULT_LAYOUT", "SMALL_LAYOUT", "DatasetManifest", "EditTriplet", "FeatureLayout",
    "GuidanceConfig", "HashedTextEncoder", "ManifestEntry", "ModelConfig", "MotionDiffusionTransformer",
    "MotionEditError", "MotionSequence", "NoiseSchedule", "SimilarityConfig", "SimilarityCurve",
    "SynthSpec", "TextFeatures", "TrainConfig", "Trainer", "build_bundle", "build_curve",
    "fid_like", "filter_dataset", "generate", "guided_sample", "l2_distance", "load_bundle",
    "load_manifest", "load_triplet", "make_cosine_schedule", "motion_snr", "retrieval_metrics",
    "save_bundle", "save_manifest", "save_triplet",
]
