"""Where does an edit happen? Similarity curves on synthetic triplets.

Each synthetic triplet edits one contiguous window of its source motion.
The similarity curve should single out that window: frames far from it
keep the top class, frames inside it fall to the bottom class, and the
MotionSNR of a clean edit is infinite. A noisy pair, where every frame
changes a little, gets a low MotionSNR and is filtered out.

Run:  python3 demos/similarity_curves.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from motionedit.motion import SMALL_LAYOUT, DatasetManifest, EditTriplet, ManifestEntry, MotionSequence
from motionedit.plotting import plot_curve
from motionedit.similarity import SimilarityConfig, build_curve, filter_dataset
from motionedit.synth import SynthSpec, generate

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
cfg = SimilarityConfig()

triplets, manifest = generate(SynthSpec(n_triplets=5, F=32, seed=1))
for t in triplets:
    curve = build_curve(t, cfg)
    mask = "".join("#" if m else "." for m in t.edit_mask)
    labels = "".join(str(v) for v in curve.labels)
    print(f"{t.instruction:<36} snr={curve.snr}")
    print(f"  edit mask {mask}")
    print(f"  labels    {labels}")
    plot_curve(curve, out / f"{t.id}.png", cfg.K, title=t.instruction, edit_mask=t.edit_mask)

# A pair where every frame moves: nothing stands out, so the SNR is low.
rng = np.random.default_rng(0)
src = triplets[0].source.frames
noisy = EditTriplet("noisy", triplets[0].source,
                    MotionSequence(src + 0.3 * rng.normal(size=src.shape), SMALL_LAYOUT), "jitter everywhere")
curves = {t.id: build_curve(t, cfg) for t in [*triplets, noisy]}
print(f"\nnoisy pair snr={curves['noisy'].snr:.2f}")

full = DatasetManifest(manifest.entries + (ManifestEntry("noisy", "noisy.json"),))
kept = filter_dataset(full, curves, cfg.snr_threshold)
print("kept after filtering:", [e.id for e in kept.included_entries()])
print(f"plots written to {out}/")
