import numpy as np
import pytest

from motionedit.errors import ConfigurationError, ValidationError
from motionedit.motion import DEFAULT_LAYOUT, SMALL_LAYOUT, save_triplet
from motionedit.similarity import SimilarityConfig, build_curve
from motionedit.synth import EDIT_KINDS, SynthSpec, apply_edit, base_motion, generate, split_manifest


def test_freeze_window():
    src = base_motion(np.random.default_rng(0), 32, SMALL_LAYOUT)
    tgt = apply_edit(src, "freeze", 10, 20, 1.0, SMALL_LAYOUT)
    assert np.all(tgt[10:20] == tgt[10])
    np.testing.assert_array_equal(tgt[:10], src[:10])
    np.testing.assert_array_equal(tgt[20:], src[20:])
    triplets, _ = generate(SynthSpec(n_triplets=30, edit_kinds=("freeze",)))
    for t in triplets:
        idx = np.flatnonzero(t.edit_mask)
        assert np.all(t.target.frames[idx] == t.target.frames[idx[0]])
        changed = np.any(t.target.frames != t.source.frames, axis=1)
        assert not np.any(changed & ~t.edit_mask)


def test_zero_magnitude_is_identity():
    triplets, _ = generate(SynthSpec(n_triplets=10, magnitude=0.0))
    for t in triplets:
        assert np.array_equal(t.target.frames, t.source.frames)
        assert not t.edit_mask.any()


def test_lowest_labels_fall_inside_dilated_mask():
    cfg = SimilarityConfig()
    triplets, _ = generate(SynthSpec(n_triplets=200, seed=3))
    for t in triplets:
        c = build_curve(t, cfg)
        idx = np.flatnonzero(t.edit_mask)
        dilated = np.zeros(t.source.F, dtype=bool)
        dilated[max(0, idx[0] - cfg.window): idx[-1] + 1 + cfg.window] = True
        low = c.labels == c.labels.min()
        assert not np.any(low & ~dilated), t.id


@pytest.mark.parametrize("kind", EDIT_KINDS)
def test_untouched_frames_and_high_snr(kind):
    triplets, _ = generate(SynthSpec(n_triplets=40, edit_kinds=(kind,), seed=5))
    for t in triplets:
        dist = np.linalg.norm(t.source.frames - t.target.frames, axis=1)
        assert np.all(dist[~t.edit_mask] == 0.0)
        assert build_curve(t).snr > 5


def test_full_layout_supported():
    triplets, _ = generate(SynthSpec(n_triplets=2, layout=DEFAULT_LAYOUT, F=16))
    assert triplets[0].source.frames.shape == (16, 207)


def test_determinism_byte_identical(tmp_path):
    a, _ = generate(SynthSpec(n_triplets=5, seed=9))
    b, _ = generate(SynthSpec(n_triplets=5, seed=9))
    for x, y in zip(a, b):
        save_triplet(x, tmp_path / "x.json")
        save_triplet(y, tmp_path / "y.json")
        assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()


def test_split_manifest():
    _, m = generate(SynthSpec(n_triplets=100))
    s = split_manifest(m, (0.8, 0.1, 0.1), seed=4)
    assert [len(s[k]) for k in ("train", "val", "test")] == [80, 10, 10]
    ids = [set(s[k].ids) for k in ("train", "val", "test")]
    assert ids[0] | ids[1] | ids[2] == set(m.ids)
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert split_manifest(m, (0.8, 0.1, 0.1), seed=4) == s
    with pytest.raises(ConfigurationError):
        split_manifest(m, (1.0, 0.0, 0.0))
    with pytest.raises(ConfigurationError):
        split_manifest(m, (0.5, 0.2, 0.2))


def test_spec_validation():
    with pytest.raises(ValidationError):
        SynthSpec(F=7)
    with pytest.raises(ValidationError):
        SynthSpec(edit_kinds=())
