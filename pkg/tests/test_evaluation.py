import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from motionedit.errors import InputError
from motionedit.evaluation import featurize, fid_like, frechet_distance, l2_distance, retrieval_metrics
from motionedit.motion import SMALL_LAYOUT, FeatureLayout, MotionSequence


def motions(rng, n, F=10, layout=SMALL_LAYOUT):
    return [MotionSequence(rng.normal(size=(F, layout.D)) + i, layout) for i in range(n)]


def test_featurize_deterministic_and_ramp(rng):
    m = motions(rng, 1)[0]
    assert np.array_equal(featurize(m), featurize(m))
    layout = FeatureLayout(0, 0, 0, 2)
    ramp = np.stack([np.arange(6.0), 2 * np.arange(6.0)], axis=1)
    f = featurize(MotionSequence(ramp, layout))
    r = featurize(MotionSequence(ramp[::-1].copy(), layout))
    np.testing.assert_array_equal(f, r)
    np.testing.assert_array_equal(f[4:], [1.0, 2.0])


def test_self_retrieval_is_perfect(rng):
    ms = motions(rng, 64)
    for scope in ("batch", "full_set"):
        rep = retrieval_metrics(ms, ms, scope=scope, batch_size=32)
        assert rep.r_at[1] == 100.0 and rep.avg_rank == 1.0


def test_constant_featurizer_uniform_ranks():
    ms = [MotionSequence(np.zeros((3, 15)), SMALL_LAYOUT)] * 10
    avgs = [retrieval_metrics(ms, ms, "full_set", featurizer=lambda m: np.ones(4), seed=s).avg_rank
            for s in range(1000)]
    assert abs(np.mean(avgs) - 5.5) < 0.1


def test_hand_built_four_items():
    feats = {0: [1.0, 0.0], 1: [0.0, 1.0], 2: [1.0, 1.0], 3: [1.0, -1.0]}
    gen_feats = {0: [1.0, 0.9], 1: [0.0, 1.0], 2: [1.0, 0.1], 3: [1.0, -1.0]}
    mk = lambda i: MotionSequence(np.full((2, 15), float(i)), SMALL_LAYOUT)
    gens, tgts = [mk(i) for i in range(4)], [mk(10 + i) for i in range(4)]
    lookup = {**{10 + k: np.array(v) for k, v in feats.items()}, **{k: np.array(v) for k, v in gen_feats.items()}}
    fz = lambda m: lookup[int(m.frames[0, 0])]
    rep = retrieval_metrics(gens, tgts, "full_set", featurizer=fz)

    def unit(v):
        v = np.array(v)
        return v / np.linalg.norm(v)
    expected = []
    for q in range(4):
        sims = [unit(gen_feats[q]) @ unit(feats[c]) for c in range(4)]
        expected.append(1 + sum(s > sims[q] for s in sims))
    assert rep.ranks == expected == [2, 1, 2, 1]
    assert rep.r_at == {1: 50.0, 2: 100.0, 3: 100.0}
    assert rep.avg_rank == 1.5


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 40), st.integers(0, 1000), st.floats(0.01, 100))
def test_retrieval_properties(n, seed, scale):
    r = np.random.default_rng(seed)
    gens, tgts = motions(r, n), motions(r, n)
    rep = retrieval_metrics(gens, tgts, "batch", batch_size=min(4, n), seed=seed)
    assert rep.r_at[1] <= rep.r_at[2] <= rep.r_at[3]
    assert 1 <= rep.avg_rank <= rep.batch_size
    scaled = retrieval_metrics(gens, tgts, "batch", batch_size=min(4, n), seed=seed,
                               featurizer=lambda m: featurize(m) * scale)
    assert scaled.ranks == rep.ranks


def test_retrieval_errors(rng):
    ms = motions(rng, 3)
    with pytest.raises(InputError):
        retrieval_metrics([], [])
    with pytest.raises(InputError):
        retrieval_metrics(ms, ms, "batch", batch_size=4)


def test_l2_distance(rng):
    m = motions(rng, 1)[0]
    assert l2_distance(m, m) == 0.0
    shifted = m.frames.copy()
    shifted[:, SMALL_LAYOUT.block_slice("position")] += 0.1
    assert l2_distance(m, MotionSequence(shifted, SMALL_LAYOUT)) == pytest.approx(0.1 * np.sqrt(6), rel=1e-12)
    a, b = motions(rng, 2)
    pa, pb = a.block("position"), b.block("position")
    loop = np.mean([np.sqrt(sum((pa[i, j] - pb[i, j]) ** 2 for j in range(6))) for i in range(a.F)])
    assert abs(l2_distance(a, b) - loop) <= 1e-7
    short = MotionSequence(b.frames[:4], SMALL_LAYOUT)
    with pytest.raises(InputError):
        l2_distance(a, short, truncate=False)
    assert l2_distance(a, short) == pytest.approx(l2_distance(MotionSequence(a.frames[:4], SMALL_LAYOUT), short))


def test_l2_triangle_inequality():
    r = np.random.default_rng(2)
    for _ in range(50):
        a, b, c = motions(r, 3)
        assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-12


def scipy_frechet(a, b, eps=1e-6):
    ca = np.cov(a, rowvar=False) + eps * np.eye(a.shape[1])
    cb = np.cov(b, rowvar=False) + eps * np.eye(a.shape[1])
    covmean = scipy.linalg.sqrtm(ca @ cb).real
    return float(((a.mean(0) - b.mean(0)) ** 2).sum() + np.trace(ca + cb - 2 * covmean))


def test_frechet_matches_scipy_oracle(rng):
    for _ in range(20):
        a, b = rng.normal(size=(50, 5)), rng.normal(size=(60, 5)) * 1.5 + 0.3
        assert frechet_distance(a, b) == pytest.approx(scipy_frechet(a, b), rel=1e-6)


def test_frechet_properties(rng):
    ms = motions(rng, 30)
    assert abs(fid_like(ms, ms)) <= 1e-6
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(40, 3)) + 2
    assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-6
    x = np.random.default_rng(0).normal(size=5000)
    y = np.random.default_rng(1).normal(size=5000) + 1.5
    assert frechet_distance(x, y) == pytest.approx(1.5 ** 2, rel=0.1)
    with pytest.raises(InputError):
        frechet_distance(a[:1], b)
