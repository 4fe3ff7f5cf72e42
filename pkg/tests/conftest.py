import numpy as np
import pytest

from motionedit.motion import SMALL_LAYOUT, EditTriplet, FeatureLayout, MotionSequence


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_triplet(rng, F=12, Fp=None, layout=SMALL_LAYOUT, instruction="wave faster", mask=False, tid="t0"):
    Fp = F if Fp is None else Fp
    src = MotionSequence(rng.normal(size=(F, layout.D)), layout)
    tgt = MotionSequence(rng.normal(size=(Fp, layout.D)), layout)
    edit_mask = rng.random(Fp) < 0.3 if mask else None
    return EditTriplet(tid, src, tgt, instruction, edit_mask)


TINY_LAYOUT = FeatureLayout(1, 0, 2, 2)
