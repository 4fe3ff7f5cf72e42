import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from motionedit.text import HashedTextEncoder, TextFeatures, encode

WORDS = ["raise", "lower", "the", "left", "right", "arm", "leg", "slowly", "quickly", "jump", "turn", "walk"]


def test_encode_deterministic():
    a, b = encode("wave the right hand"), encode("wave the right hand")
    assert a.tokens.tobytes() == b.tokens.tobytes()
    assert a.pooled.tobytes() == b.pooled.tobytes()


def test_empty_instruction_is_single_null_token():
    enc = HashedTextEncoder()
    f = enc.encode("")
    assert f.token_count == 1
    np.testing.assert_array_equal(f.pooled, f.tokens[0])
    assert f.padding_mask.sum() == enc.max_tokens - 1
    assert not np.array_equal(f.tokens[0], enc.encode("the").tokens[0])


def test_one_word_change_changes_tokens():
    enc = HashedTextEncoder()
    for i, w in enumerate(WORDS):
        for v in WORDS[i + 1:]:
            a = enc.encode(f"please {w} now").tokens
            b = enc.encode(f"please {v} now").tokens
            assert np.any(np.any(a != b, axis=1))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(WORDS), max_size=25))
def test_pooled_is_mean_of_tokens(words):
    f = encode(" ".join(words), embed_dim=16, max_tokens=8)
    assert 1 <= f.token_count <= 8
    assert f.tokens.shape == (8, 16)
    np.testing.assert_allclose(f.pooled, f.tokens[~f.padding_mask].mean(axis=0), atol=1e-6)
    assert (~f.padding_mask).sum() == f.token_count


def test_from_tokens_pads():
    f = TextFeatures.from_tokens(np.ones((2, 4)), max_tokens=5)
    assert f.tokens.shape == (5, 4) and f.token_count == 2
    np.testing.assert_array_equal(f.padding_mask, [False, False, True, True, True])


def test_sidecar_encoder(tmp_path):
    import pytest

    from motionedit.errors import ConfigurationError, ConsistencyError
    from motionedit.text import make_encoder

    np.savez(tmp_path / "feats.npz", a=np.ones((3, 5)), b=np.arange(5.0))
    enc = make_encoder("external", max_tokens=4, sidecar=str(tmp_path / "feats.npz"))
    assert enc.lookup("a").token_count == 3
    assert enc.lookup("b").tokens.shape == (4, 5)
    with pytest.raises(ConsistencyError):
        enc.lookup("c")
    with pytest.raises(ConfigurationError):
        make_encoder("external")
    with pytest.raises(ConfigurationError):
        make_encoder("clip")
