import numpy as np
import pytest

from purewave.errors import VocabularyError
from purewave.vocab import DEFAULT_VOCAB, CharVocab, check_transcript


def test_default_vocab_layout():
    v = DEFAULT_VOCAB
    assert v.characters == "abcdefghijklmnopqrstuvwxyz "
    assert v.num_classes == 28
    assert v.blank_index == 27
    assert v.index("a") == 0
    assert v.index(" ") == 26
    assert " " in v and "7" not in v


def test_encode_decode_round_trip():
    v = DEFAULT_VOCAB
    text = "the quick brown fox"
    encoded = v.encode(text)
    assert encoded.dtype == np.int64
    assert v.decode(encoded) == text


def test_encode_rejects_unknown_characters():
    with pytest.raises(VocabularyError) as err:
        DEFAULT_VOCAB.encode("Hello!")
    msg = str(err.value)
    assert "H" in msg and "!" in msg


def test_check_transcript():
    assert check_transcript("abc xyz", DEFAULT_VOCAB) == "abc xyz"
    with pytest.raises(VocabularyError):
        check_transcript("abc7", DEFAULT_VOCAB)


def test_custom_vocab():
    v = CharVocab("abc")
    assert v.num_classes == 4
    assert v.blank_index == 3
    assert list(v.encode("cab")) == [2, 0, 1]


def test_vocab_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        CharVocab("aab")
    with pytest.raises(ValueError):
        CharVocab("")
