"""Character vocabulary for transcripts and CTC targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VocabularyError


@dataclass(frozen=True)
class CharVocab:
    """Ordered character set plus a reserved trailing blank index.

    Indices 0..len(characters)-1 map to characters; the blank used by the CTC
    lattice sits at index len(characters) and never appears in transcripts.
    """

    characters: str = "abcdefghijklmnopqrstuvwxyz "

    def __post_init__(self):
        if len(self.characters) == 0:
            raise ValueError("vocabulary must contain at least one character")
        if len(set(self.characters)) != len(self.characters):
            raise ValueError("vocabulary characters must be unique")

    @property
    def blank_index(self) -> int:
        return len(self.characters)

    @property
    def num_classes(self) -> int:
        """Character count plus the blank."""
        return len(self.characters) + 1

    def __contains__(self, ch: str) -> bool:
        return ch in self.characters

    def index(self, ch: str) -> int:
        i = self.characters.find(ch)
        if i < 0:
            raise VocabularyError(f"character {ch!r} is not in the vocabulary")
        return i

    def char(self, index: int) -> str:
        if not 0 <= index < len(self.characters):
            raise ValueError(f"character index {index} out of range")
        return self.characters[index]

    def encode(self, text: str) -> np.ndarray:
        """Map a transcript to an int array of character indices."""
        bad = [ch for ch in text if ch not in self.characters]
        if bad:
            raise VocabularyError(f"characters {sorted(set(bad))!r} are not in the vocabulary")
        return np.array([self.characters.index(ch) for ch in text], dtype=np.int64)

    def decode(self, indices) -> str:
        return "".join(self.char(int(i)) for i in indices)


DEFAULT_VOCAB = CharVocab()


def check_transcript(text: str, vocab: CharVocab = DEFAULT_VOCAB) -> str:
    """Validate that text only uses vocabulary characters; returns it unchanged."""
    vocab.encode(text)
    return text
