"""Character vocabulary for CTC: blank at index 0, then the word separator,
then the content letters."""

from __future__ import annotations

BLANK = 0


class Vocabulary:
    def __init__(self, letters, word_sep=" "):
        if not letters:
            raise ValueError("vocabulary needs at least one letter")
        if len(set(letters)) != len(letters):
            raise ValueError(f"duplicate letters in vocabulary: {letters!r}")
        if word_sep in letters:
            raise ValueError(f"word separator {word_sep!r} collides with a letter")
        self.letters = letters
        self.word_sep = word_sep
        self.chars = word_sep + letters  # token id = position + 1 (0 is blank)
        self._to_id = {c: i + 1 for i, c in enumerate(self.chars)}

    @property
    def size(self):
        """Number of CTC classes including the blank."""
        return len(self.chars) + 1

    def encode(self, text):
        try:
            return [self._to_id[c] for c in text]
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        out = []
        for i in ids:
            if i == BLANK:
                raise ValueError("cannot decode the blank token")
            out.append(self.chars[i - 1])
        return "".join(out)

    def words(self, text):
        return [w for w in text.split(self.word_sep) if w]
