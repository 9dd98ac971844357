"""Symmetric alphabets and free-group arithmetic on reduced words.

Group elements are plain strings of single-character letters; the empty
string is the identity.  Free groups use the letters ``a, b, c, ...`` with
formal inverses ``A, B, C, ...``.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

IDENTITY = ""


class UnknownLetterError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    letters: tuple[str, ...]
    inverse: Mapping[str, str] = field(hash=False)

    def __post_init__(self):
        if len(set(self.letters)) != len(self.letters):
            raise ValueError("alphabet letters must be distinct")
        for x in self.letters:
            if len(x) != 1:
                raise ValueError(f"letters must be single characters, got {x!r}")
            y = self.inverse.get(x)
            if y is None or y not in self.letters:
                raise ValueError(f"letter {x!r} has no inverse in the alphabet")
            if self.inverse[y] != x:
                raise ValueError(f"inverse map is not an involution at {x!r}")

    @classmethod
    def free(cls, rank: int) -> "Alphabet":
        if rank < 1 or rank > 26:
            raise ValueError("rank must be between 1 and 26")
        letters = []
        inverse = {}
        for x in string.ascii_lowercase[:rank]:
            X = x.upper()
            letters += [x, X]
            inverse[x], inverse[X] = X, x
        return cls(tuple(letters), inverse)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, str]]) -> "Alphabet":
        letters, inverse = [], {}
        for x, y in pairs:
            for z in (x, y):
                if z not in inverse:
                    letters.append(z)
            inverse[x], inverse[y] = y, x
        return cls(tuple(letters), inverse)

    def __len__(self) -> int:
        return len(self.letters)

    def index(self, letter: str) -> int:
        try:
            return self.letters.index(letter)
        except ValueError:
            raise UnknownLetterError(f"unknown letter {letter!r}") from None

    def check(self, word: str) -> None:
        for x in word:
            if x not in self.inverse:
                raise UnknownLetterError(f"unknown letter {x!r} in word {word!r}")

    def invert_word(self, word: str) -> str:
        self.check(word)
        return "".join(self.inverse[x] for x in reversed(word))


class FreeGroup:
    """Free group of rank ``k`` with its standard symmetric generating set."""

    def __init__(self, rank: int):
        self.rank = rank
        self.alphabet = Alphabet.free(rank)

    def __repr__(self):
        return f"FreeGroup({self.rank})"

    def __eq__(self, other):
        return isinstance(other, FreeGroup) and other.rank == self.rank

    def __hash__(self):
        return hash(("free", self.rank))

    @property
    def letters(self) -> tuple[str, ...]:
        return self.alphabet.letters

    def reduce(self, word: str) -> str:
        self.alphabet.check(word)
        inv = self.alphabet.inverse
        out: list[str] = []
        for x in word:
            if out and out[-1] == inv[x]:
                out.pop()
            else:
                out.append(x)
        return "".join(out)

    def is_reduced(self, word: str) -> bool:
        inv = self.alphabet.inverse
        return all(inv[x] != y for x, y in zip(word, word[1:]))

    def multiply(self, g: str, h: str) -> str:
        return self.reduce(g + h)

    def invert(self, g: str) -> str:
        return self.reduce(self.alphabet.invert_word(g))

    def power(self, g: str, n: int) -> str:
        if n < 0:
            return self.power(self.invert(g), -n)
        # conjugate the cyclic core to keep the work linear in n
        g = self.reduce(g)
        core, j = self.cyclic_reduce(g)
        return self.reduce(g[:j] + core * n + g[len(g) - j:]) if n else IDENTITY

    def length(self, g: str) -> int:
        return len(self.reduce(g))

    def cyclic_reduce(self, g: str) -> tuple[str, int]:
        """Return ``(core, j)`` with ``g = u core u^-1`` and ``|u| = j``."""
        g = self.reduce(g)
        inv = self.alphabet.inverse
        i, k = 0, len(g) - 1
        while i < k and g[i] == inv[g[k]]:
            i += 1
            k -= 1
        return g[i:k + 1], i

    def sphere_size(self, n: int) -> int:
        if n == 0:
            return 1
        m = 2 * self.rank
        return m * (m - 1) ** (n - 1)

    def ball_size(self, n: int) -> int:
        return sum(self.sphere_size(i) for i in range(n + 1))

    def sphere(self, n: int) -> Iterator[str]:
        """Reduced words of length ``n`` in shortlex order."""
        if n == 0:
            yield IDENTITY
            return
        inv = self.alphabet.inverse
        stack = [(x,) for x in reversed(self.letters)]
        while stack:
            w = stack.pop()
            if len(w) == n:
                yield "".join(w)
                continue
            for y in reversed(self.letters):
                if y != inv[w[-1]]:
                    stack.append(w + (y,))

    def ball(self, n: int) -> Iterator[str]:
        for m in range(n + 1):
            yield from self.sphere(m)

    def random_reduced(self, n: int, rng: np.random.Generator) -> str:
        letters = self.letters
        inv = self.alphabet.inverse
        out: list[str] = []
        while len(out) < n:
            x = letters[rng.integers(len(letters))]
            if out and x == inv[out[-1]]:
                continue
            out.append(x)
        return "".join(out)

    def random_cyclically_reduced(self, n: int, rng: np.random.Generator) -> str:
        while True:
            w = self.random_reduced(n, rng)
            if n < 2 or w[0] != self.alphabet.inverse[w[-1]]:
                return w
