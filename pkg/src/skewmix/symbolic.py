"""One-sided subshifts of finite type, finite-memory words, and the theta metric.

Points of the shift space are represented only through depth-m cylinder words
(tuples of symbols); every function on the space is locally constant at a
configured depth.  This makes all metric and combinatorial quantities exact:
the distance between two depth-m words is theta**(length of their common
prefix), with the convention that identical words sit at the cylinder
diameter bound theta**m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DeadSymbol, DepthMismatch, InadmissibleWord, NotMixing

Word = tuple[int, ...]


@dataclass(eq=False)
class SftSpace:
    """A topologically mixing one-sided subshift of finite type.

    transitions[a, b] is True iff symbol b may follow symbol a.
    primitive_power is the smallest k with transitions**k entrywise positive.
    """

    alphabet_size: int
    transitions: np.ndarray
    theta: float
    primitive_power: int
    _cache: dict = field(default_factory=dict, repr=False)

    def words(self, depth: int) -> tuple[Word, ...]:
        """All admissible words of the given depth, in lexicographic order."""
        key = ("words", depth)
        if key not in self._cache:
            self._cache[key] = tuple(_enumerate_words(self, depth))
        return self._cache[key]

    def word_index(self, depth: int) -> dict[Word, int]:
        key = ("index", depth)
        if key not in self._cache:
            self._cache[key] = {w: i for i, w in enumerate(self.words(depth))}
        return self._cache[key]

    def word_array(self, depth: int) -> np.ndarray:
        """Admissible depth-m words as an (n_words, depth) int array."""
        key = ("array", depth)
        if key not in self._cache:
            self._cache[key] = np.array(self.words(depth), dtype=np.int64).reshape(
                len(self.words(depth)), depth
            )
        return self._cache[key]

    def prefix_length_matrix(self, depth: int) -> np.ndarray:
        """Pairwise common-prefix lengths between admissible depth-m words."""
        key = ("prefix", depth)
        if key not in self._cache:
            arr = self.word_array(depth)
            n = arr.shape[0]
            plen = np.zeros((n, n), dtype=np.int64)
            alive = np.ones((n, n), dtype=bool)
            for t in range(depth):
                col = arr[:, t]
                alive &= col[:, None] == col[None, :]
                plen += alive
            self._cache[key] = plen
        return self._cache[key]

    def metric_matrix(self, depth: int) -> np.ndarray:
        """Pairwise word_metric values; diagonal carries the bound theta**m."""
        key = ("metric", depth)
        if key not in self._cache:
            self._cache[key] = self.theta ** self.prefix_length_matrix(depth)
        return self._cache[key]

    def is_admissible(self, word: Iterable[int]) -> bool:
        w = tuple(word)
        if any(s < 0 or s >= self.alphabet_size for s in w):
            return False
        return all(self.transitions[a, b] for a, b in zip(w, w[1:]))


def build_sft(alphabet_size: int, transitions, theta: float) -> SftSpace:
    """Validate and build a subshift space.

    Raises DeadSymbol if some row or column of the transition matrix is empty,
    and NotMixing if no power up to alphabet_size**2 is entrywise positive.
    """
    trans = np.asarray(transitions, dtype=bool)
    if trans.shape != (alphabet_size, alphabet_size):
        raise ValueError(
            f"transition matrix shape {trans.shape} does not match alphabet size {alphabet_size}"
        )
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    for a in range(alphabet_size):
        if not trans[a].any():
            raise DeadSymbol(f"symbol {a} has no allowed successor")
        if not trans[:, a].any():
            raise DeadSymbol(f"symbol {a} has no allowed predecessor")
    power = _primitive_power(trans, alphabet_size * alphabet_size)
    if power is None:
        raise NotMixing("no power of the transition matrix is entrywise positive")
    return SftSpace(
        alphabet_size=alphabet_size,
        transitions=trans,
        theta=float(theta),
        primitive_power=power,
    )


def _primitive_power(trans: np.ndarray, max_power: int) -> int | None:
    mat = trans.astype(np.int64)
    acc = mat.copy()
    for k in range(1, max_power + 1):
        if (acc > 0).all():
            return k
        acc = np.minimum(acc @ mat, 1)
    return None


def _enumerate_words(sft: SftSpace, depth: int) -> Iterable[Word]:
    if depth < 1:
        raise ValueError("word depth must be >= 1")
    # depth-first in lexicographic order
    out: list[Word] = []
    for start in range(sft.alphabet_size):
        _extend((start,), sft, depth, out)
    return out


def _extend(prefix: Word, sft: SftSpace, depth: int, out: list[Word]) -> None:
    if len(prefix) == depth:
        out.append(prefix)
        return
    last = prefix[-1]
    for b in range(sft.alphabet_size):
        if sft.transitions[last, b]:
            _extend(prefix + (b,), sft, depth, out)


def parse_word(text: str) -> Word:
    """Parse a word written as a digit string, e.g. '0110'."""
    return tuple(int(ch) for ch in text)


def format_word(word: Word) -> str:
    return "".join(str(s) for s in word)


def word_metric(w1: Word, w2: Word, theta: float) -> float:
    """theta**(common prefix length); identical words return theta**depth.

    The identical-word value is the diameter bound for a depth-m cylinder,
    which is the correct worst case for seminorm and tolerance computations.
    """
    if len(w1) != len(w2):
        raise DepthMismatch(f"depths {len(w1)} and {len(w2)} differ")
    j = 0
    for a, b in zip(w1, w2):
        if a != b:
            break
        j += 1
    return theta**j


def preimages(sft: SftSpace, word: Word) -> list[Word]:
    """One-step shift preimages of a depth-m word, truncated back to depth m.

    Returns the words a + word[:-1] over symbols a with a -> word[0] allowed,
    in ascending symbol order.
    """
    if not sft.is_admissible(word):
        raise InadmissibleWord(f"word {format_word(word)} is not admissible")
    head = word[0]
    body = word[:-1]
    return [(a,) + body for a in range(sft.alphabet_size) if sft.transitions[a, head]]


def successors(sft: SftSpace, word: Word) -> list[Word]:
    """Depth-preserving successors word[1:] + (b,) with the transition allowed."""
    if not sft.is_admissible(word):
        raise InadmissibleWord(f"word {format_word(word)} is not admissible")
    tail = word[1:]
    last = word[-1]
    return [tail + (b,) for b in range(sft.alphabet_size) if sft.transitions[last, b]]


@dataclass(eq=False)
class StateFunction:
    """A locally constant complex function, stored over the admissible words.

    words is the full lexicographic tuple of admissible depth-m words and
    values is the aligned complex vector; the pair represents the locally
    constant extension to the whole shift space.
    """

    depth: int
    words: tuple[Word, ...]
    values: np.ndarray

    @classmethod
    def from_mapping(cls, sft: SftSpace, depth: int, table: Mapping[Word, complex]) -> StateFunction:
        words = sft.words(depth)
        missing = [w for w in words if w not in table]
        if missing:
            raise KeyError(f"missing value for word {format_word(missing[0])}")
        extra = [w for w in table if w not in set(words)]
        if extra:
            raise InadmissibleWord(f"table keys include inadmissible word {format_word(extra[0])}")
        vals = np.array([table[w] for w in words], dtype=complex)
        if not np.all(np.isfinite(vals)):
            raise ValueError("state function values must be finite")
        return cls(depth=depth, words=words, values=vals)

    @classmethod
    def constant(cls, sft: SftSpace, depth: int, value: complex) -> StateFunction:
        words = sft.words(depth)
        return cls(depth=depth, words=words, values=np.full(len(words), value, dtype=complex))

    def as_dict(self) -> dict[Word, complex]:
        return {w: complex(v) for w, v in zip(self.words, self.values)}

    def copy_with(self, values: np.ndarray) -> StateFunction:
        return StateFunction(depth=self.depth, words=self.words, values=np.asarray(values, dtype=complex))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


def lipschitz_seminorm(v: StateFunction, theta: float, sft: SftSpace | None = None) -> float:
    """Exact theta-Lipschitz seminorm of the locally constant extension.

    Equals the maximum of |v(w1) - v(w2)| / word_metric(w1, w2) over all
    admissible word pairs.  When the owning SftSpace is supplied its cached
    pairwise metric matrix is reused.
    """
    n = len(v.words)
    if n <= 1:
        return 0.0
    if sft is not None:
        dmat = sft.metric_matrix(v.depth)
    else:
        dmat = _metric_matrix_from_words(v.words, v.depth, theta)
    diffs = np.abs(v.values[:, None] - v.values[None, :])
    ratios = diffs / dmat
    return float(np.max(ratios))


def _metric_matrix_from_words(words: tuple[Word, ...], depth: int, theta: float) -> np.ndarray:
    arr = np.array(words, dtype=np.int64).reshape(len(words), depth)
    n = arr.shape[0]
    plen = np.zeros((n, n), dtype=np.int64)
    alive = np.ones((n, n), dtype=bool)
    for t in range(depth):
        col = arr[:, t]
        alive &= col[:, None] == col[None, :]
        plen += alive
    return theta**plen
