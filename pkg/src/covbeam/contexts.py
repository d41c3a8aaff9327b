"""Suffix-specified contexts over chain label spaces.

A context at position ``i`` is the set of label sequences ``y_{1:i}`` that end
with a fixed concrete suffix; everything before the suffix is unconstrained
(wildcard). The empty suffix is the root context, i.e. the whole space at that
position. A :class:`Level` is the sorted collection of contexts retained at
one position together with an adjacent-pair longest-common-suffix array, which
turns common-suffix queries for arbitrary pairs into range minima.

Labels are interned integers ``0..K-1`` per position; the wildcard is never
stored, it is implied by suffix length and compares greater than every label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .errors import UsageError

#: Display symbol for the implicit wildcard prefix. Reserved: it may not be
#: used as a concrete label symbol.
WILDCARD = "★"


class LabelAlphabet:
    """Per-position finite label sets with symbols interned to 0..K-1.

    The per-position order of ``symbols`` defines the label order; the
    wildcard sorts strictly after every concrete label.
    """

    def __init__(self, symbols: Sequence[Sequence[str]]):
        if not symbols:
            raise UsageError("alphabet needs at least one position")
        interned = []
        for i, syms in enumerate(symbols, start=1):
            syms = tuple(syms)
            if not syms:
                raise UsageError(f"empty label set at position {i}")
            if len(set(syms)) != len(syms):
                raise UsageError(f"duplicate labels at position {i}: {syms}")
            if WILDCARD in syms:
                raise UsageError(f"wildcard symbol is reserved (position {i})")
            interned.append(syms)
        self._symbols: tuple[tuple[str, ...], ...] = tuple(interned)
        self._index = [{s: k for k, s in enumerate(syms)} for syms in interned]

    @classmethod
    def uniform(cls, n: int, symbols: Sequence[str]) -> "LabelAlphabet":
        """Same label set at every one of ``n`` positions."""
        return cls([tuple(symbols)] * n)

    def __len__(self) -> int:
        return len(self._symbols)

    def size(self, position: int) -> int:
        return len(self._symbols[position - 1])

    def symbols(self, position: int) -> tuple[str, ...]:
        return self._symbols[position - 1]

    def index(self, position: int, symbol: str) -> int:
        try:
            return self._index[position - 1][symbol]
        except KeyError:
            raise UsageError(f"unknown label {symbol!r} at position {position}")

    def symbol(self, position: int, label: int) -> str:
        return self._symbols[position - 1][label]


@dataclass(frozen=True)
class Context:
    """A wildcard-prefix context: ``suffix`` pins the trailing labels.

    ``suffix`` is ordered oldest first, so ``suffix[-1]`` constrains position
    ``position`` itself. An empty suffix is the root context.
    """

    position: int
    suffix: tuple[int, ...]

    def __post_init__(self):
        if self.position < 0:
            raise UsageError(f"negative position {self.position}")
        if len(self.suffix) > self.position:
            raise UsageError(
                f"suffix of length {len(self.suffix)} does not fit position "
                f"{self.position}"
            )

    @property
    def specified(self) -> int:
        """Number of concretely pinned trailing positions."""
        return len(self.suffix)

    @property
    def is_root(self) -> bool:
        return not self.suffix

    def display(self, alphabet: Optional[LabelAlphabet] = None) -> str:
        """Render with explicit wildcard prefix, e.g. ``★★ab``."""
        pad = WILDCARD * (self.position - len(self.suffix))
        if alphabet is None:
            body = "".join(str(c) for c in self.suffix)
        else:
            start = self.position - len(self.suffix) + 1
            body = "".join(
                alphabet.symbol(start + j, c) for j, c in enumerate(self.suffix)
            )
        return pad + body


def compare_contexts(a: Context, b: Context) -> int:
    """Total order used inside levels: -1, 0, or +1.

    Compares the labels at the current position first, then one position
    earlier, and so on; a wildcard (missing suffix entry) compares greater
    than any concrete label. Shorter suffixes therefore sort later, and the
    root is the maximum.
    """
    if a.position != b.position:
        raise UsageError(
            f"cannot compare contexts at positions {a.position} and {b.position}"
        )
    la, lb = len(a.suffix), len(b.suffix)
    for d in range(max(la, lb)):
        ca = a.suffix[la - 1 - d] if d < la else None
        cb = b.suffix[lb - 1 - d] if d < lb else None
        if ca == cb:
            continue
        if ca is None:  # a has the wildcard: a is greater
            return 1
        if cb is None:
            return -1
        return -1 if ca < cb else 1
    return 0


def lcs_pair(a: Context, b: Context) -> int:
    """Length of the longest common concrete suffix of two contexts."""
    if a.position != b.position:
        raise UsageError(
            f"cannot take lcs of contexts at positions {a.position} and {b.position}"
        )
    cap = min(len(a.suffix), len(b.suffix))
    n = 0
    while n < cap and a.suffix[len(a.suffix) - 1 - n] == b.suffix[len(b.suffix) - 1 - n]:
        n += 1
    return n


@dataclass
class Level:
    """Sorted contexts at one position plus the adjacent-pair lcs array.

    ``lcs[k]`` is the common-suffix length of ``entries[k]`` and
    ``entries[k+1]``; the common suffix of any pair ``(a, b)`` is then
    ``min(lcs[a:b])``. Construction does not validate; see
    :func:`validate_level`.
    """

    position: int
    entries: list[Context]
    lcs: list[int]
    _owner_index: Optional[dict[tuple[int, ...], int]] = field(
        default=None, repr=False, compare=False
    )

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Context]:
        return iter(self.entries)

    def _suffix_index(self) -> dict[tuple[int, ...], int]:
        if self._owner_index is None:
            self._owner_index = {c.suffix: k for k, c in enumerate(self.entries)}
        return self._owner_index


def range_lcs(level: Level, a: int, b: int) -> int:
    """Common-suffix length of ``entries[a]`` and ``entries[b]`` via range min."""
    if not (0 <= a < b < len(level.entries)):
        raise UsageError(f"bad index pair ({a}, {b}) for level of size {len(level)}")
    return min(level.lcs[a:b])


def locate_owner(level: Level, assignment: Sequence[int]) -> int:
    """Index of the entry owning a full assignment ``y_{1:i}``.

    The owner is the entry with the longest suffix matching the assignment's
    tail; the root matches everything, so an owner always exists in a valid
    level. Owners partition the assignment space.
    """
    y = tuple(assignment)
    if len(y) != level.position:
        raise UsageError(
            f"assignment of length {len(y)} for level at position {level.position}"
        )
    if any(c < 0 for c in y):
        raise UsageError("assignments must consist of concrete labels")
    index = level._suffix_index()
    longest = max((len(c.suffix) for c in level.entries), default=0)
    for l in range(min(longest, len(y)), -1, -1):
        hit = index.get(y[len(y) - l:])
        if hit is not None:
            return hit
    raise UsageError("level has no root context; cannot own assignment")


def owner_by_scan(level: Level, assignment: Sequence[int]) -> int:
    """Independent owner lookup by linear scan; asserts uniqueness.

    Used as a cross-check for :func:`locate_owner` in tests.
    """
    y = tuple(assignment)
    best_len, hits = -1, []
    for k, c in enumerate(level.entries):
        l = len(c.suffix)
        if l <= len(y) and y[len(y) - l:] == c.suffix:
            if l > best_len:
                best_len, hits = l, [k]
            elif l == best_len:
                hits.append(k)
    if len(hits) != 1:
        raise UsageError(f"assignment has {len(hits)} maximal owners, expected 1")
    return hits[0]


@dataclass(frozen=True)
class LevelViolation:
    """First structural violation found in a level."""

    kind: str
    index: int
    message: str


def validate_level(
    level: Level, alphabet: Optional[LabelAlphabet] = None
) -> Optional[LevelViolation]:
    """Check the level invariants; return the first violation, or None.

    Checks, in order: entry well-formedness (and alphabet membership when an
    alphabet is given), root presence/uniqueness/placement, lcs array length,
    strict sortedness, and lcs values against direct recomputation.
    """
    entries, n = level.entries, len(level.entries)
    if n == 0:
        return LevelViolation("empty", 0, "level has no entries")
    for k, c in enumerate(entries):
        if c.position != level.position:
            return LevelViolation(
                "position", k, f"entry {k} is at position {c.position}, "
                f"level is at {level.position}"
            )
        if alphabet is not None:
            start = c.position - len(c.suffix) + 1
            for j, lab in enumerate(c.suffix):
                if not (0 <= lab < alphabet.size(start + j)):
                    return LevelViolation(
                        "entry", k, f"entry {k} has label {lab} outside the "
                        f"alphabet at position {start + j}"
                    )
    roots = [k for k, c in enumerate(entries) if c.is_root]
    if not roots:
        return LevelViolation("missing-root", n - 1, "missing root")
    if len(roots) > 1:
        return LevelViolation("duplicate-root", roots[1], "more than one root")
    if roots[0] != n - 1:
        return LevelViolation(
            "root-not-last", roots[0], f"root at index {roots[0]}, expected last"
        )
    if len(level.lcs) != n - 1:
        return LevelViolation(
            "lcs-length", 0, f"lcs array has length {len(level.lcs)}, "
            f"expected {n - 1}"
        )
    for k in range(n - 1):
        if compare_contexts(entries[k], entries[k + 1]) >= 0:
            return LevelViolation(
                "sort", k, f"entries {k} and {k + 1} are not strictly increasing"
            )
    for k in range(n - 1):
        actual = lcs_pair(entries[k], entries[k + 1])
        if level.lcs[k] != actual:
            return LevelViolation(
                "lcs", k, f"lcs[{k}] is {level.lcs[k]}, recomputed {actual}"
            )
    return None
