"""Planar p-ary trees: grafting, decomposition, enumeration and counting.

A tree is either the leaf ``LEAF`` (no internal vertex) or an internal root
carrying an ordered tuple of exactly ``p`` subtrees.  Trees are immutable,
hashable and compare structurally, so child order matters::

    >>> t = b_plus([b_plus([LEAF, LEAF]), LEAF])
    >>> canonical_key(t)
    '((oo)o)'
    >>> t == b_plus([LEAF, b_plus([LEAF, LEAF])])
    False

Keys use ``o`` for a leaf and a parenthesised run of child keys for an
internal vertex.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

from .exceptions import ArityError, LeafDecompositionError, RangeError, TreeFormatError

# counts are exported as signed 64-bit integers (CSV / JSON consumers)
COUNT_MAX = 2**63 - 1


@dataclass(frozen=True)
class PTree:
    children: tuple = ()
    _key: str = field(default="", init=False, repr=False, compare=False)
    _size: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        kids = tuple(self.children)
        object.__setattr__(self, "children", kids)
        if kids:
            key = "(" + "".join(c.key for c in kids) + ")"
            size = 1 + sum(c.size for c in kids)
        else:
            key, size = "o", 0
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_size", size)

    def __hash__(self):
        return hash(self._key)

    def __eq__(self, other):
        if not isinstance(other, PTree):
            return NotImplemented
        return self._key == other._key

    def __lt__(self, other):
        return self._key < other._key

    def __repr__(self):
        return f"PTree({self._key!r})"

    @property
    def key(self) -> str:
        return self._key

    @property
    def size(self) -> int:
        """Number of internal vertices, ``|b|``."""
        return self._size

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def arity(self) -> int | None:
        return len(self.children) or None

    def leaves(self) -> int:
        if self.is_leaf:
            return 1
        return sum(c.leaves() for c in self.children)


LEAF = PTree()


def b_plus(children: Sequence[PTree], p: int | None = None) -> PTree:
    """Graft ``children`` onto a new root.

    ``p`` defaults to ``len(children)``; when given, the length must match.
    Grafted subtrees must themselves be ``p``-trees.
    """
    kids = tuple(children)
    if p is None:
        p = len(kids)
    if p < 2:
        raise ArityError(f"arity must be >= 2, got {p}")
    if len(kids) != p:
        raise ArityError(f"expected {p} children, got {len(kids)}")
    for c in kids:
        if not isinstance(c, PTree):
            raise TypeError(f"child {c!r} is not a PTree")
        for a in _arities(c):
            if a != p:
                raise ArityError(f"subtree {c.key} has a vertex of arity {a}, expected {p}")
    return PTree(kids)


def _arities(b: PTree) -> set:
    if b.is_leaf:
        return set()
    out = {len(b.children)}
    for c in b.children:
        out |= _arities(c)
    return out


def decompose(b: PTree) -> tuple:
    """The unique ordered p-tuple ``(b1, ..., bp)`` with ``b = b_plus(...)``."""
    if b.is_leaf:
        raise LeafDecompositionError("the leaf tree has no decomposition")
    return b.children


def canonical_key(b: PTree) -> str:
    return b.key


def parse(key: str, p: int | None = None) -> PTree:
    """Inverse of :func:`canonical_key`.

    Raises :class:`TreeFormatError` on malformed input or mixed arities.
    """
    if not isinstance(key, str) or not key:
        raise TreeFormatError("empty tree key")
    pos = 0

    def node():
        nonlocal pos
        if pos >= len(key):
            raise TreeFormatError(f"unexpected end of key {key!r}")
        ch = key[pos]
        if ch == "o":
            pos += 1
            return LEAF
        if ch != "(":
            raise TreeFormatError(f"unexpected character {ch!r} at {pos} in {key!r}")
        pos += 1
        kids = []
        while pos < len(key) and key[pos] != ")":
            kids.append(node())
        if pos >= len(key):
            raise TreeFormatError(f"unbalanced parentheses in {key!r}")
        pos += 1
        if len(kids) < 2:
            raise TreeFormatError(f"internal vertex with {len(kids)} children in {key!r}")
        return PTree(tuple(kids))

    tree = node()
    if pos != len(key):
        raise TreeFormatError(f"trailing characters in {key!r}")
    ar = _arities(tree)
    if len(ar) > 1:
        raise TreeFormatError(f"mixed arities {sorted(ar)} in {key!r}")
    if p is not None and ar and ar != {p}:
        raise TreeFormatError(f"key {key!r} is not a {p}-tree")
    return tree


def _check_p(p):
    if int(p) != p or p < 2:
        raise ArityError(f"arity p must be an integer >= 2, got {p}")


def compositions(total: int, parts: int) -> Iterator[tuple]:
    """All ordered tuples of ``parts`` non-negative integers summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def _enumerate(p: int, n: int) -> tuple:
    if n == 0:
        return (LEAF,)
    out = []
    for comp in compositions(n - 1, p):
        for kids in itertools.product(*(_enumerate(p, q) for q in comp)):
            out.append(PTree(kids))
    out.sort(key=lambda t: t.key)
    return tuple(out)


def enumerate_trees(p: int, n: int) -> list:
    """Every p-tree with ``n`` internal vertices, sorted by canonical key."""
    _check_p(p)
    if n < 0:
        raise ValueError(f"order must be non-negative, got {n}")
    return list(_enumerate(int(p), int(n)))


@lru_cache(maxsize=None)
def _count(p: int, n: int) -> int:
    if n == 0:
        return 1
    return sum(math.prod(_count(p, q) for q in comp) for comp in compositions(n - 1, p))


def count(p: int, n: int) -> int:
    """Number of p-trees with ``n`` internal vertices.

    Computed from the grafting recursion (one root over p subtrees whose
    sizes sum to ``n - 1``).  Raises :class:`RangeError` past ``COUNT_MAX``.
    """
    _check_p(p)
    if n < 0:
        raise ValueError(f"order must be non-negative, got {n}")
    if n > 200:
        # recursion depth / cost guard; counts are far beyond COUNT_MAX anyway
        raise RangeError(f"count({p}, {n}) exceeds the 64-bit count range")
    c = _count(int(p), int(n))
    if c > COUNT_MAX:
        raise RangeError(f"count({p}, {n}) = {c} exceeds the 64-bit count range")
    return c


def fuss_catalan(p: int, n: int) -> int:
    """Closed form ``C(pn+1, n) / (pn+1)``; used as a cross-check only."""
    num = math.comb(p * n + 1, n)
    q, r = divmod(num, p * n + 1)
    assert r == 0
    return q


def count_bound(p: int, n: int) -> float:
    """Exponential upper bound ``(p^p / (p-1)^(p-1))^n`` on :func:`count`."""
    _check_p(p)
    return (p**p / (p - 1) ** (p - 1)) ** n


def sorted_form(b: PTree) -> PTree:
    """Representative of the class of trees equal up to reordering children."""
    if b.is_leaf:
        return b
    kids = sorted((sorted_form(c) for c in b.children), key=lambda t: t.key)
    return PTree(tuple(kids))


def planar_multiplicity(b: PTree) -> int:
    """How many planar trees share the sorted form of ``b``."""
    if b.is_leaf:
        return 1
    kids = [sorted_form(c) for c in b.children]
    mult = math.factorial(len(kids))
    for _, grp in itertools.groupby(sorted(k.key for k in kids)):
        mult //= math.factorial(len(list(grp)))
    return mult * math.prod(planar_multiplicity(c) for c in kids)


def enumerate_classes(p: int, n: int) -> list:
    """``(representative, multiplicity)`` per reorder class, sorted by key.

    Multiplicities sum to ``count(p, n)``.
    """
    seen = {}
    for t in enumerate_trees(p, n):
        s = sorted_form(t)
        seen[s.key] = s
    reps = [seen[k] for k in sorted(seen)]
    return [(r, planar_multiplicity(r)) for r in reps]
