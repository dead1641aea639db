"""Arc-standard transitions extended with Left-2/Right-2.

The second-degree transitions attach the top of the stack to the third stack
item or vice versa, which covers a useful part of non-projective structure
without reordering.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .corpus_io import ROOT_INDEX, Sentence

log = logging.getLogger(__name__)


class Kind(enum.IntEnum):
    SHIFT = 0
    LEFT = 1
    RIGHT = 2
    LEFT2 = 3
    RIGHT2 = 4


ARC_KINDS = (Kind.LEFT, Kind.RIGHT, Kind.LEFT2, Kind.RIGHT2)


class Transition(NamedTuple):
    kind: Kind
    label: str | None = None

    def __str__(self) -> str:
        if self.kind is Kind.SHIFT:
            return "Shift"
        return f"{self.kind.name.title()}({self.label})"


SHIFT = Transition(Kind.SHIFT)


class IllegalTransition(ValueError):
    pass


class UnreachableTree(ValueError):
    """The gold tree cannot be built by the transition system."""


class Arc(NamedTuple):
    head: int
    dependent: int
    label: str


@dataclass(frozen=True)
class Configuration:
    stack: tuple[int, ...]
    buffer: tuple[int, ...]
    arcs: frozenset[Arc]

    @property
    def n_tokens(self) -> int:
        return len(self.stack) + len(self.buffer) + len(self.arcs) - 1

    def heads(self) -> dict[int, tuple[int, str]]:
        return {a.dependent: (a.head, a.label) for a in self.arcs}


def initial_config(sentence: Sentence | int) -> Configuration:
    n = sentence if isinstance(sentence, int) else len(sentence)
    if n < 1:
        raise ValueError("cannot parse an empty sentence")
    return Configuration((ROOT_INDEX,), tuple(range(1, n + 1)), frozenset())


def _violation(config: Configuration, kind: Kind, single_root: bool) -> str | None:
    """Why ``kind`` is not applicable to ``config``, or None if it is."""
    stack, buffer = config.stack, config.buffer
    if kind is Kind.SHIFT:
        return None if buffer else "Shift needs a non-empty buffer"
    depth = 2 if kind in (Kind.LEFT, Kind.RIGHT) else 3
    if len(stack) < depth:
        return f"{kind.name} needs at least {depth} stack items"
    if kind in (Kind.LEFT, Kind.LEFT2):
        if stack[-depth] == ROOT_INDEX:
            return "the root cannot become a dependent"
        return None
    # Right/Right2: head is stack[-2] or stack[-3], dependent is the top
    if stack[-depth] == ROOT_INDEX and single_root:
        # the root takes exactly one child: the last token left unattached
        if buffer or len(stack) != 2:
            return "the root may only take the last unattached token"
    return None


def legal(config: Configuration, single_root: bool = True) -> set[Kind]:
    return {k for k in Kind if _violation(config, k, single_root) is None}


def apply(config: Configuration, t: Transition, single_root: bool = True) -> Configuration:
    problem = _violation(config, t.kind, single_root)
    if problem:
        raise IllegalTransition(problem)
    stack, buffer = config.stack, config.buffer
    if t.kind is Kind.SHIFT:
        return Configuration(stack + buffer[:1], buffer[1:], config.arcs)
    if t.label is None:
        raise IllegalTransition(f"{t.kind.name} requires a label")
    if t.kind is Kind.LEFT:
        arc, rest = Arc(stack[-1], stack[-2], t.label), stack[:-2] + stack[-1:]
    elif t.kind is Kind.RIGHT:
        arc, rest = Arc(stack[-2], stack[-1], t.label), stack[:-1]
    elif t.kind is Kind.LEFT2:
        arc, rest = Arc(stack[-1], stack[-3], t.label), stack[:-3] + stack[-2:]
    else:
        arc, rest = Arc(stack[-3], stack[-1], t.label), stack[:-1]
    return Configuration(rest, buffer, config.arcs | {arc})


def is_terminal(config: Configuration) -> bool:
    return not config.buffer and config.stack == (ROOT_INDEX,)


def _complete(token: int, heads: Sequence[int], attached: set[int]) -> bool:
    """All gold dependents of ``token`` already have their arc."""
    return all(d in attached for d, h in enumerate(heads, start=1) if h == token)


def oracle_next(
    config: Configuration, gold: Sentence, single_root: bool = True
) -> Transition:
    """Static oracle: reduce as early as possible, plain arcs before degree-2 arcs."""
    heads = gold.heads
    labels = gold.labels
    attached = {a.dependent for a in config.arcs}
    stack = config.stack
    ok = legal(config, single_root)

    def head_of(tok: int) -> int | None:
        return heads[tok - 1] if tok != ROOT_INDEX else None

    candidates = []
    if len(stack) >= 2:
        top, second = stack[-1], stack[-2]
        candidates.append((Kind.LEFT, top, second))
        candidates.append((Kind.RIGHT, second, top))
    if len(stack) >= 3:
        top, third = stack[-1], stack[-3]
        candidates.append((Kind.LEFT2, top, third))
        candidates.append((Kind.RIGHT2, third, top))
    for kind, head, dep in candidates:
        if kind in ok and head_of(dep) == head and _complete(dep, heads, attached):
            return Transition(kind, labels[dep - 1])
    if Kind.SHIFT in ok:
        return SHIFT
    raise UnreachableTree(
        f"no gold-consistent transition from stack={list(stack)} with an empty buffer"
    )


def derive(gold: Sentence, single_root: bool = True) -> list[tuple[Configuration, Transition]]:
    """Oracle derivation of ``gold``: (configuration, transition) pairs up to the terminal."""
    config = initial_config(gold)
    steps = []
    while not is_terminal(config):
        t = oracle_next(config, gold, single_root)
        steps.append((config, t))
        config = apply(config, t, single_root)
    built = config.heads()
    expected = dict(enumerate(gold.arcs(), start=1))
    if built != expected:
        raise UnreachableTree("derivation terminated with a different tree")
    return steps


def derivable(gold: Sentence, single_root: bool = True) -> bool:
    try:
        derive(gold, single_root)
    except UnreachableTree:
        return False
    return True


def is_projective(heads: Sequence[int]) -> bool:
    """Every token between a head and its dependent descends from that head."""
    n = len(heads)
    for d in range(1, n + 1):
        h = heads[d - 1]
        lo, hi = min(h, d), max(h, d)
        for k in range(lo + 1, hi):
            node = k
            while node != 0 and node != h:
                node = heads[node - 1]
            if node != h:
                return False
    return True
