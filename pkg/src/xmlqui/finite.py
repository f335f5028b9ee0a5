"""The multiplicity bound k for an expression, and chain folding."""
from __future__ import annotations

from dataclasses import dataclass, field

from .lang import (
    Axis,
    Delete,
    Elem,
    Empty,
    For,
    If,
    Insert,
    Let,
    Rename,
    Replace,
    Seq,
    Step,
    StrLit,
    TagTest,
    TextTest,
    UEmpty,
    UFor,
    UIf,
    ULet,
    USeq,
    walk,
)
from .schema import Dtd

# stands for any tag not mentioned in the expression
_OTHER = "#other"

_SUMMED = (For, Let, UFor, ULet, Delete, Insert, Replace)
_MAXED = (Seq, If, USeq, UIf)


def tag_frequency(a: str, exp) -> int:
    if isinstance(exp, (Empty, StrLit, UEmpty)):
        return 0
    if isinstance(exp, Step):
        # a bare variable reference navigates nowhere
        if exp.axis.recursive or exp.is_identity:
            return 0
        if isinstance(exp.test, TagTest):
            return int(exp.test.tag == a)
        return int(not isinstance(exp.test, TextTest))
    if isinstance(exp, _MAXED):
        return max(tag_frequency(a, c) for c in exp.children())
    if isinstance(exp, _SUMMED):
        return sum(tag_frequency(a, c) for c in exp.children())
    if isinstance(exp, Elem):
        return tag_frequency(a, exp.body) + int(exp.tag == a)
    if isinstance(exp, Rename):
        return tag_frequency(a, exp.target) + int(exp.tag == a)
    raise TypeError(type(exp).__name__)


def recursive_steps(exp) -> int:
    if isinstance(exp, (Empty, StrLit, UEmpty)):
        return 0
    if isinstance(exp, Step):
        return int(exp.axis.recursive)
    if isinstance(exp, _MAXED):
        return max(recursive_steps(c) for c in exp.children())
    if isinstance(exp, (*_SUMMED, Rename)):
        return sum(recursive_steps(c) for c in exp.children())
    if isinstance(exp, Elem):
        return recursive_steps(exp.body)
    raise TypeError(type(exp).__name__)


def _tags(exp) -> set:
    out = set()
    for sub in walk(exp):
        if isinstance(sub, Step) and isinstance(sub.test, TagTest):
            out.add(sub.test.tag)
        elif isinstance(sub, (Elem, Rename)):
            out.add(sub.tag)
    return out


@dataclass(frozen=True)
class KBound:
    freq_component: int
    rec_component: int
    frequencies: dict = field(default_factory=dict, compare=False)

    @property
    def k(self) -> int:
        return self.freq_component + self.rec_component


def k_of(exp) -> KBound:
    freqs = {a: tag_frequency(a, exp) for a in sorted(_tags(exp) | {_OTHER})}
    return KBound(max(freqs.values()), recursive_steps(exp), freqs)


def k_pair(q, u) -> int:
    return max(1, k_of(q).k + k_of(u).k)


def fold(d: Dtd, c) -> set:
    """One-step folds c.a.c'.a.c'' -> c.a.c''."""
    c = tuple(c)
    out = set()
    for i, a in enumerate(c):
        for j in range(i + 1, len(c)):
            if c[j] == a:
                out.add(c[:i] + c[j:])
    return out


def fold_closure(d: Dtd, c, within=None) -> set:
    """All chains reachable from ``c`` by repeated folding (excluding c itself).

    With ``within`` every intermediate chain must belong to that set.
    """
    seen = set()
    stack = [tuple(c)]
    while stack:
        cur = stack.pop()
        for nxt in fold(d, cur):
            if nxt in seen or (within is not None and nxt not in within):
                continue
            seen.add(nxt)
            stack.append(nxt)
    return seen
