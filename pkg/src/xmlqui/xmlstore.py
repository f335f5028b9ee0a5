"""XML instances as location-indexed stores, plus the tree utilities the
analysis is tested against: node chains, projection, value equivalence and
bounded enumeration of valid documents."""
from __future__ import annotations

import itertools
import xml.parsers.expat
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from .schema import TEXT, Alt, Atom, Concat, Dtd, Empty, Opt, Plus, Star


class DocumentError(ValueError):
    pass


@dataclass(frozen=True)
class Element:
    tag: str
    children: tuple = ()


@dataclass(frozen=True)
class Text:
    value: str


Node = Element | Text


class Store(Mapping):
    """Immutable map from integer locations to nodes."""

    __slots__ = ("_nodes", "_next")

    def __init__(self, nodes: Mapping[int, Node] | None = None):
        self._nodes = dict(nodes or {})
        self._next = max(self._nodes, default=-1) + 1

    def __getitem__(self, loc):
        return self._nodes[loc]

    def __iter__(self):
        return iter(self._nodes)

    def __len__(self):
        return len(self._nodes)

    def __repr__(self):
        return f"Store({len(self._nodes)} nodes)"

    @property
    def next_location(self) -> int:
        return self._next

    def updated(self, changes: Mapping[int, Node]) -> "Store":
        new = Store.__new__(Store)
        new._nodes = {**self._nodes, **changes}
        new._next = max(self._next, max(changes, default=-1) + 1)
        return new


class Tree:
    """A store together with a root location; the domain is what the root reaches."""

    def __init__(self, store: Store, root: int):
        if root not in store:
            raise DocumentError(f"root location {root} is not in the store")
        self.store = store
        self.root = root
        self._parents = None
        self._order = None

    def _index(self):
        parents = {self.root: None}
        order = {}
        stack = [self.root]
        while stack:
            loc = stack.pop()
            order[loc] = len(order)
            node = self.store[loc]
            if isinstance(node, Element):
                for child in reversed(node.children):
                    parents[child] = loc
                    stack.append(child)
        self._parents, self._order = parents, order

    @property
    def parents(self) -> dict:
        if self._parents is None:
            self._index()
        return self._parents

    @property
    def order(self) -> dict:
        """Document-order rank of every location in the domain."""
        if self._order is None:
            self._index()
        return self._order

    def dom(self) -> list[int]:
        return sorted(self.order, key=self.order.__getitem__)

    def __contains__(self, loc):
        return loc in self.order

    def __repr__(self):
        return f"Tree({serialize(self.store, self.root)})"


def typ(t: Tree, loc: int) -> str:
    if loc not in t:
        raise KeyError(f"location {loc} is not in the tree")
    node = t.store[loc]
    return node.tag if isinstance(node, Element) else TEXT


def node_chain(t: Tree, loc: int) -> tuple:
    labels = []
    cur = loc
    while cur is not None:
        labels.append(typ(t, cur))
        cur = t.parents[cur]
    return tuple(reversed(labels))


def all_chains(t: Tree) -> dict[int, tuple]:
    """node_chain for every location, computed top-down in one pass."""
    out = {t.root: (typ(t, t.root),)}
    for loc in t.dom():
        node = t.store[loc]
        if isinstance(node, Element):
            for child in node.children:
                out[child] = out[loc] + (typ(t, child),)
    return out


def locations_typed_by(t: Tree, chains: Iterable[Sequence[str]], subtree_closed: bool = False) -> set[int]:
    wanted = {tuple(c) for c in chains}
    if not wanted:
        return set()
    out = set()
    for loc, chain in all_chains(t).items():
        if chain in wanted:
            out.add(loc)
        elif subtree_closed and any(chain[:i] in wanted for i in range(1, len(chain))):
            out.add(loc)
    return out


def upward_closure(t: Tree, keep: Iterable[int]) -> set[int]:
    out = set()
    for loc in keep:
        while loc is not None and loc not in out:
            out.add(loc)
            loc = t.parents[loc]
    out.add(t.root)
    return out


def project(t: Tree, keep: Iterable[int]) -> Tree:
    kept = upward_closure(t, [loc for loc in keep if loc in t])
    nodes = {}
    for loc in kept:
        node = t.store[loc]
        if isinstance(node, Element):
            node = Element(node.tag, tuple(c for c in node.children if c in kept))
        nodes[loc] = node
    return Tree(Store(nodes), t.root)


def serialize(store: Mapping[int, Node], loc: int) -> str:
    node = store[loc]
    if isinstance(node, Text):
        return _escape(node.value)
    if not node.children:
        return f"<{node.tag}/>"
    inner = "".join(serialize(store, c) for c in node.children)
    return f"<{node.tag}>{inner}</{node.tag}>"


def serialize_tree(t: Tree) -> str:
    return serialize(t.store, t.root)


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def value_equivalent(store1: Mapping, locs1: Sequence[int], store2: Mapping, locs2: Sequence[int]) -> bool:
    if len(locs1) != len(locs2):
        return False
    return all(_iso(store1, a, store2, b) for a, b in zip(locs1, locs2))


def _iso(s1, a, s2, b) -> bool:
    n1, n2 = s1[a], s2[b]
    if isinstance(n1, Text) or isinstance(n2, Text):
        return n1 == n2
    if n1.tag != n2.tag or len(n1.children) != len(n2.children):
        return False
    return all(_iso(s1, x, s2, y) for x, y in zip(n1.children, n2.children))


# -- parsing ----------------------------------------------------------------


def parse_document(text: str) -> Tree:
    """Parse element/text XML; locations are assigned in document order.

    Whitespace-only text between elements is dropped so that serialization is
    canonical.
    """
    nodes: dict[int, Node] = {}
    counter = itertools.count()
    pending_text: list[str] = []
    roots: list[int] = []
    stack: list[tuple[str, list, int]] = []

    # locations are fixed on start tags; child lists are filled on end tags
    def flush_text():
        if not pending_text:
            return
        value = "".join(pending_text)
        pending_text.clear()
        if not value.strip():
            return
        if not stack:
            raise DocumentError("text outside the document element")
        loc = next(counter)
        nodes[loc] = Text(value)
        stack[-1][1].append(loc)

    def start(tag, attrs):
        flush_text()
        if attrs:
            raise DocumentError(f"attributes are not supported (on <{tag}>)")
        if not stack and roots:
            raise DocumentError("more than one document element")
        loc = next(counter)
        if stack:
            stack[-1][1].append(loc)
        else:
            roots.append(loc)
        stack.append((tag, [], loc))

    def end(tag):
        flush_text()
        name, children, loc = stack.pop()
        nodes[loc] = Element(name, tuple(children))

    def reject(*_):
        raise DocumentError("comments, processing instructions and doctype declarations are not supported")

    parser = xml.parsers.expat.ParserCreate()
    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = pending_text.append
    parser.CommentHandler = reject
    parser.ProcessingInstructionHandler = reject
    parser.StartDoctypeDeclHandler = reject
    try:
        parser.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        raise DocumentError(f"malformed XML: {exc}") from None
    if not roots:
        raise DocumentError("empty document")
    return Tree(Store(nodes), roots[0])


def build_tree(spec) -> Tree:
    """Build a tree from nested ``(tag, [children...])`` tuples and strings."""
    nodes: dict[int, Node] = {}
    counter = itertools.count()

    def go(item):
        loc = next(counter)
        if isinstance(item, str):
            nodes[loc] = Text(item)
            return loc
        tag, children = item
        nodes[loc] = None
        nodes[loc] = Element(tag, tuple(go(c) for c in children))
        return loc

    root = go(spec)
    return Tree(Store(nodes), root)


# -- bounded enumeration ----------------------------------------------------


def _words(cm, max_repeat: int) -> list[tuple]:
    if isinstance(cm, Empty):
        return [()]
    if isinstance(cm, Atom):
        return [(cm.label,)]
    if isinstance(cm, Concat):
        return _dedupe(a + b for a in _words(cm.left, max_repeat) for b in _words(cm.right, max_repeat))
    if isinstance(cm, Alt):
        return _dedupe(itertools.chain(_words(cm.left, max_repeat), _words(cm.right, max_repeat)))
    body = _words(cm.body, max_repeat)
    if isinstance(cm, Opt):
        counts = range(0, 2)
    elif isinstance(cm, Star):
        counts = range(0, max_repeat + 1)
    else:
        counts = range(1, max(max_repeat, 1) + 1)
    out = []
    for n in counts:
        for combo in itertools.product(body, repeat=n):
            out.append(tuple(itertools.chain.from_iterable(combo)))
    return _dedupe(out)


def _dedupe(items) -> list:
    seen = {}
    for item in items:
        seen.setdefault(item, None)
    return list(seen)


def enumerate_valid(
    d: Dtd, max_repeat: int = 1, max_depth: int = 3, text_pool: Sequence[str] = ("x",)
) -> Iterator[Tree]:
    """Deterministically enumerate valid trees within the given bounds.

    ``max_depth`` bounds the chain length of every node (the root has depth
    1); every Star/Plus occurrence repeats at most ``max_repeat`` times.
    """
    words = {tag: _words(cm, max_repeat) for tag, cm in d.content.items()}
    memo: dict[tuple, list] = {}

    def shapes(label, depth):
        key = (label, depth)
        if key in memo:
            return memo[key]
        out = []
        if depth > max_depth:
            pass
        elif label == TEXT:
            out = list(text_pool)
        else:
            for word in words[label]:
                options = [shapes(child, depth + 1) for child in word]
                for combo in itertools.product(*options):
                    out.append((label, combo))
        memo[key] = out
        return out

    for spec in shapes(d.root, 1):
        yield build_tree(spec)
