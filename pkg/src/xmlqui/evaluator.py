"""Reference semantics for the query and update fragment.

Queries only navigate the input tree (constructors are forbidden in binding
positions), so step evaluation works against the parent/order index of the
input tree while new nodes go into a working store.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .lang import (
    AnyTest,
    Axis,
    Delete,
    Elem,
    Empty,
    For,
    If,
    Insert,
    Let,
    Pos,
    Rename,
    Replace,
    ROOT_VAR,
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
)
from .schema import TEXT
from .xmlstore import Element, Store, Text, Tree, value_equivalent


class UpdateError(RuntimeError):
    """Dynamic error raised while building or applying a pending update list."""


@dataclass(frozen=True)
class Ins:
    sources: tuple
    pos: Pos
    target: int


@dataclass(frozen=True)
class Del:
    target: int


@dataclass(frozen=True)
class Repl:
    target: int
    sources: tuple


@dataclass(frozen=True)
class Ren:
    target: int
    tag: str


UpdateCommand = Ins | Del | Repl | Ren


class _Work:
    """Mutable working store layered over an input tree."""

    def __init__(self, tree: Tree):
        self.tree = tree
        self.base = tree.store
        self.new: dict[int, object] = {}
        self.next = tree.store.next_location

    def node(self, loc):
        return self.new[loc] if loc in self.new else self.base[loc]

    def add(self, node) -> int:
        loc = self.next
        self.next += 1
        self.new[loc] = node
        return loc

    def copy(self, loc) -> int:
        node = self.node(loc)
        if isinstance(node, Text):
            return self.add(node)
        children = tuple(self.copy(c) for c in node.children)
        return self.add(Element(node.tag, children))

    def store(self) -> Store:
        return self.base.updated(self.new) if self.new else self.base


def _label(node) -> str:
    return node.tag if isinstance(node, Element) else TEXT


def _test(node, test) -> bool:
    if isinstance(test, AnyTest):
        return True
    if isinstance(test, TextTest):
        return isinstance(node, Text)
    return isinstance(node, Element) and node.tag == test.tag


def _axis(work: _Work, loc: int, axis: Axis) -> list[int]:
    tree = work.tree
    parents = tree.parents
    if loc not in parents:
        # a constructed node: only self and downward navigation make sense
        parents = {}
    if axis is Axis.SELF:
        return [loc]
    if axis is Axis.CHILD:
        node = work.node(loc)
        return list(node.children) if isinstance(node, Element) else []
    if axis in (Axis.DESCENDANT, Axis.DESCENDANT_OR_SELF):
        out = [loc] if axis is Axis.DESCENDANT_OR_SELF else []
        stack = list(reversed(_axis(work, loc, Axis.CHILD)))
        while stack:
            cur = stack.pop()
            out.append(cur)
            stack.extend(reversed(_axis(work, cur, Axis.CHILD)))
        return out
    if axis is Axis.PARENT:
        p = parents.get(loc)
        return [] if p is None else [p]
    if axis in (Axis.ANCESTOR, Axis.ANCESTOR_OR_SELF):
        out = [loc] if axis is Axis.ANCESTOR_OR_SELF else []
        p = parents.get(loc)
        while p is not None:
            out.append(p)
            p = parents.get(p)
        return out
    p = parents.get(loc)
    if p is None:
        return []
    siblings = work.node(p).children
    i = siblings.index(loc)
    return list(siblings[i + 1 :]) if axis is Axis.FOLLOWING_SIBLING else list(siblings[:i])


def _doc_sorted(work: _Work, locs) -> list[int]:
    order = work.tree.order
    unique = set(locs)
    inside = sorted((l for l in unique if l in order), key=order.__getitem__)
    outside = sorted(l for l in unique if l not in order)
    return inside + outside


def _eval(work: _Work, env: Mapping[str, Sequence[int]], q) -> list[int]:
    if isinstance(q, Empty):
        return []
    if isinstance(q, Seq):
        return _eval(work, env, q.left) + _eval(work, env, q.right)
    if isinstance(q, StrLit):
        return [work.add(Text(q.value))]
    if isinstance(q, Elem):
        content = _eval(work, env, q.body)
        children = tuple(work.copy(c) for c in content)
        return [work.add(Element(q.tag, children))]
    if isinstance(q, Step):
        try:
            bound = env[q.var]
        except KeyError:
            raise NameError(f"unbound variable ${q.var}") from None
        found = []
        for loc in bound:
            found.extend(l for l in _axis(work, loc, q.axis) if _test(work.node(l), q.test))
        return _doc_sorted(work, found)
    if isinstance(q, For):
        out = []
        for loc in _eval(work, env, q.source):
            out.extend(_eval(work, {**env, q.var: (loc,)}, q.body))
        return out
    if isinstance(q, Let):
        bound = tuple(_eval(work, env, q.source))
        return _eval(work, {**env, q.var: bound}, q.body)
    if isinstance(q, If):
        branch = q.then if _eval(work, env, q.cond) else q.else_
        return _eval(work, env, branch)
    raise TypeError(f"not a query: {type(q).__name__}")


def root_env(t: Tree) -> dict:
    return {ROOT_VAR: (t.root,)}


def eval_query(tree: Tree, env: Mapping[str, Sequence[int]] | None, q) -> tuple[Store, list[int]]:
    """Evaluate ``q`` over ``tree``; returns the extended store and result locations."""
    work = _Work(tree)
    result = _eval(work, root_env(tree) if env is None else env, q)
    return work.store(), result


def _single(locs: list[int], what: str) -> int:
    if len(locs) != 1:
        raise UpdateError(f"{what} target must be exactly one node, got {len(locs)}")
    return locs[0]


def _build(work: _Work, env, u, out: list):
    if isinstance(u, UEmpty):
        return
    if isinstance(u, USeq):
        _build(work, env, u.left, out)
        _build(work, env, u.right, out)
    elif isinstance(u, UFor):
        for loc in _eval(work, env, u.source):
            _build(work, {**env, u.var: (loc,)}, u.body, out)
    elif isinstance(u, ULet):
        _build(work, {**env, u.var: tuple(_eval(work, env, u.source))}, u.body, out)
    elif isinstance(u, UIf):
        _build(work, env, u.then if _eval(work, env, u.cond) else u.else_, out)
    elif isinstance(u, Delete):
        out.extend(Del(l) for l in _eval(work, env, u.target))
    elif isinstance(u, Rename):
        target = _single(_eval(work, env, u.target), "rename")
        if not isinstance(work.node(target), Element):
            raise UpdateError("rename target must be an element")
        out.append(Ren(target, u.tag))
    elif isinstance(u, Insert):
        content = _eval(work, env, u.source)
        target = _single(_eval(work, env, u.target), "insert")
        if u.pos in (Pos.BEFORE, Pos.AFTER):
            if work.tree.parents.get(target) is None:
                raise UpdateError("insert before/after needs a target with a parent")
        elif not isinstance(work.node(target), Element):
            raise UpdateError("insert into needs an element target")
        out.append(Ins(tuple(work.copy(c) for c in content), u.pos, target))
    elif isinstance(u, Replace):
        target = _single(_eval(work, env, u.target), "replace")
        if work.tree.parents.get(target) is None:
            raise UpdateError("replace needs a target with a parent")
        content = _eval(work, env, u.source)
        out.append(Repl(target, tuple(work.copy(c) for c in content)))
    else:
        raise TypeError(f"not an update: {type(u).__name__}")


def build_upl(tree: Tree, env, u) -> tuple[Store, list]:
    """Evaluate ``u`` to a pending update list (snapshot semantics)."""
    work = _Work(tree)
    out: list = []
    _build(work, root_env(tree) if env is None else env, u, out)
    return work.store(), out


def check_upl(upl: Sequence) -> None:
    renames: dict[int, str] = {}
    replaced: set[int] = set()
    for cmd in upl:
        if isinstance(cmd, Ren):
            if renames.get(cmd.target, cmd.tag) != cmd.tag:
                raise UpdateError(f"conflicting renames of location {cmd.target}")
            renames[cmd.target] = cmd.tag
        elif isinstance(cmd, Repl):
            if cmd.target in replaced:
                raise UpdateError(f"location {cmd.target} replaced twice")
            replaced.add(cmd.target)


def apply_upl(tree: Tree, store_w: Store, upl: Sequence) -> Store:
    """Apply a pending update list.

    Renames go first, then insertions and replacements, then deletions; all
    positions refer to the sibling lists of the input tree.
    """
    check_upl(upl)
    parents = tree.parents
    nodes: dict[int, object] = {}

    def get(loc):
        return nodes.get(loc, store_w[loc])

    for cmd in upl:
        if isinstance(cmd, Ren):
            nodes[cmd.target] = Element(cmd.tag, get(cmd.target).children)

    before: dict[int, list] = {}
    after: dict[int, list] = {}
    first: dict[int, list] = {}
    last: dict[int, list] = {}
    replacement: dict[int, tuple] = {}
    deleted: set[int] = set()
    for cmd in upl:
        if isinstance(cmd, Ins):
            bucket = {
                Pos.BEFORE: before,
                Pos.AFTER: after,
                Pos.INTO_FIRST: first,
                Pos.INTO: last,
                Pos.INTO_LAST: last,
            }[cmd.pos]
            bucket.setdefault(cmd.target, []).extend(cmd.sources)
        elif isinstance(cmd, Repl):
            replacement[cmd.target] = cmd.sources
        elif isinstance(cmd, Del):
            deleted.add(cmd.target)

    touched = set(first) | set(last)
    for loc in list(before) + list(after) + list(replacement) + list(deleted):
        p = parents.get(loc)
        if p is not None:
            touched.add(p)
    for p in touched:
        node = get(p)
        children: list[int] = list(first.get(p, ()))
        for child in node.children:
            children.extend(before.get(child, ()))
            if child in replacement:
                children.extend(replacement[child])
            elif child not in deleted:
                children.append(child)
            children.extend(after.get(child, ()))
        children.extend(last.get(p, ()))
        nodes[p] = Element(node.tag, tuple(children))
    return store_w.updated(nodes)


def apply_update(tree: Tree, u, env=None) -> Tree:
    """Build and apply ``u``; the result is the tree reachable from the old root."""
    store_w, upl = build_upl(tree, env, u)
    store_u = apply_upl(tree, store_w, upl)
    return Tree(store_u, tree.root)


def involved_locations(store_w: Mapping, upl: Sequence) -> set[int]:
    out: set[int] = set()

    def subtree(loc):
        out.add(loc)
        node = store_w[loc]
        if isinstance(node, Element):
            for c in node.children:
                subtree(c)

    for cmd in upl:
        if isinstance(cmd, (Del, Ren)):
            out.add(cmd.target)
        elif isinstance(cmd, Repl):
            out.add(cmd.target)
            for s in cmd.sources:
                subtree(s)
        elif isinstance(cmd, Ins):
            for s in cmd.sources:
                subtree(s)
    return out


def dynamic_independent(tree: Tree, q, u, env=None) -> bool:
    """Does ``q`` return value-equivalent results before and after ``u``?

    Raises UpdateError when ``u`` has no defined result on ``tree``.
    """
    store_q, result = eval_query(tree, env, q)
    updated = apply_update(tree, u, env)
    store_q2, result2 = eval_query(updated, env, q)
    return value_equivalent(store_q, result, store_q2, result2)
