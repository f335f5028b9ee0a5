"""Chain inference for queries and updates.

Two routes are provided. ``infer_query_sets``/``infer_update_sets`` follow
the inference rules literally over explicit chain tuples of C_d^k; they are
exponential and serve as the reference. ``infer_query``/``infer_update``
build a chain DAG (CDAG) whose nodes are keyed by (depth, label) and whose
edges carry the codes of the expressions that generated them.

A chain set inside a CDAG is a mapping ``lineage -> node mask``: the chains
it denotes are the root paths reaching a node of the mask that belong to the
lineage (see ``Cdag``). Node sets are Python ints used as bitsets.
"""
from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

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
    free_vars,
    walk,
)
from .schema import TEXT, Dtd, format_chain, is_k_chain

ROOT_CODE = 1


class ChainRole(enum.Enum):
    RETURN = "R"
    USED = "V"
    ELEMENT = "E"


@dataclass(frozen=True, order=True)
class UpdateChain:
    """``prefix:suffix``; a closed suffix also stands for all its extensions."""

    prefix: tuple
    suffix: tuple
    closed: bool = False

    def __post_init__(self):
        if not self.suffix:
            raise ValueError("update chain suffix must be non-empty")

    def __str__(self):
        tail = "..." if self.closed else ""
        return f"{format_chain(self.prefix)}:{format_chain(self.suffix)}{tail}"


def code_of(eid: int) -> int:
    return 1 << (eid + 1)


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


# -- step chain functions over explicit chains --------------------------------


def axis_chains(d: Dtd, k: int, c: tuple, axis: Axis) -> set:
    c = tuple(c)
    if axis is Axis.SELF:
        return {c}
    if axis is Axis.CHILD:
        return {c + (b,) for b in d.children_of(c[-1]) if is_k_chain(c + (b,), k)}
    if axis in (Axis.DESCENDANT, Axis.DESCENDANT_OR_SELF):
        out = {c} if axis is Axis.DESCENDANT_OR_SELF else set()
        stack = [c]
        while stack:
            cur = stack.pop()
            for ext in axis_chains(d, k, cur, Axis.CHILD):
                out.add(ext)
                stack.append(ext)
        return out
    if axis is Axis.PARENT:
        return {c[:-1]} if len(c) > 1 else set()
    if axis is Axis.ANCESTOR:
        return {c[:i] for i in range(1, len(c))}
    if axis is Axis.ANCESTOR_OR_SELF:
        return {c[:i] for i in range(1, len(c) + 1)}
    if len(c) < 2:
        return set()
    c1, alpha = c[:-1], c[-1]
    order = d.order_of(c1[-1])
    if axis is Axis.FOLLOWING_SIBLING:
        labels = {y for x, y in order if x == alpha}
    else:
        labels = {x for x, y in order if y == alpha}
    return {c1 + (b,) for b in labels if is_k_chain(c1 + (b,), k)}


def test_matches(label: str, test) -> bool:
    if isinstance(test, AnyTest):
        return True
    if isinstance(test, TextTest):
        return label == TEXT
    return label == test.tag


def test_chains(cs, test) -> set:
    return {c for c in cs if test_matches(c[-1], test)}


def k_chains(d: Dtd, k: int, limit: int | None = None) -> set:
    """Explicit C_d^k restricted to chains starting at the root label."""
    out = set()
    stack = [(d.root,)]
    while stack:
        c = stack.pop()
        out.add(c)
        if limit is not None and len(out) > limit:
            raise OverflowError(f"more than {limit} chains")
        stack.extend(axis_chains(d, k, c, Axis.CHILD))
    return out


# -- reference inference over explicit chains ---------------------------------


@dataclass(frozen=True)
class ChainSets:
    """Return, used and element chains; used/element entries are (chain, closed)."""

    r: frozenset = frozenset()
    v: frozenset = frozenset()
    e: frozenset = frozenset()

    def __or__(self, other: "ChainSets") -> "ChainSets":
        return ChainSets(self.r | other.r, self.v | other.v, self.e | other.e)


_NONE = ChainSets()


def root_env_sets(d: Dtd) -> dict:
    return {ROOT_VAR: frozenset([(d.root,)])}


def infer_query_sets(d: Dtd, k: int, q, env: dict | None = None) -> ChainSets:
    return _QuerySets(d, k).query(q, root_env_sets(d) if env is None else env)


def infer_update_sets(d: Dtd, k: int, u, env: dict | None = None) -> frozenset:
    return frozenset(_QuerySets(d, k).update(u, root_env_sets(d) if env is None else env))


class _QuerySets:
    def __init__(self, d: Dtd, k: int):
        self.d, self.k = d, k

    def query(self, q, env) -> ChainSets:
        if isinstance(q, Empty):
            return _NONE
        if isinstance(q, StrLit):
            return ChainSets(e=frozenset([((TEXT,), False)]))
        if isinstance(q, Seq):
            return self.query(q.left, env) | self.query(q.right, env)
        if isinstance(q, If):
            cond = self.query(q.cond, env)
            out = self.query(q.then, env) | self.query(q.else_, env)
            used = frozenset((c, False) for c in cond.r) | cond.v
            return out | ChainSets(v=used)
        if isinstance(q, Step):
            r, v = set(), set()
            for c in env[q.var]:
                found = test_chains(axis_chains(self.d, self.k, c, q.axis), q.test)
                r |= found
                if found and not q.axis.forward:
                    v.add((c, False))
            return ChainSets(frozenset(r), frozenset(v))
        if isinstance(q, For):
            src = self.query(q.source, env)
            out = ChainSets(v=src.v)
            for c in src.r:
                body = self.query(q.body, {**env, q.var: frozenset([c])})
                out = out | body
                if body.r or body.e:
                    out = out | ChainSets(v=frozenset([(c, False)]))
            return out
        if isinstance(q, Let):
            src = self.query(q.source, env)
            body = self.query(q.body, {**env, q.var: src.r})
            return body | ChainSets(v=src.v | {(c, False) for c in src.r})
        if isinstance(q, Elem):
            body = self.query(q.body, env)
            v = body.v | {(c, True) for c in body.r}
            e = {((q.tag, c[-1]), True) for c in body.r}
            e |= {((q.tag,) + c, closed) for c, closed in body.e}
            if not body.r and not body.e:
                e.add(((q.tag,), False))
            return ChainSets(v=frozenset(v), e=frozenset(e))
        raise TypeError(f"not a query: {type(q).__name__}")

    def update(self, u, env) -> set:
        if isinstance(u, UEmpty):
            return set()
        if isinstance(u, USeq):
            return self.update(u.left, env) | self.update(u.right, env)
        if isinstance(u, UIf):
            return self.update(u.then, env) | self.update(u.else_, env)
        if isinstance(u, UFor):
            out = set()
            for c in self.query(u.source, env).r:
                out |= self.update(u.body, {**env, u.var: frozenset([c])})
            return out
        if isinstance(u, ULet):
            return self.update(u.body, {**env, u.var: self.query(u.source, env).r})
        if isinstance(u, Delete):
            return {UpdateChain(c[:-1], c[-1:]) for c in self.query(u.target, env).r}
        if isinstance(u, Rename):
            out = set()
            for c in self.query(u.target, env).r:
                out.add(UpdateChain(c[:-1], c[-1:]))
                out.add(UpdateChain(c[:-1], (u.tag,)))
            return out
        if isinstance(u, (Insert, Replace)):
            targets = self.query(u.target, env).r
            src = self.query(u.source, env)
            strip = isinstance(u, Replace) or u.pos in (Pos.BEFORE, Pos.AFTER)
            out = set()
            for c in targets:
                prefix = c[:-1] if strip else c
                if isinstance(u, Replace):
                    out.add(UpdateChain(prefix, c[-1:]))
                out |= {UpdateChain(prefix, s[-1:], True) for s in src.r}
                out |= {UpdateChain(prefix, s, closed) for s, closed in src.e}
            return out
        raise TypeError(f"not an update: {type(u).__name__}")


# -- schema skeleton -----------------------------------------------------------


class SchemaGraph:
    """All (depth, label) positions of C_d^k, plus the edges between them.

    Node 0 is a virtual start above the document element. An edge to a child
    labelled b is present when b is allowed by the content model and some path
    to the parent has fewer than k occurrences of b (per-node componentwise
    minimum of tag counts) and the parent depth is below k*|tags|. This
    over-approximates C_d^k by design.
    """

    def __init__(self, d: Dtd, k: int):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.d, self.k = d, k
        self.labels = sorted(d.alphabet) + [TEXT]
        lindex = {a: i for i, a in enumerate(self.labels)}
        self.nodes: list[tuple] = [(0, None)]
        self.index: dict[tuple, int] = {(0, None): 0}
        self.children: list[dict] = [{}]
        self.parents: list[list] = [[]]
        counts: list = [None]
        self._add(1, d.root, counts, lindex)
        self.children[0][d.root] = 1
        self.parents[1].append(0)
        # a k-chain holds at most k occurrences of each tag; merging paths
        # weakens the count vectors, so the depth cap is what guarantees this ends
        max_depth = k * len(d.alphabet)
        level = [1]
        while level:
            nxt = []
            for n in level:
                depth, label = self.nodes[n]
                if label == TEXT:
                    continue
                for b in sorted(d.children_of(label)):
                    if b != TEXT and (counts[n][lindex[b]] >= k or depth >= max_depth):
                        continue
                    key = (depth + 1, b)
                    c = self.index.get(key)
                    cnt = list(counts[n])
                    cnt[lindex[b]] += 1
                    if c is None:
                        c = self._add(depth + 1, b, counts, lindex, cnt)
                        nxt.append(c)
                    else:
                        counts[c] = [min(x, y) for x, y in zip(counts[c], cnt)]
                    self.children[n][b] = c
                    self.parents[c].append(n)
            level = nxt
        self.size = len(self.nodes)
        self.all_mask = (1 << self.size) - 2
        self.label_mask: dict[str, int] = defaultdict(int)
        for n, (_, label) in enumerate(self.nodes):
            if n:
                self.label_mask[label] |= 1 << n
        self.child_mask = [sum(1 << c for c in ch.values()) for ch in self.children]
        self.desc_self = [0] * self.size
        for n in reversed(range(self.size)):
            m = 1 << n
            for c in self.children[n].values():
                m |= self.desc_self[c]
            self.desc_self[n] = m
        self._coreach: dict = {}

    def _add(self, depth, label, counts, lindex, cnt=None):
        n = len(self.nodes)
        self.nodes.append((depth, label))
        self.index[(depth, label)] = n
        self.children.append({})
        self.parents.append([])
        if cnt is None:
            cnt = [0] * len(self.labels)
            cnt[lindex[label]] = 1
        counts.append(cnt)
        return n

    def label(self, n: int) -> str:
        return self.nodes[n][1]

    def depth(self, n: int) -> int:
        return self.nodes[n][0]

    def child(self, n: int, label: str) -> int | None:
        return self.children[n].get(label)

    def test_mask(self, test) -> int:
        if isinstance(test, AnyTest):
            return self.all_mask
        if isinstance(test, TextTest):
            return self.label_mask.get(TEXT, 0)
        return self.label_mask.get(test.tag, 0)

    def coreach(self, tmask: int) -> int:
        """Nodes with some descendant-or-self in ``tmask``."""
        if tmask not in self._coreach:
            self._coreach[tmask] = sum(
                1 << n for n in range(self.size) if self.desc_self[n] & tmask
            )
        return self._coreach[tmask]

    def labels_in(self, mask: int):
        for label, lm in self.label_mask.items():
            if mask & lm:
                yield label, mask & lm

    def spell(self, path) -> tuple:
        return tuple(self.nodes[n][1] for n in path if n)


@lru_cache(maxsize=64)
def schema_graph(d: Dtd, k: int) -> SchemaGraph:
    return SchemaGraph(d, k)


# -- CDAG ----------------------------------------------------------------------


class Cdag:
    """Coded edges over a schema skeleton, with per-expression end indexes.

    A lineage is a tuple of codes (C0, C1, ..., Cm). A root path belongs to it
    when the path splits into m+1 non-empty segments, segment j using only
    edges carrying C_j, and each segment j >= 1 begins at a node where the step
    of C_j was applied to bindings of lineage (C0, ..., C_j-1). Child and
    sibling codes are single-edge segments. Segment 0 begins at the virtual
    start node.
    """

    def __init__(self, graph: SchemaGraph):
        self.graph = graph
        self.edges: dict[tuple, int] = {(0, 1): ROOT_CODE}
        self.up: dict[int, set] = defaultdict(set)
        self.down: dict[int, set] = defaultdict(set)
        self.up[1].add(0)
        self.down[0].add(1)
        self.starts: dict[tuple, int] = {}
        self.single: set = set()
        self.ends: dict[tuple, object] = {}
        self.changes = 0
        self._pending: dict[int, list] = {}
        self._restricted: dict[tuple, int] = {}
        self._next_bit = 1

    def reserve(self, max_eid: int):
        self._next_bit = max(self._next_bit, max_eid + 2)

    def fresh_code(self) -> int:
        code = 1 << self._next_bit
        self._next_bit += 1
        return code

    def mark_starts(self, lineage: tuple, nodes: int, single: bool):
        """Record ``nodes`` as bindings from which the last code of ``lineage`` steps."""
        old = self.starts.get(lineage, 0)
        if nodes & ~old:
            self.starts[lineage] = old | nodes
            self.changes += 1
        if single:
            self.single.add(lineage[-1])

    def add_edge(self, p: int, c: int, code: int):
        key = (p, c)
        old = self.edges.get(key)
        if old is None:
            self.up[c].add(p)
            self.down[p].add(c)
            self.edges[key] = code
            self.changes += 1
        elif code & ~old:
            self.edges[key] = old | code
            self.changes += 1

    def intern(self, parent: int, label: str, code: int) -> int | None:
        c = self.graph.child(parent, label)
        if c is not None:
            self.add_edge(parent, c, code)
        return c

    def defer_descendants(self, code: int, starts: int, tmask: int):
        entry = self._pending.setdefault(code, [0, tmask])
        entry[0] |= starts

    def flush(self):
        """Mark the edges of deferred descendant steps.

        Only edges leading to some node passing the step's test are marked.
        """
        g = self.graph
        for code, (starts, tmask) in self._pending.items():
            keep = g.coreach(tmask)
            seen = starts
            frontier = list(_bits(starts))
            while frontier:
                p = frontier.pop()
                for c in g.children[p].values():
                    if (keep >> c) & 1:
                        self.add_edge(p, c, code)
                        if not (seen >> c) & 1:
                            seen |= 1 << c
                            frontier.append(c)
        self._pending.clear()

    # -- segment automaton ---------------------------------------------------

    def advance(self, lineage: tuple, x: int, j: int, y: int) -> list:
        """Segment indexes possible at ``y`` after state (x, j) takes edge x->y."""
        e = self.edges.get((x, y), 0)
        out = []
        if j >= 0 and e & lineage[j] and lineage[j] not in self.single:
            out.append(j)
        nj = j + 1
        if nj < len(lineage) and e & lineage[nj]:
            if (x == 0) if nj == 0 else (self.starts.get(lineage[: nj + 1], 0) >> x) & 1:
                out.append(nj)
        return out

    def retreat(self, lineage: tuple, y: int, j: int, x: int) -> list:
        """Segment indexes at ``x`` from which edge x->y leads to state (y, j)."""
        seg = lineage[j]
        if not self.edges.get((x, y), 0) & seg:
            return []
        if x == 0:
            return [-1] if j == 0 else []
        out = [j] if seg not in self.single else []
        if j >= 1 and (self.starts.get(lineage[: j + 1], 0) >> x) & 1:
            out.append(j - 1)
        return out

    def coreach_states(self, lineage: tuple, targets) -> set:
        """States (node, segment) from which some target state is reachable."""
        seen = set(targets)
        stack = list(seen)
        while stack:
            y, j = stack.pop()
            for x in self.up.get(y, ()):
                for i in self.retreat(lineage, y, j, x):
                    if (x, i) not in seen:
                        seen.add((x, i))
                        stack.append((x, i))
        return seen

    def prefixes(self, n: int, lineage: tuple, closure: bool) -> dict:
        """Proper prefixes of the paths to ``n``, as lineage -> mask.

        A prefix ending in segment j belongs to lineage[:j+1]. Without
        ``closure`` only parent nodes are returned.
        """
        out: dict = {}
        start = (n, len(lineage) - 1)
        seen = {start}
        stack = [start]
        while stack:
            y, j = stack.pop()
            for x in self.up.get(y, ()):
                if x == 0:
                    continue
                for i in self.retreat(lineage, y, j, x):
                    key = lineage[: i + 1]
                    out[key] = out.get(key, 0) | (1 << x)
                    if closure and (x, i) not in seen:
                        seen.add((x, i))
                        stack.append((x, i))
        return out

    def restrict(self, n: int, lineage: tuple, through: int) -> tuple:
        """A lineage for the paths to ``n`` that cross a node of ``through``."""
        desc = self.graph.desc_self
        start = (0, -1, False)
        seen = {start}
        stack = [start]
        moves = []
        while stack:
            x, j, crossed = stack.pop()
            for y in self.down.get(x, ()):
                if not (desc[y] >> n) & 1:
                    continue
                c = crossed or bool((through >> y) & 1)
                for i in self.advance(lineage, x, j, y):
                    s = (y, i, c)
                    moves.append(((x, j, crossed), s))
                    if s not in seen:
                        seen.add(s)
                        stack.append(s)
        final = len(lineage) - 1
        if (n, final, False) not in seen:
            return lineage
        live = {(n, final, True)} & seen
        back = defaultdict(list)
        for a, b in moves:
            back[b].append(a)
        stack = list(live)
        while stack:
            for a in back[stack.pop()]:
                if a not in live:
                    live.add(a)
                    stack.append(a)
        code = self._restricted.get((n, lineage, through))
        if code is None:
            code = self._restricted[(n, lineage, through)] = self.fresh_code()
        for a, b in moves:
            if a in live and b in live:
                self.add_edge(a[0], b[0], code)
        return (code,)

    # -- plain code filters --------------------------------------------------

    def parents(self, n: int, codes: int) -> int:
        out = 0
        for p in self.up.get(n, ()):
            if self.edges[(p, n)] & codes:
                out |= 1 << p
        return out

    def backward(self, nodes: int, codes: int) -> int:
        out = 0
        for n in _bits(nodes):
            out |= self.parents(n, codes)
        return out

    # -- denotation ----------------------------------------------------------

    def paths(self, n: int, lineage: tuple, limit: int = 100_000) -> set:
        """All root paths to ``n`` belonging to ``lineage``."""
        out = set()

        def go(cur, j, suffix):
            if len(out) >= limit:
                return
            if cur == 0:
                out.add(tuple(reversed(suffix)))
                return
            for p in self.up.get(cur, ()):
                for i in self.retreat(lineage, cur, j, p):
                    suffix.append(p)
                    go(p, i, suffix)
                    suffix.pop()

        go(n, len(lineage) - 1, [n])
        return out

    def path_of(self, chain) -> list | None:
        """Node path spelling ``chain`` in the skeleton, if any."""
        path = [0]
        for label in chain:
            nxt = self.graph.child(path[-1], label)
            if nxt is None:
                return None
            path.append(nxt)
        return path

    def accepts(self, lineage: tuple, path) -> bool:
        states = {-1}
        for x, y in zip(path, path[1:]):
            states = {i for j in states for i in self.advance(lineage, x, j, y)}
            if not states:
                return False
        return len(lineage) - 1 in states

    def denotes(self, ends: dict, chain) -> bool:
        """Membership of one chain in the set an ends mapping stands for."""
        path = self.path_of(chain)
        if path is None or len(path) < 2:
            return False
        return any((mask >> path[-1]) & 1 and self.accepts(lineage, path) for lineage, mask in ends.items())

    def chains(self, ends: dict) -> set:
        """Materialize the k-chains denoted by an ends mapping."""
        out = set()
        for lineage, mask in ends.items():
            for n in _bits(mask):
                for path in self.paths(n, lineage):
                    c = self.graph.spell(path)
                    if is_k_chain(c, self.graph.k):
                        out.add(c)
        return out

    def stats(self) -> dict:
        nodes = {n for e in self.edges for n in e}
        return {"nodes": len(nodes), "edges": len(self.edges)}

    def to_dot(self, marks: dict | None = None) -> str:
        """DOT rendering; ``marks`` maps node ids to annotation strings."""
        g = self.graph
        marks = marks or {}
        nodes = sorted({n for e in self.edges for n in e})
        lines = ["digraph cdag {", "  rankdir=TB;"]
        for n in nodes:
            depth, label = g.nodes[n]
            name = "start" if n == 0 else f"{depth}:{label}"
            if n in marks:
                name += "\\n" + " ".join(sorted(marks[n]))
            lines.append(f'  n{n} [label="{name}"];')
        for (p, c), codes in sorted(self.edges.items()):
            ids = ",".join(str(i - 1) if i else "root" for i in _bits(codes))
            lines.append(f'  n{p} -> n{c} [label="{ids}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _merge(a: dict, b: dict) -> dict:
    if not b:
        return a
    if not a:
        return b
    out = dict(a)
    for key, mask in b.items():
        out[key] = out.get(key, 0) | mask
    return out


@dataclass(frozen=True)
class QueryEnds:
    """CDAG-side query chains: lineage->mask maps plus explicit element chains."""

    r: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    vc: dict = field(default_factory=dict)
    e: frozenset = frozenset()

    def __or__(self, other: "QueryEnds") -> "QueryEnds":
        return QueryEnds(
            _merge(self.r, other.r),
            _merge(self.v, other.v),
            _merge(self.vc, other.vc),
            self.e | other.e,
        )


_NO_ENDS = QueryEnds()


@dataclass(frozen=True)
class UpdateEnd:
    """Update chains ``c:suffix`` for every c denoted by (lineage, mask).

    With ``strip`` the prefix is the parent path of each node in the mask.
    """

    lineage: tuple
    strip: bool
    suffix: tuple
    closed: bool


def root_env(graph: SchemaGraph) -> dict:
    return {ROOT_VAR: {(ROOT_CODE,): 1 << 1}}


class _Inference:
    def __init__(self, g: Cdag):
        self.g = g
        self.graph = g.graph
        self.memo: dict = {}
        self.unions: dict = {}
        self._free: dict = {}

    def start(self, e):
        self.g.reserve(max(sub.eid for sub in walk(e)))
        return self

    def _table(self, body, env, var) -> dict:
        """Memo table for ``body`` under fixed bindings of its other free variables."""
        fv = self._free.get(body.eid)
        if fv is None:
            fv = self._free[body.eid] = sorted(free_vars(body))
        key = (body.eid,) + tuple(tuple(sorted(env[x].items())) for x in fv if x != var)
        return self.memo.setdefault(key, {})

    def _gather(self, table, lineage, mask, one) -> tuple:
        """Union of per-binding results over ``mask`` and the productive bindings.

        Where the mask holds a whole skeleton subtree, the union for that
        subtree is computed once and kept in ``table``.
        """
        desc = self.graph.desc_self
        children = self.graph.children

        def single(n):
            res = one(n)
            if res.r or res.e:
                return res, 1 << n
            return QueryEnds(v=res.v, vc=res.vc), 0

        def closure(n):
            key = ("subtree", lineage, n)
            got = table.get(key)
            if got is None:
                acc, productive = single(n)
                for c in children[n].values():
                    part, p = closure(c)
                    acc, productive = acc | part, productive | p
                got = table[key] = (acc, productive)
            return got

        acc, productive = _NO_ENDS, 0
        rest = mask
        while rest:
            n = (rest & -rest).bit_length() - 1
            if desc[n] & ~mask:
                part, p = single(n)
                rest ^= 1 << n
            else:
                part, p = closure(n)
                rest &= ~desc[n]
            acc, productive = acc | part, productive | p
        return acc, productive

    def _record(self, e, ends: QueryEnds):
        idx = self.g.ends
        for role, part in ((ChainRole.RETURN, ends.r), (ChainRole.USED, _merge(ends.v, ends.vc))):
            if part:
                idx[(e.eid, role)] = _merge(idx.get((e.eid, role), {}), part)
        if ends.e:
            idx[(e.eid, ChainRole.ELEMENT)] = idx.get((e.eid, ChainRole.ELEMENT), frozenset()) | ends.e

    def query(self, q, env) -> QueryEnds:
        out = self._query(q, env)
        self._record(q, out)
        return out

    def _query(self, q, env) -> QueryEnds:
        if isinstance(q, Empty):
            return _NO_ENDS
        if isinstance(q, StrLit):
            return QueryEnds(e=frozenset([((TEXT,), False)]))
        if isinstance(q, Seq):
            return self.query(q.left, env) | self.query(q.right, env)
        if isinstance(q, If):
            cond = self.query(q.cond, env)
            out = self.query(q.then, env) | self.query(q.else_, env)
            return out | QueryEnds(v=_merge(cond.r, cond.v), vc=cond.vc)
        if isinstance(q, Step):
            return self.step(q, env[q.var])
        if isinstance(q, For):
            src = self.query(q.source, env)
            body = q.body
            # a backward step on the bound variable already records, per chain,
            # which bindings produce results
            exact = isinstance(body, Step) and body.var == q.var and not body.axis.forward
            table = self._table(body, env, q.var)
            # bindings with equal source results give equal unions
            whole = (id(table), tuple(src.r.items()), tuple(src.v.items()), tuple(src.vc.items()))
            cached = self.unions.get(whole)
            if cached is not None:
                return cached
            out = QueryEnds(v=src.v, vc=src.vc)
            for lineage, mask in src.r.items():

                def one(n, lineage=lineage):
                    res = table.get((lineage, n))
                    if res is None:
                        res = table[(lineage, n)] = self.query(body, {**env, q.var: {lineage: 1 << n}})
                    return res

                part, productive = self._gather(table, lineage, mask, one)
                out = out | part
                if productive and not exact:
                    out = out | QueryEnds(v={lineage: productive})
            self.unions[whole] = out
            return out
        if isinstance(q, Let):
            src = self.query(q.source, env)
            body = self.query(q.body, {**env, q.var: src.r})
            return body | QueryEnds(v=_merge(src.r, src.v), vc=src.vc)
        if isinstance(q, Elem):
            body = self.query(q.body, env)
            e = set()
            for mask in body.r.values():
                e |= {((q.tag, label), True) for label, _ in self.graph.labels_in(mask)}
            e |= {((q.tag,) + c, closed) for c, closed in body.e}
            if not body.r and not body.e:
                e.add(((q.tag,), False))
            return QueryEnds(v=body.v, vc=_merge(body.vc, body.r), e=frozenset(e))
        raise TypeError(f"not a query: {type(q).__name__}")

    def step(self, q: Step, bound: dict) -> QueryEnds:
        g, graph = self.g, self.graph
        code = code_of(q.eid)
        tmask = graph.test_mask(q.test)
        r: dict = {}
        v: dict = {}

        def put(target, lineage, mask):
            if mask:
                target[lineage] = target.get(lineage, 0) | mask

        axis = q.axis
        if axis not in (Axis.SELF, Axis.CHILD, Axis.DESCENDANT, Axis.DESCENDANT_OR_SELF):
            g.flush()
        for lineage, mask in bound.items():
            if axis is Axis.SELF:
                put(r, lineage, mask & tmask)
            elif axis is Axis.CHILD:
                found = starts = 0
                for n in _bits(mask):
                    kids = graph.child_mask[n] & tmask
                    if kids:
                        starts |= 1 << n
                    for c in _bits(kids):
                        g.add_edge(n, c, code)
                    found |= kids
                g.mark_starts(lineage + (code,), starts, True)
                put(r, lineage + (code,), found)
            elif axis in (Axis.DESCENDANT, Axis.DESCENDANT_OR_SELF):
                below = 0
                productive = 0
                for n in _bits(mask):
                    strict = graph.desc_self[n] ^ (1 << n)
                    below |= strict
                    if strict & tmask:
                        productive |= 1 << n
                if axis is Axis.DESCENDANT_OR_SELF:
                    put(r, lineage, mask & tmask)
                else:
                    # not a forward axis: bindings with results are used
                    put(v, lineage, productive)
                found = below & tmask
                if found:
                    g.mark_starts(lineage + (code,), productive, False)
                    g.defer_descendants(code, productive, tmask)
                put(r, lineage + (code,), found)
            else:
                for n in _bits(mask):
                    if axis is Axis.FOLLOWING_SIBLING or axis is Axis.PRECEDING_SIBLING:
                        found, through = self._siblings(n, lineage, axis, tmask, code, r)
                    else:
                        ups = g.prefixes(n, lineage, axis is not Axis.PARENT)
                        if axis is Axis.ANCESTOR_OR_SELF:
                            ups[lineage] = ups.get(lineage, 0) | (1 << n)
                        found = 0
                        for key, m in ups.items():
                            put(r, key, m & tmask)
                            found |= m & tmask
                        through = found
                    if not found:
                        continue
                    if (through >> n) & 1:
                        put(v, lineage, 1 << n)
                    else:
                        put(v, g.restrict(n, lineage, through), 1 << n)
        return QueryEnds(r=r, v=v)

    def _siblings(self, n, lineage, axis, tmask, code, r) -> tuple:
        g, graph = self.g, self.graph
        alpha = graph.label(n)
        found = through = 0
        for key, pmask in g.prefixes(n, lineage, False).items():
            hit = 0
            for p in _bits(pmask):
                order = graph.d.order_of(graph.label(p))
                if axis is Axis.FOLLOWING_SIBLING:
                    labels = {y for x, y in order if x == alpha}
                else:
                    labels = {x for x, y in order if y == alpha}
                for b in labels:
                    s = graph.child(p, b)
                    if s is not None and (tmask >> s) & 1:
                        g.add_edge(p, s, code)
                        g.mark_starts(key + (code,), 1 << p, True)
                        hit |= 1 << s
                        through |= 1 << p
            if hit:
                r[key + (code,)] = r.get(key + (code,), 0) | hit
                found |= hit
        return found, through

    def update(self, u, env) -> dict:
        """Returns a mapping UpdateEnd -> node mask."""
        if isinstance(u, UEmpty):
            return {}
        if isinstance(u, USeq):
            return _merge(self.update(u.left, env), self.update(u.right, env))
        if isinstance(u, UIf):
            self.query(u.cond, env)
            return _merge(self.update(u.then, env), self.update(u.else_, env))
        if isinstance(u, UFor):
            out: dict = {}
            table = self._table(u.body, env, u.var)
            for lineage, mask in self.query(u.source, env).r.items():
                for n in _bits(mask):
                    res = table.get((lineage, n))
                    if res is None:
                        res = table[(lineage, n)] = self.update(u.body, {**env, u.var: {lineage: 1 << n}})
                    for key, m in res.items():
                        out[key] = out.get(key, 0) | m
            return out
        if isinstance(u, ULet):
            return self.update(u.body, {**env, u.var: self.query(u.source, env).r})
        graph = self.graph
        out = defaultdict(int)
        targets = self.query(u.target, env).r
        if isinstance(u, (Delete, Rename)):
            for lineage, mask in targets.items():
                for label, lm in graph.labels_in(mask):
                    out[UpdateEnd(lineage, True, (label,), False)] |= lm
                    if isinstance(u, Rename):
                        out[UpdateEnd(lineage, True, (u.tag,), False)] |= lm
            return dict(out)
        src = self.query(u.source, env)
        strip = isinstance(u, Replace) or u.pos in (Pos.BEFORE, Pos.AFTER)
        heads = set()
        for mask in src.r.values():
            heads |= {label for label, _ in graph.labels_in(mask)}
        for lineage, mask in targets.items():
            if isinstance(u, Replace):
                for label, lm in graph.labels_in(mask):
                    out[UpdateEnd(lineage, True, (label,), False)] |= lm
            for b in heads:
                out[UpdateEnd(lineage, strip, (b,), True)] |= mask
            for c, closed in src.e:
                out[UpdateEnd(lineage, strip, c, closed)] |= mask
        return dict(out)


@dataclass
class Inferred:
    """A finished CDAG together with the top-level ends of its expression."""

    cdag: Cdag
    query: QueryEnds | None = None
    update: dict | None = None

    def update_chains(self) -> set:
        return materialize_update(self.cdag, self.update or {})


_LOOKS_UP = (Axis.PARENT, Axis.ANCESTOR, Axis.ANCESTOR_OR_SELF, Axis.FOLLOWING_SIBLING, Axis.PRECEDING_SIBLING)


def _settle(g: Cdag, e, run):
    """Run inference until the CDAG stops changing.

    Upward and sibling steps read the paths of their bindings, which later
    bindings of the same lineage may still extend; memoized results computed
    before that are only final once a whole pass adds nothing.
    """
    looks_up = any(isinstance(s, Step) and s.axis in _LOOKS_UP for s in walk(e))
    while True:
        before = g.changes
        ends = run(_Inference(g).start(e))
        g.flush()
        if not looks_up or g.changes == before:
            return ends


def infer_query(d: Dtd, k: int, q, env: dict | None = None, g: Cdag | None = None) -> Inferred:
    g = g or Cdag(schema_graph(d, k))
    env = root_env(g.graph) if env is None else env
    return Inferred(g, query=_settle(g, q, lambda inf: inf.query(q, env)))


def infer_update(d: Dtd, k: int, u, env: dict | None = None, g: Cdag | None = None) -> Inferred:
    g = g or Cdag(schema_graph(d, k))
    env = root_env(g.graph) if env is None else env
    return Inferred(g, update=_settle(g, u, lambda inf: inf.update(u, env)))


def materialize_query(g: Cdag, ends: QueryEnds) -> ChainSets:
    v = {(c, False) for c in g.chains(ends.v)} | {(c, True) for c in g.chains(ends.vc)}
    return ChainSets(frozenset(g.chains(ends.r)), frozenset(v), ends.e)


def update_covers(g: Cdag, ends: dict, chain) -> bool:
    """Is ``chain`` of the form c.s' for an inferred c:s with s' a non-empty
    prefix of s (or, for closed suffixes, an extension of s)?"""
    chain = tuple(chain)
    for end, mask in ends.items():
        for cut in range(len(chain)):
            prefix, rest = chain[:cut], chain[cut:]
            s = end.suffix
            if not (rest == s[: len(rest)] or (end.closed and rest[: len(s)] == s)):
                continue
            if end.strip:
                # the prefix extended by some node of the mask
                if g.path_of(prefix) is None:
                    continue
                for label, lm in g.graph.labels_in(mask):
                    if g.denotes({end.lineage: lm}, prefix + (label,)):
                        return True
            elif prefix and g.denotes({end.lineage: mask}, prefix):
                return True
    return False


def materialize_update(g: Cdag, ends: dict) -> set:
    out = set()
    for end, mask in ends.items():
        for c in g.chains({end.lineage: mask}):
            prefix = c[:-1] if end.strip else c
            out.add(UpdateChain(prefix, end.suffix, end.closed))
    return out


def chains_json(inf: Inferred) -> str:
    doc: dict = {}
    if inf.query is not None:
        sets = materialize_query(inf.cdag, inf.query)
        doc["return"] = sorted(format_chain(c) for c in sets.r)
        doc["used"] = sorted(format_chain(c) + ("..." if closed else "") for c, closed in sets.v)
        doc["element"] = sorted(format_chain(c) + ("..." if closed else "") for c, closed in sets.e)
    if inf.update is not None:
        doc["update"] = sorted(str(c) for c in inf.update_chains())
    doc["stats"] = inf.cdag.stats()
    return json.dumps(doc, indent=2)


def chains_dot(inf: Inferred) -> str:
    marks: dict = defaultdict(set)
    if inf.query is not None:
        for tag, part in (("R", inf.query.r), ("U", inf.query.v), ("U*", inf.query.vc)):
            for mask in part.values():
                for n in _bits(mask):
                    marks[n].add(tag)
    if inf.update is not None:
        for end, mask in inf.update.items():
            for n in _bits(mask):
                cut = "^" if end.strip else ""
                marks[n].add(f"{cut}:{format_chain(end.suffix)}")
    return inf.cdag.to_dot(marks)


def cdag_intern(g: Cdag, parent: int, label: str, expr: int) -> int | None:
    return g.intern(parent, label, code_of(expr))


def cdag_backward(g: Cdag, nodes: int, expr_filter: int) -> int:
    return g.backward(nodes, expr_filter)


def expression_codes(e) -> int:
    """Code set of an expression and all its subexpressions, plus the root code."""
    out = ROOT_CODE
    for sub in walk(e):
        out |= code_of(sub.eid)
    return out
