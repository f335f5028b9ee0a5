"""Conflict checking between query chains and update chains.

A return chain c_r conflicts with an update chain c:s when c_r is a prefix of
c.s (or, for closed suffixes, c.s is a prefix of c_r), or when c.head(s) is a
prefix of c_r. A used chain c_v conflicts when c.head(s) is a prefix of it;
subtree-closed used chains also conflict with updates below them.
"""
from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field

from .chains import (
    Cdag,
    ChainSets,
    Inferred,
    UpdateChain,
    _bits,
    infer_query,
    infer_query_sets,
    infer_update,
    infer_update_sets,
    schema_graph,
)
from .finite import k_of
from .lang import quasi_closed, LangError
from .schema import Dtd, format_chain, is_prefix


class Result(enum.Enum):
    INDEPENDENT = "independent"
    MAYBE_DEPENDENT = "maybe-dependent"


class Kind(enum.Enum):
    RinU = "RinU"
    UinR = "UinR"
    UinV = "UinV"


@dataclass(frozen=True, order=True)
class Witness:
    kind: Kind
    query_chain: tuple
    update_chain: UpdateChain

    def to_json(self) -> dict:
        return {
            "query_chain": format_chain(self.query_chain),
            "update_chain": str(self.update_chain),
            "kind": self.kind.value,
        }


@dataclass
class Verdict:
    result: Result
    witnesses: list
    k_used: int
    k_q: int = 0
    k_u: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def independent(self) -> bool:
        return self.result is Result.INDEPENDENT


def confl_plain(t1, t2) -> set:
    return {(c1, c2) for c1 in t1 for c2 in t2 if is_prefix(c1, c2)}


# -- explicit chains -----------------------------------------------------------


def conflicts_sets(sets: ChainSets, updates, limit: int | None = None) -> list:
    out = []
    for uc in sorted(updates):
        full = uc.prefix + uc.suffix
        head = uc.prefix + uc.suffix[:1]
        for cr in sorted(sets.r):
            if is_prefix(cr, full) or (uc.closed and is_prefix(full, cr)):
                out.append(Witness(Kind.RinU, cr, uc))
            if is_prefix(head, cr):
                out.append(Witness(Kind.UinR, cr, uc))
        for cv, closed in sorted(sets.v):
            if is_prefix(head, cv) or (closed and is_prefix(cv, head)):
                out.append(Witness(Kind.UinV, cv, uc))
        if limit is not None and len(out) >= limit:
            break
    return sorted(set(out), key=_witness_order)


def _witness_order(w: Witness):
    return (len(w.query_chain) + len(w.update_chain.prefix), w.kind.value, w.query_chain, w.update_chain)


def _verdict(witnesses, k, kq, ku, stats) -> Verdict:
    result = Result.MAYBE_DEPENDENT if witnesses else Result.INDEPENDENT
    return Verdict(result, witnesses, k, kq, ku, stats)


def _bounds(q, u, k):
    for e, what in ((q, "query"), (u, "update")):
        if not quasi_closed(e):
            raise LangError(f"{what} has free variables other than the root")
    kq, ku = k_of(q).k, k_of(u).k
    return kq, ku, (max(1, kq + ku) if k is None else k)


def check_sets(d: Dtd, q, u, k: int | None = None) -> Verdict:
    """Reference check over explicitly enumerated chains."""
    kq, ku, k = _bounds(q, u, k)
    sets = infer_query_sets(d, k, q)
    updates = infer_update_sets(d, k, u)
    return _verdict(conflicts_sets(sets, updates), k, kq, ku, {})


# -- CDAG ----------------------------------------------------------------------


class _Pair:
    """Conflict search over a query CDAG and an update CDAG on one skeleton.

    Paths are tracked as states (node, query segment, update segment) of the
    two lineage automata run side by side.
    """

    def __init__(self, gq: Cdag, gu: Cdag):
        if gq.graph is not gu.graph:
            raise ValueError("CDAGs must share a schema skeleton")
        self.gq, self.gu, self.graph = gq, gu, gq.graph
        self._targets: dict = {}
        self._co: dict = {}

    def targets(self, end, umask):
        """Update states at prefix ends, and the states that can reach them."""
        key = (end, umask)
        if key not in self._targets:
            gu, lu = self.gu, end.lineage
            finals = {(un, len(lu) - 1) for un in _bits(umask)}
            if end.strip:
                ends = set()
                for un, j in finals:
                    for x in gu.up.get(un, ()):
                        ends |= {(x, i) for i in gu.retreat(lu, un, j, x)}
            else:
                ends = finals
            self._targets[key] = (ends, gu.coreach_states(lu, ends))
        return self._targets[key]

    def common(self, lq: tuple, lu: tuple, live: set):
        """Product states reachable from the start, with predecessors."""
        key = (lq, lu, id(live))
        if key not in self._co:
            gq, gu = self.gq, self.gu
            start = (0, -1, -1)
            pred = {start: None}
            queue = deque([start])
            while queue:
                s = queue.popleft()
                x, jq, ju = s
                for y in gq.down.get(x, ()):
                    for iu in gu.advance(lu, x, ju, y):
                        if (y, iu) not in live:
                            continue
                        for iq in gq.advance(lq, x, jq, y):
                            t = (y, iq, iu)
                            if t not in pred:
                                pred[t] = s
                                queue.append(t)
            self._co[key] = pred
        return self._co[key]

    def below(self, lq: tuple, start: tuple, labels=None):
        """Query states reached downward from ``start`` (spelling ``labels``
        when given), with predecessors."""
        gq = self.gq
        pred = {start: None}
        if labels is not None:
            level = [start]
            for label in labels:
                nxt = []
                for s in level:
                    y = self.graph.child(s[0], label)
                    if y is None:
                        continue
                    for i in gq.advance(lq, s[0], s[1], y):
                        if (y, i) not in pred:
                            pred[(y, i)] = s
                            nxt.append((y, i))
                level = nxt
            return pred, level
        queue = deque([start])
        while queue:
            s = queue.popleft()
            for y in gq.down.get(s[0], ()):
                for i in gq.advance(lq, s[0], s[1], y):
                    if (y, i) not in pred:
                        pred[(y, i)] = s
                        queue.append((y, i))
        return pred, None

    def run(self, q_ends, u_ends):
        """Yield (kind, query node, query lineage, detail) for each conflict."""
        for end, umask in u_ends.items():
            ends, live = self.targets(end, umask)
            parts = [(Kind.RinU, q_ends.r, False), (Kind.UinR, q_ends.r, False)]
            parts += [(Kind.UinV, q_ends.v, False), (Kind.UinV, q_ends.vc, True)]
            for kind, part, closed in parts:
                for lq, qmask in part.items():
                    final = len(lq) - 1
                    pred = self.common(lq, end.lineage, live)
                    for s in pred:
                        n, jq, ju = s
                        if (kind is Kind.RinU or closed) and jq == final and (qmask >> n) & 1:
                            # the query chain is a prefix of the update prefix
                            yield kind, n, lq, ("above", end, umask, s, None)
                        if (n, ju) not in ends:
                            continue
                        if kind is Kind.RinU:
                            labels = end.suffix
                            tails, level = self.below(lq, (n, jq), labels)
                            for t in tails:
                                if t[1] == final and t != (n, jq) and (qmask >> t[0]) & 1:
                                    yield kind, t[0], lq, ("suffix", end, umask, s, (tails, t))
                            if end.closed:
                                for top in level:
                                    more, _ = self.below(lq, top)
                                    for t in more:
                                        if t != top and t[1] == final and (qmask >> t[0]) & 1:
                                            yield kind, t[0], lq, ("closed", end, umask, s, (tails, top, more, t))
                        else:
                            _, level = self.below(lq, (n, jq), end.suffix[:1])
                            for top in level:
                                more, _ = self.below(lq, top)
                                for t in more:
                                    if t[1] == final and (qmask >> t[0]) & 1:
                                        yield kind, t[0], lq, ("head", end, umask, s, (top, more, t))

    # -- witnesses ---------------------------------------------------------

    @staticmethod
    def _trace(pred, s):
        out = []
        while s is not None:
            out.append(s[0])
            s = pred[s]
        return out[::-1]

    def _finish(self, end, umask, state):
        """Complete an update path from (node, segment) to a prefix end."""
        ends, live = self.targets(end, umask)
        gu, lu = self.gu, end.lineage
        start = (state[0], state[2])
        pred = {start: None}
        queue = deque([start])
        while queue:
            s = queue.popleft()
            if s in ends:
                return self._trace(pred, s)
            for y in gu.down.get(s[0], ()):
                for i in gu.advance(lu, s[0], s[1], y):
                    t = (y, i)
                    if t in live and t not in pred:
                        pred[t] = s
                        queue.append(t)
        raise AssertionError("update path cannot be completed")

    def witness(self, kind, n, lq, detail) -> Witness:
        spell = self.graph.spell
        how, end, umask, s, extra = detail
        base = self._trace(self.common(lq, end.lineage, self.targets(end, umask)[1]), s)
        if how == "above":
            prefix_path = base + self._finish(end, umask, s)[1:]
            return Witness(kind, spell(base), UpdateChain(spell(prefix_path), end.suffix, end.closed))
        uc = UpdateChain(spell(base), end.suffix, end.closed)
        if how == "suffix":
            tails, t = extra
            tail = self._trace(tails, t)[1:]
        elif how == "closed":
            tails, top, more, t = extra
            tail = self._trace(tails, top)[1:] + self._trace(more, t)[1:]
        else:
            top, more, t = extra
            tail = self._trace(more, t)
        return Witness(kind, spell(base + tail), uc)


def check_cdag(gq: Cdag, gu: Cdag, q_ends, u_ends, limit: int = 20) -> list:
    """Witnesses of conflict between CDAG-inferred query and update chains."""
    pair = _Pair(gq, gu)
    out = []
    seen = set()
    for kind, n, lq, detail in pair.run(q_ends, u_ends):
        key = (kind, n, lq, detail[0], detail[1])
        if key in seen:
            continue
        seen.add(key)
        out.append(pair.witness(kind, n, lq, detail))
        if len(out) >= limit:
            break
    return sorted(set(out), key=_witness_order)


def analyze(d: Dtd, q, u, k: int | None = None, limit: int = 20) -> Verdict:
    """Infer chains for ``q`` and ``u`` on a shared skeleton and check them."""
    kq, ku, k = _bounds(q, u, k)
    timings = {}
    t0 = time.perf_counter()
    graph = schema_graph(d, k)
    inf_q = infer_query(d, k, q, g=Cdag(graph))
    t1 = time.perf_counter()
    inf_u = infer_update(d, k, u, g=Cdag(graph))
    t2 = time.perf_counter()
    witnesses = check_cdag(inf_q.cdag, inf_u.cdag, inf_q.query, inf_u.update, limit)
    t3 = time.perf_counter()
    timings = {"infer_q": (t1 - t0) * 1e3, "infer_u": (t2 - t1) * 1e3, "check": (t3 - t2) * 1e3}
    sq, su = inf_q.cdag.stats(), inf_u.cdag.stats()
    stats = {
        "timings_ms": timings,
        "cdag_stats": {"nodes": sq["nodes"] + su["nodes"], "edges": sq["edges"] + su["edges"]},
        "skeleton_nodes": graph.size,
        "inferred": (inf_q, inf_u),
    }
    return _verdict(witnesses, k, kq, ku, stats)


def check(d: Dtd, q, u, k: int | None = None, method: str = "cdag") -> Verdict:
    if method == "sets":
        return check_sets(d, q, u, k)
    if method != "cdag":
        raise ValueError(f"unknown method {method!r}")
    return analyze(d, q, u, k)
