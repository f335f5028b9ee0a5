import itertools
import random

import pytest

from xmlqui.chains import ChainSets, UpdateChain, infer_query_sets, infer_update_sets, k_chains, materialize_query
from xmlqui.cli import corpus, load_schema
from xmlqui.independence import (
    Kind,
    Result,
    analyze,
    check,
    check_sets,
    confl_plain,
    conflicts_sets,
)
from xmlqui.lang import parse_query, parse_update
from xmlqui.schema import is_prefix, parse_dtd

import gen


def chain(text):
    return tuple(text.split("."))


BRANCHES = "<!ELEMENT a (b|d)*><!ELEMENT b (c)><!ELEMENT d (c)><!ELEMENT c (e|f)*><!ELEMENT e EMPTY><!ELEMENT f EMPTY>"


def test_confl_plain():
    assert confl_plain({chain("doc.a")}, {chain("doc.a.c")}) == {(chain("doc.a"), chain("doc.a.c"))}
    assert confl_plain({chain("doc.a.c")}, {chain("doc.b.c")}) == set()
    assert confl_plain(set(), {chain("doc.a")}) == set()


@pytest.mark.parametrize("method", ["cdag", "sets"])
def test_q1_u1_independent(fig1, method):
    v = check(fig1, parse_query("//a//c"), parse_update("delete //b//c"), method=method)
    assert v.result is Result.INDEPENDENT and v.witnesses == []
    # two recursive steps plus one child step on each side
    assert (v.k_q, v.k_u, v.k_used) == (3, 3, 6)


@pytest.mark.parametrize("method", ["cdag", "sets"])
def test_q2_u2_independent(bib, method):
    u = parse_update("for $x in //book return insert <author/> into $x")
    assert check(bib, parse_query("//title"), u, method=method).independent


def test_control_dependent(control):
    v = analyze(control, parse_query("//a//c"), parse_update("delete //b//c"))
    assert v.result is Result.MAYBE_DEPENDENT and v.witnesses


@pytest.mark.parametrize("method", ["cdag", "sets"])
def test_d1_dependence_witness(d1, method):
    v = check(d1, parse_query("/descendant::b"), parse_update("delete /descendant::c"), 2, method)
    assert v.result is Result.MAYBE_DEPENDENT
    first = v.witnesses[0]
    assert first.kind is Kind.RinU
    assert first.query_chain == chain("r.a.b")
    assert first.update_chain == UpdateChain(chain("r.a.b.f.a"), ("c",))


def test_d1_never_independent_above_2(d1):
    q, u = parse_query("/descendant::b"), parse_update("delete /descendant::c")
    for k in range(2, 6):
        assert not analyze(d1, q, u, k).independent


def test_self_conflict(fig1):
    v = analyze(fig1, parse_query("//c"), parse_update("delete //c"))
    assert not v.independent
    assert {w.kind for w in v.witnesses} >= {Kind.RinU}


def test_merged_graph_keeps_precision():
    d = parse_dtd(BRANCHES)
    q = parse_query("(/a/b/c/e, /a/d/c/f)")
    u = parse_update("delete /a/b/c/f")
    v = analyze(d, q, u)
    assert v.independent
    iq, _ = v.stats["inferred"]
    # the query graph spells a.b.c.f, but no inferred lineage follows it
    assert iq.cdag.path_of(chain("a.b.c.f")) is not None
    assert chain("a.b.c.f") not in materialize_query(iq.cdag, iq.query).r


def test_upward_step_in_merged_graph():
    d = parse_dtd(BRANCHES)
    q = parse_query("(//c/e, /a/d/c/f/ancestor::*)")
    u = parse_update("delete /a/b/c/f")
    v = analyze(d, q, u)
    assert not v.independent
    # the witness is the returned root, not a chain through b
    assert all(w.query_chain in {chain("a"), chain("a.b.c.e")} or "d" in w.query_chain for w in v.witnesses)


def _valid(d, sets, updates, w):
    if w.query_chain not in sets.r | {c for c, _ in sets.v} or w.update_chain not in updates:
        return False
    assert conflicts_sets(sets, {w.update_chain}), w
    return True


@pytest.mark.parametrize("case", corpus(), ids=lambda c: c["name"])
def test_witnesses_are_inferred_conflicts(case):
    d = load_schema(case["schema"])
    q, u = parse_query(case["query"]), parse_update(case["update"])
    v = analyze(d, q, u, case.get("k"))
    sets = infer_query_sets(d, v.k_used, q)
    updates = infer_update_sets(d, v.k_used, u)
    for w in v.witnesses:
        assert _valid(d, sets, updates, w)
        full = w.update_chain.prefix + w.update_chain.suffix
        head = w.update_chain.prefix + w.update_chain.suffix[:1]
        if w.kind is Kind.RinU:
            assert is_prefix(w.query_chain, full) or is_prefix(full, w.query_chain)
        else:
            assert is_prefix(head, w.query_chain) or is_prefix(w.query_chain, head)


def _more(rng, pool, base):
    extra = set(rng.sample(sorted(pool), min(len(pool), 3)))
    return frozenset(base) | extra


@pytest.mark.parametrize("seed", range(30))
def test_monotonicity(seed):
    _, d, _, qt, ut = gen.triple(seed)
    q, u = parse_query(qt), parse_update(ut)
    sets = infer_query_sets(d, 2, q)
    updates = infer_update_sets(d, 2, u)
    base = conflicts_sets(sets, updates)
    rng = random.Random(seed)
    pool = k_chains(d, 2)
    bigger = ChainSets(
        _more(rng, pool, sets.r),
        _more(rng, {(c, rng.random() < 0.5) for c in pool}, sets.v),
        sets.e,
    )
    more_updates = set(updates) | {UpdateChain(c[:-1], c[-1:]) for c in itertools.islice(sorted(pool), 3) if len(c) > 1}
    grown = conflicts_sets(bigger, more_updates)
    assert set(base) <= set(grown)
    if base:
        assert grown


@pytest.mark.parametrize("case", corpus(), ids=lambda c: c["name"])
def test_cdag_and_sets_agree(case):
    d = load_schema(case["schema"])
    q, u = parse_query(case["query"]), parse_update(case["update"])
    k = case.get("k")
    assert analyze(d, q, u, k).result == check_sets(d, q, u, k).result
    if case.get("expect"):
        assert analyze(d, q, u, k).result.value == case["expect"]
