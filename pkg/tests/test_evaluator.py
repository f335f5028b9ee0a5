import itertools

import pytest

from xmlqui.cli import fixture_text, load_schema
from xmlqui.evaluator import (
    Del,
    Ins,
    Ren,
    Repl,
    UpdateError,
    apply_update,
    apply_upl,
    build_upl,
    check_upl,
    dynamic_independent,
    eval_query,
    involved_locations,
)
from xmlqui.lang import Pos, parse_query, parse_update
from xmlqui.xmlstore import (
    Element,
    Tree,
    build_tree,
    enumerate_valid,
    node_chain,
    parse_document,
    serialize,
    serialize_tree,
    typ,
    value_equivalent,
)


@pytest.fixture
def doc():
    return parse_document(fixture_text("fig1.xml"))


def _ser(store, locs):
    return [serialize(store, l) for l in locs]


def _under(t, parent_tag, tag):
    return [l for l in t.dom() if typ(t, l) == tag and typ(t, t.parents[l]) == parent_tag]


def test_q1_selects_c_under_a():
    t = parse_document("<doc><a><c/></a><b><c/></b><a><c/></a></doc>")
    store, res = eval_query(t, None, parse_query("//a//c"))
    assert res == _under(t, "a", "c")
    assert all(node_chain(t, l) == ("doc", "a", "c") for l in res)


def test_empty_query(doc):
    store, res = eval_query(doc, None, parse_query("()"))
    assert res == [] and set(store) == set(doc.store)


def test_constructor_copies(doc):
    store, res = eval_query(doc, None, parse_query("<r1>{$root/a}</r1>"))
    (new,) = res
    assert new not in doc.store
    node = store[new]
    assert node.tag == "r1" and len(node.children) == len(_under(doc, "doc", "a"))
    assert set(node.children).isdisjoint(doc.store)
    assert serialize(store, new) == "<r1><a><c/></a></r1>"


def test_store_extends_input(doc):
    store, _ = eval_query(doc, None, parse_query('<z>{//c, "t"}</z>'))
    assert set(doc.store) <= set(store)
    for l in doc.store:
        assert store[l] == doc.store[l]


def test_step_results_in_document_order():
    t = parse_document("<doc><a><c/></a><b><c/></b><a><c/></a></doc>")
    _, res = eval_query(t, None, parse_query("/doc/node()"))
    assert res == sorted(res, key=t.order.__getitem__)
    _, res = eval_query(t, None, parse_query("/doc/b/c/ancestor::node()"))
    assert [typ(t, l) for l in res] == ["doc", "b"]


def test_sequence_keeps_construction_order(doc):
    _, res = eval_query(doc, None, parse_query("(/doc/b, /doc/a)"))
    assert [typ(doc, l) for l in res] == ["b", "a"]


def test_delete_upl(doc):
    _, upl = build_upl(doc, None, parse_update("delete //b//c"))
    assert upl == [Del(l) for l in _under(doc, "b", "c")]


def test_u2_emits_one_insert_per_book():
    t = parse_document(
        "<bib><book><title>A</title></book><book><title>B</title></book></bib>"
    )
    u = parse_update("for $x in //book return insert <author/> into $x")
    store_w, upl = build_upl(t, None, u)
    assert len(upl) == 2 and all(isinstance(c, Ins) and c.pos is Pos.INTO for c in upl)
    assert [typ(t, c.target) for c in upl] == ["book", "book"]
    for c in upl:
        (s,) = c.sources
        assert s not in t.store and store_w[s].tag == "author"


@pytest.mark.parametrize(
    "text",
    [
        "replace /doc/node() with <a><c/></a>",
        "rename //c as a",
        "insert <c/> into //c",
        "insert <a/> before /doc",
        "replace /doc with <doc/>",
        "rename /doc/a/c/.. as b",
    ],
)
def test_cardinality_and_parent_errors(text):
    t = parse_document("<doc><a><c/></a><a><c/></a></doc>")
    with pytest.raises(UpdateError):
        build_upl(t, None, parse_update(text))


def test_apply_delete(doc):
    (a,) = _under(doc, "doc", "a")
    new = apply_upl(doc, doc.store, [Del(a)])
    t = Tree(new, doc.root)
    assert a not in t
    assert serialize_tree(t) == "<doc><b><c/></b></doc>"


def test_apply_insert_positions(doc):
    (b,) = _under(doc, "doc", "b")
    (a,) = _under(doc, "doc", "a")
    for pos, expected in [
        (Pos.BEFORE, "<doc><a><c/></a><z/><b><c/></b></doc>"),
        (Pos.AFTER, "<doc><a><c/></a><b><c/></b><z/></doc>"),
    ]:
        u = parse_update(f"insert <z/> {pos.value} /doc/b")
        assert serialize_tree(apply_update(doc, u)) == expected
    u = parse_update("insert <z/> as first into /doc/a")
    assert serialize_tree(apply_update(doc, u)).startswith("<doc><a><z/><c/></a>")
    for into in ("into", "as last into"):
        u = parse_update(f"insert <z/> {into} /doc/a")
        assert serialize_tree(apply_update(doc, u)).startswith("<doc><a><c/><z/></a>")


def test_apply_rename_keeps_children(doc):
    (a,) = _under(doc, "doc", "a")
    t = Tree(apply_upl(doc, doc.store, [Ren(a, "z")]), doc.root)
    assert t.store[a].tag == "z"
    assert t.store[a].children == doc.store[a].children


def test_apply_replace(doc):
    u = parse_update("replace /doc/a with (<x/>, <y/>)")
    assert serialize_tree(apply_update(doc, u)) == "<doc><x/><y/><b><c/></b></doc>"


def test_positions_refer_to_input_siblings(doc):
    u = parse_update("(delete /doc/a, insert <z/> after /doc/a, insert <w/> before /doc/b)")
    assert serialize_tree(apply_update(doc, u)) == "<doc><z/><w/><b><c/></b></doc>"


def test_rename_then_delete_order(doc):
    u = parse_update("(delete /doc/a/c, rename /doc/a as q)")
    assert serialize_tree(apply_update(doc, u)) == "<doc><q/><b><c/></b></doc>"


def test_incompatible_commands(doc):
    (a,) = _under(doc, "doc", "a")
    with pytest.raises(UpdateError):
        check_upl([Repl(a, ()), Repl(a, ())])
    with pytest.raises(UpdateError):
        check_upl([Ren(a, "x"), Ren(a, "y")])
    check_upl([Ren(a, "x"), Ren(a, "x")])


def test_involved_locations():
    t = parse_document("<doc><a><c/></a></doc>")
    (a,) = _under(t, "doc", "a")
    assert involved_locations(t.store, [Del(a)]) == {a}
    assert involved_locations(t.store, []) == set()
    store_w, upl = build_upl(t, None, parse_update("insert <x><y/><z/></x> into /doc/a"))
    (cmd,) = upl
    got = involved_locations(store_w, upl)
    assert len(got) == 3 and cmd.target not in got
    assert cmd.sources[0] in got


def test_dynamic_independence(doc):
    assert dynamic_independent(doc, parse_query("//a//c"), parse_update("delete //b//c"))
    assert not dynamic_independent(doc, parse_query("//c"), parse_update("delete //c"))
    assert dynamic_independent(doc, parse_query("//c"), parse_update("()"))


def test_dynamic_independence_propagates_errors(doc):
    with pytest.raises(UpdateError):
        dynamic_independent(doc, parse_query("//c"), parse_update("rename //c as a"))


def test_store_containment(doc):
    u = parse_update("for $x in //a return (insert <z/> into $x, delete $x/c)")
    store_w, upl = build_upl(doc, None, u)
    store_u = apply_upl(doc, store_w, upl)
    assert set(doc.store) <= set(store_w) <= set(store_u)


def _shuffled(u_text_a, u_text_b):
    return parse_update(f"({u_text_a}, {u_text_b})"), parse_update(f"({u_text_b}, {u_text_a})")


@pytest.mark.parametrize(
    "first, second",
    [
        ("for $x in //a return insert <z/> into $x", "for $y in //b return delete $y/c"),
        ("for $x in /doc/b return insert <z/> after $x", "for $y in /doc/a return rename $y as b"),
        ("delete //c", "for $x in //a return insert <c/> before $x"),
    ],
)
def test_snapshot_order_insensitive(first, second):
    d = load_schema("fig1.dtd")
    u1, u2 = _shuffled(first, second)
    for t in itertools.islice(enumerate_valid(d, 2, 3), 30):
        r1, r2 = apply_update(t, u1), apply_update(t, u2)
        assert value_equivalent(r1.store, [t.root], r2.store, [t.root])


def test_updated_tree_drops_detached_nodes(doc):
    t = apply_update(doc, parse_update("delete /doc/a"))
    assert all(loc in t.store for loc in t.dom())
    assert len(t.dom()) == 3


def test_text_updates():
    t = build_tree(("p", [("q", ["old"])]))
    u = parse_update('replace /p/q/text() with "new"')
    assert serialize_tree(apply_update(t, u)) == "<p><q>new</q></p>"
    assert isinstance(t.store[t.root], Element)
