"""Seeded generators of small DTDs, queries and updates for property tests."""
from __future__ import annotations

import random
from functools import lru_cache

from xmlqui.schema import TEXT, parse_dtd
from xmlqui.xmlstore import _words

AXES = [
    ("", 6),
    ("descendant::", 2),
    ("..", 1),
    ("ancestor::", 1),
    ("following-sibling::", 1),
    ("preceding-sibling::", 1),
    ("self::", 1),
    ("descendant-or-self::", 1),
    ("ancestor-or-self::", 1),
]


def _pick(rng, weighted):
    items, weights = zip(*weighted)
    return rng.choices(items, weights)[0]


def dtd_text(rng: random.Random, max_tags: int = 6) -> str:
    """Tags a, b, ...; a tag refers to itself or earlier tags only under * or ?,
    so every element has finite valid subtrees."""
    n = rng.randint(2, max_tags)
    tags = [chr(ord("a") + i) for i in range(n)]
    decls = []
    for i, tag in enumerate(tags):
        later = tags[i + 1 :]
        if not later:
            decls.append(f"<!ELEMENT {tag} {rng.choice(['EMPTY', '(#PCDATA)'])}>")
            continue
        if rng.random() < 0.3:
            pool = rng.sample(tags, rng.randint(1, min(3, n)))
            decls.append(f"<!ELEMENT {tag} ({'|'.join(pool)})*>")
            continue
        items = []
        for _ in range(rng.randint(1, 3)):
            if rng.random() < 0.7:
                child = rng.choice(later)
                items.append(child + rng.choice(["", "?", "*", "+"]))
            else:
                child = rng.choice(tags[: i + 1])
                items.append(child + rng.choice(["?", "*"]))
        decls.append(f"<!ELEMENT {tag} ({', '.join(items)})>")
    return "\n".join(decls)


def tree_count(d, max_repeat: int, max_depth: int) -> int:
    words = {tag: _words(cm, max_repeat) for tag, cm in d.content.items()}

    @lru_cache(maxsize=None)
    def count(label, depth):
        if depth > max_depth:
            return 0
        if label == TEXT:
            return 1
        total = 0
        for word in words[label]:
            prod = 1
            for child in word:
                prod *= count(child, depth + 1)
                if not prod:
                    break
            total += prod
        return total

    return count(d.root, 1)


def small_dtd(rng: random.Random, limit: int = 250):
    """A random DTD whose bounded enumeration has at most ``limit`` trees."""
    while True:
        text = dtd_text(rng)
        d = parse_dtd(text)
        for repeat, depth in ((2, 4), (1, 4), (2, 3)):
            if 2 <= tree_count(d, repeat, depth) <= limit:
                return text, d, (repeat, depth)


def _test(rng, tags, text):
    options = [(t, 4) for t in tags] + [("node()", 1), ("*", 1)]
    if text:
        options.append(("text()", 1))
    return _pick(rng, options)


def rel_path(rng, tags, text, steps=None) -> str:
    out = []
    for _ in range(steps or rng.randint(1, 2)):
        axis = _pick(rng, AXES)
        out.append(".." if axis == ".." else axis + _test(rng, tags, text))
    return "/".join(out)


def abs_path(rng, tags, text) -> str:
    start = rng.choice(["/" + tags[0], "//" + rng.choice(tags), "/descendant::" + rng.choice(tags)])
    if rng.random() < 0.6:
        start += "/" + rel_path(rng, tags, text)
    if rng.random() < 0.15:
        start += f"[{rel_path(rng, tags, text, 1)}]"
    return start


def query_text(rng, tags, text) -> str:
    p = lambda: abs_path(rng, tags, text)
    kind = rng.choice(["path", "path", "for", "seq", "elem", "let", "if"])
    if kind == "for":
        return f"for $x in {p()} return $x/{rel_path(rng, tags, text)}"
    if kind == "seq":
        return f"({p()}, {p()})"
    if kind == "elem":
        return f"<z>{{{p()}}}</z>"
    if kind == "let":
        return f"let $y := {p()} return $y/{rel_path(rng, tags, text)}"
    if kind == "if":
        return f"if ({p()}) then {p()} else ()"
    return p()


def update_text(rng, tags, text) -> str:
    p = lambda: abs_path(rng, tags, text)
    t = rng.choice(tags)
    kind = rng.choice(["delete", "delete", "rename", "insert", "position", "replace", "for", "forins", "seq"])
    if kind == "delete":
        return f"delete {p()}"
    if kind == "rename":
        return f"for $x in {p()} return rename $x as {t}"
    if kind == "insert":
        return f"for $x in {p()} return insert <{t}/> into $x"
    if kind == "position":
        where = rng.choice(["before", "after"])
        return f"for $x in {p()} return insert <{t}/> {where} $x"
    if kind == "replace":
        return f"for $x in {p()} return replace $x with <{t}/>"
    if kind == "for":
        return f"for $x in {p()} return delete $x/{rel_path(rng, tags, text)}"
    if kind == "forins":
        return f"for $x in {p()} return insert <{t}>{{$x/{rel_path(rng, tags, text, 1)}}}</{t}> into $x"
    return f"({update_text(rng, tags, text)}, {update_text(rng, tags, text)})"


def triple(seed: int, limit: int = 250):
    """(dtd text, Dtd, bounds, query text, update text) for one seed."""
    rng = random.Random(seed)
    text, d, bounds = small_dtd(rng, limit)
    tags = sorted(d.alphabet)
    has_text = TEXT in {c for a in d.alphabet for c in d.children_of(a)}
    return text, d, bounds, query_text(rng, tags, has_text), update_text(rng, tags, has_text)
