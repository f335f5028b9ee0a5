"""DTD model: content models, parsing, reachability, chains and validation.

Labels are plain strings.  Element tags are XML names; the string type is the
reserved label ``TEXT`` which can never collide with a tag since ``#`` is not
a name character.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

TEXT = "#text"

Chain = tuple  # tuple[str, ...]


class DtdError(ValueError):
    """Raised for malformed or inconsistent DTD input."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


# -- content models ---------------------------------------------------------


@dataclass(frozen=True)
class Empty:
    def __str__(self) -> str:
        return "EMPTY"


@dataclass(frozen=True)
class Atom:
    label: str

    def __str__(self) -> str:
        return "#PCDATA" if self.label == TEXT else self.label


@dataclass(frozen=True)
class Concat:
    left: "ContentModel"
    right: "ContentModel"

    def __str__(self) -> str:
        return f"({self.left},{self.right})"


@dataclass(frozen=True)
class Alt:
    left: "ContentModel"
    right: "ContentModel"

    def __str__(self) -> str:
        return f"({self.left}|{self.right})"


@dataclass(frozen=True)
class Star:
    body: "ContentModel"

    def __str__(self) -> str:
        return f"{self.body}*"


@dataclass(frozen=True)
class Plus:
    body: "ContentModel"

    def __str__(self) -> str:
        return f"{self.body}+"


@dataclass(frozen=True)
class Opt:
    body: "ContentModel"

    def __str__(self) -> str:
        return f"{self.body}?"


ContentModel = Empty | Atom | Concat | Alt | Star | Plus | Opt

EMPTY = Empty()


def seq(*parts: ContentModel) -> ContentModel:
    if not parts:
        return EMPTY
    out = parts[0]
    for p in parts[1:]:
        out = Concat(out, p)
    return out


def alt(*parts: ContentModel) -> ContentModel:
    out = parts[0]
    for p in parts[1:]:
        out = Alt(out, p)
    return out


@lru_cache(maxsize=None)
def occ(cm: ContentModel) -> frozenset:
    """Labels occurring as atoms in ``cm``."""
    if isinstance(cm, Empty):
        return frozenset()
    if isinstance(cm, Atom):
        return frozenset([cm.label])
    if isinstance(cm, (Concat, Alt)):
        return occ(cm.left) | occ(cm.right)
    return occ(cm.body)


@lru_cache(maxsize=None)
def sibling_order(cm: ContentModel) -> frozenset:
    """Pairs (x, y) such that some word of ``cm`` has an x strictly before a y."""
    if isinstance(cm, (Empty, Atom)):
        return frozenset()
    if isinstance(cm, Concat):
        cross = {(x, y) for x in occ(cm.left) for y in occ(cm.right)}
        return sibling_order(cm.left) | sibling_order(cm.right) | cross
    if isinstance(cm, Alt):
        return sibling_order(cm.left) | sibling_order(cm.right)
    if isinstance(cm, (Star, Plus)):
        labels = occ(cm.body)
        return sibling_order(cm.body) | {(x, y) for x in labels for y in labels}
    return sibling_order(cm.body)


@lru_cache(maxsize=None)
def nullable(cm: ContentModel) -> bool:
    if isinstance(cm, (Empty, Star, Opt)):
        return True
    if isinstance(cm, Atom):
        return False
    if isinstance(cm, Concat):
        return nullable(cm.left) and nullable(cm.right)
    if isinstance(cm, Alt):
        return nullable(cm.left) or nullable(cm.right)
    return nullable(cm.body)


_NOTHING = object()  # derivative of a model that can no longer match


@lru_cache(maxsize=None)
def _derive(cm, label):
    # Brzozowski derivative; _NOTHING stands for the empty language
    if cm is _NOTHING or isinstance(cm, Empty):
        return _NOTHING
    if isinstance(cm, Atom):
        return EMPTY if cm.label == label else _NOTHING
    if isinstance(cm, Concat):
        head = _derive(cm.left, label)
        first = _NOTHING if head is _NOTHING else _cat(head, cm.right)
        if nullable(cm.left):
            return _union(first, _derive(cm.right, label))
        return first
    if isinstance(cm, Alt):
        return _union(_derive(cm.left, label), _derive(cm.right, label))
    if isinstance(cm, Star):
        head = _derive(cm.body, label)
        return _NOTHING if head is _NOTHING else _cat(head, cm)
    if isinstance(cm, Plus):
        head = _derive(cm.body, label)
        return _NOTHING if head is _NOTHING else _cat(head, Star(cm.body))
    return _derive(cm.body, label)  # Opt


def _cat(a, b):
    if isinstance(a, Empty):
        return b
    return Concat(a, b)


def _union(a, b):
    if a is _NOTHING:
        return b
    if b is _NOTHING or a == b:
        return a
    return Alt(a, b)


def matches(cm: ContentModel, word: Sequence[str]) -> bool:
    """Exact membership of a label word in the language of ``cm``."""
    cur = cm
    for label in word:
        cur = _derive(cur, label)
        if cur is _NOTHING:
            return False
    return nullable(cur)


# -- DTD --------------------------------------------------------------------


@dataclass(frozen=True)
class Dtd:
    root: str
    content: Mapping[str, ContentModel]
    alphabet: frozenset = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "alphabet", frozenset(self.content))
        if self.root not in self.content:
            raise DtdError(f"root element {self.root!r} is not declared")
        for tag, cm in self.content.items():
            for label in occ(cm):
                if label != TEXT and label not in self.content:
                    raise DtdError(f"element {tag!r} references undeclared element {label!r}")

    def __hash__(self):
        return hash((self.root, tuple(sorted((k, v) for k, v in self.content.items()))))

    def model(self, label: str) -> ContentModel:
        """Content model of a label; the string type has empty content."""
        if label == TEXT:
            return EMPTY
        try:
            return self.content[label]
        except KeyError:
            raise KeyError(f"unknown element {label!r}") from None

    def children_of(self, label: str) -> frozenset:
        return occ(self.model(label))

    def order_of(self, label: str) -> frozenset:
        return sibling_order(self.model(label))

    def tags(self) -> list[str]:
        return list(self.content)

    def to_text(self) -> str:
        lines = []
        for tag, cm in self.content.items():
            body = str(cm)
            if not isinstance(cm, Empty) and not body.startswith("("):
                body = f"({body})"
            lines.append(f"<!ELEMENT {tag} {body}>")
        return "\n".join(lines) + "\n"


def reaches(d: Dtd, alpha: str, beta: str) -> bool:
    return beta in d.children_of(alpha)


def is_chain(d: Dtd, labels: Sequence[str]) -> bool:
    if not labels:
        return False
    for label in labels:
        if label != TEXT and label not in d.alphabet:
            return False
    return all(reaches(d, a, b) for a, b in zip(labels, labels[1:]))


def is_k_chain(chain: Sequence[str], k: int) -> bool:
    counts: dict[str, int] = {}
    for label in chain:
        counts[label] = counts.get(label, 0) + 1
        if counts[label] > k:
            return False
    return True


def is_prefix(c1: Sequence[str], c2: Sequence[str]) -> bool:
    return len(c1) <= len(c2) and tuple(c2[: len(c1)]) == tuple(c1)


def format_chain(chain: Iterable[str]) -> str:
    return ".".join(chain)


# -- DTD parsing ------------------------------------------------------------

_NAME = re.compile(r"[A-Za-z_][\w.\-]*")


class _DtdParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def where(self, pos=None):
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def fail(self, message, pos=None):
        raise DtdError(message, *self.where(pos))

    def skip_ws(self):
        while True:
            m = re.compile(r"\s+").match(self.text, self.pos)
            if m:
                self.pos = m.end()
            if self.text.startswith("<!--", self.pos):
                end = self.text.find("-->", self.pos)
                if end < 0:
                    self.fail("unterminated comment")
                self.pos = end + 3
                continue
            return

    def expect(self, token):
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            self.fail(f"expected {token!r}")
        self.pos += len(token)

    def name(self):
        self.skip_ws()
        m = _NAME.match(self.text, self.pos)
        if not m:
            self.fail("expected a name")
        self.pos = m.end()
        return m.group()

    def declarations(self):
        decls = []
        while True:
            self.skip_ws()
            if self.pos >= len(self.text):
                return decls
            start = self.pos
            if self.text.startswith("<!ELEMENT", self.pos):
                self.pos += len("<!ELEMENT")
                tag = self.name()
                model = self.content_spec()
                self.expect(">")
                decls.append((tag, model, start))
            elif self.text.startswith("<!ATTLIST", self.pos):
                self.fail("attribute-list declarations are not supported")
            elif self.text.startswith("<!ENTITY", self.pos):
                self.fail("entity declarations are not supported")
            else:
                self.fail("expected an element declaration")

    def content_spec(self):
        self.skip_ws()
        if self.text.startswith("EMPTY", self.pos):
            self.pos += 5
            return EMPTY
        if self.text.startswith("ANY", self.pos):
            self.pos += 3
            return "ANY"
        if not self.text.startswith("(", self.pos):
            self.fail("expected '(' , EMPTY or ANY")
        return self.particle()

    def particle(self):
        self.skip_ws()
        if self.text.startswith("(", self.pos):
            self.pos += 1
            items = [self.particle()]
            sep = None
            while True:
                self.skip_ws()
                ch = self.text[self.pos : self.pos + 1]
                if ch == ")":
                    self.pos += 1
                    break
                if ch not in (",", "|"):
                    self.fail("expected ',', '|' or ')'")
                if sep is not None and ch != sep:
                    self.fail("mixed ',' and '|' in one group")
                sep = ch
                self.pos += 1
                items.append(self.particle())
            cm = alt(*items) if sep == "|" else seq(*items)
        elif self.text.startswith("#PCDATA", self.pos):
            self.pos += len("#PCDATA")
            return Atom(TEXT)
        else:
            cm = Atom(self.name())
        return self.suffix(cm)

    def suffix(self, cm):
        ch = self.text[self.pos : self.pos + 1]
        if ch == "*":
            self.pos += 1
            return Star(cm)
        if ch == "+":
            self.pos += 1
            return Plus(cm)
        if ch == "?":
            self.pos += 1
            return Opt(cm)
        return cm


def parse_dtd(text: str, root: str | None = None) -> Dtd:
    """Parse ``<!ELEMENT ...>`` declarations.

    The first declared element is the root unless ``root`` is given.
    ``ANY`` expands to a starred choice over all declared tags and text.
    """
    parser = _DtdParser(text)
    decls = parser.declarations()
    if not decls:
        raise DtdError("no element declarations")
    content: dict[str, ContentModel] = {}
    for tag, model, pos in decls:
        if tag in content:
            parser.fail(f"duplicate declaration of {tag!r}", pos)
        content[tag] = model
    if any(m == "ANY" for m in content.values()):
        anything = Star(alt(*[Atom(t) for t in content], Atom(TEXT)))
        content = {t: anything if m == "ANY" else m for t, m in content.items()}
    for tag, model, pos in decls:
        for label in occ(content[tag]):
            if label != TEXT and label not in content:
                parser.fail(f"element {tag!r} references undeclared element {label!r}", pos)
    return Dtd(root or decls[0][0], content)


def validate(d: Dtd, tree) -> bool:
    """True iff ``tree`` (an xmlstore.Tree) is valid against ``d``."""
    store = tree.store
    root = store[tree.root]
    if getattr(root, "tag", None) != d.root:
        return False
    stack = [tree.root]
    while stack:
        loc = stack.pop()
        node = store[loc]
        if not hasattr(node, "tag"):
            continue
        if node.tag not in d.alphabet:
            return False
        word = []
        for child in node.children:
            cnode = store[child]
            word.append(cnode.tag if hasattr(cnode, "tag") else TEXT)
            stack.append(child)
        if not matches(d.content[node.tag], word):
            return False
    return True
