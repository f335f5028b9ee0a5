"""Query and update fragment: AST, concrete-syntax parser and desugaring.

Paths are desugared into single steps over variables.  Absolute paths start
from the root variable ``$root``, which is bound to the document element; the
first step is rewritten accordingly (``/a`` is ``self::a`` on the document
element, ``//a`` is ``descendant-or-self::a``).
"""
from __future__ import annotations

import dataclasses
import enum
import itertools
import re
from dataclasses import dataclass, field

ROOT_VAR = "root"


class Axis(enum.Enum):
    SELF = "self"
    CHILD = "child"
    DESCENDANT = "descendant"
    DESCENDANT_OR_SELF = "descendant-or-self"
    PARENT = "parent"
    ANCESTOR = "ancestor"
    ANCESTOR_OR_SELF = "ancestor-or-self"
    PRECEDING_SIBLING = "preceding-sibling"
    FOLLOWING_SIBLING = "following-sibling"

    @property
    def recursive(self) -> bool:
        return self in RECURSIVE_AXES

    @property
    def forward(self) -> bool:
        return self in (Axis.SELF, Axis.CHILD, Axis.DESCENDANT_OR_SELF)


RECURSIVE_AXES = frozenset(
    {Axis.DESCENDANT, Axis.DESCENDANT_OR_SELF, Axis.ANCESTOR, Axis.ANCESTOR_OR_SELF}
)


@dataclass(frozen=True)
class TagTest:
    tag: str

    def __str__(self):
        return self.tag


@dataclass(frozen=True)
class TextTest:
    def __str__(self):
        return "text()"


@dataclass(frozen=True)
class AnyTest:
    def __str__(self):
        return "node()"


NodeTest = TagTest | TextTest | AnyTest


class Pos(enum.Enum):
    BEFORE = "before"
    AFTER = "after"
    INTO = "into"
    INTO_FIRST = "as first into"
    INTO_LAST = "as last into"


@dataclass(frozen=True)
class Expr:
    eid: int = field(default=-1, compare=False, kw_only=True)

    def children(self) -> tuple:
        return tuple(
            getattr(self, f.name)
            for f in dataclasses.fields(self)
            if isinstance(getattr(self, f.name), Expr)
        )


# queries


@dataclass(frozen=True)
class Empty(Expr):
    pass


@dataclass(frozen=True)
class Seq(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Elem(Expr):
    tag: str
    body: Expr


@dataclass(frozen=True)
class StrLit(Expr):
    value: str


@dataclass(frozen=True)
class Step(Expr):
    var: str
    axis: Axis
    test: NodeTest

    @property
    def is_identity(self) -> bool:
        return self.axis is Axis.SELF and isinstance(self.test, AnyTest)


@dataclass(frozen=True)
class For(Expr):
    var: str
    source: Expr
    body: Expr


@dataclass(frozen=True)
class Let(Expr):
    var: str
    source: Expr
    body: Expr


@dataclass(frozen=True)
class If(Expr):
    cond: Expr
    then: Expr
    else_: Expr


# updates


@dataclass(frozen=True)
class UEmpty(Expr):
    pass


@dataclass(frozen=True)
class USeq(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class UFor(Expr):
    var: str
    source: Expr
    body: Expr


@dataclass(frozen=True)
class ULet(Expr):
    var: str
    source: Expr
    body: Expr


@dataclass(frozen=True)
class UIf(Expr):
    cond: Expr
    then: Expr
    else_: Expr


@dataclass(frozen=True)
class Delete(Expr):
    target: Expr


@dataclass(frozen=True)
class Rename(Expr):
    target: Expr
    tag: str


@dataclass(frozen=True)
class Insert(Expr):
    source: Expr
    pos: Pos
    target: Expr


@dataclass(frozen=True)
class Replace(Expr):
    target: Expr
    source: Expr


QUERY_TYPES = (Empty, Seq, Elem, StrLit, Step, For, Let, If)
UPDATE_TYPES = (UEmpty, USeq, UFor, ULet, UIf, Delete, Rename, Insert, Replace)
BINDERS = (For, Let, UFor, ULet)


class LangError(ValueError):
    def __init__(self, message: str, pos: int | None = None, text: str | None = None):
        self.pos = pos
        if pos is not None and text is not None:
            line = text.count("\n", 0, pos) + 1
            col = pos - (text.rfind("\n", 0, pos) + 1) + 1
            message = f"line {line}, column {col}: {message}"
        super().__init__(message)


# -- generic traversal ------------------------------------------------------


def walk(e: Expr):
    """Preorder traversal."""
    yield e
    for c in e.children():
        yield from walk(c)


def number(e: Expr, start: int = 0) -> Expr:
    """Assign ExprIds in preorder."""
    counter = itertools.count(start)

    def go(node):
        eid = next(counter)
        changes = {}
        for f in dataclasses.fields(node):
            value = getattr(node, f.name)
            if isinstance(value, Expr):
                changes[f.name] = go(value)
        return dataclasses.replace(node, eid=eid, **changes)

    return go(e)


def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Step):
        return frozenset([e.var])
    if isinstance(e, BINDERS):
        return free_vars(e.source) | (free_vars(e.body) - {e.var})
    out = frozenset()
    for c in e.children():
        out |= free_vars(c)
    return out


def quasi_closed(e: Expr, root_var: str = ROOT_VAR) -> bool:
    return free_vars(e) <= {root_var}


def size(e: Expr) -> int:
    return sum(1 for _ in walk(e))


# -- pretty printing --------------------------------------------------------


def to_text(e: Expr) -> str:
    """Render a desugared AST back to concrete syntax."""
    if isinstance(e, (Empty, UEmpty)):
        return "()"
    if isinstance(e, (Seq, USeq)):
        return f"({to_text(e.left)}, {to_text(e.right)})"
    if isinstance(e, Elem):
        return f"<{e.tag}>{{{to_text(e.body)}}}</{e.tag}>"
    if isinstance(e, StrLit):
        return '"' + e.value.replace('"', '""') + '"'
    if isinstance(e, Step):
        return f"${_var(e.var)}/{e.axis.value}::{e.test}"
    if isinstance(e, (For, UFor)):
        return f"(for ${_var(e.var)} in {to_text(e.source)} return {to_text(e.body)})"
    if isinstance(e, (Let, ULet)):
        return f"(let ${_var(e.var)} := {to_text(e.source)} return {to_text(e.body)})"
    if isinstance(e, (If, UIf)):
        return f"(if ({to_text(e.cond)}) then {to_text(e.then)} else {to_text(e.else_)})"
    if isinstance(e, Delete):
        return f"(delete {to_text(e.target)})"
    if isinstance(e, Rename):
        return f"(rename {to_text(e.target)} as {e.tag})"
    if isinstance(e, Insert):
        return f"(insert {to_text(e.source)} {e.pos.value} {to_text(e.target)})"
    if isinstance(e, Replace):
        return f"(replace {to_text(e.target)} with {to_text(e.source)})"
    raise TypeError(type(e).__name__)


def _var(name: str) -> str:
    # fresh variables are not valid names in the concrete syntax
    return name.replace("#", "_v")


# -- parser -----------------------------------------------------------------

_NAME = re.compile(r"[A-Za-z_][\w.\-]*")
_SPACE = re.compile(r"(\s|\(:.*?:\))*", re.S)
_AXES = {a.value: a for a in Axis}
_UPDATE_WORDS = {"delete", "insert", "rename", "replace"}


@dataclass
class _StepSpec:
    axis: Axis | str
    test: NodeTest
    predicates: list


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.fresh = itertools.count(1)
        self.scopes: list[str] = [ROOT_VAR]
        self.context: list[str | None] = [None]

    # lexical helpers

    def fail(self, message, pos=None):
        raise LangError(message, self.pos if pos is None else pos, self.text)

    def ws(self):
        self.pos = _SPACE.match(self.text, self.pos).end()

    def peek(self, token) -> bool:
        self.ws()
        return self.text.startswith(token, self.pos)

    def accept(self, token) -> bool:
        if self.peek(token):
            self.pos += len(token)
            return True
        return False

    def expect(self, token):
        if not self.accept(token):
            self.fail(f"expected {token!r}")

    def peek_word(self) -> str | None:
        self.ws()
        m = _NAME.match(self.text, self.pos)
        return m.group() if m else None

    def peek_keyword(self, word) -> bool:
        self.ws()
        m = _NAME.match(self.text, self.pos)
        return bool(m) and m.group() == word

    def accept_keyword(self, word) -> bool:
        if self.peek_keyword(word):
            self.pos += len(word)
            return True
        return False

    def expect_keyword(self, word):
        if not self.accept_keyword(word):
            self.fail(f"expected {word!r}")

    def name(self) -> str:
        self.ws()
        m = _NAME.match(self.text, self.pos)
        if not m:
            self.fail("expected a name")
        self.pos = m.end()
        return m.group()

    def variable(self) -> str:
        self.expect("$")
        m = _NAME.match(self.text, self.pos)
        if not m:
            self.fail("expected a variable name")
        self.pos = m.end()
        return m.group()

    def new_var(self) -> str:
        return f"#{next(self.fresh)}"

    def at_end(self) -> bool:
        self.ws()
        return self.pos >= len(self.text)

    def after_word(self, word) -> str:
        save = self.pos
        self.ws()
        self.pos += len(word)
        self.ws()
        ch = self.text[self.pos : self.pos + 1]
        self.pos = save
        return ch

    def word_starts(self, word, follow: str) -> bool:
        return self.peek_keyword(word) and self.after_word(word) in follow

    # queries

    def query(self) -> Expr:
        items = [self.query_single()]
        while self.accept(","):
            items.append(self.query_single())
        out = items[0]
        for item in items[1:]:
            out = Seq(out, item)
        return out

    def query_single(self) -> Expr:
        if self.word_starts("for", "$") or self.word_starts("let", "$"):
            return self.flwr(self.query_single)
        if self.word_starts("if", "("):
            return self.conditional(self.query_single, Empty)
        word = self.peek_word()
        if word in _UPDATE_WORDS and self.context[-1] is None:
            self.fail(f"update expression '{word}' where a query is expected")
        return self.path_expr()

    def flwr(self, body_parser) -> Expr:
        clauses = []
        while True:
            if self.accept_keyword("for"):
                var = self.variable()
                self.expect_keyword("in")
                clauses.append(("for", var, self.binding_source()))
            elif self.accept_keyword("let"):
                var = self.variable()
                self.expect(":=")
                clauses.append(("let", var, self.binding_source()))
            else:
                break
            self.scopes.append(var)
        self.expect_keyword("return")
        body = body_parser()
        for _ in clauses:
            self.scopes.pop()
        is_update = body_parser == self.update_single
        for kind, var, source in reversed(clauses):
            if kind == "for":
                body = (UFor if is_update else For)(var, source, body)
            else:
                body = (ULet if is_update else Let)(var, source, body)
        return body

    def binding_source(self) -> Expr:
        start = self.pos
        source = self.query_single()
        for node in walk(source):
            if isinstance(node, (Elem, StrLit)):
                self.fail("constructors are not allowed in for/let binding expressions", start)
        return source

    def conditional(self, branch_parser, empty) -> Expr:
        self.expect_keyword("if")
        self.expect("(")
        cond = self.query()
        self.expect(")")
        self.expect_keyword("then")
        then = branch_parser()
        else_ = branch_parser() if self.accept_keyword("else") else empty()
        return (UIf if empty is UEmpty else If)(cond, then, else_)

    def path_expr(self) -> Expr:
        self.ws()
        start = self.pos
        if self.accept("//"):
            steps = [_StepSpec("//", self.node_test(), [])]
            self.predicates(steps[-1])
            steps += self.relative_steps()
            return self.build_absolute(steps, start)
        if self.peek("/"):
            self.pos += 1
            if self.at_end() or self.text[self.pos] in ",)]}":
                self.fail("the document node itself cannot be selected")
            steps = self.relative_steps(first=True)
            return self.build_absolute(steps, start)
        if self.peek("$"):
            var = self.variable()
            if var not in self.scopes:
                self.fail(f"unbound variable ${var}", start)
            spec = _StepSpec(Axis.SELF, AnyTest(), [])
            self.predicates(spec)
            steps = ([spec] if spec.predicates else []) + self.continue_steps()
            if not steps:
                return Step(var, Axis.SELF, AnyTest())
            return self.build_steps(var, steps)
        primary = self.primary()
        if primary is not None:
            steps = self.continue_steps()
            if not steps:
                return primary
            for node in walk(primary):
                if isinstance(node, (Elem, StrLit)):
                    self.fail("paths cannot navigate from constructed nodes", start)
            var = self.new_var()
            self.scopes.append(var)
            body = self.build_steps(var, steps)
            self.scopes.pop()
            return For(var, primary, body)
        ctx = self.context[-1]
        if ctx is None:
            self.fail("relative path outside a predicate; start paths with '/', '//' or a variable")
        steps = self.relative_steps(first=True)
        return self.build_steps(ctx, steps)

    def primary(self) -> Expr | None:
        self.ws()
        if self.peek("("):
            self.pos += 1
            if self.accept(")"):
                return Empty()
            inner = self.query()
            self.expect(")")
            return inner
        if self.peek('"') or self.peek("'"):
            return StrLit(self.string())
        if self.peek("<") and not self.peek("</"):
            return self.constructor()
        return None

    def string(self) -> str:
        quote = self.text[self.pos]
        self.pos += 1
        out = []
        while True:
            end = self.text.find(quote, self.pos)
            if end < 0:
                self.fail("unterminated string literal")
            out.append(self.text[self.pos : end])
            self.pos = end + 1
            if self.text.startswith(quote, self.pos):
                out.append(quote)
                self.pos += 1
            else:
                return "".join(out)

    def constructor(self) -> Expr:
        self.expect("<")
        tag = self.name()
        if self.accept("/>"):
            return Elem(tag, Empty())
        if not self.accept(">"):
            self.fail("attributes are not supported in element constructors")
        items = []
        while True:
            if self.text.startswith("</", self.pos):
                break
            if self.pos >= len(self.text):
                self.fail(f"unterminated element constructor <{tag}>")
            ch = self.text[self.pos]
            if ch == "{":
                self.pos += 1
                if self.accept("}"):
                    continue
                items.append(self.query())
                self.expect("}")
            elif ch == "<":
                items.append(self.constructor())
            elif ch.isspace():
                self.pos += 1
            elif ch in "$/(\"'" or self.peek_word() in ("for", "let", "if"):
                items.append(self.query())
            else:
                end = min(i for i in (self.text.find("<", self.pos), self.text.find("{", self.pos), len(self.text)) if i >= 0)
                value = self.text[self.pos : end].strip()
                self.pos = end
                if value:
                    items.append(StrLit(value))
        self.expect("</")
        closing = self.name()
        if closing != tag:
            self.fail(f"mismatched closing tag </{closing}> for <{tag}>")
        self.expect(">")
        body = items[0] if items else Empty()
        for item in items[1:]:
            body = Seq(body, item)
        return Elem(tag, body)

    # steps

    def continue_steps(self) -> list:
        steps = []
        while True:
            self.ws()
            if self.accept("//"):
                steps.append(_StepSpec(Axis.DESCENDANT_OR_SELF, AnyTest(), []))
                steps.append(self.step())
            elif self.peek("/") and not self.peek("/>"):
                self.pos += 1
                steps.append(self.step())
            else:
                return steps

    def relative_steps(self, first=False) -> list:
        steps = [self.step()] if first else []
        return steps + self.continue_steps()

    def step(self) -> _StepSpec:
        self.ws()
        if self.accept(".."):
            spec = _StepSpec(Axis.PARENT, AnyTest(), [])
        elif self.peek(".") and not self.peek(".."):
            self.pos += 1
            spec = _StepSpec(Axis.SELF, AnyTest(), [])
        elif self.peek("@"):
            self.fail("attributes are not supported")
        else:
            axis = Axis.CHILD
            word = self.peek_word()
            if word is not None and self.text.startswith("::", self.pos + len(word)):
                self.pos += len(word) + 2
                if word in ("following", "preceding"):
                    axis = word
                elif word in _AXES:
                    axis = _AXES[word]
                else:
                    self.fail(f"unsupported axis {word!r}")
            spec = _StepSpec(axis, self.node_test(), [])
        self.predicates(spec)
        return spec

    def node_test(self) -> NodeTest:
        self.ws()
        if self.accept("*"):
            return AnyTest()
        word = self.name()
        if word in ("node", "text") and self.accept("("):
            self.expect(")")
            return AnyTest() if word == "node" else TextTest()
        return TagTest(word)

    def predicates(self, spec: _StepSpec):
        while self.peek("["):
            start = self.pos
            self.pos += 1
            if re.match(r"\s*\d", self.text[self.pos :]):
                self.fail("positional predicates are not supported", start)
            var = self.new_var()
            self.scopes.append(var)
            self.context.append(var)
            cond = self.query()
            self.context.pop()
            self.scopes.pop()
            self.expect("]")
            spec.predicates.append((var, cond))

    # desugaring

    def build_absolute(self, steps: list, start: int) -> Expr:
        first = steps[0]
        rest = steps[1:]
        if first.axis == "//":
            first.axis = Axis.DESCENDANT_OR_SELF
        elif first.axis is Axis.CHILD:
            first.axis = Axis.SELF
        elif first.axis is Axis.DESCENDANT:
            first.axis = Axis.DESCENDANT_OR_SELF
        elif first.axis is Axis.DESCENDANT_OR_SELF:
            if isinstance(first.test, AnyTest) and rest and rest[0].axis is Axis.CHILD and not first.predicates:
                first = _StepSpec(Axis.DESCENDANT_OR_SELF, rest[0].test, rest[0].predicates)
                rest = rest[1:]
        else:
            self.fail(f"axis {first.axis if isinstance(first.axis, str) else first.axis.value} cannot start an absolute path", start)
        return self.build_steps(ROOT_VAR, [first] + rest)

    def expand(self, steps: list) -> list:
        out = []
        for spec in steps:
            if spec.axis in ("following", "preceding"):
                sibling = Axis.FOLLOWING_SIBLING if spec.axis == "following" else Axis.PRECEDING_SIBLING
                out.append(_StepSpec(Axis.ANCESTOR_OR_SELF, AnyTest(), []))
                out.append(_StepSpec(sibling, AnyTest(), []))
                out.append(_StepSpec(Axis.DESCENDANT_OR_SELF, spec.test, spec.predicates))
            else:
                out.append(spec)
        return out

    def build_steps(self, var: str, steps: list) -> Expr:
        steps = self.expand(steps)
        first = self.single_step(var, steps[0])
        if len(steps) == 1:
            return first
        inner = self.new_var()
        return For(inner, first, self.build_steps(inner, steps[1:]))

    def single_step(self, var: str, spec: _StepSpec) -> Expr:
        out = Step(var, spec.axis, spec.test)
        for pvar, cond in spec.predicates:
            out = For(pvar, out, If(cond, Step(pvar, Axis.SELF, AnyTest()), Empty()))
        return out

    # updates

    def update(self) -> Expr:
        items = [self.update_single()]
        while self.accept(","):
            items.append(self.update_single())
        out = items[0]
        for item in items[1:]:
            out = USeq(out, item)
        return out

    def update_single(self) -> Expr:
        if self.word_starts("for", "$") or self.word_starts("let", "$"):
            return self.flwr(self.update_single)
        if self.word_starts("if", "("):
            return self.conditional(self.update_single, UEmpty)
        if self.peek("("):
            self.pos += 1
            if self.accept(")"):
                return UEmpty()
            inner = self.update()
            self.expect(")")
            return inner
        if self.accept_keyword("delete"):
            self.node_keyword()
            return Delete(self.query_single())
        if self.accept_keyword("rename"):
            self.node_keyword()
            target = self.query_single()
            self.expect_keyword("as")
            self.ws()
            tag = self.string() if self.text[self.pos : self.pos + 1] in ('"', "'") else self.name()
            return Rename(target, tag)
        if self.accept_keyword("insert"):
            self.node_keyword()
            source = self.query_single()
            pos = self.position()
            return Insert(source, pos, self.query_single())
        if self.accept_keyword("replace"):
            self.node_keyword()
            target = self.query_single()
            self.expect_keyword("with")
            return Replace(target, self.query_single())
        self.fail("expected an update expression")

    def node_keyword(self):
        for word in ("nodes", "node"):
            if self.peek_keyword(word) and self.after_word(word) != "(":
                self.accept_keyword(word)
                return

    def position(self) -> Pos:
        if self.accept_keyword("before"):
            return Pos.BEFORE
        if self.accept_keyword("after"):
            return Pos.AFTER
        if self.accept_keyword("into"):
            return Pos.INTO
        if self.accept_keyword("as"):
            if self.accept_keyword("first"):
                self.expect_keyword("into")
                return Pos.INTO_FIRST
            if self.accept_keyword("last"):
                self.expect_keyword("into")
                return Pos.INTO_LAST
        self.fail("expected before, after, into, as first into or as last into")


def parse_query(text: str) -> Expr:
    p = _Parser(text)
    q = p.query()
    if not p.at_end():
        p.fail("unexpected input after query")
    return number(q)


def parse_update(text: str) -> Expr:
    p = _Parser(text)
    u = p.update()
    if not p.at_end():
        p.fail("unexpected input after update")
    return number(u)


def parse_expr(text: str, role: str) -> Expr:
    return parse_update(text) if role == "update" else parse_query(text)
