"""Parser and grounder for the small PDDL subset used by the set-table domains.

Supported: ``:requirements``, ``:types`` (flat), ``:constants``, ``:predicates``
and ``:action`` blocks with ``:parameters``, ``:precondition`` and ``:effect``.
Formulas are conjunctions of (possibly negated) atoms; ``(at start X)`` marks a
precondition as start-scoped and ``?*`` is a wildcard slot allowed only inside
negated effects, where it deletes every grounding of the predicate.

Keywords are case-insensitive, identifiers are case-sensitive. Every error is a
:class:`PddlError` carrying the ``line:column`` of the offending token.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

WILDCARD = "?*"

Proposition = tuple  # ("on", "cup_green", "table")


class PddlError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# lexing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int


@dataclass
class SExpr:
    items: list
    line: int
    col: int

    def head(self) -> str | None:
        if self.items and isinstance(self.items[0], Token):
            return self.items[0].text
        return None


_TOKEN_RE = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s()]+")
_IDENT_RE = re.compile(r"^(\?\*|\??[A-Za-z_][A-Za-z0-9_\-]*|:[A-Za-z][A-Za-z0-9_\-]*|-)$")


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        lexeme = m.group(0)
        col = pos - line_start + 1
        if lexeme[0] in "()":
            tokens.append(Token(lexeme, line, col))
        elif not lexeme[0].isspace() and lexeme[0] != ";":
            if not _IDENT_RE.match(lexeme):
                raise PddlError(f"invalid token {lexeme!r}", line, col)
            tokens.append(Token(lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            line_start = pos + lexeme.rindex("\n") + 1
        pos = m.end()
    return tokens


def parse_sexpr(text: str) -> SExpr:
    tokens = tokenize(text)
    if not tokens:
        raise PddlError("empty input", 1, 1)
    stack: list[SExpr] = []
    root = None
    for tok in tokens:
        if tok.text == "(":
            node = SExpr([], tok.line, tok.col)
            if stack:
                stack[-1].items.append(node)
            elif root is not None:
                raise PddlError("unexpected content after top-level expression", tok.line, tok.col)
            else:
                root = node
            stack.append(node)
        elif tok.text == ")":
            if not stack:
                raise PddlError("unbalanced ')'", tok.line, tok.col)
            stack.pop()
        else:
            if not stack:
                raise PddlError(f"token {tok.text!r} outside any expression", tok.line, tok.col)
            stack[-1].items.append(tok)
    if stack:
        raise PddlError("unclosed '('", stack[-1].line, stack[-1].col)
    return root


# ---------------------------------------------------------------------------
# domain model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredicateSchema:
    name: str
    params: tuple[tuple[str, str], ...] = ()

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple[str, ...] = ()
    positive: bool = True
    start_scoped: bool = False


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[tuple[str, str], ...]
    preconditions: tuple[Literal, ...]
    effects: tuple[Literal, ...]


@dataclass(frozen=True)
class Domain:
    name: str
    requirements: tuple[str, ...]
    types: tuple[str, ...]
    constants: tuple[tuple[str, str], ...]
    predicates: tuple[PredicateSchema, ...]
    actions: tuple[ActionSchema, ...]

    def predicate(self, name: str) -> PredicateSchema:
        for p in self.predicates:
            if p.name == name:
                return p
        raise KeyError(name)

    def has_predicate(self, name: str) -> bool:
        return any(p.name == name for p in self.predicates)

    def constants_of(self, type_name: str) -> tuple[str, ...]:
        return tuple(c for c, t in self.constants if t == type_name)

    def constant_type(self, name: str) -> str:
        for c, t in self.constants:
            if c == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True)
class GroundedAction:
    name: str
    args: tuple[str, ...]
    pre_pos: frozenset = field(default_factory=frozenset)
    pre_neg: frozenset = field(default_factory=frozenset)
    add: frozenset = field(default_factory=frozenset)
    # raw delete list, wildcard already expanded; may overlap ``add``
    delete: frozenset = field(default_factory=frozenset)
    start_scoped: frozenset = field(default_factory=frozenset)

    @property
    def effective_delete(self) -> frozenset:
        return self.delete - self.add

    @property
    def label(self) -> str:
        return f"{self.name}({','.join(self.args)})"

    def sort_key(self) -> tuple:
        return (self.name, self.args)

    def __str__(self) -> str:
        return self.label


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _kw(tok) -> str:
    return tok.text.lower() if isinstance(tok, Token) else ""


def _where(node) -> tuple[int, int]:
    return node.line, node.col


def _expect_list(node, what: str) -> SExpr:
    if not isinstance(node, SExpr):
        raise PddlError(f"expected {what}", *_where(node))
    return node


def _typed_list(items: Sequence, what: str) -> list[tuple[Token, str]]:
    """Parse ``a b - t c - u`` into [(a, t), (b, t), (c, u)]; untyped names get 'object'."""
    out: list[tuple[Token, str]] = []
    pending: list[Token] = []
    i = 0
    while i < len(items):
        tok = items[i]
        if isinstance(tok, SExpr):
            raise PddlError(f"unexpected list in {what}", *_where(tok))
        if tok.text == "-":
            if not pending or i + 1 >= len(items) or not isinstance(items[i + 1], Token):
                raise PddlError(f"dangling '-' in {what}", tok.line, tok.col)
            type_tok = items[i + 1]
            out.extend((p, type_tok.text) for p in pending)
            pending = []
            i += 2
            continue
        pending.append(tok)
        i += 1
    out.extend((p, "object") for p in pending)
    return out


class _DomainBuilder:
    def __init__(self):
        self.name = ""
        self.requirements: list[str] = []
        self.types: list[str] = []
        self.constants: list[tuple[str, str]] = []
        self.predicates: dict[str, PredicateSchema] = {}
        self.actions: list[ActionSchema] = []
        self._pending_types: list[tuple[str, Token]] = []

    def section(self, node: SExpr):
        key = _kw(node.items[0]) if node.items else ""
        body = node.items[1:]
        if key == ":requirements":
            self.requirements = [t.text for t in body]
        elif key == ":types":
            for tok, parent in _typed_list(body, ":types"):
                if parent != "object":
                    raise PddlError("type hierarchies are not supported", tok.line, tok.col)
                if tok.text in self.types:
                    raise PddlError(f"duplicate type {tok.text}", tok.line, tok.col)
                self.types.append(tok.text)
        elif key == ":constants":
            for tok, typ in _typed_list(body, ":constants"):
                self._check_type(typ, tok)
                if any(c == tok.text for c, _ in self.constants):
                    raise PddlError(f"duplicate constant {tok.text}", tok.line, tok.col)
                self.constants.append((tok.text, typ))
        elif key == ":predicates":
            for pnode in body:
                pnode = _expect_list(pnode, "predicate declaration")
                if not pnode.items or not isinstance(pnode.items[0], Token):
                    raise PddlError("predicate name expected", *_where(pnode))
                name = pnode.items[0].text
                params = []
                for tok, typ in _typed_list(pnode.items[1:], f"predicate {name}"):
                    self._check_type(typ, tok)
                    if not tok.text.startswith("?"):
                        raise PddlError(f"predicate parameter must be a variable: {tok.text}", tok.line, tok.col)
                    if any(v == tok.text for v, _ in params):
                        raise PddlError(f"duplicate variable {tok.text} in {name}", tok.line, tok.col)
                    params.append((tok.text, typ))
                if name in self.predicates:
                    raise PddlError(f"duplicate predicate {name}", *_where(pnode))
                self.predicates[name] = PredicateSchema(name, tuple(params))
        elif key == ":action":
            self.actions.append(self._action(node))
        elif key == ":durative-action":
            raise PddlError("durative actions are not supported", *_where(node))
        else:
            raise PddlError(f"unknown section {node.items[0].text if node.items else '()'}", *_where(node))

    def _check_type(self, typ: str, tok: Token):
        if typ != "object" and typ not in self.types:
            raise PddlError(f"undeclared type {typ}", tok.line, tok.col)
        if typ == "object" and self.types and "object" not in self.types:
            # untyped parameters in a typed domain
            raise PddlError(f"missing type for {tok.text}", tok.line, tok.col)

    def _action(self, node: SExpr) -> ActionSchema:
        items = node.items
        if len(items) < 2 or not isinstance(items[1], Token):
            raise PddlError("action name expected", *_where(node))
        name = items[1].text
        params: list[tuple[str, str]] = []
        pre: list[Literal] = []
        eff: list[Literal] = []
        i = 2
        while i < len(items):
            key_tok = items[i]
            if not isinstance(key_tok, Token) or i + 1 >= len(items):
                raise PddlError(f"malformed action {name}", *_where(key_tok))
            value = items[i + 1]
            key = _kw(key_tok)
            if key == ":parameters":
                value = _expect_list(value, ":parameters list")
                for tok, typ in _typed_list(value.items, f"action {name}"):
                    self._check_type(typ, tok)
                    params.append((tok.text, typ))
            elif key == ":precondition":
                pre = self._formula(value, params, effect=False)
            elif key == ":effect":
                eff = self._formula(value, params, effect=True)
            else:
                raise PddlError(f"unknown action field {key_tok.text}", key_tok.line, key_tok.col)
            i += 2
        return ActionSchema(name, tuple(params), tuple(pre), tuple(eff))

    def _formula(self, node, params, effect: bool) -> list[Literal]:
        node = _expect_list(node, "formula")
        if not node.items:
            return []
        head = _kw(node.items[0])
        if head == "and":
            out = []
            for sub in node.items[1:]:
                out.extend(self._formula(sub, params, effect))
            return out
        return [self._literal(node, params, effect, positive=True, scoped=False)]

    def _literal(self, node: SExpr, params, effect: bool, positive: bool, scoped: bool) -> Literal:
        head = _kw(node.items[0]) if node.items else ""
        if head == "not":
            if len(node.items) != 2:
                raise PddlError("'not' takes exactly one argument", *_where(node))
            return self._literal(_expect_list(node.items[1], "atom"), params, effect, not positive, scoped)
        if head == "at" and len(node.items) == 3 and _kw(node.items[1]) == "start":
            if effect:
                raise PddlError("'at start' is only supported in preconditions", *_where(node))
            return self._literal(_expect_list(node.items[2], "atom"), params, effect, positive, True)
        if head in ("or", "imply", "forall", "exists", "when", "at", "over"):
            raise PddlError(f"unsupported construct '{node.items[0].text}'", *_where(node))
        if not node.items or not isinstance(node.items[0], Token):
            raise PddlError("atom expected", *_where(node))
        name_tok = node.items[0]
        pred = self.predicates.get(name_tok.text)
        if pred is None:
            raise PddlError(f"undeclared predicate {name_tok.text}", name_tok.line, name_tok.col)
        args = []
        for a in node.items[1:]:
            if isinstance(a, SExpr):
                raise PddlError("nested term not supported", *_where(a))
            args.append(a)
        if len(args) != pred.arity:
            raise PddlError(
                f"arity mismatch for predicate {pred.name}: expected {pred.arity}, got {len(args)}",
                name_tok.line, name_tok.col)
        param_names = {v for v, _ in params}
        const_names = {c for c, _ in self.constants}
        for a in args:
            if a.text == WILDCARD:
                if not (effect and not positive):
                    raise PddlError("'?*' is only allowed in negated effects", a.line, a.col)
            elif a.text.startswith("?"):
                if a.text not in param_names:
                    raise PddlError(f"unbound variable {a.text}", a.line, a.col)
            elif a.text not in const_names:
                raise PddlError(f"undeclared constant {a.text}", a.line, a.col)
        return Literal(pred.name, tuple(a.text for a in args), positive, scoped)

    def build(self) -> Domain:
        return Domain(self.name, tuple(self.requirements), tuple(self.types), tuple(self.constants),
                      tuple(self.predicates.values()), tuple(self.actions))


def parse_domain(text: str) -> Domain:
    root = parse_sexpr(text)
    if not root.items or _kw(root.items[0]) != "define":
        raise PddlError("expected (define ...)", *_where(root))
    if len(root.items) < 2 or not isinstance(root.items[1], SExpr) or _kw(root.items[1].items[0]) != "domain":
        raise PddlError("expected (domain <name>)", *_where(root))
    header = root.items[1]
    if len(header.items) != 2 or not isinstance(header.items[1], Token):
        raise PddlError("domain name expected", *_where(header))
    builder = _DomainBuilder()
    builder.name = header.items[1].text
    for node in root.items[2:]:
        builder.section(_expect_list(node, "section"))
    return builder.build()


def parse_problem(text: str, domain: Domain) -> tuple[frozenset, frozenset]:
    """Return (initial propositions, goal propositions) checked against ``domain``."""
    root = parse_sexpr(text)
    if not root.items or _kw(root.items[0]) != "define":
        raise PddlError("expected (define ...)", *_where(root))
    objects = {c: t for c, t in domain.constants}
    init: frozenset = frozenset()
    goal: frozenset | None = None
    seen_init = False
    for node in root.items[1:]:
        node = _expect_list(node, "section")
        key = _kw(node.items[0]) if node.items else ""
        if key == "problem":
            continue
        if key == ":domain":
            if len(node.items) != 2 or node.items[1].text != domain.name:
                raise PddlError(f"problem refers to another domain", *_where(node))
        elif key == ":objects":
            for tok, typ in _typed_list(node.items[1:], ":objects"):
                if typ not in domain.types:
                    raise PddlError(f"undeclared type {typ}", tok.line, tok.col)
                objects[tok.text] = typ
        elif key == ":init":
            seen_init = True
            init = frozenset(_ground_atom(a, domain, objects) for a in node.items[1:])
        elif key == ":goal":
            if len(node.items) != 2:
                raise PddlError(":goal takes one formula", *_where(node))
            goal = frozenset(_goal_atoms(node.items[1], domain, objects))
        else:
            raise PddlError(f"unknown section {node.items[0].text if node.items else '()'}", *_where(node))
    if not seen_init or goal is None:
        raise PddlError("problem must declare :init and :goal", *_where(root))
    return init, goal


def _goal_atoms(node, domain, objects) -> Iterator[tuple]:
    node = _expect_list(node, "goal formula")
    if node.items and _kw(node.items[0]) == "and":
        for sub in node.items[1:]:
            yield from _goal_atoms(sub, domain, objects)
    elif node.items and _kw(node.items[0]) == "not":
        raise PddlError("negative goals are not supported", *_where(node))
    else:
        yield _ground_atom(node, domain, objects)


def _ground_atom(node, domain: Domain, objects: dict) -> tuple:
    node = _expect_list(node, "atom")
    if not node.items or not isinstance(node.items[0], Token):
        raise PddlError("atom expected", *_where(node))
    name_tok = node.items[0]
    if not domain.has_predicate(name_tok.text):
        raise PddlError(f"undeclared predicate {name_tok.text}", name_tok.line, name_tok.col)
    pred = domain.predicate(name_tok.text)
    args = node.items[1:]
    if len(args) != pred.arity:
        raise PddlError(f"arity mismatch for predicate {pred.name}: expected {pred.arity}, got {len(args)}",
                        name_tok.line, name_tok.col)
    for a, (_, typ) in zip(args, pred.params):
        if isinstance(a, SExpr):
            raise PddlError("nested term not supported", *_where(a))
        if a.text.startswith("?"):
            raise PddlError(f"non-grounded literal: variable {a.text}", a.line, a.col)
        if a.text not in objects:
            raise PddlError(f"undeclared constant {a.text}", a.line, a.col)
        if objects[a.text] != typ:
            raise PddlError(f"type mismatch: {a.text} is {objects[a.text]}, expected {typ}", a.line, a.col)
    return (pred.name, *(a.text for a in args))


# ---------------------------------------------------------------------------
# grounding
# ---------------------------------------------------------------------------

def _ground_literal(lit: Literal, binding: dict, domain: Domain) -> list[tuple]:
    if WILDCARD not in lit.args:
        return [(lit.predicate, *(binding.get(a, a) for a in lit.args))]
    pred = domain.predicate(lit.predicate)
    slots = []
    for a, (_, typ) in zip(lit.args, pred.params):
        slots.append(domain.constants_of(typ) if a == WILDCARD else (binding.get(a, a),))
    return [(lit.predicate, *combo) for combo in itertools.product(*slots)]


def ground_action(schema: ActionSchema, args: Sequence[str], domain: Domain) -> GroundedAction:
    binding = dict(zip((v for v, _ in schema.params), args))
    pre_pos, pre_neg, scoped = set(), set(), set()
    for lit in schema.preconditions:
        (prop,) = _ground_literal(lit, binding, domain)
        (pre_pos if lit.positive else pre_neg).add(prop)
        if lit.start_scoped:
            scoped.add(prop)
    add, delete = set(), set()
    for lit in schema.effects:
        props = _ground_literal(lit, binding, domain)
        (add if lit.positive else delete).update(props)
    return GroundedAction(schema.name, tuple(args), frozenset(pre_pos), frozenset(pre_neg),
                          frozenset(add), frozenset(delete), frozenset(scoped))


def ground_actions(domain: Domain) -> tuple[GroundedAction, ...]:
    """Ground every schema over type-compatible constants; sorted by (name, args)."""
    out = []
    for schema in domain.actions:
        pools = [domain.constants_of(typ) for _, typ in schema.params]
        for combo in itertools.product(*pools):
            out.append(ground_action(schema, combo, domain))
    out.sort(key=GroundedAction.sort_key)
    return tuple(out)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def format_prop(prop: Iterable[str]) -> str:
    return "(" + " ".join(prop) + ")"


def parse_prop(text: str) -> tuple:
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise ValueError(f"not a proposition: {text!r}")
    return tuple(text[1:-1].split())


def _typed(pairs) -> str:
    return " ".join(f"{n} - {t}" for n, t in pairs)


def _format_literal(lit: Literal) -> str:
    s = format_prop((lit.predicate, *lit.args))
    if not lit.positive:
        s = f"(not {s})"
    if lit.start_scoped:
        s = f"(at start {s})"
    return s


def _format_conj(lits: Sequence[Literal]) -> str:
    if not lits:
        return "()"
    return "(and " + " ".join(_format_literal(l) for l in lits) + ")"


def format_domain(domain: Domain) -> str:
    lines = [f"(define (domain {domain.name})"]
    if domain.requirements:
        lines.append(f"  (:requirements {' '.join(domain.requirements)})")
    if domain.types:
        lines.append(f"  (:types {' '.join(domain.types)})")
    if domain.constants:
        lines.append(f"  (:constants {_typed(domain.constants)})")
    preds = " ".join(
        "(" + " ".join([p.name] + ([_typed(p.params)] if p.params else [])) + ")" for p in domain.predicates)
    lines.append(f"  (:predicates {preds})")
    for a in domain.actions:
        lines.append(f"  (:action {a.name}")
        lines.append(f"    :parameters ({_typed(a.params)})")
        lines.append(f"    :precondition {_format_conj(a.preconditions)}")
        lines.append(f"    :effect {_format_conj(a.effects)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def format_problem(name: str, domain: Domain, init: Iterable[tuple], goal: Iterable[tuple]) -> str:
    init_s = " ".join(format_prop(p) for p in sorted(init))
    goal_s = " ".join(format_prop(p) for p in sorted(goal))
    return (f"(define (problem {name}) (:domain {domain.name})\n"
            f"  (:init {init_s})\n"
            f"  (:goal (and {goal_s})))\n")
