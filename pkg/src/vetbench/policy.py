"""Condition expressions and policy statements.

A single concrete grammar is shared by every defense. Policy files hold one
statement per line::

    line      := ID ":" body
    body      := "invariant" expr
               | ("deny-if" | "allow-only-if") "action" DEVICE "." COMMAND "when" expr
               | ("restrict" | "allow") "if" atomset "then" atomset
               | "flow" "untrusted-to-trusted"
               | "general" "no-cycle"
    atomset   := atom ("OR" atom)*
    expr      := conj ("OR" conj)*
    conj      := unary ("AND" unary)*
    unary     := "NOT" unary | "(" expr ")" | "TRUE" | "FALSE" | atom
    atom      := DEVICE relop CONST
    relop     := "=" | "!=" | "<" | "<=" | ">" | ">="   (also ≠ ≤ ≥)

``#`` starts a comment. Keywords are case-insensitive.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Union

Value = Union[int, str]


class PolicyError(ValueError):
    """Base class for policy/condition language errors."""


class PolicySyntaxError(PolicyError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class UnknownDeviceError(PolicyError):
    def __init__(self, device: str):
        self.device = device
        super().__init__(f"unknown device {device!r}")


class TypeMismatchError(PolicyError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

RELOPS = ("=", "!=", "<", "<=", ">", ">=")
_NEGATED_OP = {"=": "!=", "!=": "=", "<": ">=", ">=": "<", ">": "<=", "<=": ">"}
_OP_ALIASES = {"≠": "!=", "≤": "<=", "≥": ">=", "==": "="}


@dataclass(frozen=True)
class Atom:
    device: str
    op: str
    value: Value

    def holds(self, actual: Value) -> bool:
        op = self.op
        if op == "=":
            return actual == self.value
        if op == "!=":
            return actual != self.value
        if not (isinstance(actual, int) and isinstance(self.value, int)):
            return False
        if op == "<":
            return actual < self.value
        if op == "<=":
            return actual <= self.value
        if op == ">":
            return actual > self.value
        return actual >= self.value

    def negated(self) -> "Atom":
        return Atom(self.device, _NEGATED_OP[self.op], self.value)


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    operand: "CondExpr"


@dataclass(frozen=True)
class And:
    operands: tuple

    def __post_init__(self):
        if len(self.operands) < 2:
            raise ValueError("And needs at least two operands")


@dataclass(frozen=True)
class Or:
    operands: tuple

    def __post_init__(self):
        if len(self.operands) < 2:
            raise ValueError("Or needs at least two operands")


CondExpr = Union[Atom, Const, Not, And, Or]
TRUE = Const(True)
FALSE = Const(False)


def atoms(expr: CondExpr) -> Iterator[Atom]:
    if isinstance(expr, Atom):
        yield expr
    elif isinstance(expr, Not):
        yield from atoms(expr.operand)
    elif isinstance(expr, (And, Or)):
        for op in expr.operands:
            yield from atoms(op)


def devices_of(expr: CondExpr) -> frozenset:
    return frozenset(a.device for a in atoms(expr))


def evaluate(expr: CondExpr, state: Mapping[str, Value]) -> bool:
    """Evaluate ``expr`` on a state mapping device id -> value."""
    if isinstance(expr, Atom):
        try:
            actual = state[expr.device]
        except KeyError:
            raise UnknownDeviceError(expr.device) from None
        return expr.holds(actual)
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Not):
        return not evaluate(expr.operand, state)
    if isinstance(expr, And):
        return all(evaluate(op, state) for op in expr.operands)
    if isinstance(expr, Or):
        return any(evaluate(op, state) for op in expr.operands)
    raise TypeError(f"not a condition expression: {expr!r}")


# ---------------------------------------------------------------------------
# Disjunctive normal form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizedFormula:
    """Disjunction of conjunctions of (possibly negated-by-operator) atoms.

    An empty disjunction is false; an empty conjunction is true.
    """

    clauses: tuple  # tuple[tuple[Atom, ...], ...]

    def evaluate(self, state: Mapping[str, Value]) -> bool:
        for clause in self.clauses:
            if all(atom.holds(state[atom.device]) for atom in clause):
                return True
        return False

    def to_expr(self) -> CondExpr:
        disjuncts = []
        for clause in self.clauses:
            if not clause:
                disjuncts.append(TRUE)
            elif len(clause) == 1:
                disjuncts.append(clause[0])
            else:
                disjuncts.append(And(tuple(clause)))
        if not disjuncts:
            return FALSE
        if len(disjuncts) == 1:
            return disjuncts[0]
        return Or(tuple(disjuncts))

    def __str__(self) -> str:
        return pretty(self.to_expr())


def normalize(expr: CondExpr) -> NormalizedFormula:
    """Convert to DNF, pushing negation into the relational operator."""
    return NormalizedFormula(tuple(_dnf(expr, negate=False)))


def _dnf(expr: CondExpr, negate: bool) -> list:
    if isinstance(expr, Atom):
        return [((expr.negated() if negate else expr),)]
    if isinstance(expr, Const):
        return [()] if expr.value != negate else []
    if isinstance(expr, Not):
        return _dnf(expr.operand, not negate)
    conjunctive = isinstance(expr, And) != negate
    parts = [_dnf(op, negate) for op in expr.operands]
    if not conjunctive:
        return [clause for part in parts for clause in part]
    clauses = []
    for combo in itertools.product(*parts):
        merged = tuple(atom for clause in combo for atom in clause)
        clauses.append(tuple(dict.fromkeys(merged)))
    return clauses


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------


def format_value(value: Value) -> str:
    return str(value)


def pretty(expr: CondExpr) -> str:
    if isinstance(expr, Atom):
        return f"{expr.device} {expr.op} {format_value(expr.value)}"
    if isinstance(expr, Const):
        return "TRUE" if expr.value else "FALSE"
    if isinstance(expr, Not):
        return f"NOT ({pretty(expr.operand)})"
    joiner = " AND " if isinstance(expr, And) else " OR "
    return joiner.join(_pretty_operand(op) for op in expr.operands)


def _pretty_operand(expr: CondExpr) -> str:
    if isinstance(expr, (And, Or)):
        return f"({pretty(expr)})"
    return pretty(expr)


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<int>-?\d+)
  | (?P<op>!=|<=|>=|==|≠|≤|≥|=|<|>)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*(?:-[A-Za-z0-9_]+)*)
  | (?P<punct>[().:,])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"AND", "OR", "NOT", "TRUE", "FALSE"}


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Tok("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.tokens[self.i]

    def error(self, message: str):
        raise PolicySyntaxError(message, self.tok.pos, self.text)

    def advance(self) -> _Tok:
        tok = self.tok
        self.i += 1
        return tok

    def at_keyword(self, *words: str) -> bool:
        return self.tok.kind == "word" and self.tok.text.upper() in words

    def expect_keyword(self, word: str) -> _Tok:
        if not self.at_keyword(word.upper()):
            self.error(f"expected {word!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def expect_punct(self, char: str) -> _Tok:
        if not (self.tok.kind == "punct" and self.tok.text == char):
            self.error(f"expected {char!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def expect_name(self, what: str) -> str:
        if self.tok.kind != "word" or self.tok.text.upper() in _KEYWORDS:
            self.error(f"expected {what}, found {self.tok.text or 'end of input'!r}")
        return self.advance().text

    def expect_eof(self):
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")

    # expressions

    def expr(self) -> CondExpr:
        operands = [self.conj()]
        while self.at_keyword("OR"):
            self.advance()
            operands.append(self.conj())
        return operands[0] if len(operands) == 1 else Or(tuple(operands))

    def conj(self) -> CondExpr:
        operands = [self.unary()]
        while self.at_keyword("AND"):
            self.advance()
            operands.append(self.unary())
        return operands[0] if len(operands) == 1 else And(tuple(operands))

    def unary(self) -> CondExpr:
        if self.at_keyword("NOT"):
            self.advance()
            return Not(self.unary())
        if self.tok.kind == "punct" and self.tok.text == "(":
            self.advance()
            inner = self.expr()
            self.expect_punct(")")
            return inner
        if self.at_keyword("TRUE"):
            self.advance()
            return TRUE
        if self.at_keyword("FALSE"):
            self.advance()
            return FALSE
        return self.atom()

    def atom(self) -> Atom:
        device = self.expect_name("device name")
        if self.tok.kind != "op":
            self.error("expected relational operator")
        op = self.advance().text
        op = _OP_ALIASES.get(op, op)
        return Atom(device, op, self.constant())

    def constant(self) -> Value:
        tok = self.tok
        if tok.kind == "int":
            self.advance()
            return int(tok.text)
        if tok.kind == "word" and tok.text.upper() not in _KEYWORDS:
            self.advance()
            return tok.text
        self.error("expected constant")

    def atomset(self) -> tuple:
        found = [self.atom()]
        while self.at_keyword("OR"):
            self.advance()
            found.append(self.atom())
        return tuple(found)


def parse_expr(text: str, devices: Mapping | None = None) -> CondExpr:
    """Parse a condition expression; validate against ``devices`` if given."""
    parser = _Parser(text)
    if parser.tok.kind == "eof":
        parser.error("empty expression")
    expr = parser.expr()
    parser.expect_eof()
    if devices is not None:
        check_expr(expr, devices)
    return expr


def parse_atom(text: str, devices: Mapping | None = None) -> Atom:
    parser = _Parser(text)
    atom = parser.atom()
    parser.expect_eof()
    if devices is not None:
        check_expr(atom, devices)
    return atom


def check_expr(expr: CondExpr, devices: Mapping) -> None:
    """Raise if an atom names an unknown device or a constant of the wrong type.

    ``devices`` maps id -> object with a ``domain`` tuple.
    """
    for atom in atoms(expr):
        if atom.device not in devices:
            raise UnknownDeviceError(atom.device)
        domain = devices[atom.device].domain
        numeric = all(isinstance(v, int) for v in domain)
        if atom.op not in ("=", "!="):
            if not numeric or not isinstance(atom.value, int):
                raise TypeMismatchError(
                    f"{atom.op!r} needs an integer domain ({pretty(atom)})"
                )
        elif numeric != isinstance(atom.value, int):
            raise TypeMismatchError(f"constant type does not match domain of {atom.device}")
        elif not numeric and atom.value not in domain:
            raise TypeMismatchError(f"{atom.value!r} not in domain of {atom.device}")


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Dialect(str, enum.Enum):
    INVARIANT = "invariant"
    GUARD = "guard"
    IMPLICATION = "implication"
    FLOW = "flow"
    GENERAL = "general"


class GuardMode(str, enum.Enum):
    DENY_IF = "deny-if"
    ALLOW_ONLY_IF = "allow-only-if"


class ImplicationMode(str, enum.Enum):
    RESTRICT = "restrict"
    ALLOW = "allow"


@dataclass(frozen=True)
class StateInvariant:
    expr: CondExpr


@dataclass(frozen=True)
class ActionGuard:
    device: str
    command: str
    guard: CondExpr
    mode: GuardMode


@dataclass(frozen=True)
class Implication:
    premise: tuple  # tuple[Atom, ...], matched disjunctively
    conclusion: tuple
    mode: ImplicationMode


@dataclass(frozen=True)
class TriggerActionFlow:
    pass


@dataclass(frozen=True)
class General:
    check: str = "no-cycle"


PolicyForm = Union[StateInvariant, ActionGuard, Implication, TriggerActionFlow, General]

_KEYWORD_DIALECT = {
    "invariant": Dialect.INVARIANT,
    "deny-if": Dialect.GUARD,
    "allow-only-if": Dialect.GUARD,
    "restrict": Dialect.IMPLICATION,
    "allow": Dialect.IMPLICATION,
    "flow": Dialect.FLOW,
    "general": Dialect.GENERAL,
}

GENERAL_CHECKS = ("no-cycle",)


@dataclass(frozen=True)
class PolicySpec:
    id: str
    form: PolicyForm

    @property
    def dialect(self) -> Dialect:
        form = self.form
        if isinstance(form, StateInvariant):
            return Dialect.INVARIANT
        if isinstance(form, ActionGuard):
            return Dialect.GUARD
        if isinstance(form, Implication):
            return Dialect.IMPLICATION
        if isinstance(form, TriggerActionFlow):
            return Dialect.FLOW
        return Dialect.GENERAL

    def devices(self) -> frozenset:
        form = self.form
        if isinstance(form, StateInvariant):
            return devices_of(form.expr)
        if isinstance(form, ActionGuard):
            return devices_of(form.guard) | {form.device}
        if isinstance(form, Implication):
            return frozenset(a.device for a in form.premise + form.conclusion)
        return frozenset()

    def __str__(self) -> str:
        return format_policy(self)


def format_policy(policy: PolicySpec) -> str:
    form = policy.form
    if isinstance(form, StateInvariant):
        body = f"invariant {pretty(form.expr)}"
    elif isinstance(form, ActionGuard):
        body = (
            f"{form.mode.value} action {form.device}.{form.command} "
            f"when {pretty(form.guard)}"
        )
    elif isinstance(form, Implication):
        premise = " OR ".join(pretty(a) for a in form.premise)
        conclusion = " OR ".join(pretty(a) for a in form.conclusion)
        body = f"{form.mode.value} if {premise} then {conclusion}"
    elif isinstance(form, TriggerActionFlow):
        body = "flow untrusted-to-trusted"
    else:
        body = f"general {form.check}"
    return f"{policy.id}: {body}"


def parse_policy(
    text: str,
    dialect: Dialect | str | None = None,
    devices: Mapping | None = None,
) -> PolicySpec:
    """Parse one policy line such as ``P1: deny-if action Door.Open when Home = OFF``.

    If ``dialect`` is given the statement must belong to it. If ``devices``
    is given, device references and constants are type-checked.
    """
    parser = _Parser(text)
    if parser.tok.kind == "eof":
        parser.error("empty policy")
    if parser.tok.kind not in ("word", "int"):
        parser.error("expected policy id")
    policy_id = parser.advance().text
    parser.expect_punct(":")
    keyword_tok = parser.tok
    keyword = keyword_tok.text.lower() if keyword_tok.kind == "word" else ""
    if keyword not in _KEYWORD_DIALECT:
        parser.error(f"unknown policy keyword {keyword_tok.text!r}")
    parser.advance()
    found = _KEYWORD_DIALECT[keyword]
    if dialect is not None and Dialect(dialect) is not found:
        raise PolicySyntaxError(
            f"{keyword!r} is not part of the {Dialect(dialect).value} dialect",
            keyword_tok.pos,
            text,
        )

    if found is Dialect.INVARIANT:
        form: PolicyForm = StateInvariant(parser.expr())
    elif found is Dialect.GUARD:
        parser.expect_keyword("action")
        device = parser.expect_name("device name")
        parser.expect_punct(".")
        command = parser.expect_name("command name")
        parser.expect_keyword("when")
        form = ActionGuard(device, command, parser.expr(), GuardMode(keyword))
    elif found is Dialect.IMPLICATION:
        parser.expect_keyword("if")
        premise = parser.atomset()
        parser.expect_keyword("then")
        conclusion = parser.atomset()
        form = Implication(premise, conclusion, ImplicationMode(keyword))
    elif found is Dialect.FLOW:
        parser.expect_keyword("untrusted-to-trusted")
        form = TriggerActionFlow()
    else:
        check = parser.expect_name("general check").lower()
        if check not in GENERAL_CHECKS:
            raise PolicySyntaxError(f"unknown general check {check!r}", parser.tokens[parser.i - 1].pos, text)
        form = General(check)
    parser.expect_eof()

    policy = PolicySpec(policy_id, form)
    if devices is not None:
        check_policy(policy, devices)
    return policy


def check_policy(policy: PolicySpec, devices: Mapping) -> None:
    form = policy.form
    if isinstance(form, StateInvariant):
        check_expr(form.expr, devices)
    elif isinstance(form, ActionGuard):
        spec = devices.get(form.device)
        if spec is None:
            raise UnknownDeviceError(form.device)
        commands = getattr(spec, "commands", None)
        if commands is not None and form.command not in commands:
            raise TypeMismatchError(f"{form.device} has no command {form.command!r}")
        check_expr(form.guard, devices)
    elif isinstance(form, Implication):
        for atom in form.premise + form.conclusion:
            check_expr(atom, devices)


def strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_policy_lines(lines: Iterable[str], devices: Mapping | None = None) -> list:
    """Parse policy-file lines, skipping blanks and ``#`` comments."""
    policies = []
    for lineno, raw in enumerate(lines, 1):
        line = strip_comment(raw)
        if not line:
            continue
        try:
            policies.append(parse_policy(line, devices=devices))
        except PolicyError as exc:
            raise PolicyError(f"line {lineno}: {exc}") from exc
    return policies


# ---------------------------------------------------------------------------
# Policy selection
# ---------------------------------------------------------------------------


def relevant(policy: PolicySpec, device: str, style: str = "patriot") -> bool:
    """Whether ``policy`` applies to an action on ``device``.

    Guards are relevant through their guarded action, implications through
    their conclusion atoms. Invariants are relevant to everything under
    ``style="expat"`` and only to mentioned devices under ``style="patriot"``.
    Flow and general policies constrain the whole interaction graph.
    """
    form = policy.form
    if isinstance(form, ActionGuard):
        return form.device == device
    if isinstance(form, Implication):
        return any(a.device == device for a in form.conclusion)
    if isinstance(form, StateInvariant):
        return style == "expat" or device in devices_of(form.expr)
    return True


def guard_as_invariant(guard: ActionGuard, target_value: Value) -> CondExpr:
    """Post-state invariant equivalent to an action guard.

    ``deny-if action D.c when G``       ->  NOT (D = v AND G)
    ``allow-only-if action D.c when G`` ->  D != v OR G
    where v is the value command c drives D to.
    """
    reached = Atom(guard.device, "=", target_value)
    if guard.mode is GuardMode.DENY_IF:
        return Not(And((reached, guard.guard)))
    return Or((reached.negated(), guard.guard))


def enumerate_states(domains: Mapping[str, Iterable[Value]]) -> Iterator[dict]:
    """All total assignments over ``domains`` (device -> values)."""
    names = list(domains)
    for combo in itertools.product(*(tuple(domains[n]) for n in names)):
        yield dict(zip(names, combo))
