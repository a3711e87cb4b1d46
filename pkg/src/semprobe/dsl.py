"""Constraint rule language: parsing, normalization, evaluation.

Rules pair a scope (one IE for intra-IE rules, two for inter-IE rules) with
a clause: either a single atom or an implication
``IMPLIES(pre, ..., pre; consequent)``. Atoms:

* ``EQ(f, lit)`` / ``NE(f, lit)`` -- field/literal (in)equality
* ``IN(f, {lit, ...})`` -- set membership
* ``MAP(f1, f2, {k: v, ...})`` -- enumerant mapping between two fields
* ``MOD(f, modulus, residue)`` -- modular predicate
* ``MATCH(f1, f2)`` -- identifier reference consistency across fields
* ``GE/GT/LE/LT(expr, expr)`` -- ordering between affine expressions, each
  referencing at most one field (``EQ`` between expressions also lands here)

Rules are grouped in two families: ``RangeAlignment`` for ordering/linear
bounds (REL atoms), ``ValueDependency`` for everything else.

Textual grammar, one rule per line, ``#`` comments::

    SCOPE ':' CLAUSE
    SCOPE  := 'INTRA' '(' IE ')' | 'INTER' '(' IE ',' IE ')'
    CLAUSE := 'IMPLIES' '(' ATOM {',' ATOM} ';' ATOM ')' | ATOM

The separator before the final IMPLIES atom may be ``;`` or ``,``; the last
atom is always the consequent. Enum labels are quoted (``'format0'``),
numbers may be rationals (``1/2``), field references are dotted paths
optionally qualified by a scope IE name.

Normalization binds field references to schema leaves, validates literals
against declared domains, and canonicalizes (operand order, sorted sets and
scopes, reduced rational coefficients, relation direction). Failures produce
the NO_RULE value carrying a reason, never an exception. Rule ids are
content hashes of the canonical text.

Evaluation semantics over a decoded message: a rule is checked per binding
of scope-IE instances (Cartesian product for inter-IE scopes), expanding
repeated field instances within a binding. An atom referencing an absent
optional field is inapplicable; an implication whose preconditions do not
all hold is vacuously satisfied. A bare MATCH quantifies globally: every
instance of the referencing field must equal at least one instance of the
defining field (the referencing side is the one whose Id-suffixed base name
matches the other side's IE). A MAP whose source value is outside the table
is inapplicable. Any violated binding makes the rule Violated (with witness
values); otherwise any satisfied binding makes it Satisfied; otherwise it is
Inapplicable.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Union

from . import message as msgmod
from .schema import (
    BoolKind,
    EnumKind,
    FieldKind,
    IntKind,
    Schema,
    ie_subtree_leaves,
    parse_path,
)

FAMILY_VALUE_DEPENDENCY = "ValueDependency"
FAMILY_RANGE_ALIGNMENT = "RangeAlignment"

Lit = Union[int, bool, str]


class RuleSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


@dataclass(frozen=True)
class NoRule:
    """Normalization/induction verdict: no executable rule."""

    reason: str

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class FieldRef:
    text: str                     # reference as written
    ie: str | None = None         # bound scope IE
    rel: str | None = None        # bound pattern path relative to that IE
    kind: FieldKind | None = None

    @property
    def bound(self) -> bool:
        return self.rel is not None

    @property
    def leaf_name(self) -> str:
        source = self.rel if self.rel is not None else self.text
        return parse_path(source)[-1][0]


@dataclass(frozen=True)
class Eq:
    f: FieldRef
    lit: Lit


@dataclass(frozen=True)
class Ne:
    f: FieldRef
    lit: Lit


@dataclass(frozen=True)
class In:
    f: FieldRef
    lits: tuple[Lit, ...]


@dataclass(frozen=True)
class MapAtom:
    f1: FieldRef
    f2: FieldRef
    table: tuple[tuple[Lit, Lit], ...]


@dataclass(frozen=True)
class Mod:
    f: FieldRef
    modulus: int
    residue: int


@dataclass(frozen=True)
class Match:
    f1: FieldRef
    f2: FieldRef


@dataclass(frozen=True)
class LinExpr:
    coeff: Fraction = Fraction(0)
    ref: FieldRef | None = None
    offset: Fraction = Fraction(0)


@dataclass(frozen=True)
class Rel:
    op: str  # "<", "<=", "=", ">=", ">"
    lhs: LinExpr
    rhs: LinExpr


Atom = Union[Eq, Ne, In, MapAtom, Mod, Match, Rel]


@dataclass(frozen=True)
class Implies:
    pre: tuple[Atom, ...]
    post: Atom


Clause = Union[Atom, Implies]


@dataclass(frozen=True)
class Scope:
    ies: tuple[str, ...]  # length 1 (intra) or 2 (inter)

    @property
    def intra(self) -> bool:
        return len(self.ies) == 1


@dataclass(frozen=True)
class ConstraintRule:
    scope: Scope
    clause: Clause
    family: str = FAMILY_VALUE_DEPENDENCY
    citations: tuple[tuple[str, str], ...] = ()   # (doc id, verbatim quote)
    provenance: str = "mined"                     # schema | mined | induced
    id: str = ""                                  # set by normalize


@dataclass(frozen=True)
class Satisfied:
    pass


@dataclass(frozen=True)
class Violated:
    atom: Atom
    witness: tuple[tuple[str, object], ...]  # (instance path, value)


@dataclass(frozen=True)
class Inapplicable:
    reason: str


Verdict = Union[Satisfied, Violated, Inapplicable]


# --------------------------------------------------------------------------
# Tokenizer
# --------------------------------------------------------------------------

_PUNCT = {":", ",", ";", "(", ")", "{", "}", "[", "]", "*", "+", "-", "/", "."}


@dataclass(frozen=True)
class _Tok:
    kind: str  # IDENT NUM STR PUNCT END
    value: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c == "#":
            break
        if c == "'":
            j = text.find("'", i + 1)
            if j < 0:
                raise RuleSyntaxError("unterminated string literal", i)
            toks.append(_Tok("STR", text[i + 1:j], i))
            i = j + 1
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(_Tok("NUM", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n:
                ch = text[j]
                if ch.isalnum() or ch == "_":
                    j += 1
                elif ch == "-" and j + 1 < n and text[j + 1].isalpha():
                    j += 1  # hyphen inside an identifier
                else:
                    break
            toks.append(_Tok("IDENT", text[i:j], i))
            i = j
            continue
        if c in _PUNCT:
            toks.append(_Tok("PUNCT", c, i))
            i += 1
            continue
        raise RuleSyntaxError(f"unexpected character {c!r}", i)
    toks.append(_Tok("END", "", n))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> _Tok:
        tok = self.next()
        if tok.value != value:
            raise RuleSyntaxError(f"expected {value!r}, got {tok.value!r}", tok.pos)
        return tok

    def expect_ident(self) -> _Tok:
        tok = self.next()
        if tok.kind != "IDENT":
            raise RuleSyntaxError(f"expected identifier, got {tok.value!r}", tok.pos)
        return tok

    # -- field references and operands --------------------------------------

    def parse_fieldref(self) -> FieldRef:
        parts = [self.expect_ident().value]
        while True:
            tok = self.peek()
            if tok.value == ".":
                self.next()
                parts.append("." + self.expect_ident().value)
            elif tok.value == "[":
                self.next()
                idx = self.next()
                if idx.value not in {"*"} and idx.kind != "NUM":
                    raise RuleSyntaxError("expected index or * in brackets", idx.pos)
                self.expect("]")
                parts.append(f"[{idx.value}]")
            else:
                break
        return FieldRef(text="".join(parts))

    def parse_number(self) -> Fraction:
        neg = False
        if self.peek().value == "-":
            self.next()
            neg = True
        tok = self.next()
        if tok.kind != "NUM":
            raise RuleSyntaxError(f"expected number, got {tok.value!r}", tok.pos)
        num = int(tok.value)
        if self.peek().value == "/":
            self.next()
            den_tok = self.next()
            if den_tok.kind != "NUM":
                raise RuleSyntaxError("expected denominator", den_tok.pos)
            value = Fraction(num, int(den_tok.value))
        else:
            value = Fraction(num)
        return -value if neg else value

    def parse_literal(self) -> Lit:
        tok = self.peek()
        if tok.kind == "STR":
            self.next()
            return tok.value
        if tok.kind == "IDENT" and tok.value in ("true", "false"):
            self.next()
            return tok.value == "true"
        value = self.parse_number()
        if value.denominator != 1:
            raise RuleSyntaxError("literal must be an integer", tok.pos)
        return int(value)

    def parse_operand(self) -> "LinExpr | Lit":
        """An EQ/NE/REL operand: affine expression, or a label/bool literal."""
        tok = self.peek()
        if tok.kind == "STR":
            self.next()
            return tok.value
        if tok.kind == "IDENT" and tok.value in ("true", "false"):
            self.next()
            return tok.value == "true"
        return self.parse_linexpr()

    def parse_linexpr(self) -> LinExpr:
        coeff = Fraction(0)
        ref: FieldRef | None = None
        offset = Fraction(0)
        sign = Fraction(1)
        first = True
        while True:
            tok = self.peek()
            if not first:
                if tok.value == "+":
                    self.next()
                    sign = Fraction(1)
                elif tok.value == "-":
                    self.next()
                    sign = Fraction(-1)
                else:
                    break
            term_tok = self.peek()
            if term_tok.kind == "NUM" or term_tok.value == "-":
                value = self.parse_number()
                if self.peek().value == "*":
                    self.next()
                    f = self.parse_fieldref()
                    if ref is not None and ref != f:
                        raise RuleSyntaxError(
                            "expression references more than one field", term_tok.pos
                        )
                    ref = f
                    coeff += sign * value
                else:
                    offset += sign * value
            elif term_tok.kind == "IDENT":
                f = self.parse_fieldref()
                if ref is not None and ref != f:
                    raise RuleSyntaxError(
                        "expression references more than one field", term_tok.pos
                    )
                ref = f
                coeff += sign * 1
            else:
                raise RuleSyntaxError(f"unexpected token {term_tok.value!r}", term_tok.pos)
            first = False
        if coeff == 0:
            ref = None
        return LinExpr(coeff=coeff, ref=ref, offset=offset)

    # -- atoms and clauses ---------------------------------------------------

    def parse_atom(self) -> Atom:
        name_tok = self.expect_ident()
        name = name_tok.value.upper()
        self.expect("(")
        if name in ("EQ", "NE"):
            lhs = self.parse_operand()
            self.expect(",")
            rhs = self.parse_operand()
            self.expect(")")
            return self._make_eqne(name, lhs, rhs, name_tok.pos)
        if name == "IN":
            f = self.parse_fieldref()
            self.expect(",")
            self.expect("{")
            lits = [self.parse_literal()]
            while self.peek().value == ",":
                self.next()
                lits.append(self.parse_literal())
            self.expect("}")
            self.expect(")")
            return In(f=f, lits=tuple(lits))
        if name == "MAP":
            f1 = self.parse_fieldref()
            self.expect(",")
            f2 = self.parse_fieldref()
            self.expect(",")
            self.expect("{")
            table = [self._parse_map_entry()]
            while self.peek().value == ",":
                self.next()
                table.append(self._parse_map_entry())
            self.expect("}")
            self.expect(")")
            return MapAtom(f1=f1, f2=f2, table=tuple(table))
        if name == "MOD":
            f = self.parse_fieldref()
            self.expect(",")
            modulus = self.parse_literal()
            self.expect(",")
            residue = self.parse_literal()
            self.expect(")")
            if not isinstance(modulus, int) or not isinstance(residue, int):
                raise RuleSyntaxError("MOD arguments must be integers", name_tok.pos)
            return Mod(f=f, modulus=modulus, residue=residue)
        if name == "MATCH":
            f1 = self.parse_fieldref()
            self.expect(",")
            f2 = self.parse_fieldref()
            self.expect(")")
            return Match(f1=f1, f2=f2)
        if name in ("GE", "GT", "LE", "LT"):
            lhs = self.parse_operand()
            self.expect(",")
            rhs = self.parse_operand()
            self.expect(")")
            op = {"GE": ">=", "GT": ">", "LE": "<=", "LT": "<"}[name]
            if not isinstance(lhs, LinExpr) or not isinstance(rhs, LinExpr):
                raise RuleSyntaxError(f"{name} operands must be numeric", name_tok.pos)
            return Rel(op=op, lhs=lhs, rhs=rhs)
        raise RuleSyntaxError(f"unknown atom {name_tok.value!r}", name_tok.pos)

    def _parse_map_entry(self) -> tuple[Lit, Lit]:
        key = self.parse_literal()
        self.expect(":")
        value = self.parse_literal()
        return (key, value)

    def _make_eqne(self, name: str, lhs, rhs, pos: int) -> Atom:
        def as_lit(x):
            if isinstance(x, (str, bool)):
                return x
            if isinstance(x, LinExpr) and x.ref is None and x.offset.denominator == 1:
                return int(x.offset)
            return None

        def as_field(x):
            if isinstance(x, LinExpr) and x.ref is not None and x.coeff == 1 and x.offset == 0:
                return x.ref
            return None

        field_l, field_r = as_field(lhs), as_field(rhs)
        lit_l, lit_r = as_lit(lhs), as_lit(rhs)
        if field_l is not None and lit_r is not None:
            return (Eq if name == "EQ" else Ne)(f=field_l, lit=lit_r)
        if field_r is not None and lit_l is not None:
            return (Eq if name == "EQ" else Ne)(f=field_r, lit=lit_l)
        if name == "NE":
            raise RuleSyntaxError("NE requires a field and a literal", pos)
        if isinstance(lhs, LinExpr) and isinstance(rhs, LinExpr):
            return Rel(op="=", lhs=lhs, rhs=rhs)
        raise RuleSyntaxError("EQ operands must be fields, literals or expressions", pos)

    def parse_clause(self) -> Clause:
        tok = self.peek()
        if tok.kind == "IDENT" and tok.value.upper() == "IMPLIES":
            self.next()
            self.expect("(")
            atoms = [self.parse_atom()]
            while self.peek().value in (",", ";"):
                self.next()
                atoms.append(self.parse_atom())
            self.expect(")")
            if len(atoms) < 2:
                raise RuleSyntaxError("IMPLIES needs preconditions and a consequent", tok.pos)
            return Implies(pre=tuple(atoms[:-1]), post=atoms[-1])
        return self.parse_atom()

    def parse_rule(self) -> ConstraintRule:
        kw = self.expect_ident()
        scope_kw = kw.value.upper()
        if scope_kw not in ("INTRA", "INTER"):
            raise RuleSyntaxError("rule must start with INTRA or INTER", kw.pos)
        self.expect("(")
        ies = [self.expect_ident().value]
        if scope_kw == "INTER":
            self.expect(",")
            ies.append(self.expect_ident().value)
        self.expect(")")
        self.expect(":")
        clause = self.parse_clause()
        end = self.peek()
        if end.kind != "END":
            raise RuleSyntaxError(f"unexpected trailing input {end.value!r}", end.pos)
        return ConstraintRule(
            scope=Scope(ies=tuple(ies)),
            clause=clause,
            family=_family_of(clause),
        )


def parse_rule(text: str) -> ConstraintRule:
    """Parse one rule line; raises RuleSyntaxError with position on failure."""
    return _Parser(text).parse_rule()


def _family_of(clause: Clause) -> str:
    atom = clause.post if isinstance(clause, Implies) else clause
    return FAMILY_RANGE_ALIGNMENT if isinstance(atom, Rel) else FAMILY_VALUE_DEPENDENCY


# --------------------------------------------------------------------------
# Binding
# --------------------------------------------------------------------------

_NK_RE = re.compile(r"^n(\d+)$")


def is_nk_enum(kind: FieldKind) -> bool:
    return isinstance(kind, EnumKind) and all(_NK_RE.match(l) for l in kind.labels)


def nk_value(label: str) -> int:
    m = _NK_RE.match(label)
    if not m:
        raise ValueError(f"label {label!r} has no numeric form")
    return int(m.group(1))


def _iter_refs(clause: Clause):
    atoms = list(clause.pre) + [clause.post] if isinstance(clause, Implies) else [clause]
    for atom in atoms:
        if isinstance(atom, (Eq, Ne, In, Mod)):
            yield atom.f
        elif isinstance(atom, MapAtom):
            yield atom.f1
            yield atom.f2
        elif isinstance(atom, Match):
            yield atom.f1
            yield atom.f2
        elif isinstance(atom, Rel):
            if atom.lhs.ref is not None:
                yield atom.lhs.ref
            if atom.rhs.ref is not None:
                yield atom.rhs.ref


def _map_refs(clause: Clause, fn) -> Clause:
    def map_atom(atom: Atom) -> Atom:
        if isinstance(atom, (Eq, Ne, In, Mod)):
            return replace(atom, f=fn(atom.f))
        if isinstance(atom, MapAtom):
            return replace(atom, f1=fn(atom.f1), f2=fn(atom.f2))
        if isinstance(atom, Match):
            return replace(atom, f1=fn(atom.f1), f2=fn(atom.f2))
        if isinstance(atom, Rel):
            lhs = replace(atom.lhs, ref=fn(atom.lhs.ref)) if atom.lhs.ref else atom.lhs
            rhs = replace(atom.rhs, ref=fn(atom.rhs.ref)) if atom.rhs.ref else atom.rhs
            return replace(atom, lhs=lhs, rhs=rhs)
        raise TypeError(atom)

    if isinstance(clause, Implies):
        return Implies(pre=tuple(map_atom(a) for a in clause.pre), post=map_atom(clause.post))
    return map_atom(clause)


def _segs_suffix_match(written, pattern) -> bool:
    if len(written) > len(pattern):
        return False
    for (wn, wi), (pn, pi) in zip(written, pattern[len(pattern) - len(written):]):
        if wn != pn:
            return False
        if wi is not None and wi != pi:
            return False
    return True


def bind_rule(rule: ConstraintRule, schema: Schema) -> "ConstraintRule | NoRule":
    """Resolve every field reference to a leaf within the rule's scope."""
    for ie in rule.scope.ies:
        if not schema.has_ie(ie):
            return NoRule(f"binding: scope IE {ie!r} is not defined")
    if len(set(rule.scope.ies)) != len(rule.scope.ies):
        return NoRule("binding: inter-IE scope must name two distinct IEs")

    leaves_by_ie = {ie: ie_subtree_leaves(schema, ie) for ie in rule.scope.ies}

    def bind(ref: FieldRef) -> "FieldRef | NoRule":
        if ref.bound:
            return ref
        try:
            written = parse_path(ref.text)
        except Exception:
            return NoRule(f"binding: bad field reference {ref.text!r}")
        if any(wi is not None and wi != "*" for _, wi in written):
            return NoRule(f"binding: concrete index in rule reference {ref.text!r}")
        search: list[tuple[str, tuple]] = []
        if written[0][0] in rule.scope.ies and len(written) > 1:
            search.append((written[0][0], written[1:]))
        else:
            search.extend((ie, written) for ie in rule.scope.ies)
        hits = []
        for ie, segs in search:
            for leaf in leaves_by_ie[ie]:
                rel_segs = parse_path(leaf.path)[1:]
                if _segs_suffix_match(segs, rel_segs):
                    rel = leaf.path.split(".", 1)[1]
                    hits.append(FieldRef(text=ref.text, ie=ie, rel=rel, kind=leaf.kind))
        unique = sorted({(h.ie, h.rel) for h in hits})
        if not unique:
            return NoRule(f"binding: {ref.text!r} does not resolve within scope")
        if len(unique) > 1:
            return NoRule(f"binding: {ref.text!r} is ambiguous within scope: {unique}")
        ie, rel = unique[0]
        kind = next(h.kind for h in hits if (h.ie, h.rel) == (ie, rel))
        return FieldRef(text=ref.text, ie=ie, rel=rel, kind=kind)

    failure: list[NoRule] = []

    def bind_or_record(ref: FieldRef) -> FieldRef:
        out = bind(ref)
        if isinstance(out, NoRule):
            failure.append(out)
            return ref
        return out

    clause = _map_refs(rule.clause, bind_or_record)
    if failure:
        return failure[0]
    return replace(rule, clause=clause)


# --------------------------------------------------------------------------
# Literal / domain validation
# --------------------------------------------------------------------------

def _lit_admissible(kind: FieldKind, lit: Lit) -> bool:
    if isinstance(kind, IntKind):
        return isinstance(lit, int) and not isinstance(lit, bool) and kind.lo <= lit <= kind.hi
    if isinstance(kind, EnumKind):
        return isinstance(lit, str) and lit in kind.labels
    if isinstance(kind, BoolKind):
        return isinstance(lit, bool)
    return False


def _arithmetic_ok(ref: FieldRef) -> bool:
    return isinstance(ref.kind, IntKind) or is_nk_enum(ref.kind)


def validate_rule(rule: ConstraintRule) -> "ConstraintRule | NoRule":
    """Domain validation of a bound rule's literals and operand kinds."""
    atoms = list(rule.clause.pre) + [rule.clause.post] \
        if isinstance(rule.clause, Implies) else [rule.clause]
    for atom in atoms:
        if isinstance(atom, (Eq, Ne)):
            if not _lit_admissible(atom.f.kind, atom.lit):
                return NoRule(f"literal: {atom.lit!r} not admissible for {atom.f.rel}")
        elif isinstance(atom, In):
            for lit in atom.lits:
                if not _lit_admissible(atom.f.kind, lit):
                    return NoRule(f"literal: {lit!r} not admissible for {atom.f.rel}")
        elif isinstance(atom, MapAtom):
            keys = [k for k, _ in atom.table]
            if len(set(keys)) != len(keys):
                return NoRule("literal: MAP table keys must be distinct")
            for k, v in atom.table:
                if not _lit_admissible(atom.f1.kind, k):
                    return NoRule(f"literal: MAP key {k!r} not admissible for {atom.f1.rel}")
                if not _lit_admissible(atom.f2.kind, v):
                    return NoRule(f"literal: MAP value {v!r} not admissible for {atom.f2.rel}")
        elif isinstance(atom, Mod):
            if atom.modulus < 1 or not (0 <= atom.residue < atom.modulus):
                return NoRule("literal: MOD requires modulus >= 1 and 0 <= residue < modulus")
            if not _arithmetic_ok(atom.f):
                return NoRule(f"literal: {atom.f.rel} does not support modular arithmetic")
        elif isinstance(atom, Match):
            k1, k2 = atom.f1.kind, atom.f2.kind
            if type(k1) is not type(k2):
                return NoRule("literal: MATCH fields must share a kind")
            if not isinstance(k1, (IntKind, EnumKind, BoolKind)):
                return NoRule("literal: MATCH fields must be scalar")
        elif isinstance(atom, Rel):
            for side in (atom.lhs, atom.rhs):
                if side.ref is not None and not _arithmetic_ok(side.ref):
                    return NoRule(
                        f"literal: {side.ref.rel} does not support numeric comparison"
                    )
            if atom.lhs.ref is None and atom.rhs.ref is None:
                return NoRule("literal: constant relation (tautology or contradiction)")
    if isinstance(rule.clause, Implies) and not rule.clause.pre:
        return NoRule("literal: implication without preconditions")
    return rule


# --------------------------------------------------------------------------
# Canonicalization
# --------------------------------------------------------------------------

_LIT_RANK = {bool: 0, int: 1, str: 2}


def _lit_key(lit: Lit):
    return (_LIT_RANK[type(lit)], lit)


def _ref_key(ref: FieldRef):
    return (ref.ie or "", ref.rel or ref.text)


def _flip(op: str) -> str:
    return {"<": ">", "<=": ">=", "=": "=", ">=": "<=", ">": "<"}[op]


def _canon_rel(atom: Rel) -> "Rel | Eq | NoRule":
    lhs, rhs, op = atom.lhs, atom.rhs, atom.op
    # Put a field on the left.
    if lhs.ref is None and rhs.ref is not None:
        lhs, rhs, op = rhs, lhs, _flip(op)
    if lhs.ref is not None:
        scale = lhs.coeff
        if scale == 0:
            lhs = LinExpr(offset=lhs.offset)
        else:
            if scale < 0:
                op = _flip(op)
            lhs_off = lhs.offset / scale
            rhs = LinExpr(
                coeff=rhs.coeff / scale,
                ref=rhs.ref,
                offset=rhs.offset / scale - lhs_off,
            )
            lhs = LinExpr(coeff=Fraction(1), ref=lhs.ref)
    if op in (">", ">="):
        lhs, rhs, op = rhs, lhs, _flip(op)
    if op == "=" and lhs.ref is not None and rhs.ref is not None:
        if _ref_key(rhs.ref) < _ref_key(lhs.ref):
            lhs, rhs = rhs, lhs
        if lhs.coeff != 1:
            # renormalize after the swap
            return _canon_rel(Rel(op="=", lhs=lhs, rhs=rhs))
    # A pure field equated to an in-domain integer collapses to EQ.
    if (
        op == "="
        and lhs.ref is not None
        and rhs.ref is None
        and lhs.coeff == 1
        and lhs.offset == 0
        and rhs.offset.denominator == 1
        and isinstance(lhs.ref.kind, IntKind)
        and _lit_admissible(lhs.ref.kind, int(rhs.offset))
    ):
        return Eq(f=lhs.ref, lit=int(rhs.offset))
    return Rel(op=op, lhs=lhs, rhs=rhs)


def _canon_atom(atom: Atom) -> "Atom | NoRule":
    if isinstance(atom, In):
        lits = tuple(sorted(set(atom.lits), key=_lit_key))
        if len(lits) == 1:
            return Eq(f=atom.f, lit=lits[0])
        return replace(atom, lits=lits)
    if isinstance(atom, MapAtom):
        return replace(atom, table=tuple(sorted(atom.table, key=lambda kv: _lit_key(kv[0]))))
    if isinstance(atom, Match):
        if _ref_key(atom.f2) < _ref_key(atom.f1):
            return Match(f1=atom.f2, f2=atom.f1)
        return atom
    if isinstance(atom, Rel):
        return _canon_rel(atom)
    return atom


def canonicalize(rule: ConstraintRule) -> "ConstraintRule | NoRule":
    scope = Scope(ies=tuple(sorted(rule.scope.ies)))
    if isinstance(rule.clause, Implies):
        pres = []
        for a in rule.clause.pre:
            ca = _canon_atom(a)
            if isinstance(ca, NoRule):
                return ca
            pres.append(ca)
        post = _canon_atom(rule.clause.post)
        if isinstance(post, NoRule):
            return post
        pres_sorted = tuple(sorted(set(pres), key=lambda a: _atom_text(a, scope)))
        clause: Clause = Implies(pre=pres_sorted, post=post)
    else:
        ca = _canon_atom(rule.clause)
        if isinstance(ca, NoRule):
            return ca
        clause = ca
    family = _family_of(clause)
    canon = replace(rule, scope=scope, clause=clause, family=family)
    text = canonical_text(canon)
    rule_id = "rule:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return replace(canon, id=rule_id)


def normalize(rule: ConstraintRule, schema: Schema) -> "ConstraintRule | NoRule":
    """Bind, validate, and canonicalize; NO_RULE (with reason) on failure."""
    bound = bind_rule(rule, schema)
    if isinstance(bound, NoRule):
        return bound
    valid = validate_rule(bound)
    if isinstance(valid, NoRule):
        return valid
    return canonicalize(valid)


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

def _lit_text(lit: Lit) -> str:
    if isinstance(lit, bool):
        return "true" if lit else "false"
    if isinstance(lit, int):
        return str(lit)
    return f"'{lit}'"


def _ref_text(ref: FieldRef, scope: Scope) -> str:
    if not ref.bound:
        return ref.text
    if scope.intra:
        return ref.rel  # type: ignore[return-value]
    return f"{ref.ie}.{ref.rel}"


def _frac_text(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _linexpr_text(e: LinExpr, scope: Scope) -> str:
    if e.ref is None:
        return _frac_text(e.offset)
    if e.coeff == 1:
        head = _ref_text(e.ref, scope)
    elif e.coeff == -1:
        head = f"-{_ref_text(e.ref, scope)}"
    else:
        head = f"{_frac_text(e.coeff)} * {_ref_text(e.ref, scope)}"
    if e.offset == 0:
        return head
    sign = "+" if e.offset > 0 else "-"
    return f"{head} {sign} {_frac_text(abs(e.offset))}"


_REL_NAMES = {"<": "LT", "<=": "LE", "=": "EQ", ">=": "GE", ">": "GT"}


def _atom_text(atom: Atom, scope: Scope) -> str:
    if isinstance(atom, Eq):
        return f"EQ({_ref_text(atom.f, scope)}, {_lit_text(atom.lit)})"
    if isinstance(atom, Ne):
        return f"NE({_ref_text(atom.f, scope)}, {_lit_text(atom.lit)})"
    if isinstance(atom, In):
        inner = ", ".join(_lit_text(l) for l in atom.lits)
        return f"IN({_ref_text(atom.f, scope)}, {{{inner}}})"
    if isinstance(atom, MapAtom):
        inner = ", ".join(f"{_lit_text(k)}: {_lit_text(v)}" for k, v in atom.table)
        return (f"MAP({_ref_text(atom.f1, scope)}, {_ref_text(atom.f2, scope)}, "
                f"{{{inner}}})")
    if isinstance(atom, Mod):
        return f"MOD({_ref_text(atom.f, scope)}, {atom.modulus}, {atom.residue})"
    if isinstance(atom, Match):
        return f"MATCH({_ref_text(atom.f1, scope)}, {_ref_text(atom.f2, scope)})"
    if isinstance(atom, Rel):
        return (f"{_REL_NAMES[atom.op]}({_linexpr_text(atom.lhs, scope)}, "
                f"{_linexpr_text(atom.rhs, scope)})")
    raise TypeError(atom)


def canonical_text(rule: ConstraintRule) -> str:
    scope = rule.scope
    scope_txt = (f"INTRA({scope.ies[0]})" if scope.intra
                 else f"INTER({scope.ies[0]}, {scope.ies[1]})")
    if isinstance(rule.clause, Implies):
        pres = ", ".join(_atom_text(a, scope) for a in rule.clause.pre)
        clause_txt = f"IMPLIES({pres}; {_atom_text(rule.clause.post, scope)})"
    else:
        clause_txt = _atom_text(rule.clause, scope)
    return f"{scope_txt}: {clause_txt}"


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _arith_value(ref: FieldRef, value) -> Fraction:
    if isinstance(ref.kind, EnumKind):
        return Fraction(nk_value(value))
    return Fraction(value)


def _eval_atom(atom: Atom, env: dict[FieldRef, tuple[str, object]]) -> "bool | None":
    """True / False / None (inapplicable) for one atom under a sub-binding."""
    if isinstance(atom, Eq):
        return env[atom.f][1] == atom.lit
    if isinstance(atom, Ne):
        return env[atom.f][1] != atom.lit
    if isinstance(atom, In):
        return env[atom.f][1] in atom.lits
    if isinstance(atom, MapAtom):
        v1 = env[atom.f1][1]
        table = dict(atom.table)
        if v1 not in table:
            return None
        return table[v1] == env[atom.f2][1]
    if isinstance(atom, Mod):
        v = _arith_value(atom.f, env[atom.f][1])
        if v.denominator != 1:
            return None
        return int(v) % atom.modulus == atom.residue
    if isinstance(atom, Match):
        return env[atom.f1][1] == env[atom.f2][1]
    if isinstance(atom, Rel):
        def side(e: LinExpr) -> Fraction:
            if e.ref is None:
                return e.offset
            return e.coeff * _arith_value(e.ref, env[e.ref][1]) + e.offset

        l, r = side(atom.lhs), side(atom.rhs)
        return {"<": l < r, "<=": l <= r, "=": l == r,
                ">=": l >= r, ">": l > r}[atom.op]
    raise TypeError(atom)


def _atom_witness(atom: Atom, env: dict[FieldRef, tuple[str, object]]):
    out = []
    for ref in _iter_refs(atom):
        if ref in env and env[ref] not in out:
            out.append(env[ref])
    return tuple(out)


def referencing_side(atom: Match) -> tuple[FieldRef, FieldRef]:
    """(referencing, defining) sides of a MATCH.

    The referencing field is the one whose leaf base name (Id/ID suffix
    stripped) names the other field's IE; when neither does, the first
    canonical argument is treated as referencing.
    """
    def base_of(ref: FieldRef) -> str:
        name = ref.leaf_name
        for suffix in ("Id", "ID"):
            if name.endswith(suffix):
                name = name[: -len(suffix)]
                break
        return name.rstrip("-").replace("-", "").lower()

    def ie_norm(ref: FieldRef) -> str:
        return (ref.ie or "").replace("-", "").lower()

    if base_of(atom.f1) == ie_norm(atom.f2) and base_of(atom.f2) != ie_norm(atom.f1):
        return atom.f1, atom.f2
    if base_of(atom.f2) == ie_norm(atom.f1) and base_of(atom.f1) != ie_norm(atom.f2):
        return atom.f2, atom.f1
    return atom.f1, atom.f2


def _eval_global_match(atom: Match, msg: msgmod.DecodedMessage) -> Verdict:
    ref, defn = referencing_side(atom)

    def entries(fr: FieldRef):
        out = []
        for prefix in msgmod.instances_of(msg, fr.ie):
            out.extend(e for e in msgmod.relative_instances(msg, prefix, fr.rel) if e.present)
        return out

    ref_entries = entries(ref)
    def_entries = entries(defn)
    if not ref_entries:
        return Inapplicable(f"no instances of {ref.ie}.{ref.rel}")
    def_values = {e.value for e in def_entries}
    for e in ref_entries:
        if e.value not in def_values:
            witness = ((e.path, e.value),) + tuple((d.path, d.value) for d in def_entries)
            return Violated(atom=atom, witness=witness)
    return Satisfied()


def evaluate(rule: ConstraintRule, msg: msgmod.DecodedMessage) -> Verdict:
    """Verdict of one normalized rule over one decoded message."""
    clause = rule.clause
    if isinstance(clause, Match):
        return _eval_global_match(clause, msg)

    per_ie: dict[str, tuple[str, ...]] = {
        ie: msgmod.instances_of(msg, ie) for ie in rule.scope.ies
    }
    bindings: list[dict[str, str]] = [{}]
    for ie in rule.scope.ies:
        bindings = [dict(b, **{ie: p}) for b in bindings for p in per_ie[ie]]
    if not bindings:
        return Inapplicable(f"no instances of {' and '.join(rule.scope.ies)}")

    refs = []
    for ref in _iter_refs(clause):
        if ref not in refs:
            refs.append(ref)

    any_satisfied = False
    inapplicable_reason = "no applicable bindings"
    for binding in bindings:
        options: list[list[tuple[str, object]]] = []
        absent = None
        for ref in refs:
            entries = [
                (e.path, e.value)
                for e in msgmod.relative_instances(msg, binding[ref.ie], ref.rel)
                if e.present
            ]
            if not entries:
                absent = f"field absent: {ref.ie}.{ref.rel}"
                break
            options.append(entries)
        if absent:
            inapplicable_reason = absent
            continue

        sub_envs: list[dict[FieldRef, tuple[str, object]]] = [{}]
        for ref, entries in zip(refs, options):
            expanded = []
            for env in sub_envs:
                for entry in entries:
                    new_env = dict(env)
                    new_env[ref] = entry
                    expanded.append(new_env)
            sub_envs = expanded

        for env in sub_envs:
            if isinstance(clause, Implies):
                pre_vals = [_eval_atom(a, env) for a in clause.pre]
                if any(v is not True for v in pre_vals):
                    any_satisfied = True  # vacuous
                    continue
                v = _eval_atom(clause.post, env)
                if v is False:
                    return Violated(atom=clause.post, witness=_atom_witness(clause.post, env))
                if v is True:
                    any_satisfied = True
                else:
                    inapplicable_reason = "consequent inapplicable"
            else:
                v = _eval_atom(clause, env)
                if v is False:
                    return Violated(atom=clause, witness=_atom_witness(clause, env))
                if v is True:
                    any_satisfied = True
                else:
                    inapplicable_reason = "atom inapplicable"

    if any_satisfied:
        return Satisfied()
    return Inapplicable(inapplicable_reason)
