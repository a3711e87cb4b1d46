"""Deterministic schema-derived constraints and the shared rule-set format.

Two constraint classes come straight from the schema: value ranges (one per
integer-typed leaf pattern) and presence rules (one per optional field
carrying a need code). Constraint ids live in disjoint namespaces by prefix:
``range:<pattern>``, ``presence:<pattern>``, and ``rule:<hash>`` for
dependency rules.

The rule-set JSON format bundles all three kinds::

    {"schema": {"name": ..., "version": ...},
     "ranges":   [{"id", "path", "lo", "hi", "provenance"}],
     "presence": [{"id", "path", "need", "provenance"}],
     "rules":    [{"id", "text", "family", "provenance",
                   "citations": [{"doc", "quote"}]}]}

Dependency rules serialize as their canonical text and are re-normalized on
load; a stored id that disagrees with the recomputed one is rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from . import dsl
from .schema import IntKind, Schema, iter_leaf_patterns, iter_optional_patterns


@dataclass(frozen=True)
class RangeConstraint:
    path: str  # pattern path with [*] for sequence elements
    lo: int
    hi: int

    @property
    def id(self) -> str:
        return f"range:{self.path}"


@dataclass(frozen=True)
class PresenceConstraint:
    path: str  # pattern path of the optional field position
    need: str

    @property
    def id(self) -> str:
        return f"presence:{self.path}"


def extract_ranges(schema: Schema) -> tuple[RangeConstraint, ...]:
    """One range constraint per integer-typed leaf pattern, sorted by path."""
    out = [
        RangeConstraint(path=leaf.path, lo=leaf.kind.lo, hi=leaf.kind.hi)
        for leaf in iter_leaf_patterns(schema)
        if isinstance(leaf.kind, IntKind)
    ]
    return tuple(sorted(out, key=lambda c: c.path))


def extract_presence(schema: Schema) -> tuple[PresenceConstraint, ...]:
    """One presence constraint per optional field with a need code."""
    out = [
        PresenceConstraint(path=opt.path, need=opt.field_def.need)
        for opt in iter_optional_patterns(schema)
        if opt.field_def.need is not None
    ]
    return tuple(sorted(out, key=lambda c: c.path))


@dataclass(frozen=True)
class RuleSet:
    schema_ref: tuple[str, str]
    ranges: tuple[RangeConstraint, ...]
    presence: tuple[PresenceConstraint, ...]
    rules: tuple[dsl.ConstraintRule, ...]

    def all_ids(self) -> tuple[str, ...]:
        ids = [c.id for c in self.ranges] + [c.id for c in self.presence] + \
              [r.id for r in self.rules]
        return tuple(sorted(ids))

    def rule_by_id(self, rule_id: str):
        for c in self.ranges:
            if c.id == rule_id:
                return c
        for c in self.presence:
            if c.id == rule_id:
                return c
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)


def build_ruleset(schema: Schema, rules: tuple[dsl.ConstraintRule, ...] = ()) -> RuleSet:
    return RuleSet(
        schema_ref=(schema.name, schema.version),
        ranges=extract_ranges(schema),
        presence=extract_presence(schema),
        rules=tuple(sorted(rules, key=lambda r: r.id)),
    )


def ruleset_to_dict(rs: RuleSet) -> dict:
    return {
        "schema": {"name": rs.schema_ref[0], "version": rs.schema_ref[1]},
        "ranges": [
            {"id": c.id, "path": c.path, "lo": c.lo, "hi": c.hi, "provenance": "schema"}
            for c in rs.ranges
        ],
        "presence": [
            {"id": c.id, "path": c.path, "need": c.need, "provenance": "schema"}
            for c in rs.presence
        ],
        "rules": [
            {
                "id": r.id,
                "text": dsl.canonical_text(r),
                "family": r.family,
                "provenance": r.provenance,
                "citations": [{"doc": d, "quote": q} for d, q in r.citations],
            }
            for r in rs.rules
        ],
    }


def save_ruleset(rs: RuleSet, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(ruleset_to_dict(rs), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_ruleset(path: str | Path, schema: Schema) -> RuleSet:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    ranges = tuple(
        RangeConstraint(path=o["path"], lo=o["lo"], hi=o["hi"]) for o in data["ranges"]
    )
    presence = tuple(
        PresenceConstraint(path=o["path"], need=o["need"]) for o in data["presence"]
    )
    rules = []
    for o in data["rules"]:
        parsed = dsl.parse_rule(o["text"])
        parsed = replace(
            parsed,
            provenance=o.get("provenance", "mined"),
            citations=tuple((c["doc"], c["quote"]) for c in o.get("citations", ())),
        )
        normalized = dsl.normalize(parsed, schema)
        if isinstance(normalized, dsl.NoRule):
            raise ValueError(f"stored rule does not normalize: {o['text']!r}: "
                             f"{normalized.reason}")
        if normalized.id != o["id"]:
            raise ValueError(
                f"stored rule id {o['id']} disagrees with canonical id {normalized.id}"
            )
        rules.append(normalized)
    return RuleSet(
        schema_ref=(data["schema"]["name"], data["schema"]["version"]),
        ranges=ranges,
        presence=presence,
        rules=tuple(rules),
    )
