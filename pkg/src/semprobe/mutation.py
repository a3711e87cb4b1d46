"""Turns constraints into concrete test cases via minimal, attributable
edits.

Every test case targets exactly one constraint and edits only the fields
that constraint names; everything else in the seed message stays untouched.

* Range probes set an integer leaf to one value just below and one just
  above the declared bounds. Values the wire can still carry are delivered
  as bytes; values below the minimum (never representable) are delivered as
  a decoded form through the raw-override channel.
* Presence probes omit one optional field that is present in the seed.
* Dependency probes enumerate assignments over the rule's field domains
  (bounded by a budget), keep those the evaluator marks Violated, and pick
  the assignment with the smallest total deviation from the seed values
  (|new - old| for integers, 0/1 for enums and booleans). Ties break by
  fewest edited fields, then -- for MATCH rules -- by preferring edits on
  the referencing side, then by lexicographic edited-path order, then by
  ascending assignment values. No violating assignment inside the domains
  means the constraint is infeasible for this seed, with the analysis
  recorded.
* The enumeration baseline walks the full Cartesian product of two fields'
  domains, attributing each case to a synthetic ``enum-baseline`` id.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from . import dsl, message as msgmod
from .message import DecodedMessage, Omit, RawOverride, SetValue
from .schema import BoolKind, EnumKind, IntKind
from .schema_rules import PresenceConstraint, RangeConstraint

DELIVERY_WIRE = "wire"
DELIVERY_RAW = "raw-override"

CLASS_VALUE = "value"
CLASS_PRESENCE = "presence"
CLASS_INTRA = "intra"
CLASS_INTER = "inter"
CLASS_ENUMERATION = "enumeration"

DEFAULT_DEPENDENCY_BUDGET = 10_000


@dataclass(frozen=True)
class TestCase:
    id: str
    seed_ref: str
    edits: tuple
    targeted: str
    delivery: str                 # wire | raw-override
    payload: bytes | None         # wire delivery
    raw_tree: dict | None         # raw-override delivery
    expected_class: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "seed_ref": self.seed_ref,
            "edits": [_edit_to_dict(e) for e in self.edits],
            "targeted": self.targeted,
            "delivery": self.delivery,
            **({"payload_hex": self.payload.hex()} if self.payload is not None else {}),
            **({"raw_tree": self.raw_tree} if self.raw_tree is not None else {}),
            "expected_class": self.expected_class,
        }


def _edit_to_dict(e) -> dict:
    if isinstance(e, SetValue):
        return {"op": "set", "path": e.path, "value": e.value, "rationale": e.rationale}
    if isinstance(e, Omit):
        return {"op": "omit", "path": e.path, "rationale": e.rationale}
    if isinstance(e, RawOverride):
        return {"op": "raw", "path": e.path, "value": e.value, "rationale": e.rationale}
    raise TypeError(e)


@dataclass(frozen=True)
class Planned:
    cases: tuple[TestCase, ...]


@dataclass(frozen=True)
class Infeasible:
    reason: str


PlanOutcome = "Planned | Infeasible"


def _wire_case(seed: DecodedMessage, seed_ref: str, case_id: str, edits: list,
               targeted: str, expected_class: str) -> TestCase:
    mutated = msgmod.apply_edits(seed, edits)
    return TestCase(
        id=case_id,
        seed_ref=seed_ref,
        edits=tuple(edits),
        targeted=targeted,
        delivery=DELIVERY_WIRE,
        payload=msgmod.reencode(mutated),
        raw_tree=None,
        expected_class=expected_class,
    )


def _raw_case(seed: DecodedMessage, seed_ref: str, case_id: str, edits: list,
              targeted: str, expected_class: str) -> TestCase:
    mutated = msgmod.apply_edits(seed, edits)
    return TestCase(
        id=case_id,
        seed_ref=seed_ref,
        edits=tuple(edits),
        targeted=targeted,
        delivery=DELIVERY_RAW,
        payload=None,
        raw_tree=mutated.tree,
        expected_class=expected_class,
    )


# --------------------------------------------------------------------------
# Range probes
# --------------------------------------------------------------------------

def plan_range(seed: DecodedMessage, rc: RangeConstraint, seed_ref: str = "seed") -> PlanOutcome:
    """Two probes per present instance: one below lo, one above hi."""
    from .codec import representable  # local import keeps module deps one-way

    entries = [e for e in msgmod.match_pattern(seed, rc.path) if e.present]
    if not entries:
        return Infeasible(f"no instance of {rc.path} in seed")
    kind = IntKind(lo=rc.lo, hi=rc.hi)
    cases: list[TestCase] = []
    for entry in entries:
        for probe in (rc.lo - 1, rc.hi + 1):
            label = "lo-1" if probe < rc.lo else "hi+1"
            case_id = f"{rc.id}@{entry.path}#{label}"
            if representable(kind, probe):
                edit = SetValue(path=entry.path, value=probe, rationale=rc.id)
                cases.append(_wire_case(seed, seed_ref, case_id, [edit], rc.id, CLASS_VALUE))
            else:
                edit = RawOverride(path=entry.path, value=probe, rationale=rc.id)
                cases.append(_raw_case(seed, seed_ref, case_id, [edit], rc.id, CLASS_VALUE))
    return Planned(cases=tuple(cases))


# --------------------------------------------------------------------------
# Presence probes
# --------------------------------------------------------------------------

def plan_presence(seed: DecodedMessage, pc: PresenceConstraint,
                  seed_ref: str = "seed") -> PlanOutcome:
    """Omit the optional field wherever the seed carries it."""
    entries = msgmod.match_pattern(seed, pc.path)
    present = [e for e in entries if e.present]
    # composite optional fields appear in the flat table only when absent;
    # probe every parent position where the field exists in the tree
    tree_positions = _present_field_positions(seed, pc.path)
    if not tree_positions:
        if entries or _pattern_parent_exists(seed, pc.path):
            return Infeasible(f"{pc.path} already absent in seed")
        return Infeasible(f"no instance of {pc.path} in seed")
    cases = []
    for path in tree_positions:
        case_id = f"{pc.id}@{path}#omit"
        edit = Omit(path=path, rationale=pc.id)
        cases.append(_wire_case(seed, seed_ref, case_id, [edit], pc.id, CLASS_PRESENCE))
    return Planned(cases=tuple(cases))


def _present_field_positions(seed: DecodedMessage, pattern: str) -> list[str]:
    """Concrete instance paths where the (possibly composite) field exists."""
    from .schema import format_path, parse_path

    psegs = parse_path(pattern)
    found: list[str] = []

    def walk(node, segs_done: list, segs_left) -> None:
        if not segs_left:
            found.append(format_path(segs_done))
            return
        name, idx = segs_left[0]
        if not isinstance(node, dict) or name not in node:
            return
        child = node[name]
        if idx is None:
            walk(child, segs_done + [(name, None)], segs_left[1:])
        else:
            if not isinstance(child, list):
                return
            for i, elem in enumerate(child):
                if idx == "*" or idx == i:
                    walk(elem, segs_done + [(name, i)], segs_left[1:])

    walk(seed.tree, [psegs[0]], psegs[1:])
    return found


def _pattern_parent_exists(seed: DecodedMessage, pattern: str) -> bool:
    from .schema import format_path, parse_path

    psegs = parse_path(pattern)
    if len(psegs) <= 2:
        return True
    parent = format_path(psegs[:-1])
    return bool(_present_field_positions(seed, parent))


# --------------------------------------------------------------------------
# Dependency probes
# --------------------------------------------------------------------------

def _domain_values(kind) -> list:
    if isinstance(kind, IntKind):
        return list(range(kind.lo, kind.hi + 1))
    if isinstance(kind, EnumKind):
        return list(kind.labels)
    if isinstance(kind, BoolKind):
        return [False, True]
    raise TypeError(kind)


def _value_ordinal(kind, value):
    if isinstance(kind, IntKind):
        return value
    if isinstance(kind, EnumKind):
        return kind.labels.index(value)
    if isinstance(kind, BoolKind):
        return int(value)
    raise TypeError(kind)


def _deviation(kind, old, new) -> int:
    if isinstance(kind, IntKind):
        return abs(new - old)
    return 0 if new == old else 1


def plan_dependency(
    seed: DecodedMessage,
    rule: dsl.ConstraintRule,
    seed_ref: str = "seed",
    budget: int = DEFAULT_DEPENDENCY_BUDGET,
) -> PlanOutcome:
    """One minimal-deviation violating assignment for a normalized rule."""
    refs: list[dsl.FieldRef] = []
    for ref in dsl._iter_refs(rule.clause):
        if ref not in refs:
            refs.append(ref)
    if not refs:
        return Infeasible("rule references no fields")

    # Concrete field positions in the seed, per reference.
    positions: list[tuple[str, object, object]] = []  # (path, kind, seed value)
    for ref in refs:
        for prefix in msgmod.instances_of(seed, ref.ie):
            for entry in msgmod.relative_instances(seed, prefix, ref.rel):
                if entry.present:
                    positions.append((entry.path, ref.kind, entry.value))
    if not positions:
        return Infeasible("rule fields have no present instances in seed")
    positions.sort(key=lambda p: p[0])

    total = 1
    for _, kind, _ in positions:
        total *= len(_domain_values(kind))
        if total > budget:
            return Infeasible("budget")

    ref_side_paths: set[str] = set()
    if isinstance(rule.clause, dsl.Match):
        referencing, _ = dsl.referencing_side(rule.clause)
        for prefix in msgmod.instances_of(seed, referencing.ie):
            for entry in msgmod.relative_instances(seed, prefix, referencing.rel):
                ref_side_paths.add(entry.path)

    best = None  # (sort key, assignment)
    domains = [_domain_values(kind) for _, kind, _ in positions]
    for combo in itertools.product(*domains):
        edits = [
            (path, kind, old, new)
            for (path, kind, old), new in zip(positions, combo)
            if new != old
        ]
        if not edits:
            continue
        candidate = msgmod.apply_edits(
            seed, [SetValue(path=p, value=new) for p, _, _, new in edits]
        )
        verdict = dsl.evaluate(rule, candidate)
        if not isinstance(verdict, dsl.Violated):
            continue
        deviation = sum(_deviation(kind, old, new) for _, kind, old, new in edits)
        edited_paths = tuple(p for p, _, _, _ in edits)
        match_rank = 0
        if ref_side_paths and not set(edited_paths) <= ref_side_paths:
            match_rank = 1
        values_key = tuple(
            _value_ordinal(kind, new) for (_, kind, _), new in zip(positions, combo)
        )
        key = (deviation, len(edits), match_rank, edited_paths, values_key)
        if best is None or key < best[0]:
            best = (key, edits)

    if best is None:
        return Infeasible(
            "no violating assignment exists within the declared domains"
        )
    _, edits = best
    set_edits = [SetValue(path=p, value=new, rationale=rule.id) for p, _, _, new in edits]
    expected = CLASS_INTRA if rule.scope.intra else CLASS_INTER
    case_id = f"{rule.id}@" + "|".join(p for p, _, _, _ in edits)
    case = _wire_case(seed, seed_ref, case_id, set_edits, rule.id, expected)
    return Planned(cases=(case,))


# --------------------------------------------------------------------------
# Enumeration baseline
# --------------------------------------------------------------------------

def plan_enumeration(seed: DecodedMessage, pair: tuple[str, str],
                     seed_ref: str = "seed") -> tuple[TestCase, ...]:
    """Full Cartesian product over the domains of two present seed fields."""
    path_a, path_b = pair
    entry_a = seed.entry(path_a)
    entry_b = seed.entry(path_b)
    if not (entry_a.present and entry_b.present):
        raise ValueError("both enumeration fields must be present in the seed")
    targeted = f"enum-baseline:{path_a}|{path_b}"
    cases = []
    k = 0
    for va in _domain_values(entry_a.domain):
        for vb in _domain_values(entry_b.domain):
            edits = []
            if va != entry_a.value:
                edits.append(SetValue(path=path_a, value=va, rationale=targeted))
            if vb != entry_b.value:
                edits.append(SetValue(path=path_b, value=vb, rationale=targeted))
            cases.append(
                _wire_case(seed, seed_ref, f"{targeted}#{k}", edits, targeted,
                           CLASS_ENUMERATION)
            )
            k += 1
    return tuple(cases)
