"""Dual-abstraction message representation: IE tree plus flat leaf table.

A DecodedMessage pairs the hierarchical value tree (mirroring the schema
structure) with a flat table of leaf entries carrying canonical paths,
current values, presence flags, and declared domains. Edits are planned
against the flat table, replayed into the tree, and re-encoded, so a single
edit changes exactly the targeted leaf while the rest of the message stays
bit-identical.

Three edit operations exist:

* ``SetValue(path, value)`` -- replace one present leaf with another
  wire-representable value (which may exceed the declared maximum).
* ``Omit(path)`` -- drop one optional field, flipping its presence bit and
  removing its subtree; dependent sequence counts are recomputed on encode.
* ``RawOverride(path, value)`` -- record a value the wire cannot carry
  (below the declared minimum). Such a message cannot be re-encoded and must
  be delivered to a target as a decoded form.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from . import codec
from .schema import (
    BoolKind,
    ChoiceKind,
    EnumKind,
    FieldKind,
    IntKind,
    NestedKind,
    PathError,
    Schema,
    SeqOfKind,
    format_path,
    parse_path,
    resolve_path,
)
from .schema import _kind_to_json  # shared leaf-domain rendering


class EditError(ValueError):
    pass


@dataclass(frozen=True)
class LeafEntry:
    path: str
    value: object          # scalar; None when absent
    present: bool
    domain: FieldKind
    ie: str                # IE declaring the leaf

    def __post_init__(self) -> None:
        if not self.present and self.value is not None:
            raise ValueError("absent leaf must not carry a value")


@dataclass(frozen=True)
class DecodedMessage:
    schema: Schema
    tree: dict
    flat: tuple[LeafEntry, ...]

    @property
    def schema_ref(self) -> tuple[str, str]:
        return (self.schema.name, self.schema.version)

    def entry(self, path: str) -> LeafEntry:
        for e in self.flat:
            if e.path == path:
                return e
        raise KeyError(path)

    def present_paths(self) -> tuple[str, ...]:
        return tuple(e.path for e in self.flat if e.present)


@dataclass(frozen=True)
class SetValue:
    path: str
    value: object
    rationale: str = ""


@dataclass(frozen=True)
class Omit:
    path: str
    rationale: str = ""


@dataclass(frozen=True)
class RawOverride:
    path: str
    value: int
    rationale: str = ""


Edit = "SetValue | Omit | RawOverride"


# --------------------------------------------------------------------------
# Flat-table construction
# --------------------------------------------------------------------------

def _flatten_sequence(schema: Schema, ie_name: str, value: dict, path: str,
                      out: list[LeafEntry]) -> None:
    ie = schema.ie(ie_name)
    for f in ie.fields:
        fpath = f"{path}.{f.name}"
        if f.name not in value:
            if f.optional:
                out.append(LeafEntry(path=fpath, value=None, present=False,
                                     domain=f.kind, ie=ie.name))
                continue
            raise codec.EncodeError(f"mandatory field {f.name!r} missing", path)
        _flatten_kind(schema, ie.name, f.kind, value[f.name], fpath, out)


def _flatten_kind(schema: Schema, owner: str, kind: FieldKind, value, path: str,
                  out: list[LeafEntry]) -> None:
    if isinstance(kind, (IntKind, EnumKind, BoolKind)):
        out.append(LeafEntry(path=path, value=value, present=True, domain=kind, ie=owner))
    elif isinstance(kind, ChoiceKind):
        alt_name, sub_value = next(iter(value.items()))
        _flatten_kind(schema, owner, kind.alternative(alt_name), sub_value,
                      f"{path}.{alt_name}", out)
    elif isinstance(kind, SeqOfKind):
        for i, elem in enumerate(value):
            _flatten_kind(schema, owner, kind.element, elem, f"{path}[{i}]", out)
    elif isinstance(kind, NestedKind):
        _flatten_sequence(schema, kind.ie, value, path, out)
    else:  # pragma: no cover
        raise TypeError(kind)


def from_tree(schema: Schema, tree: dict) -> DecodedMessage:
    """Build a DecodedMessage directly from a value tree (no wire decode)."""
    out: list[LeafEntry] = []
    _flatten_sequence(schema, schema.root, tree, schema.root, out)
    return DecodedMessage(schema=schema, tree=tree, flat=tuple(out))


def view(schema: Schema, data: bytes) -> DecodedMessage:
    """Decode wire bytes into the dual tree + flat representation."""
    return from_tree(schema, codec.decode(schema, data))


def reencode(msg: DecodedMessage) -> bytes:
    """Produce wire bytes for the message.

    Uses the permissive encoder so edited values above declared maxima still
    encode; values below a declared minimum (raw overrides) raise.
    """
    return codec.encode(msg.schema, msg.tree, mode=codec.MODE_UNCHECKED)


# --------------------------------------------------------------------------
# Edits
# --------------------------------------------------------------------------

def _tree_positions(tree: dict, segs) -> tuple[object, object]:
    """Walk instance segments; return (parent container, final key/index)."""
    node: object = tree
    parent: object = None
    key: object = None
    for name, idx in segs[1:]:
        if not isinstance(node, dict) or name not in node:
            raise EditError(f"path position {name!r} not present in message")
        parent, key = node, name
        node = node[name]
        if idx is not None:
            if idx == "*" or not isinstance(node, list):
                raise EditError(f"segment {name!r}[{idx}] does not address a list element")
            if not (0 <= idx < len(node)):
                raise EditError(f"index {idx} out of range for {name!r}")
            parent, key = node, idx
            node = node[idx]
    return parent, key


def _scalar_ok(kind: FieldKind, value, unchecked: bool) -> str | None:
    if isinstance(kind, IntKind):
        if isinstance(value, bool) or not isinstance(value, int):
            return f"expected an integer, got {value!r}"
        if not codec.representable(kind, value):
            return (f"value {value} not wire-representable in "
                    f"{kind.lo}..{kind.hi}")
        return None
    if isinstance(kind, EnumKind):
        return None if value in kind.labels else f"undeclared label {value!r}"
    if isinstance(kind, BoolKind):
        return None if isinstance(value, bool) else f"expected a boolean, got {value!r}"
    return "target is not a scalar leaf"


def apply_edits(msg: DecodedMessage, edits: list) -> DecodedMessage:
    """Apply edits, returning a new message; inputs are never mutated.

    Edits must touch pairwise-distinct paths. Each edit is validated against
    the schema and the current message before any change is made.
    """
    paths = [e.path for e in edits]
    if len(set(paths)) != len(paths):
        raise EditError("edits must touch pairwise-distinct paths")

    tree = copy.deepcopy(msg.tree)
    schema = msg.schema
    for e in edits:
        try:
            segs = parse_path(e.path)
            resolved = resolve_path(schema, segs)
        except PathError as exc:
            raise EditError(str(exc)) from exc
        if segs[0][0] != schema.root:
            raise EditError(f"edit path must be rooted at {schema.root!r}")
        if any(idx == "*" for _, idx in segs):
            raise EditError("edit paths must be concrete (no [*])")

        if isinstance(e, SetValue):
            choice_alt = resolved.field_def is None
            err = _scalar_ok(resolved.kind, e.value, unchecked=True)
            if err:
                raise EditError(f"{e.path}: {err}")
            parent, key = _tree_positions(tree, segs)
            if choice_alt and isinstance(parent, dict):
                # changing a choice alternative's payload keeps the same arm
                pass
            parent[key] = e.value
        elif isinstance(e, Omit):
            if resolved.field_def is None or not resolved.optional:
                raise EditError(f"{e.path}: omit targets an optional field")
            parent, key = _tree_positions(tree, segs)
            del parent[key]
        elif isinstance(e, RawOverride):
            if not isinstance(resolved.kind, IntKind):
                raise EditError(f"{e.path}: raw override targets an integer leaf")
            if codec.representable(resolved.kind, e.value):
                raise EditError(
                    f"{e.path}: value {e.value} is wire-representable; use SetValue"
                )
            parent, key = _tree_positions(tree, segs)
            parent[key] = e.value
        else:
            raise EditError(f"unknown edit {e!r}")

    return from_tree(schema, tree)


# --------------------------------------------------------------------------
# Instance enumeration and pattern matching
# --------------------------------------------------------------------------

def instances_of(msg: DecodedMessage, ie_name: str) -> tuple[str, ...]:
    """Instance path prefixes of every occurrence of an IE in the message."""
    schema = msg.schema
    found: list[str] = []

    def walk_seq(name: str, value: dict, path: str) -> None:
        if name == ie_name:
            found.append(path)
        ie = schema.ie(name)
        for f in ie.fields:
            if f.name in value:
                walk_kind(f.kind, value[f.name], f"{path}.{f.name}")

    def walk_kind(kind: FieldKind, value, path: str) -> None:
        if isinstance(kind, NestedKind):
            walk_seq(kind.ie, value, path)
        elif isinstance(kind, ChoiceKind):
            alt, sub = next(iter(value.items()))
            walk_kind(kind.alternative(alt), sub, f"{path}.{alt}")
        elif isinstance(kind, SeqOfKind):
            for i, elem in enumerate(value):
                walk_kind(kind.element, elem, f"{path}[{i}]")

    walk_seq(schema.root, msg.tree, schema.root)
    return tuple(found)


def pattern_matches(pattern: str, instance: str) -> bool:
    """Whether a concrete instance path matches a [*] pattern path."""
    try:
        p = parse_path(pattern)
        i = parse_path(instance)
    except PathError:
        return False
    if len(p) != len(i):
        return False
    for (pn, pi), (inn, ii) in zip(p, i):
        if pn != inn:
            return False
        if pi is None and ii is None:
            continue
        if pi == "*" and isinstance(ii, int):
            continue
        if pi == ii:
            continue
        return False
    return True


def match_pattern(msg: DecodedMessage, pattern: str) -> tuple[LeafEntry, ...]:
    """Flat entries (present or absent) whose path matches the pattern."""
    return tuple(e for e in msg.flat if pattern_matches(pattern, e.path))


def instantiate(prefix: str, relative: str) -> str:
    """Join an instance prefix with an IE-relative pattern path."""
    rel = relative.split(".", 1)
    return f"{prefix}.{relative}" if relative else prefix


def relative_instances(msg: DecodedMessage, prefix: str, relative: str) -> tuple[LeafEntry, ...]:
    """Flat entries under an instance prefix matching a relative pattern."""
    pattern_segs = parse_path(f"X.{relative}")[1:]
    prefix_segs = parse_path(prefix)
    out = []
    for e in msg.flat:
        segs = parse_path(e.path)
        if len(segs) != len(prefix_segs) + len(pattern_segs):
            continue
        if segs[: len(prefix_segs)] != prefix_segs:
            continue
        tail = segs[len(prefix_segs):]
        ok = True
        for (pn, pi), (tn, ti) in zip(pattern_segs, tail):
            if pn != tn or not (pi == ti or (pi == "*" and isinstance(ti, int))):
                ok = False
                break
        if ok:
            out.append(e)
    return tuple(out)


# --------------------------------------------------------------------------
# JSON dump (debugging, golden tests, raw-override delivery)
# --------------------------------------------------------------------------

def to_json_dict(msg: DecodedMessage) -> dict:
    return {
        "schema": {"name": msg.schema.name, "version": msg.schema.version},
        "tree": msg.tree,
        "flat": [
            {
                "path": e.path,
                "present": e.present,
                **({"value": e.value} if e.present else {}),
                "ie": e.ie,
                "domain": _kind_to_json(e.domain),
            }
            for e in msg.flat
        ],
    }


def dump_json(msg: DecodedMessage) -> str:
    return json.dumps(to_json_dict(msg), indent=2, sort_keys=True)
