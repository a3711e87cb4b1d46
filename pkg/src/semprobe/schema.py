"""Typed message grammar for configuration-message protocols.

A Schema is an ordered collection of information-element definitions (IEDef),
each holding typed fields (FieldDef). Field kinds cover bounded integers,
enumerations, booleans, tagged choices, bounded sequences-of, and references
to other IEs. Optional fields may carry a need code ("M" maintain prior value,
"R" remove prior value) describing receiver behaviour when the field is
absent.

Canonical field paths are dot-separated strings rooted at an IE name, with
``[i]`` element indices (``[*]`` in patterns), e.g.::

    SRS-Config.srs-ResourceToAddModList[0].resourceMapping.startPosition

Nested-IE boundaries are crossed without restating the nested IE's name.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

NEED_MAINTAIN = "M"
NEED_REMOVE = "R"
NEED_CODES = (NEED_MAINTAIN, NEED_REMOVE)


class SchemaError(ValueError):
    """Malformed schema file or violated schema invariant."""


class PathError(ValueError):
    """A field path that does not resolve against the schema."""


@dataclass(frozen=True)
class IntKind:
    lo: int
    hi: int


@dataclass(frozen=True)
class EnumKind:
    labels: tuple[str, ...]


@dataclass(frozen=True)
class BoolKind:
    pass


@dataclass(frozen=True)
class ChoiceKind:
    alternatives: tuple[tuple[str, "FieldKind"], ...]

    def alternative(self, name: str) -> "FieldKind":
        for alt, kind in self.alternatives:
            if alt == name:
                return kind
        raise KeyError(name)


@dataclass(frozen=True)
class SeqOfKind:
    element: "FieldKind"
    lo: int
    hi: int


@dataclass(frozen=True)
class NestedKind:
    ie: str


FieldKind = Union[IntKind, EnumKind, BoolKind, ChoiceKind, SeqOfKind, NestedKind]

SCALAR_KINDS = (IntKind, EnumKind, BoolKind)


@dataclass(frozen=True)
class FieldDef:
    name: str
    kind: FieldKind
    optional: bool = False
    need: str | None = None
    doc: str | None = None


@dataclass(frozen=True)
class IEDef:
    name: str
    fields: tuple[FieldDef, ...]

    def field(self, name: str) -> FieldDef:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)


@dataclass(frozen=True)
class Schema:
    name: str
    version: str
    root: str
    ies: tuple[IEDef, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_name", {ie.name: ie for ie in self.ies})

    def ie(self, name: str) -> IEDef:
        try:
            return self._by_name[name]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"undefined IE {name!r}") from None

    def has_ie(self, name: str) -> bool:
        return name in self._by_name  # type: ignore[attr-defined]

    def ie_names(self) -> tuple[str, ...]:
        return tuple(ie.name for ie in self.ies)


# --------------------------------------------------------------------------
# JSON loading / serialization
# --------------------------------------------------------------------------

def _kind_from_json(obj: dict, where: str) -> FieldKind:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise SchemaError(f"{where}: kind must be a single-key tagged object")
    tag, body = next(iter(obj.items()))
    if tag == "int":
        return IntKind(lo=int(body["lo"]), hi=int(body["hi"]))
    if tag == "enum":
        if not isinstance(body, list):
            raise SchemaError(f"{where}: enum body must be a list of labels")
        return EnumKind(labels=tuple(str(x) for x in body))
    if tag == "bool":
        return BoolKind()
    if tag == "choice":
        alts = []
        for alt in body:
            alts.append((str(alt["name"]), _kind_from_json(alt["kind"], where)))
        return ChoiceKind(alternatives=tuple(alts))
    if tag == "seqOf":
        return SeqOfKind(
            element=_kind_from_json(body["element"], where),
            lo=int(body["lo"]),
            hi=int(body["hi"]),
        )
    if tag == "nested":
        return NestedKind(ie=str(body))
    raise SchemaError(f"{where}: unknown kind tag {tag!r}")


def _kind_to_json(kind: FieldKind) -> dict:
    if isinstance(kind, IntKind):
        return {"int": {"lo": kind.lo, "hi": kind.hi}}
    if isinstance(kind, EnumKind):
        return {"enum": list(kind.labels)}
    if isinstance(kind, BoolKind):
        return {"bool": {}}
    if isinstance(kind, ChoiceKind):
        return {
            "choice": [
                {"name": name, "kind": _kind_to_json(sub)}
                for name, sub in kind.alternatives
            ]
        }
    if isinstance(kind, SeqOfKind):
        return {"seqOf": {"element": _kind_to_json(kind.element), "lo": kind.lo, "hi": kind.hi}}
    if isinstance(kind, NestedKind):
        return {"nested": kind.ie}
    raise TypeError(kind)


def schema_from_dict(data: dict) -> Schema:
    try:
        ies = []
        for ie_obj in data["ies"]:
            fields = []
            for f_obj in ie_obj["fields"]:
                where = f"{ie_obj['name']}.{f_obj['name']}"
                fields.append(
                    FieldDef(
                        name=str(f_obj["name"]),
                        kind=_kind_from_json(f_obj["kind"], where),
                        optional=bool(f_obj.get("optional", False)),
                        need=f_obj.get("need"),
                        doc=f_obj.get("doc"),
                    )
                )
            ies.append(IEDef(name=str(ie_obj["name"]), fields=tuple(fields)))
        schema = Schema(
            name=str(data["name"]),
            version=str(data["version"]),
            root=str(data["root"]),
            ies=tuple(ies),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema object: {exc}") from exc
    validate_schema(schema)
    return schema


def schema_to_dict(schema: Schema) -> dict:
    return {
        "name": schema.name,
        "version": schema.version,
        "root": schema.root,
        "ies": [
            {
                "name": ie.name,
                "fields": [
                    {
                        "name": f.name,
                        "kind": _kind_to_json(f.kind),
                        "optional": f.optional,
                        **({"need": f.need} if f.need is not None else {}),
                        **({"doc": f.doc} if f.doc is not None else {}),
                    }
                    for f in ie.fields
                ],
            }
            for ie in schema.ies
        ],
    }


def load_schema(path: str | Path) -> Schema:
    """Load and validate a schema JSON file."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return schema_from_dict(data)


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(schema), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def _iter_kinds(kind: FieldKind) -> Iterator[FieldKind]:
    yield kind
    if isinstance(kind, ChoiceKind):
        for _, sub in kind.alternatives:
            yield from _iter_kinds(sub)
    elif isinstance(kind, SeqOfKind):
        yield from _iter_kinds(kind.element)


def validate_schema(schema: Schema) -> None:
    names = [ie.name for ie in schema.ies]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise SchemaError(f"duplicate IE names: {sorted(dupes)}")
    if schema.root not in names:
        raise SchemaError(f"root IE {schema.root!r} is not defined")

    for ie in schema.ies:
        fnames = [f.name for f in ie.fields]
        fdupes = {n for n in fnames if fnames.count(n) > 1}
        if fdupes:
            raise SchemaError(f"IE {ie.name}: duplicate field names {sorted(fdupes)}")
        for f in ie.fields:
            where = f"{ie.name}.{f.name}"
            if f.need is not None and not f.optional:
                raise SchemaError(f"{where}: need code on a mandatory field")
            if f.need is not None and f.need not in NEED_CODES:
                raise SchemaError(f"{where}: need code must be one of {NEED_CODES}")
            for kind in _iter_kinds(f.kind):
                if isinstance(kind, IntKind) and kind.lo > kind.hi:
                    raise SchemaError(f"{where}: int bounds {kind.lo}..{kind.hi} inverted")
                if isinstance(kind, EnumKind):
                    if not kind.labels:
                        raise SchemaError(f"{where}: enum with no labels")
                    if len(set(kind.labels)) != len(kind.labels):
                        raise SchemaError(f"{where}: duplicate enum labels")
                if isinstance(kind, SeqOfKind) and not (0 <= kind.lo <= kind.hi):
                    raise SchemaError(f"{where}: seqOf bounds {kind.lo}..{kind.hi} invalid")
                if isinstance(kind, ChoiceKind):
                    alt_names = [a for a, _ in kind.alternatives]
                    if not alt_names:
                        raise SchemaError(f"{where}: choice with no alternatives")
                    if len(set(alt_names)) != len(alt_names):
                        raise SchemaError(f"{where}: duplicate choice alternatives")
                if isinstance(kind, NestedKind) and not schema.has_ie(kind.ie):
                    raise SchemaError(f"{where}: reference to undefined IE {kind.ie!r}")

    _check_acyclic(schema)


def _nested_targets(ie: IEDef) -> set[str]:
    targets: set[str] = set()
    for f in ie.fields:
        for kind in _iter_kinds(f.kind):
            if isinstance(kind, NestedKind):
                targets.add(kind.ie)
    return targets


def _check_acyclic(schema: Schema) -> None:
    # Finite leaf enumeration needs a cycle-free nesting graph.
    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(name: str, trail: tuple[str, ...]) -> None:
        if state.get(name) == 1:
            return
        if state.get(name) == 0:
            cycle = " -> ".join(trail + (name,))
            raise SchemaError(f"recursive IE nesting: {cycle}")
        state[name] = 0
        for target in sorted(_nested_targets(schema.ie(name))):
            visit(target, trail + (name,))
        state[name] = 1

    for ie in schema.ies:
        visit(ie.name, ())


# --------------------------------------------------------------------------
# Field paths
# --------------------------------------------------------------------------

_SEG_RE = re.compile(r"^([A-Za-z0-9_-]+)(?:\[(\d+|\*)\])?$")

Segment = tuple[str, "int | str | None"]  # (name, index) with index int, "*" or None


def parse_path(path: str) -> tuple[Segment, ...]:
    if not path:
        raise PathError("empty path")
    segs: list[Segment] = []
    for part in path.split("."):
        m = _SEG_RE.match(part)
        if not m:
            raise PathError(f"bad path segment {part!r} in {path!r}")
        name, idx = m.group(1), m.group(2)
        if idx is None:
            segs.append((name, None))
        elif idx == "*":
            segs.append((name, "*"))
        else:
            segs.append((name, int(idx)))
    return tuple(segs)


def format_path(segs: tuple[Segment, ...] | list[Segment]) -> str:
    parts = []
    for name, idx in segs:
        if idx is None:
            parts.append(name)
        else:
            parts.append(f"{name}[{idx}]")
    return ".".join(parts)


@dataclass(frozen=True)
class Resolved:
    """Outcome of resolving a path against the schema."""

    kind: FieldKind
    owner_ie: str          # IE declaring the final named field
    field_def: FieldDef | None  # None when the path ends on a choice alternative
    optional: bool
    need: str | None


def resolve_path(schema: Schema, path: str | tuple[Segment, ...]) -> Resolved:
    """Resolve an IE-rooted path to the kind it denotes.

    The first segment names an IE; later segments name fields, ``[i]``/``[*]``
    sequence elements, or choice alternatives. Raises PathError when the path
    does not resolve.
    """
    segs = parse_path(path) if isinstance(path, str) else tuple(path)
    head_name, head_idx = segs[0]
    if head_idx is not None:
        raise PathError(f"IE segment {head_name!r} cannot be indexed")
    if not schema.has_ie(head_name):
        raise PathError(f"unknown IE {head_name!r}")
    if len(segs) == 1:
        raise PathError(f"path {format_path(segs)!r} names an IE, not a field")

    ie = schema.ie(head_name)
    kind: FieldKind | None = None
    fdef: FieldDef | None = None
    owner = ie.name
    at_field = False  # the path currently ends exactly on a field position

    for name, idx in segs[1:]:
        if kind is None or isinstance(kind, NestedKind):
            if isinstance(kind, NestedKind):
                ie = schema.ie(kind.ie)
                owner = ie.name
            try:
                fdef = ie.field(name)
            except KeyError:
                raise PathError(f"IE {ie.name!r} has no field {name!r}") from None
            kind = fdef.kind
            at_field = True
        elif isinstance(kind, ChoiceKind):
            try:
                kind = kind.alternative(name)
            except KeyError:
                raise PathError(f"choice has no alternative {name!r}") from None
            at_field = False
        elif isinstance(kind, SeqOfKind):
            raise PathError(f"seqOf segment before {name!r} must be indexed")
        else:
            raise PathError(f"segment {name!r} descends into a scalar")
        if idx is not None:
            if not isinstance(kind, SeqOfKind):
                raise PathError(f"segment {name!r} is indexed but not a seqOf")
            kind = kind.element
            at_field = False

    assert kind is not None
    if at_field and fdef is not None:
        return Resolved(kind=kind, owner_ie=owner, field_def=fdef,
                        optional=fdef.optional, need=fdef.need)
    return Resolved(kind=kind, owner_ie=owner, field_def=None, optional=False, need=None)


def field_domain(schema: Schema, path: str) -> FieldKind:
    """Kind (bounds, labels, ...) of the field position at ``path``."""
    return resolve_path(schema, path).kind


# --------------------------------------------------------------------------
# Pattern enumeration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LeafPattern:
    path: str             # pattern path with [*] for sequence elements
    kind: FieldKind
    owner_ie: str         # IE declaring the leaf
    local: str            # pattern path relative to the owning IE


@dataclass(frozen=True)
class OptionalPattern:
    path: str             # pattern path of the optional field position
    field_def: FieldDef
    owner_ie: str


def _walk_patterns(
    schema: Schema,
    ie_name: str,
    prefix: str,
    leaves: list[LeafPattern],
    optionals: list[OptionalPattern],
    follow_nested: bool,
) -> None:
    ie = schema.ie(ie_name)
    for f in ie.fields:
        fpath = f"{prefix}.{f.name}"
        if f.optional:
            optionals.append(OptionalPattern(path=fpath, field_def=f, owner_ie=ie.name))
        _walk_kind(schema, ie.name, f.kind, fpath, f"{f.name}", leaves, optionals, follow_nested)


def _walk_kind(
    schema: Schema,
    owner: str,
    kind: FieldKind,
    path: str,
    local: str,
    leaves: list[LeafPattern],
    optionals: list[OptionalPattern],
    follow_nested: bool,
) -> None:
    if isinstance(kind, SCALAR_KINDS):
        leaves.append(LeafPattern(path=path, kind=kind, owner_ie=owner, local=local))
    elif isinstance(kind, ChoiceKind):
        for alt, sub in kind.alternatives:
            _walk_kind(schema, owner, sub, f"{path}.{alt}", f"{local}.{alt}",
                       leaves, optionals, follow_nested)
    elif isinstance(kind, SeqOfKind):
        _walk_kind(schema, owner, kind.element, f"{path}[*]", f"{local}[*]",
                   leaves, optionals, follow_nested)
    elif isinstance(kind, NestedKind):
        if follow_nested:
            _walk_patterns(schema, kind.ie, path, leaves, optionals, follow_nested)
    else:  # pragma: no cover
        raise TypeError(kind)


def iter_leaf_patterns(schema: Schema, root: str | None = None) -> tuple[LeafPattern, ...]:
    """All scalar leaf patterns reachable from ``root`` (default: schema root).

    Pattern paths are rooted at the root IE's name; choice alternatives count
    as distinct leaf patterns.
    """
    root = root or schema.root
    leaves: list[LeafPattern] = []
    optionals: list[OptionalPattern] = []
    _walk_patterns(schema, root, root, leaves, optionals, follow_nested=True)
    return tuple(leaves)


def iter_optional_patterns(schema: Schema, root: str | None = None) -> tuple[OptionalPattern, ...]:
    """All optional field positions reachable from ``root``."""
    root = root or schema.root
    leaves: list[LeafPattern] = []
    optionals: list[OptionalPattern] = []
    _walk_patterns(schema, root, root, leaves, optionals, follow_nested=True)
    return tuple(optionals)


def ie_local_leaves(schema: Schema, ie_name: str) -> tuple[LeafPattern, ...]:
    """Leaf patterns declared directly inside one IE (not crossing Nested)."""
    leaves: list[LeafPattern] = []
    optionals: list[OptionalPattern] = []
    _walk_patterns(schema, ie_name, ie_name, leaves, optionals, follow_nested=False)
    return tuple(leaves)


def ie_subtree_ies(schema: Schema, ie_name: str) -> tuple[str, ...]:
    """The IE plus every IE transitively nested under it, in visit order."""
    seen: list[str] = []

    def visit(name: str) -> None:
        if name in seen:
            return
        seen.append(name)
        for target in sorted(_nested_targets(schema.ie(name))):
            visit(target)

    visit(ie_name)
    return tuple(seen)


def ie_identity_set(schema: Schema, ie_name: str) -> frozenset[tuple[str, str]]:
    """Leaf identities (owner IE, local pattern) covered by an IE's subtree."""
    out: set[tuple[str, str]] = set()
    for sub in ie_subtree_ies(schema, ie_name):
        for leaf in ie_local_leaves(schema, sub):
            out.add((leaf.owner_ie, leaf.local))
    return frozenset(out)


def ie_subtree_leaves(schema: Schema, ie_name: str) -> tuple[LeafPattern, ...]:
    """Leaf patterns of an IE's subtree, paths rooted at that IE."""
    leaves: list[LeafPattern] = []
    optionals: list[OptionalPattern] = []
    _walk_patterns(schema, ie_name, ie_name, leaves, optionals, follow_nested=True)
    return tuple(leaves)


# --------------------------------------------------------------------------
# Textual rendering (evidence packages, debugging)
# --------------------------------------------------------------------------

def _render_kind(kind: FieldKind) -> str:
    if isinstance(kind, IntKind):
        return f"INTEGER ({kind.lo}..{kind.hi})"
    if isinstance(kind, EnumKind):
        return "ENUMERATED {" + ", ".join(kind.labels) + "}"
    if isinstance(kind, BoolKind):
        return "BOOLEAN"
    if isinstance(kind, ChoiceKind):
        inner = ", ".join(f"{name} {_render_kind(sub)}" for name, sub in kind.alternatives)
        return "CHOICE {" + inner + "}"
    if isinstance(kind, SeqOfKind):
        return f"SEQUENCE (SIZE ({kind.lo}..{kind.hi})) OF {_render_kind(kind.element)}"
    if isinstance(kind, NestedKind):
        return kind.ie
    raise TypeError(kind)


def render_asn1(schema: Schema, ie_name: str) -> str:
    """ASN.1-style rendering of one IE definition."""
    ie = schema.ie(ie_name)
    width = max((len(f.name) for f in ie.fields), default=0)
    lines = [f"{ie.name} ::= SEQUENCE {{"]
    for i, f in enumerate(ie.fields):
        suffix = ""
        if f.optional:
            suffix = " OPTIONAL" + (f"  -- Need {f.need}" if f.need else "")
        comma = "," if i < len(ie.fields) - 1 else ""
        lines.append(f"    {f.name:<{width}} {_render_kind(f.kind)}{comma}{suffix}")
    lines.append("}")
    return "\n".join(lines)
