"""Corpus-side mining: coverage-driven IE selection, reference-field
detection, and normative-sentence evidence extraction.

The corpus is a set of plain-text documents, each tagged with a role:
``schema-doc`` (the authoritative protocol schema document with its field
descriptions) or ``crossdoc`` (companion behavioural documents). Evidence
scanning walks every line for cue keywords in four categories (mandatory,
conditional, dependency, reference), takes a context window of two lines
before and after each hit, and keeps the window only when both fields of the
candidate pair are mentioned inside it.

Field mentions use surface-form pattern sets: the verbatim field name, its
camelCase split into lowercase words, a hyphenated variant, and declared
abbreviations from a per-schema alias table. Abbreviations are weak
candidates: they are recorded but never establish a mention by themselves.
When the two fields of an inter-IE pair share a leaf name (identifier
references usually do), each side additionally requires its IE's surface
form in the window, so one shared token cannot silently vouch for both.

Three evidence modes support ablation: ``full`` (all documents),
``no-crossdocs`` (schema document only), and ``asn1-only`` (no normative
snippets at all, just the rendered schema fragment).

A "line" is a newline-delimited corpus line; windows are inclusive line
ranges and snippets carry the verbatim joined text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .schema import (
    Schema,
    ie_identity_set,
    ie_subtree_leaves,
    parse_path,
    render_asn1,
)

MODE_FULL = "full"
MODE_NO_CROSSDOCS = "no-crossdocs"
MODE_ASN1_ONLY = "asn1-only"
EVIDENCE_MODES = (MODE_FULL, MODE_NO_CROSSDOCS, MODE_ASN1_ONLY)

ROLE_SCHEMA_DOC = "schema-doc"
ROLE_CROSSDOC = "crossdoc"

KEYWORDS: dict[str, tuple[str, ...]] = {
    "mandatory": ("shall", "must", "required"),
    "conditional": ("if", "when", "only if"),
    "dependency": ("depends on", "determined by", "according to"),
    "reference": ("correspond", "match", "associate with"),
}

WINDOW = 2  # lines of context on each side of a keyword hit


@dataclass(frozen=True)
class CorpusDoc:
    doc_id: str
    role: str
    lines: tuple[str, ...]  # 1-based numbering in snippets


@dataclass(frozen=True)
class Corpus:
    docs: tuple[CorpusDoc, ...]

    def doc(self, doc_id: str) -> CorpusDoc:
        for d in self.docs:
            if d.doc_id == doc_id:
                return d
        raise KeyError(doc_id)


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Load a corpus manifest ``{"docs": [{"id", "role", "path"}]}``."""
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text(encoding="utf-8"))
    docs = []
    seen = set()
    for entry in data["docs"]:
        doc_id = entry["id"]
        if doc_id in seen:
            raise ValueError(f"duplicate corpus doc id {doc_id!r}")
        seen.add(doc_id)
        role = entry["role"]
        if role not in (ROLE_SCHEMA_DOC, ROLE_CROSSDOC):
            raise ValueError(f"doc {doc_id!r}: unknown role {role!r}")
        text = (manifest_path.parent / entry["path"]).read_text(encoding="utf-8")
        docs.append(CorpusDoc(doc_id=doc_id, role=role, lines=tuple(text.splitlines())))
    return Corpus(docs=tuple(docs))


def load_alias_table(path: str | Path) -> dict[str, tuple[str, ...]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: tuple(v) for k, v in data.items()}


# --------------------------------------------------------------------------
# Surface forms
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z][a-z]+|[A-Z]+|[a-z]+|\d+")


@dataclass(frozen=True)
class SurfaceForms:
    strong: tuple[str, ...]
    weak: tuple[str, ...]  # declared abbreviations; never establish a mention


def _split_words(name: str) -> list[str]:
    words: list[str] = []
    for chunk in re.split(r"[-_]", name):
        words.extend(_TOKEN_RE.findall(chunk))
    return [w.lower() for w in words]


def surface_forms(field: str, aliases: tuple[str, ...] = ()) -> SurfaceForms:
    """Pattern set for one identifier: verbatim, spaced, hyphenated, aliases."""
    words = _split_words(field)
    strong = {field, " ".join(words), "-".join(words)}
    return SurfaceForms(strong=tuple(sorted(strong)), weak=tuple(sorted(set(aliases))))


def _form_regex(form: str) -> re.Pattern[str]:
    return re.compile(r"(?<![A-Za-z0-9])" + re.escape(form) + r"(?![A-Za-z0-9])",
                      re.IGNORECASE)


def _mentions(text: str, forms: SurfaceForms) -> tuple[tuple[str, ...], tuple[str, ...]]:
    strong = tuple(f for f in forms.strong if _form_regex(f).search(text))
    weak = tuple(f for f in forms.weak if _form_regex(f).search(text))
    return strong, weak


# --------------------------------------------------------------------------
# Field pairs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PairField:
    ie: str        # scope IE the field is referenced from
    rel: str       # pattern path relative to that IE

    @property
    def leaf_name(self) -> str:
        return parse_path(f"{self.ie}.{self.rel}")[-1][0]

    @property
    def qualified(self) -> str:
        return f"{self.ie}.{self.rel}"


@dataclass(frozen=True)
class FieldPair:
    scope_ies: tuple[str, ...]  # 1 for intra, 2 for inter (sorted)
    a: PairField
    b: PairField

    @property
    def intra(self) -> bool:
        return len(self.scope_ies) == 1

    def sort_key(self):
        return (self.scope_ies, self.a.qualified, self.b.qualified)


@dataclass(frozen=True)
class Snippet:
    doc_id: str
    line_range: tuple[int, int]  # inclusive, 1-based
    text: str                    # verbatim joined window lines
    keywords: tuple[str, ...]    # cue keywords that opened the window


@dataclass(frozen=True)
class EvidencePackage:
    pair: FieldPair
    asn1_block: str
    snippets: tuple[Snippet, ...]
    field_mentions: dict[str, tuple[str, ...]]  # qualified field -> matched forms

    def to_dict(self) -> dict:
        return {
            "scope": list(self.pair.scope_ies),
            "fields": [self.pair.a.qualified, self.pair.b.qualified],
            "asn1_block": self.asn1_block,
            "snippets": [
                {
                    "doc": s.doc_id,
                    "lines": list(s.line_range),
                    "text": s.text,
                    "keywords": list(s.keywords),
                }
                for s in self.snippets
            ],
            "field_mentions": {k: list(v) for k, v in sorted(self.field_mentions.items())},
        }


@dataclass(frozen=True)
class CoverageReport:
    selected: tuple[str, ...]
    covered_fraction: Fraction
    pairs: int


# --------------------------------------------------------------------------
# IE selection (greedy set cover over subtree field identities)
# --------------------------------------------------------------------------

def select_intra_ies(schema: Schema, budget: int) -> CoverageReport:
    """Greedy set cover of message fields by IE subtrees.

    Candidates are every IE except the root message (whose subtree trivially
    covers everything). Marginal-gain ties break by IE name ascending; IEs
    with zero marginal gain are never selected. The pair count is the sum of
    C(fields, 2) over selected IEs.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    candidates = sorted(name for name in schema.ie_names() if name != schema.root)
    sets = {name: ie_identity_set(schema, name) for name in candidates}
    universe: set = set()
    for s in sets.values():
        universe |= s

    covered: set = set()
    selected: list[str] = []
    remaining = list(candidates)
    while remaining and len(selected) < budget:
        best_name = None
        best_gain = 0
        for name in remaining:
            gain = len(sets[name] - covered)
            if gain > best_gain:
                best_gain, best_name = gain, name
        if best_name is None:
            break
        selected.append(best_name)
        covered |= sets[best_name]
        remaining.remove(best_name)

    pairs = 0
    for name in selected:
        n = len(sets[name])
        pairs += n * (n - 1) // 2
    fraction = Fraction(len(covered), len(universe)) if universe else Fraction(1)
    return CoverageReport(selected=tuple(selected), covered_fraction=fraction, pairs=pairs)


def _norm_ident(name: str) -> str:
    return name.replace("-", "").lower()


def find_reference_fields(schema: Schema) -> tuple[tuple[str, str], ...]:
    """Identifier fields whose base name matches another IE.

    Returns ``(pattern path rooted at the owning IE, target IE name)`` pairs,
    sorted. A field whose base name matches its own IE is that IE's defining
    identifier, not a reference, and is excluded.
    """
    by_norm = {_norm_ident(name): name for name in schema.ie_names()}
    hits: list[tuple[str, str]] = []
    for ie_name in schema.ie_names():
        for leaf in ie_subtree_leaves(schema, ie_name):
            if leaf.path.count(".") < 1:
                continue
            name = parse_path(leaf.path)[-1][0]
            base = None
            for suffix in ("Id", "ID"):
                if name.endswith(suffix) and len(name) > len(suffix):
                    base = name[: -len(suffix)].rstrip("-")
                    break
            if base is None:
                continue
            target = by_norm.get(_norm_ident(base))
            if target is None or target == leaf.owner_ie:
                continue
            # only report from the IE that directly owns the leaf
            if leaf.owner_ie != ie_name:
                continue
            hits.append((leaf.path, target))
    return tuple(sorted(set(hits)))


def _narrowest_scope(idsets: dict[str, frozenset], id_a, id_b) -> str:
    """Smallest-subtree IE containing both leaf identities (tie: name)."""
    best: tuple[int, str] | None = None
    for ie_name, idset in idsets.items():
        if id_a in idset and id_b in idset:
            key = (len(idset), ie_name)
            if best is None or key < best:
                best = key
    if best is None:
        raise ValueError(f"no IE contains both {id_a} and {id_b}")
    return best[1]


def intra_pairs(schema: Schema, report: CoverageReport) -> tuple[FieldPair, ...]:
    """Unordered field pairs from selected IEs, each scoped to the narrowest
    IE whose subtree contains both leaves."""
    idsets = {name: ie_identity_set(schema, name) for name in schema.ie_names()}
    rel_by_scope = {
        name: {
            (l.owner_ie, l.local): l.path.split(".", 1)[1]
            for l in ie_subtree_leaves(schema, name)
        }
        for name in schema.ie_names()
    }
    seen: set[frozenset] = set()
    pairs: list[FieldPair] = []
    for ie_name in report.selected:
        items = sorted(rel_by_scope[ie_name].keys())
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                key = frozenset((items[i], items[j]))
                if key in seen:
                    continue
                seen.add(key)
                scope = _narrowest_scope(idsets, items[i], items[j])
                rel_a = rel_by_scope[scope][items[i]]
                rel_b = rel_by_scope[scope][items[j]]
                a, b = sorted(
                    (PairField(ie=scope, rel=rel_a), PairField(ie=scope, rel=rel_b)),
                    key=lambda p: p.qualified,
                )
                pairs.append(FieldPair(scope_ies=(scope,), a=a, b=b))
    return tuple(sorted(pairs, key=lambda p: p.sort_key()))


def inter_pairs(schema: Schema) -> tuple[FieldPair, ...]:
    """Reference pairs: an Id-suffixed field and the matching defining field
    in the target IE."""
    pairs = []
    for pattern, target in find_reference_fields(schema):
        ref_ie = parse_path(pattern)[0][0]
        ref_rel = pattern.split(".", 1)[1]
        leaf_name = parse_path(pattern)[-1][0]
        defining = None
        for leaf in ie_subtree_leaves(schema, target):
            if parse_path(leaf.path)[-1][0] == leaf_name:
                defining = leaf.path.split(".", 1)[1]
                break
        if defining is None:
            continue
        scope = tuple(sorted((ref_ie, target)))
        a, b = sorted(
            (PairField(ie=ref_ie, rel=ref_rel), PairField(ie=target, rel=defining)),
            key=lambda p: p.qualified,
        )
        pairs.append(FieldPair(scope_ies=scope, a=a, b=b))
    return tuple(sorted(pairs, key=lambda p: p.sort_key()))


# --------------------------------------------------------------------------
# Evidence scanning
# --------------------------------------------------------------------------

def _keyword_hits(line: str) -> tuple[str, ...]:
    hits = []
    for cues in KEYWORDS.values():
        for cue in cues:
            if _form_regex(cue).search(line):
                hits.append(cue)
    return tuple(sorted(set(hits)))


def _pair_forms(pair: FieldPair, aliases: dict[str, tuple[str, ...]]):
    """Per-field surface forms: (field forms, IE forms) for each side."""
    out = {}
    for pf in (pair.a, pair.b):
        field_forms = surface_forms(pf.leaf_name, aliases.get(pf.leaf_name, ()))
        ie_forms = surface_forms(pf.ie, aliases.get(pf.ie, ()))
        out[pf.qualified] = (field_forms, ie_forms)
    return out


def scan_evidence(
    corpus: Corpus,
    pair: FieldPair,
    mode: str,
    *,
    schema: Schema,
    aliases: dict[str, tuple[str, ...]] | None = None,
) -> EvidencePackage | None:
    """Assemble the evidence package for one field pair, or None.

    In ``asn1-only`` mode the package carries only the rendered schema block.
    In the other modes, a package is returned only when at least one context
    window co-mentions both fields; otherwise None.
    """
    if mode not in EVIDENCE_MODES:
        raise ValueError(f"unknown evidence mode {mode!r}")
    aliases = aliases or {}
    block = "\n\n".join(render_asn1(schema, ie) for ie in pair.scope_ies)

    if mode == MODE_ASN1_ONLY:
        return EvidencePackage(pair=pair, asn1_block=block, snippets=(), field_mentions={})

    forms = _pair_forms(pair, aliases)
    same_leaf = pair.a.leaf_name == pair.b.leaf_name and not pair.intra

    snippets: list[Snippet] = []
    mentions: dict[str, set[str]] = {pair.a.qualified: set(), pair.b.qualified: set()}
    seen_windows: set[tuple[str, int, int]] = set()
    for doc in corpus.docs:
        if mode == MODE_NO_CROSSDOCS and doc.role == ROLE_CROSSDOC:
            continue
        for lineno, line in enumerate(doc.lines, start=1):
            cues = _keyword_hits(line)
            if not cues:
                continue
            lo = max(1, lineno - WINDOW)
            hi = min(len(doc.lines), lineno + WINDOW)
            if (doc.doc_id, lo, hi) in seen_windows:
                continue
            window_text = "\n".join(doc.lines[lo - 1:hi])
            ok = True
            window_mentions: dict[str, tuple[str, ...]] = {}
            for pf in (pair.a, pair.b):
                field_forms, ie_forms = forms[pf.qualified]
                strong_f, weak_f = _mentions(window_text, field_forms)
                strong_ie, _ = _mentions(window_text, ie_forms)
                if not strong_f:
                    ok = False  # weak alias alone never establishes a mention
                    break
                if same_leaf and not strong_ie:
                    ok = False
                    break
                window_mentions[pf.qualified] = tuple(strong_f) + tuple(
                    f"weak:{w}" for w in weak_f
                ) + tuple(f"ie:{s}" for s in strong_ie)
            if not ok:
                continue
            seen_windows.add((doc.doc_id, lo, hi))
            all_cues = set(cues)
            for n in range(lo, hi + 1):
                all_cues.update(_keyword_hits(doc.lines[n - 1]))
            snippets.append(
                Snippet(doc_id=doc.doc_id, line_range=(lo, hi), text=window_text,
                        keywords=tuple(sorted(all_cues)))
            )
            for q, m in window_mentions.items():
                mentions[q].update(m)

    if not snippets:
        return None
    return EvidencePackage(
        pair=pair,
        asn1_block=block,
        snippets=tuple(snippets),
        field_mentions={q: tuple(sorted(m)) for q, m in mentions.items()},
    )
