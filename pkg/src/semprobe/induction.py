"""Evidence-bound induction of dependency rules behind a strict gate
pipeline.

An inducer client sees exactly one evidence package (schema fragment plus
verbatim normative snippets) rendered through a prompt template, and must
answer with either the literal token ``NO_RULE`` or a small JSON object::

    {"result": "RULE", "type": "ValueDependency" | "RangeAlignment",
     "dsl": "<one rule line>", "citations": [{"doc": ..., "quote": ...}]}

Whatever the client answers passes through six gates, in order:

1. evidence-citation -- every cited quote is a verbatim substring of a
   snippet in the package (packages without snippets fail here);
2. normative-wording -- at least one cited snippet carries a mandatory or
   conditional cue;
3. scope -- every referenced field resolves inside the package's IE scope;
4. direction/trigger -- evidence carrying a conditional cue must yield an
   implication with at least one precondition;
5. dsl-wellformed -- the rule line parses and canonicalizes;
6. domain-validity -- literals are admissible in the referenced fields'
   declared domains.

Any failure makes the verdict NO_RULE. Transport failures are retried and
then surfaced as errors; they are availability signals, never NO_RULE.

The bundled mock client is a deterministic pattern matcher over snippets, so
the whole pipeline runs offline and reproducibly.
"""

from __future__ import annotations

import json
import re
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

from . import dsl
from .miner import (
    KEYWORDS,
    Corpus,
    EvidencePackage,
    FieldPair,
    scan_evidence,
)
from .schema import Schema

GATE_NAMES = (
    "evidence-citation",
    "normative-wording",
    "scope",
    "direction/trigger",
    "dsl-wellformed",
    "domain-validity",
)

_MIN_QUOTE_LEN = 10

_FALLBACK_PROMPT_TEMPLATE = """\
You are given the definition of one or two information elements and a set of
verbatim sentences from the protocol's normative documents. Decide whether
the sentences state an executable dependency between the two target fields.

IE scope: {scope}
ASN.1 definition:
{asn1_block}

Target fields: {field_a}, {field_b}
Evidence sentences:
{snippets}

Answer with the single token NO_RULE, or with a JSON object
{{"result": "RULE", "type": "ValueDependency" | "RangeAlignment",
  "dsl": "<one rule line>", "citations": [{{"doc": "...", "quote": "..."}}]}}.
Use only the evidence above. The rule must quote its supporting sentence,
stay within the declared value domains, reference only fields in the IE
scope, and express conditional requirements as IMPLIES with preconditions.
"""


class TransportError(RuntimeError):
    """Client could not be reached; retryable, distinct from NO_RULE."""


class InducerClient(Protocol):
    def propose(self, package: EvidencePackage, prompt: str) -> str: ...


@dataclass(frozen=True)
class GateReport:
    candidate: str
    gates: tuple[tuple[str, str, str], ...]  # (name, pass|fail|skip, detail)
    accepted: bool
    reason: str

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "gates": [
                {"name": n, "status": s, "detail": d} for n, s, d in self.gates
            ],
            "accepted": self.accepted,
            "reason": self.reason,
        }


def render_prompt(package: EvidencePackage, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    scope = (package.pair.scope_ies[0] if package.pair.intra
             else " and ".join(package.pair.scope_ies))
    snippets = "\n".join(
        f"[{s.doc_id}:{s.line_range[0]}-{s.line_range[1]}] {s.text}"
        for s in package.snippets
    ) or "(none)"
    return template.format(
        scope=scope,
        asn1_block=package.asn1_block,
        field_a=package.pair.a.qualified,
        field_b=package.pair.b.qualified,
        snippets=snippets,
    )


# --------------------------------------------------------------------------
# Candidate parsing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    dsl_text: str
    family_claim: str
    citations: tuple[tuple[str, str], ...]


def _parse_candidate(text: str) -> "Candidate | None | str":
    """Parsed candidate, None for NO_RULE, or an error string."""
    stripped = text.strip()
    if stripped == "NO_RULE":
        return None
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError:
        return "candidate is neither NO_RULE nor a JSON object"
    if not isinstance(obj, dict):
        return "candidate JSON is not an object"
    if obj.get("result") == "NO_RULE":
        return None
    if obj.get("result") != "RULE":
        return f"unknown result {obj.get('result')!r}"
    dsl_text = obj.get("dsl")
    if not isinstance(dsl_text, str) or not dsl_text.strip():
        return "candidate carries no dsl text"
    citations = []
    for c in obj.get("citations", ()):
        citations.append((str(c.get("doc", "")), str(c.get("quote", ""))))
    return Candidate(
        dsl_text=dsl_text.strip(),
        family_claim=str(obj.get("type", "")),
        citations=tuple(citations),
    )


# --------------------------------------------------------------------------
# Gate pipeline
# --------------------------------------------------------------------------

_NORMATIVE_CUES = KEYWORDS["mandatory"] + KEYWORDS["conditional"]
_CONDITIONAL_CUES = KEYWORDS["conditional"]


def _contains_cue(text: str, cues) -> bool:
    for cue in cues:
        if re.search(r"(?<![A-Za-z0-9])" + re.escape(cue) + r"(?![A-Za-z0-9])",
                     text, re.IGNORECASE):
            return True
    return False


def induce(
    pkg: EvidencePackage,
    client: InducerClient,
    schema: Schema,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
) -> tuple["dsl.ConstraintRule | dsl.NoRule", GateReport]:
    """Run one evidence package through the client and the gate pipeline."""
    raw = client.propose(pkg, render_prompt(pkg, prompt_template))
    parsed = _parse_candidate(raw)

    gates: list[tuple[str, str, str]] = []

    def finish(reason: str) -> tuple[dsl.NoRule, GateReport]:
        done = {name for name, _, _ in gates}
        for name in GATE_NAMES:
            if name not in done:
                gates.append((name, "skip", ""))
        ordered = tuple(sorted(gates, key=lambda g: GATE_NAMES.index(g[0])))
        return (
            dsl.NoRule(reason),
            GateReport(candidate=raw.strip(), gates=ordered, accepted=False, reason=reason),
        )

    if isinstance(parsed, str):
        gates.append(("dsl-wellformed", "fail", parsed))
        return finish(f"malformed candidate: {parsed}")
    if parsed is None:
        return finish("client returned NO_RULE")

    # 1. evidence-citation: quotes must be verbatim package snippet substrings
    snippet_texts = [(s.doc_id, s.text) for s in pkg.snippets]
    cited_snippets = []
    citation_ok = bool(parsed.citations)
    detail = ""
    for doc, quote in parsed.citations:
        if len(quote) < _MIN_QUOTE_LEN:
            citation_ok, detail = False, f"quote too short: {quote!r}"
            break
        hit = next((t for d, t in snippet_texts if d == doc and quote in t), None)
        if hit is None:
            citation_ok, detail = False, f"quote not found verbatim in {doc!r}"
            break
        cited_snippets.append((doc, quote, hit))
    if not parsed.citations:
        detail = "candidate cites nothing"
    gates.append(("evidence-citation", "pass" if citation_ok else "fail", detail))
    if not citation_ok:
        return finish(f"citation gate: {detail}")

    # 2. normative wording in the cited text
    normative_ok = any(_contains_cue(q, _NORMATIVE_CUES) or _contains_cue(t, _NORMATIVE_CUES)
                       for _, q, t in cited_snippets)
    gates.append(("normative-wording", "pass" if normative_ok else "fail",
                  "" if normative_ok else "no mandatory/conditional cue in citations"))
    if not normative_ok:
        return finish("normative gate: advisory or cue-free evidence")

    # parse + bind once; gates 3-5 report on the outcome
    syntax_error = ""
    rule = None
    try:
        rule = dsl.parse_rule(parsed.dsl_text)
    except dsl.RuleSyntaxError as exc:
        syntax_error = str(exc)

    # 3. scope: the rule must declare the package's scope and resolve in it
    if rule is None:
        gates.append(("scope", "skip", "unparseable candidate"))
        bound = None
    else:
        declared = tuple(sorted(rule.scope.ies))
        expected = tuple(sorted(pkg.pair.scope_ies))
        if declared != expected:
            gates.append(("scope", "fail",
                          f"declared scope {declared} != package scope {expected}"))
            return finish("scope gate: rule leaves the package's IE scope")
        bound = dsl.bind_rule(rule, schema)
        if isinstance(bound, dsl.NoRule):
            gates.append(("scope", "fail", bound.reason))
            return finish(f"scope gate: {bound.reason}")
        gates.append(("scope", "pass", ""))

    # 4. direction/trigger: conditional evidence demands IMPLIES form
    conditional_evidence = any(
        _contains_cue(q, _CONDITIONAL_CUES) for _, q, _ in cited_snippets
    )
    if rule is None:
        gates.append(("direction/trigger", "skip", "unparseable candidate"))
    elif conditional_evidence and not isinstance(rule.clause, dsl.Implies):
        gates.append(("direction/trigger", "fail",
                      "conditional evidence requires IMPLIES with preconditions"))
        return finish("trigger gate: conditional evidence without implication form")
    else:
        gates.append(("direction/trigger", "pass", ""))

    # 5. machine-checkable DSL form
    if rule is None or bound is None:
        gates.append(("dsl-wellformed", "fail", syntax_error))
        return finish(f"wellformed gate: {syntax_error}")
    gates.append(("dsl-wellformed", "pass", ""))

    # 6. values and ranges must fit the declared domains
    valid = dsl.validate_rule(bound)
    if isinstance(valid, dsl.NoRule):
        gates.append(("domain-validity", "fail", valid.reason))
        return finish(f"domain gate: {valid.reason}")
    canonical = dsl.canonicalize(valid)
    if isinstance(canonical, dsl.NoRule):
        gates.append(("domain-validity", "fail", canonical.reason))
        return finish(f"domain gate: {canonical.reason}")
    gates.append(("domain-validity", "pass", ""))

    final = replace(canonical, citations=parsed.citations, provenance="induced")
    report = GateReport(
        candidate=raw.strip(),
        gates=tuple(sorted(gates, key=lambda g: GATE_NAMES.index(g[0]))),
        accepted=True,
        reason="accepted",
    )
    return final, report


# --------------------------------------------------------------------------
# Mock inducer
# --------------------------------------------------------------------------

_ASSOCIATE_RE = re.compile(
    r"associate[sd]?\b[^.]*?\bby\s+([A-Za-z0-9_][A-Za-z0-9_-]*)", re.IGNORECASE
)
_SET_IF_RE = re.compile(
    r"(?:the\s+)?([A-Za-z0-9_][A-Za-z0-9_-]*)\s+(?:field\s+)?shall be set to\s+"
    r"'?([A-Za-z0-9_][A-Za-z0-9_-]*|\d+)'?\s+if\s+(?:the\s+)?"
    r"([A-Za-z0-9_][A-Za-z0-9_-]*)\s+(?:field\s+)?is\s+(?:set to\s+)?"
    r"'?([A-Za-z0-9_][A-Za-z0-9_-]*|\d+)'?",
    re.IGNORECASE,
)
_AT_LEAST_RE = re.compile(
    r"(?:the\s+)?([A-Za-z0-9_][A-Za-z0-9_-]*)\s+(?:field\s+)?shall be at least\s+"
    r"([A-Za-z0-9_][A-Za-z0-9_-]*|\d+)(?:\s+minus\s+(\d+))?",
    re.IGNORECASE,
)


def _lit_token(text: str) -> str:
    return text if text.isdigit() else f"'{text}'"


class MockInducer:
    """Deterministic snippet-pattern client; recognizes three shapes:

    * "associate ... by <idField>"            -> MATCH
    * "<f> shall be set to <lit> if <g> is <lit>" -> IMPLIES(EQ; EQ)
    * "<f> shall be at least <g> [minus k]"   -> GE relation
    """

    def propose(self, package: EvidencePackage, prompt: str) -> str:
        pair = package.pair
        leaf_names = {pair.a.leaf_name.lower(): pair.a, pair.b.leaf_name.lower(): pair.b}
        scope_txt = (f"INTRA({pair.scope_ies[0]})" if pair.intra
                     else f"INTER({pair.scope_ies[0]}, {pair.scope_ies[1]})")

        def qualify(pf) -> str:
            return pf.qualified if not pair.intra else pf.rel.split(".")[-1].split("[")[0]

        for snippet in package.snippets:
            for line in snippet.text.splitlines():
                m = _ASSOCIATE_RE.search(line)
                if m and not pair.intra:
                    ident = m.group(1).lower()
                    if ident == pair.a.leaf_name.lower() == pair.b.leaf_name.lower():
                        rule = (f"{scope_txt}: MATCH({pair.a.qualified}, "
                                f"{pair.b.qualified})")
                        return self._answer(rule, "ValueDependency", snippet.doc_id, line)
                m = _SET_IF_RE.search(line)
                if m:
                    target, target_lit, cond, cond_lit = m.groups()
                    tf = leaf_names.get(target.lower())
                    cf = leaf_names.get(cond.lower())
                    if tf is not None and cf is not None and tf != cf:
                        rule = (f"{scope_txt}: IMPLIES(EQ({qualify(cf)}, "
                                f"{_lit_token(cond_lit)}); EQ({qualify(tf)}, "
                                f"{_lit_token(target_lit)}))")
                        return self._answer(rule, "ValueDependency", snippet.doc_id, line)
                m = _AT_LEAST_RE.search(line)
                if m:
                    lhs, rhs, k = m.groups()
                    lf = leaf_names.get(lhs.lower())
                    rf = leaf_names.get(rhs.lower())
                    if lf is not None and (rf is not None or rhs.isdigit()) and lf != rf:
                        rhs_txt = qualify(rf) if rf is not None else rhs
                        if k:
                            rhs_txt = f"{rhs_txt} - {k}"
                        rule = f"{scope_txt}: GE({qualify(lf)}, {rhs_txt})"
                        return self._answer(rule, "RangeAlignment", snippet.doc_id, line)
        return "NO_RULE"

    @staticmethod
    def _answer(rule: str, family: str, doc: str, quote: str) -> str:
        return json.dumps(
            {"result": "RULE", "type": family, "dsl": rule,
             "citations": [{"doc": doc, "quote": quote}]},
            sort_keys=True,
        )


def mock_inducer() -> MockInducer:
    return MockInducer()


# --------------------------------------------------------------------------
# Live client
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClientConfig:
    endpoint: str
    model: str = "default"
    temperature: float = 0.0
    parallelism: int = 1
    retries: int = 2

    @staticmethod
    def load(path: str | Path) -> "ClientConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return ClientConfig(
            endpoint=data["endpoint"],
            model=data.get("model", "default"),
            temperature=float(data.get("temperature", 0.0)),
            parallelism=int(data.get("parallelism", 1)),
            retries=int(data.get("retries", 2)),
        )


class HttpInducerClient:
    """Minimal JSON-over-HTTP bridge to an external inference service.

    POSTs ``{"model", "temperature", "prompt"}`` and expects
    ``{"completion": "..."}``. Transport failures raise TransportError after
    the configured retries; they are never mapped to NO_RULE.
    """

    def __init__(self, config: ClientConfig, transport: Callable[[str, bytes], bytes] | None = None):
        self.config = config
        self._transport = transport or self._http_post

    @staticmethod
    def _http_post(url: str, body: bytes) -> bytes:
        req = urllib.request.Request(
            url, data=body, headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(req, timeout=60) as resp:
            return resp.read()

    def propose(self, package: EvidencePackage, prompt: str) -> str:
        body = json.dumps(
            {"model": self.config.model, "temperature": self.config.temperature,
             "prompt": prompt}
        ).encode("utf-8")
        last: Exception | None = None
        for _ in range(self.config.retries + 1):
            try:
                raw = self._transport(self.config.endpoint, body)
                return str(json.loads(raw.decode("utf-8"))["completion"])
            except Exception as exc:  # noqa: BLE001 - surfaced as TransportError
                last = exc
        raise TransportError(f"inducer transport failed after retries: {last}")


# --------------------------------------------------------------------------
# Batch driver
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchStats:
    pairs: int
    candidates: int
    accepted: int
    no_rule: int
    transport_failures: int

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "candidates": self.candidates,
            "accepted": self.accepted,
            "no_rule": self.no_rule,
            "transport_failures": self.transport_failures,
        }


def batch_induce(
    pairs: tuple[FieldPair, ...],
    corpus: Corpus,
    mode: str,
    client: InducerClient,
    *,
    schema: Schema,
    aliases: dict[str, tuple[str, ...]] | None = None,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    parallelism: int = 1,
    gate_log: list[GateReport] | None = None,
) -> tuple[tuple["dsl.ConstraintRule", ...], BatchStats]:
    """Scan evidence and induce for every pair, in sorted order.

    Pairs without any evidence package count as NO_RULE without a client
    call. Accepted rules are deduplicated by id and sorted.
    """
    ordered = sorted(pairs, key=lambda p: p.sort_key())
    candidates = 0
    accepted_pairs = 0
    accepted: dict[str, dsl.ConstraintRule] = {}
    no_rule = 0
    failures = 0

    def work(pair: FieldPair):
        pkg = scan_evidence(corpus, pair, mode, schema=schema, aliases=aliases)
        if pkg is None:
            return ("no-evidence", None, None)
        try:
            rule, report = induce(pkg, client, schema, prompt_template)
        except TransportError as exc:
            return ("transport", None, str(exc))
        return ("done", rule, report)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(work, ordered))
    else:
        results = [work(p) for p in ordered]

    for status, rule, extra in results:
        if status == "no-evidence":
            no_rule += 1
            continue
        if status == "transport":
            failures += 1
            continue
        report = extra
        if gate_log is not None and report is not None:
            gate_log.append(report)
        if report is not None and report.candidate != "NO_RULE":
            candidates += 1
        if isinstance(rule, dsl.NoRule):
            no_rule += 1
        else:
            accepted_pairs += 1
            accepted[rule.id] = rule

    stats = BatchStats(
        pairs=len(ordered),
        candidates=candidates,
        accepted=accepted_pairs,
        no_rule=no_rule,
        transport_failures=failures,
    )
    rules = tuple(accepted[k] for k in sorted(accepted))
    return rules, stats
