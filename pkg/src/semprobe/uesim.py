"""Deterministic simulated receiver: a constraint-checking configuration
pipeline with an injectable bug layer.

The target is intentionally transparent: it validates the delivered message
against the full constraint set (presence, range, dependency rules) in
ascending constraint-id order and reports the first fault. A profile makes
it buggy by disabling chosen checks and mapping them to failure modes with
stable pseudo source locations, so campaigns produce reproducible crash
sites that deduplicate cleanly.

Presence handling models need-code semantics. When an optional field is
absent with its parent present:

* check enabled, Need M, no stored prior value -> the validating receiver
  refuses the unmaintainable configuration (Reject);
* check enabled otherwise -> the absence is handled gracefully (maintain
  the stored value, or clear for Need R) and processing continues;
* check disabled, Need M, no stored prior -> the receiver dereferences
  missing state: Crash with the mapped failure mode, or a synthetic
  null-use segfault when unmapped;
* check disabled, Need R (or Need M with a prior) -> a mapped failure mode
  crashes; otherwise the message "works" but leaves a silent
  misconfiguration flag on the outcome.

Wire deliveries that fail to decode are rejected with the synthetic
``decode-error`` id. A message violating nothing attaches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import dsl, message as msgmod
from .message import DecodedMessage
from .mutation import TestCase
from .schema import IntKind, Schema
from .schema_rules import PresenceConstraint, RangeConstraint, RuleSet

MODE_ASSERT = "assert"
MODE_SEGFAULT = "segfault"
MODE_SILENT = "silent"

DECODE_ERROR_ID = "decode-error"


@dataclass(frozen=True)
class FailureMode:
    mode: str            # assert | segfault | silent
    site: str | None     # stable pseudo source location (None for silent)


@dataclass(frozen=True)
class UeProfile:
    name: str
    disabled_checks: frozenset[str]
    failure_map: dict[str, FailureMode]
    need_store: dict[str, object]  # prior configured values by pattern path

    def __post_init__(self) -> None:
        extra = set(self.failure_map) - set(self.disabled_checks)
        if extra:
            raise ValueError(
                f"failure_map keys must be disabled checks; extra: {sorted(extra)}"
            )


def load_profile(path: str | Path) -> UeProfile:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    failure_map = {}
    for cid, fm in data.get("failure_map", {}).items():
        failure_map[cid] = FailureMode(mode=fm["mode"], site=fm.get("site"))
    return UeProfile(
        name=data["name"],
        disabled_checks=frozenset(data.get("disabled_checks", ())),
        failure_map=failure_map,
        need_store=dict(data.get("need_store", {})),
    )


@dataclass(frozen=True)
class AttachOk:
    misconfigured: tuple[str, ...] = ()


@dataclass(frozen=True)
class Reject:
    constraint: str


@dataclass(frozen=True)
class Crash:
    failure: FailureMode
    constraint: str


Outcome = "AttachOk | Reject | Crash"


# --------------------------------------------------------------------------
# Constraint evaluation against a delivered message
# --------------------------------------------------------------------------

def _range_violated(msg: DecodedMessage, rc: RangeConstraint) -> bool:
    for entry in msgmod.match_pattern(msg, rc.path):
        if entry.present and isinstance(entry.domain, IntKind):
            if not (rc.lo <= entry.value <= rc.hi):
                return True
    return False


def _presence_absences(msg: DecodedMessage, pc: PresenceConstraint) -> bool:
    """True when the optional field is absent somewhere its parent exists."""
    return any(not e.present for e in msgmod.match_pattern(msg, pc.path))


def violated_ids(msg: DecodedMessage, rules: RuleSet) -> tuple[str, ...]:
    """All constraint ids the message violates (presence = absent field)."""
    out = []
    for pc in rules.presence:
        if _presence_absences(msg, pc):
            out.append(pc.id)
    for rc in rules.ranges:
        if _range_violated(msg, rc):
            out.append(rc.id)
    for rule in rules.rules:
        if isinstance(dsl.evaluate(rule, msg), dsl.Violated):
            out.append(rule.id)
    return tuple(sorted(out))


# --------------------------------------------------------------------------
# Execution
# --------------------------------------------------------------------------

def _deliver(tc: TestCase, schema: Schema) -> "DecodedMessage | Reject":
    from . import codec

    if tc.delivery == "wire":
        try:
            return msgmod.view(schema, tc.payload)
        except codec.DecodeError:
            return Reject(constraint=DECODE_ERROR_ID)
    if tc.delivery == "raw-override":
        return msgmod.from_tree(schema, tc.raw_tree)
    raise ValueError(f"unknown delivery {tc.delivery!r}")


def run_target(profile: UeProfile, tc: TestCase, schema: Schema, rules: RuleSet) -> Outcome:
    """Feed one test case to the simulated receiver; pure and deterministic."""
    delivered = _deliver(tc, schema)
    if isinstance(delivered, Reject):
        return delivered
    return run_message(profile, delivered, rules)


def run_message(profile: UeProfile, msg: DecodedMessage, rules: RuleSet) -> Outcome:
    checks: list[tuple[str, object]] = [(c.id, c) for c in rules.presence]
    checks += [(c.id, c) for c in rules.ranges]
    checks += [(r.id, r) for r in rules.rules]
    checks.sort(key=lambda pair: pair[0])

    silent: list[str] = []
    for cid, constraint in checks:
        disabled = cid in profile.disabled_checks
        if isinstance(constraint, PresenceConstraint):
            if not _presence_absences(msg, constraint):
                continue
            has_prior = constraint.path in profile.need_store
            if not disabled:
                if constraint.need == "M" and not has_prior:
                    return Reject(constraint=cid)
                continue  # graceful maintain/clear
            if constraint.need == "M" and not has_prior:
                failure = profile.failure_map.get(
                    cid, FailureMode(mode=MODE_SEGFAULT, site=f"sim/need-null:{constraint.path}")
                )
                return Crash(failure=failure, constraint=cid)
            failure = profile.failure_map.get(cid)
            if failure is None or failure.mode == MODE_SILENT:
                silent.append(cid)
                continue
            return Crash(failure=failure, constraint=cid)

        if isinstance(constraint, RangeConstraint):
            violated = _range_violated(msg, constraint)
        else:
            violated = isinstance(dsl.evaluate(constraint, msg), dsl.Violated)
        if not violated:
            continue
        if not disabled:
            return Reject(constraint=cid)
        failure = profile.failure_map.get(cid)
        if failure is None or failure.mode == MODE_SILENT:
            silent.append(cid)
            continue
        return Crash(failure=failure, constraint=cid)

    return AttachOk(misconfigured=tuple(silent))


def dedup_sites(outcomes) -> frozenset[str]:
    """Distinct crash sites across a batch; rejects and attaches are ignored."""
    sites = set()
    for o in outcomes:
        if isinstance(o, Crash) and o.failure.site is not None:
            sites.add(o.failure.site)
    return frozenset(sites)
