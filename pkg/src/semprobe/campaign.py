"""End-to-end campaign orchestration, cost model, and reporting.

A guided campaign runs the whole pipeline: schema-derived range and presence
constraints, coverage-driven pair selection, evidence mining, gate-checked
rule induction (mock client by default), minimal-edit mutation planning, and
execution against a simulated receiver profile. An enumeration campaign
uniformly samples field pairs from the seed message (seeded RNG, without
replacement) and exhaustively walks their domain products.

Reports are deterministic: identical inputs produce byte-identical JSON.
The wall-clock model prices each executed case at a flat per-test timeout;
the over-the-air model adds a reinitialization overhead per test. The
default OTA overhead is the exact rational 16605/1551 s (~10.71), chosen so
a 24-hour budget prices to exactly 1551 tests.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from . import dsl, message as msgmod, miner, mutation, uesim
from .induction import BatchStats, InducerClient, batch_induce, mock_inducer
from .message import DecodedMessage
from .miner import Corpus
from .mutation import (
    CLASS_ENUMERATION,
    CLASS_INTER,
    CLASS_INTRA,
    CLASS_PRESENCE,
    CLASS_VALUE,
    Infeasible,
    Planned,
    TestCase,
)
from .schema import Schema, resolve_path, schema_to_dict
from .schema_rules import RuleSet, build_ruleset
from .uesim import AttachOk, Crash, Reject, UeProfile

MODE_GUIDED = "guided"
MODE_ENUMERATION = "enumeration"

SECONDS_PER_DAY = 86_400

# Flat per-test monitoring window used for campaign pricing.
DEFAULT_TIMEOUT_S = Fraction(45)
# Reinitialization overhead calibrated so a 24 h budget = exactly 1551 tests.
DEFAULT_OTA_OVERHEAD_S = Fraction(SECONDS_PER_DAY, 1551) - 45  # = 5535/517 ~ 10.71


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    raise TypeError(f"cannot interpret {x!r} as seconds")


@dataclass(frozen=True)
class BudgetModel:
    timeout_s: Fraction = DEFAULT_TIMEOUT_S
    overhead_s: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "timeout_s", _as_fraction(self.timeout_s))
        object.__setattr__(self, "overhead_s", _as_fraction(self.overhead_s))
        if self.timeout_s < 0 or self.overhead_s < 0:
            raise ValueError("budget model durations must be >= 0")

    @property
    def per_test_s(self) -> Fraction:
        return self.timeout_s + self.overhead_s


FLAT_MODEL = BudgetModel(timeout_s=DEFAULT_TIMEOUT_S, overhead_s=Fraction(0))
OTA_MODEL = BudgetModel(timeout_s=DEFAULT_TIMEOUT_S, overhead_s=DEFAULT_OTA_OVERHEAD_S)


@dataclass(frozen=True)
class BudgetEstimate:
    seconds: Fraction
    days: Fraction


def budget_estimate(model: BudgetModel, n_tests: int) -> BudgetEstimate:
    """Modeled cost of running n tests under a per-test budget."""
    seconds = n_tests * model.per_test_s
    return BudgetEstimate(seconds=seconds, days=seconds / SECONDS_PER_DAY)


def tests_in_budget(model: BudgetModel, budget_s) -> int:
    """How many tests fit in a budget (floor of budget / per-test cost)."""
    return int(_as_fraction(budget_s) / model.per_test_s)


def pair_space(n_fields: int) -> int:
    """Number of unordered field pairs over n fields."""
    if n_fields < 2:
        raise ValueError("pair space needs at least two fields")
    return n_fields * (n_fields - 1) // 2


# --------------------------------------------------------------------------
# Campaign report
# --------------------------------------------------------------------------

CLASS_KEYS = (CLASS_VALUE, CLASS_PRESENCE, CLASS_INTRA, CLASS_INTER, CLASS_ENUMERATION)


@dataclass
class ClassCounts:
    generated: int = 0
    executed: int = 0
    crashing: int = 0


@dataclass(frozen=True)
class CampaignReport:
    config_digest: str
    mode: str
    classes: dict[str, ClassCounts]
    outcomes: dict[str, int]                   # attach_ok / reject / crash
    crashes: tuple[dict, ...]                  # per crashing case details
    unique_sites: tuple[str, ...]
    infeasible: tuple[dict, ...]
    collateral: tuple[dict, ...]
    wall_model_seconds: Fraction
    coverage: dict | None = None
    induction: dict | None = None

    @property
    def generated(self) -> int:
        return sum(c.generated for c in self.classes.values())

    @property
    def executed(self) -> int:
        return sum(c.executed for c in self.classes.values())


def report_to_dict(report: CampaignReport) -> dict:
    return {
        "config_digest": report.config_digest,
        "mode": report.mode,
        "classes": {
            name: {
                "generated": c.generated,
                "executed": c.executed,
                "crashing": c.crashing,
            }
            for name, c in sorted(report.classes.items())
        },
        "totals": {
            "generated": report.generated,
            "executed": report.executed,
            "crashing": report.outcomes.get("crash", 0),
        },
        "outcomes": dict(sorted(report.outcomes.items())),
        "crashes": list(report.crashes),
        "unique_sites": list(report.unique_sites),
        "infeasible": list(report.infeasible),
        "collateral": list(report.collateral),
        "wall_model_seconds": str(report.wall_model_seconds),
        **({"coverage": report.coverage} if report.coverage is not None else {}),
        **({"induction": report.induction} if report.induction is not None else {}),
    }


def report_from_dict(data: dict) -> CampaignReport:
    classes = {
        name: ClassCounts(
            generated=c["generated"], executed=c["executed"], crashing=c["crashing"]
        )
        for name, c in data["classes"].items()
    }
    return CampaignReport(
        config_digest=data["config_digest"],
        mode=data["mode"],
        classes=classes,
        outcomes=dict(data["outcomes"]),
        crashes=tuple(data["crashes"]),
        unique_sites=tuple(data["unique_sites"]),
        infeasible=tuple(data["infeasible"]),
        collateral=tuple(data["collateral"]),
        wall_model_seconds=Fraction(data["wall_model_seconds"]),
        coverage=data.get("coverage"),
        induction=data.get("induction"),
    )


def render_report(report: CampaignReport, format: str = "json") -> str:
    if format == "json":
        return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    if format == "text-table":
        return _render_table(report)
    raise ValueError(f"unknown report format {format!r}")


_CLASS_TITLES = {
    CLASS_VALUE: "Value Range",
    CLASS_PRESENCE: "Presence",
    CLASS_INTRA: "Intra-IE",
    CLASS_INTER: "Inter-IE",
    CLASS_ENUMERATION: "Enumeration",
}
_MODE_TITLES = {"assert": "Assertion", "segfault": "Segmentation Fault"}


def _render_table(report: CampaignReport) -> str:
    rows = sorted(
        {
            (
                _CLASS_TITLES.get(c["class"], c["class"]),
                c["ie"],
                _MODE_TITLES.get(c["mode"], c["mode"]),
                c["site"],
            )
            for c in report.crashes
        }
    )
    headers = ("Constraints", "Affected IE", "Outcome", "Site")
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(str(cell))) for w, cell in zip(widths, row)]
    def fmt(row):
        return " | ".join(str(cell).ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = [fmt(headers), "-+-".join("-" * w for w in widths)]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Campaign execution
# --------------------------------------------------------------------------

def _config_digest(parts: list) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _affected_ie(schema: Schema, constraint_id: str, ruleset: RuleSet) -> str:
    if constraint_id.startswith(("range:", "presence:")):
        pattern = constraint_id.split(":", 1)[1]
        return resolve_path(schema, pattern).owner_ie
    try:
        rule = ruleset.rule_by_id(constraint_id)
    except KeyError:
        return "-"
    if isinstance(rule, dsl.ConstraintRule):
        return " / ".join(rule.scope.ies)
    return "-"


def _execute(
    cases: list[TestCase],
    profile: UeProfile,
    schema: Schema,
    ruleset: RuleSet,
    workers: int,
    with_collateral: bool,
):
    def run_one(tc: TestCase):
        outcome = uesim.run_target(profile, tc, schema, ruleset)
        collateral: tuple[str, ...] = ()
        if with_collateral:
            delivered = uesim._deliver(tc, schema)
            if isinstance(delivered, DecodedMessage):
                violated = uesim.violated_ids(delivered, ruleset)
                collateral = tuple(v for v in violated if v != tc.targeted)
        return outcome, collateral

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_one, cases))
    return [run_one(tc) for tc in cases]


def run_campaign(
    schema: Schema,
    corpus: Corpus,
    seeds: list[tuple[str, DecodedMessage]],
    profile: UeProfile,
    mode: str = MODE_GUIDED,
    *,
    sample: int | None = None,
    rng_seed: int = 0,
    evidence_mode: str = miner.MODE_FULL,
    client: InducerClient | None = None,
    aliases: dict[str, tuple[str, ...]] | None = None,
    ie_budget: int | None = None,
    dependency_budget: int = mutation.DEFAULT_DEPENDENCY_BUDGET,
    workers: int = 1,
) -> CampaignReport:
    """Run one campaign and aggregate a deterministic report."""
    if mode not in (MODE_GUIDED, MODE_ENUMERATION):
        raise ValueError(f"unknown campaign mode {mode!r}")
    if mode == MODE_ENUMERATION and (sample is None or sample < 1):
        raise ValueError("enumeration mode needs sample >= 1")

    digest = _config_digest(
        [
            schema_to_dict(schema),
            [[d.doc_id, d.role, list(d.lines)] for d in corpus.docs],
            {
                "name": profile.name,
                "disabled": sorted(profile.disabled_checks),
                "failure_map": {
                    k: [v.mode, v.site] for k, v in sorted(profile.failure_map.items())
                },
                "need_store": profile.need_store,
            },
            [[ref, msg.tree] for ref, msg in seeds],
            {"mode": mode, "sample": sample, "rng_seed": rng_seed,
             "evidence_mode": evidence_mode},
        ]
    )

    classes = {key: ClassCounts() for key in CLASS_KEYS}
    outcomes = {"attach_ok": 0, "reject": 0, "crash": 0}
    crashes: list[dict] = []
    infeasible: list[dict] = []
    collateral_rows: list[dict] = []
    sites: set[str] = set()
    coverage_info = None
    induction_info = None

    if mode == MODE_GUIDED:
        client = client or mock_inducer()
        n_candidates = len(schema.ie_names()) - 1
        budget = ie_budget if ie_budget is not None else max(1, n_candidates)
        cover = miner.select_intra_ies(schema, budget)
        pairs = miner.intra_pairs(schema, cover) + miner.inter_pairs(schema)
        rules, stats = batch_induce(
            pairs, corpus, evidence_mode, client, schema=schema, aliases=aliases
        )
        ruleset = build_ruleset(schema, rules)
        coverage_info = {
            "selected": list(cover.selected),
            "covered_fraction": str(cover.covered_fraction),
            "pairs": cover.pairs,
        }
        induction_info = stats.to_dict()

        planned_cases: list[TestCase] = []
        for rc in ruleset.ranges:
            out = mutation.plan_range(seeds[0][1], rc, seed_ref=seeds[0][0])
            if isinstance(out, Infeasible):
                infeasible.append({"constraint": rc.id, "reason": out.reason})
            else:
                planned_cases.extend(out.cases)
        for pc in ruleset.presence:
            out = mutation.plan_presence(seeds[0][1], pc, seed_ref=seeds[0][0])
            if isinstance(out, Infeasible):
                infeasible.append({"constraint": pc.id, "reason": out.reason})
            else:
                planned_cases.extend(out.cases)
        for rule in ruleset.rules:
            out = mutation.plan_dependency(
                seeds[0][1], rule, seed_ref=seeds[0][0], budget=dependency_budget
            )
            if isinstance(out, Infeasible):
                infeasible.append({"constraint": rule.id, "reason": out.reason})
            else:
                planned_cases.extend(out.cases)

        for tc in planned_cases:
            classes[tc.expected_class].generated += 1
        results = _execute(planned_cases, profile, schema, ruleset, workers,
                           with_collateral=True)
        for tc, (outcome, extra) in zip(planned_cases, results):
            _tally(tc, outcome, extra, classes, outcomes, crashes, sites,
                   collateral_rows, schema, ruleset)
    else:
        ruleset = build_ruleset(schema, ())
        seed_ref, seed = seeds[0]
        universe = sorted(
            itertools.combinations(sorted(seed.present_paths()), 2)
        )
        if sample > len(universe):
            raise ValueError(
                f"sample {sample} exceeds the {len(universe)} available pairs"
            )
        rng = random.Random(rng_seed)
        chosen = rng.sample(universe, sample)
        for pair in sorted(chosen):
            cases = mutation.plan_enumeration(seed, pair, seed_ref=seed_ref)
            classes[CLASS_ENUMERATION].generated += len(cases)
            results = _execute(list(cases), profile, schema, ruleset, workers,
                               with_collateral=False)
            for tc, (outcome, extra) in zip(cases, results):
                _tally(tc, outcome, extra, classes, outcomes, crashes, sites,
                       collateral_rows, schema, ruleset)

    executed = sum(c.executed for c in classes.values())
    report = CampaignReport(
        config_digest=digest,
        mode=mode,
        classes={k: v for k, v in classes.items() if v.generated or v.executed},
        outcomes=outcomes,
        crashes=tuple(sorted(crashes, key=lambda c: c["case"])),
        unique_sites=tuple(sorted(sites)),
        infeasible=tuple(sorted(infeasible, key=lambda d: d["constraint"])),
        collateral=tuple(sorted(collateral_rows, key=lambda d: d["case"])),
        wall_model_seconds=executed * FLAT_MODEL.per_test_s,
        coverage=coverage_info,
        induction=induction_info,
    )
    return report


def _tally(tc, outcome, collateral, classes, outcomes, crashes, sites,
           collateral_rows, schema, ruleset) -> None:
    classes[tc.expected_class].executed += 1
    if isinstance(outcome, AttachOk):
        outcomes["attach_ok"] += 1
        if outcome.misconfigured:
            collateral_rows.append(
                {"case": tc.id, "silent_misconfig": list(outcome.misconfigured)}
            )
    elif isinstance(outcome, Reject):
        outcomes["reject"] += 1
    elif isinstance(outcome, Crash):
        outcomes["crash"] += 1
        classes[tc.expected_class].crashing += 1
        sites.add(outcome.failure.site or "")
        crashes.append(
            {
                "case": tc.id,
                "constraint": outcome.constraint,
                "class": tc.expected_class,
                "ie": _affected_ie(schema, outcome.constraint, ruleset),
                "mode": outcome.failure.mode,
                "site": outcome.failure.site or "",
            }
        )
    if collateral:
        collateral_rows.append({"case": tc.id, "violated": list(collateral)})
