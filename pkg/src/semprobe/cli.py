"""Command-line interface.

Subcommands mirror the pipeline stages: ``extract`` (schema-derived rules),
``mine`` (evidence packages), ``induce`` (gate-checked dependency rules),
``gen`` (test-case bundle), ``run`` (full campaign), ``report`` (render a
saved report), ``budget`` (cost estimates). All outputs are JSON except the
text-table report rendering.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import campaign as camp
from . import dsl, miner, mutation, uesim
from .induction import ClientConfig, GateReport, HttpInducerClient, batch_induce, mock_inducer
from .message import view
from .schema import Schema, load_schema
from .schema_rules import RuleSet, build_ruleset, load_ruleset, ruleset_to_dict, save_ruleset

ASSETS = Path(__file__).parent / "assets"


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_aliases(path: str | None) -> dict[str, tuple[str, ...]]:
    if path is None:
        return {}
    return miner.load_alias_table(path)


def _client(args) -> object:
    if args.client == "mock":
        return mock_inducer()
    if args.client == "live":
        if not args.config:
            raise SystemExit("--client live requires --config")
        return HttpInducerClient(ClientConfig.load(args.config))
    raise SystemExit(f"unknown client {args.client!r}")


def _mined_pairs(schema: Schema):
    n_candidates = max(1, len(schema.ie_names()) - 1)
    cover = miner.select_intra_ies(schema, n_candidates)
    return miner.intra_pairs(schema, cover) + miner.inter_pairs(schema)


def cmd_extract(args) -> int:
    schema = load_schema(args.schema)
    rs = build_ruleset(schema)
    _write(args.out, json.dumps(ruleset_to_dict(rs), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_mine(args) -> int:
    schema = load_schema(args.schema)
    corpus = miner.load_corpus(args.corpus)
    aliases = _load_aliases(args.aliases)
    packages = []
    for pair in _mined_pairs(schema):
        pkg = miner.scan_evidence(
            corpus, pair, args.evidence_mode, schema=schema, aliases=aliases
        )
        if pkg is not None:
            packages.append(pkg.to_dict())
    _write(args.out, json.dumps({"packages": packages}, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_induce(args) -> int:
    schema = load_schema(args.schema)
    corpus = miner.load_corpus(args.corpus)
    aliases = _load_aliases(args.aliases)
    gate_log: list[GateReport] = []
    rules, stats = batch_induce(
        _mined_pairs(schema),
        corpus,
        args.evidence_mode,
        _client(args),
        schema=schema,
        aliases=aliases,
        parallelism=args.parallelism,
        gate_log=gate_log,
    )
    rs = build_ruleset(schema, rules)
    payload = ruleset_to_dict(rs)
    payload["induction_stats"] = stats.to_dict()
    _write(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if args.gate_log:
        lines = [json.dumps(g.to_dict(), sort_keys=True) for g in gate_log]
        Path(args.gate_log).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_gen(args) -> int:
    schema = load_schema(args.schema)
    rules = load_ruleset(args.rules, schema)
    seed = view(schema, Path(args.seed).read_bytes())
    seed_ref = Path(args.seed).stem
    lines = []
    for rc in rules.ranges:
        out = mutation.plan_range(seed, rc, seed_ref=seed_ref)
        if isinstance(out, mutation.Planned):
            lines.extend(json.dumps(tc.to_dict(), sort_keys=True) for tc in out.cases)
    for pc in rules.presence:
        out = mutation.plan_presence(seed, pc, seed_ref=seed_ref)
        if isinstance(out, mutation.Planned):
            lines.extend(json.dumps(tc.to_dict(), sort_keys=True) for tc in out.cases)
    for rule in rules.rules:
        out = mutation.plan_dependency(seed, rule, seed_ref=seed_ref, budget=args.budget)
        if isinstance(out, mutation.Planned):
            lines.extend(json.dumps(tc.to_dict(), sort_keys=True) for tc in out.cases)
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_run(args) -> int:
    schema = load_schema(args.schema)
    corpus = miner.load_corpus(args.corpus)
    aliases = _load_aliases(args.aliases)
    profile = uesim.load_profile(args.profile)
    seed_bytes = Path(args.seed).read_bytes()
    seeds = [(Path(args.seed).stem, view(schema, seed_bytes))]
    client = _client(args) if args.mode == camp.MODE_GUIDED else None
    report = camp.run_campaign(
        schema,
        corpus,
        seeds,
        profile,
        mode=args.mode,
        sample=args.sample,
        rng_seed=args.rng_seed,
        evidence_mode=args.evidence_mode,
        client=client,
        aliases=aliases,
        workers=args.workers,
    )
    _write(args.out, camp.render_report(report, "json"))
    return 0


def cmd_report(args) -> int:
    data = json.loads(Path(args.infile).read_text(encoding="utf-8"))
    report = camp.report_from_dict(data)
    _write(args.out, camp.render_report(report, args.format))
    return 0


def cmd_budget(args) -> int:
    model = camp.OTA_MODEL if args.ota else camp.BudgetModel(
        timeout_s=Fraction(str(args.timeout)), overhead_s=Fraction(str(args.overhead))
    )
    out: dict = {
        "timeout_s": str(model.timeout_s),
        "overhead_s": str(model.overhead_s),
    }
    if args.tests is not None:
        est = camp.budget_estimate(model, args.tests)
        out["tests"] = args.tests
        out["seconds"] = str(est.seconds)
        out["days"] = round(float(est.days), 4)
    if args.budget_seconds is not None:
        out["budget_seconds"] = args.budget_seconds
        out["tests_in_budget"] = camp.tests_in_budget(model, args.budget_seconds)
    _write(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semprobe",
        description="Constraint-guided semantic testing for configuration messages",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_schema(p):
        p.add_argument("--schema", default=str(ASSETS / "mini-rrc.json"))
        p.add_argument("--out", default="-")

    p = sub.add_parser("extract", help="schema-derived range and presence rules")
    common_schema(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("mine", help="evidence packages for candidate field pairs")
    common_schema(p)
    p.add_argument("--corpus", default=str(ASSETS / "corpus" / "manifest.json"))
    p.add_argument("--aliases", default=str(ASSETS / "mini-rrc.aliases.json"))
    p.add_argument("--evidence-mode", choices=miner.EVIDENCE_MODES, default=miner.MODE_FULL)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("induce", help="gate-checked dependency rule induction")
    common_schema(p)
    p.add_argument("--corpus", default=str(ASSETS / "corpus" / "manifest.json"))
    p.add_argument("--aliases", default=str(ASSETS / "mini-rrc.aliases.json"))
    p.add_argument("--evidence-mode", choices=miner.EVIDENCE_MODES, default=miner.MODE_FULL)
    p.add_argument("--client", choices=("mock", "live"), default="mock")
    p.add_argument("--config", help="client config JSON (endpoint, model, ...)")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--gate-log", help="write per-candidate gate reports (JSON lines)")
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("gen", help="generate the test-case bundle (JSON lines)")
    common_schema(p)
    p.add_argument("--rules", default=str(ASSETS / "rules" / "mini-rrc-rules.json"))
    p.add_argument("--seed", default=str(ASSETS / "seed_rrcsetup.bin"))
    p.add_argument("--budget", type=int, default=mutation.DEFAULT_DEPENDENCY_BUDGET)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run a guided or enumeration campaign")
    common_schema(p)
    p.add_argument("--corpus", default=str(ASSETS / "corpus" / "manifest.json"))
    p.add_argument("--aliases", default=str(ASSETS / "mini-rrc.aliases.json"))
    p.add_argument("--seed", default=str(ASSETS / "seed_rrcsetup.bin"))
    p.add_argument("--profile", default=str(ASSETS / "profiles" / "strict.json"))
    p.add_argument("--mode", choices=(camp.MODE_GUIDED, camp.MODE_ENUMERATION),
                   default=camp.MODE_GUIDED)
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--evidence-mode", choices=miner.EVIDENCE_MODES, default=miner.MODE_FULL)
    p.add_argument("--client", choices=("mock", "live"), default="mock")
    p.add_argument("--config", help="client config JSON for --client live")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render a saved campaign report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("json", "text-table"), default="text-table")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("budget", help="per-test cost model estimates")
    p.add_argument("--tests", type=int, default=None)
    p.add_argument("--budget-seconds", type=int, default=None)
    p.add_argument("--timeout", type=float, default=45.0)
    p.add_argument("--overhead", type=float, default=0.0)
    p.add_argument("--ota", action="store_true",
                   help="use the bundled OTA model (45 s + ~10.71 s reinit)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_budget)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
