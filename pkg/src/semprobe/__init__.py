"""Constraint-guided semantic testing for configuration-message protocols."""

from .schema import (  # noqa: F401
    FieldDef,
    IEDef,
    Schema,
    SchemaError,
    field_domain,
    load_schema,
)
from .codec import decode, encode  # noqa: F401
from .message import (  # noqa: F401
    DecodedMessage,
    LeafEntry,
    Omit,
    RawOverride,
    SetValue,
    apply_edits,
    reencode,
    view,
)
from .dsl import ConstraintRule, NoRule, evaluate, normalize, parse_rule  # noqa: F401
from .schema_rules import (  # noqa: F401
    PresenceConstraint,
    RangeConstraint,
    extract_presence,
    extract_ranges,
)
from .miner import (  # noqa: F401
    Corpus,
    EvidencePackage,
    find_reference_fields,
    scan_evidence,
    select_intra_ies,
    surface_forms,
)
from .induction import batch_induce, induce, mock_inducer  # noqa: F401
from .mutation import (  # noqa: F401
    plan_dependency,
    plan_enumeration,
    plan_presence,
    plan_range,
)
from .uesim import UeProfile, dedup_sites, run_target  # noqa: F401
from .campaign import (  # noqa: F401
    BudgetModel,
    budget_estimate,
    pair_space,
    render_report,
    run_campaign,
)

__version__ = "0.1.0"
