"""featrack: usage feedback for annotation-based software product lines.

The pipeline is: validate a feedback model, derive feedback-minded variants,
collect the events they raise, and pull usage counts back onto the feature
model.
"""

__version__ = "0.1.0"

from .analysis import FeedbackQuery, PullResult, execute_query, feedback_pull, parse_query, report  # noqa: E402
from .annotation import IfdefBlock, preprocess, scan_blocks  # noqa: E402
from .collector import FeedbackEvent, FeedbackLog, import_events, read_log, serve  # noqa: E402
from .expr import And, Feature, Or, canonical_text, eval_mention, eval_selection, parse_expr  # noqa: E402
from .feedbackmodel import load_feedback_model, validate_feedback_model  # noqa: E402
from .simulator import UsageScenario, discover_hits, run_scenario  # noqa: E402
from .splmodels import (  # noqa: E402
    load_configuration,
    load_feature_model,
    load_file_index,
    load_portfolio,
    resolve_context,
)
from .transform import HitTemplate, derive_variant, feedback_transform, render_hit  # noqa: E402

__all__ = [
    "And",
    "Feature",
    "FeedbackEvent",
    "FeedbackLog",
    "FeedbackQuery",
    "HitTemplate",
    "IfdefBlock",
    "Or",
    "PullResult",
    "UsageScenario",
    "canonical_text",
    "derive_variant",
    "discover_hits",
    "eval_mention",
    "eval_selection",
    "execute_query",
    "feedback_pull",
    "feedback_transform",
    "import_events",
    "load_configuration",
    "load_feature_model",
    "load_feedback_model",
    "load_file_index",
    "load_portfolio",
    "parse_expr",
    "parse_query",
    "preprocess",
    "read_log",
    "report",
    "render_hit",
    "resolve_context",
    "run_scenario",
    "scan_blocks",
    "serve",
    "validate_feedback_model",
]
