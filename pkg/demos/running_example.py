"""Walk the mini-WACline product line through the whole feedback loop.

    python demos/running_example.py

The script copies the fixture project into a temporary directory and then:

1. validates the feedback model against the platform,
2. derives three feedback-minded variants (V1, V2, V3),
3. simulates a week of usage on V1 and V2 straight into the feedback log,
4. pulls usage counts back into a clone of the attributed feature model,
5. prints the resulting report.

Nothing outside the temporary directory is touched.
"""

from __future__ import annotations

import shutil
import tempfile
from pathlib import Path

from featrack.analysis import feedback_pull, report
from featrack.collector import FeedbackLog, LogSink
from featrack.feedbackmodel import load_feedback_model_file, validate_feedback_model
from featrack.simulator import Step, UsageScenario, run_scenario
from featrack.splmodels import load_configuration, load_feature_model, load_file_index, load_portfolio
from featrack.transform import derive_variant

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "wacline"


def main() -> None:
    with tempfile.TemporaryDirectory(prefix="featrack-demo-") as tmp:
        root = Path(tmp) / "wacline"
        shutil.copytree(FIXTURE, root)
        platform = root / "platform"
        fm = load_feature_model(root / "model" / "feature-model.yaml")
        index = load_file_index(root / "model" / "file-index.yaml", platform)
        feedback = load_feedback_model_file(root / "model" / "myFirstfeedback.yaml")

        diagnostics = validate_feedback_model(feedback, fm, index, platform)
        print(f"validate: {len(diagnostics)} diagnostics")

        portfolio_path = root / "portfolio.yaml"
        for name in ("V1", "V2", "V3"):
            config_path = root / "configs" / f"{name}.yaml"
            cfg = load_configuration(config_path, fm)
            d = derive_variant(
                platform,
                cfg,
                feedback,
                None,
                root / "variants" / name,
                index,
                portfolio=portfolio_path,
                config_path=config_path,
            )
            print(f"derive {name}: {len(d.retained)} hit lines ({', '.join(cfg.selected)})")

        # V3 has neither Highlighting nor Emailing, so it carries no hits and emits nothing
        steps = []
        for variant, counts in {"V1": (7, 4, 1), "V2": (5, 0, 2)}.items():
            for metric, n in zip(("QueryGoogleScholarHappened", "DoubleClickEnactment", "RightClickEnactment"), counts):
                steps.append(Step(variant, metric, n))
        log_path = root / "feedback.log"
        with FeedbackLog(log_path) as flog:
            ledger = run_scenario(UsageScenario(tuple(steps), seed=1), root / "variants", lambda: LogSink(flog))
        print(f"simulate: {ledger.total} events logged")

        usage_fm = load_feature_model(root / "model" / "usage-model.yaml")
        result = feedback_pull(
            usage_fm, log_path, load_portfolio(portfolio_path, fm), root / "model" / "featureModel.feedback.yaml"
        )
        print()
        print(report(result), end="")


if __name__ == "__main__":
    main()
