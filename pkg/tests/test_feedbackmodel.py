import json
from pathlib import Path

import jsonschema
import pytest
import yaml

from featrack.errors import FeedbackModelError
from featrack.expr import Feature, parse_expr
from featrack.feedbackmodel import (
    dump_feedback_model,
    has_errors,
    load_feedback_model,
    validate_feedback_model,
)

from .conftest import WACLINE

RUNNING_EXAMPLE = (WACLINE / "model" / "myFirstfeedback.yaml").read_text()
SCHEMA = json.loads((Path(__file__).parents[1] / "docs" / "feedback-model.schema.json").read_text())

MINIMAL = """
goals:
  - name: G
    target: Commenting
    questions:
      - id: Q
        metrics:
          - name: M
            pointcuts:
              - {fileName: app.js, path: src/app.js, anchor: "x"}
"""


def with_goal(**overrides):
    data = yaml.safe_load(RUNNING_EXAMPLE)
    data["goals"][0].update(overrides)
    return yaml.safe_dump(data)


class TestLoad:
    def test_running_example(self):
        m = load_feedback_model(RUNNING_EXAMPLE)
        (goal,) = m.goals
        assert goal.target == Feature("Commenting")
        assert goal.context == parse_expr("Highlighting OR Emailing")
        assert [q.id for q in goal.questions] == ["Q1", "Q2"]
        assert [mt.name for mt in goal.metrics] == [
            "QueryGoogleScholarHappened",
            "DoubleClickEnactment",
            "RightClickEnactment",
        ]
        assert [len(mt.pointcuts) for mt in goal.metrics] == [1, 2, 1]

    def test_documentation_clauses_verbatim(self):
        (goal,) = load_feedback_model(RUNNING_EXAMPLE).goals
        assert goal.audience == "Control Board"
        assert goal.purpose == "scoping & optimization"

    def test_minimal(self):
        m = load_feedback_model(MINIMAL)
        assert len(m.goals) == 1 and m.metric_names == {"M"}

    def test_context_defaults_to_all(self):
        assert load_feedback_model(MINIMAL).goals[0].context is None
        assert load_feedback_model(with_goal(context="ALL")).goals[0].context is None

    def test_duplicate_metric(self):
        data = yaml.safe_load(RUNNING_EXAMPLE)
        data["goals"][0]["questions"][0]["metrics"][0]["name"] = "DoubleClickEnactment"
        with pytest.raises(FeedbackModelError, match="not unique"):
            load_feedback_model(yaml.safe_dump(data))

    def test_duplicate_metric_across_goals(self):
        data = yaml.safe_load(RUNNING_EXAMPLE)
        second = dict(data["goals"][0], name="Other")
        data["goals"].append(second)
        with pytest.raises(FeedbackModelError, match="not unique"):
            load_feedback_model(yaml.safe_dump(data))

    @pytest.mark.parametrize(
        "text, match",
        [
            ("goals: []", "non-empty"),
            ("{}", "non-empty"),
            ("goals: [{name: G, questions: [{id: Q, metrics: [{name: M, pointcuts: [{fileName: a, path: b, anchor: c}]}]}]}]", "target"),
            ("goals: [{name: G, target: A, questions: [{id: Q, metrics: []}]}]", "metrics"),
            ("goals: [{name: G, target: A, questions: [{id: Q, metrics: [{name: M, pointcuts: [{fileName: a, path: b, anchor: '  '}]}]}]}]", "anchor"),
            ("goals: [{name: G, target: A, bogus: 1, questions: []}]", "unknown keys"),
        ],
    )
    def test_schema_errors(self, text, match):
        with pytest.raises(FeedbackModelError, match=match):
            load_feedback_model(text)

    def test_expression_error_names_goal(self):
        with pytest.raises(FeedbackModelError, match="goal 'CommentingScoping'.*unknown operator"):
            load_feedback_model(with_goal(target="NOT Commenting"))

    def test_yaml_syntax_error(self):
        with pytest.raises(FeedbackModelError, match="YAML syntax error"):
            load_feedback_model("goals: [unclosed")

    def test_round_trip(self):
        m = load_feedback_model(RUNNING_EXAMPLE)
        again = load_feedback_model(dump_feedback_model(m))
        assert again == m
        assert len(again.goals) == len(m.goals)

    @pytest.mark.parametrize("text", [RUNNING_EXAMPLE, MINIMAL])
    def test_conforms_to_published_schema(self, text):
        jsonschema.validate(yaml.safe_load(text), SCHEMA)


class TestValidate:
    def test_running_example_is_clean(self, project):
        assert validate_feedback_model(project.feedback, project.fm, project.index, project.platform) == []

    def test_unknown_feature(self, project):
        m = load_feedback_model(with_goal(target="Comenting"))
        diags = validate_feedback_model(m, project.fm, project.index, project.platform)
        unknown = [d for d in diags if d.code == "unknown-feature"]
        assert len(unknown) == 1 and "'Comenting'" in unknown[0].message
        assert has_errors(diags)

    def test_unknown_context_feature(self, project):
        m = load_feedback_model(with_goal(context="Highlighting OR Mailing"))
        diags = validate_feedback_model(m, project.fm, project.index, project.platform)
        assert [d.code for d in diags] == ["unknown-feature"]
        assert "context" in diags[0].location

    def test_all_inside_an_expression_is_not_a_feature(self, project):
        m = load_feedback_model(with_goal(context="ALL OR Highlighting"))
        diags = validate_feedback_model(m, project.fm, project.index, project.platform)
        assert [d.code for d in diags] == ["unknown-feature"] and "'ALL'" in diags[0].message

    def test_file_not_indexed(self, project):
        data = yaml.safe_load(RUNNING_EXAMPLE)
        data["goals"][0]["questions"][0]["metrics"][0]["pointcuts"][0]["path"] = "src/Nope.js"
        diags = validate_feedback_model(load_feedback_model(yaml.safe_dump(data)), project.fm, project.index, project.platform)
        assert [d.code for d in diags] == ["unknown-file"]

    def test_anchor_only_outside_target_blocks(self, project):
        # the line exists in TextAnnotator.js, but only inside the Highlighting block
        data = yaml.safe_load(RUNNING_EXAMPLE)
        data["goals"][0]["questions"][1]["metrics"][0]["pointcuts"][1]["anchor"] = "this.highlight(selection);"
        m = load_feedback_model(yaml.safe_dump(data))
        text = (project.platform / "src/annotator/TextAnnotator.js").read_text()
        assert "this.highlight(selection);" in text
        diags = validate_feedback_model(m, project.fm, project.index, project.platform)
        assert [d.code for d in diags] == ["unreachable-pointcut"]
        assert "DoubleClickEnactment" in diags[0].location

    def test_anchor_absent(self, project):
        data = yaml.safe_load(RUNNING_EXAMPLE)
        data["goals"][0]["questions"][0]["metrics"][0]["pointcuts"][0]["anchor"] = "noSuchCall();"
        diags = validate_feedback_model(load_feedback_model(yaml.safe_dump(data)), project.fm, project.index, project.platform)
        assert [d.code for d in diags] == ["unreachable-pointcut"]

    def test_ambiguous_anchor_is_a_warning(self, project):
        data = yaml.safe_load(RUNNING_EXAMPLE)
        data["goals"][0]["questions"][0]["metrics"][0]["pointcuts"][0]["anchor"] = "this."
        diags = validate_feedback_model(load_feedback_model(yaml.safe_dump(data)), project.fm, project.index, project.platform)
        assert diags and all(d.severity == "warning" for d in diags)
        assert {d.code for d in diags} == {"ambiguous-anchor"}

    def test_unscannable_file(self, project):
        path = project.platform / "src/commenting/Commenting.js"
        path.write_text(path.read_text() + "//PVSCL:ENDCOND\n")
        diags = validate_feedback_model(project.feedback, project.fm, project.index, project.platform)
        assert "unscannable-file" in {d.code for d in diags}
