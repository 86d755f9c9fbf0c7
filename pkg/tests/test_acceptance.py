"""The seven acceptance criteria, one test each, at their stated tolerances.

Every test carries the ``acceptance`` marker; the terminal summary prints one
PASS/FAIL line per criterion (see ``conftest.py``). Run just these with
``pytest -m acceptance``.
"""

from __future__ import annotations

import hashlib
import http.client
import os
import random
import shutil
import signal
import socket
import subprocess
import sys
import threading
import time
from pathlib import Path

import pytest
import yaml

from featrack.analysis import load_pull_result
from featrack.annotation import preprocess
from featrack.collector import FeedbackEvent, HttpSink, scan_log
from featrack.errors import TransformError
from featrack.feedbackmodel import feedback_model_from_dict, has_errors, validate_feedback_model
from featrack.splmodels import (
    feature_model_from_dict,
    feature_model_to_dict,
    file_index_from_dict,
    make_configuration,
)
from featrack.transform import HitTemplate, derive_variant, feedback_transform, parse_hit

from .conftest import FIXTURES
from .generators import FEATURES6, all_selections, oracle_preprocess, random_source

pytestmark = pytest.mark.acceptance

METRICS = ("QueryGoogleScholarHappened", "DoubleClickEnactment", "RightClickEnactment")
TPL = HitTemplate()


def featrack(*argv, cwd):
    proc = subprocess.run(
        [sys.executable, "-m", "featrack", *argv], cwd=cwd, capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0, f"featrack {' '.join(argv)} exited {proc.returncode}: {proc.stderr}"
    return proc.stdout


def tree_digest(root: Path) -> dict[str, str]:
    return {
        p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def count_hit_lines(root: Path) -> int:
    return sum(
        1
        for p in root.rglob("*")
        if p.is_file() and p.suffix == ".js"
        for line in p.read_text().splitlines()
        if parse_hit(line, TPL)
    )


def structural_diff(a, b, path=()):
    """Paths at which two YAML-shaped trees differ."""
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for key in sorted(set(a) | set(b), key=str):
            if key not in a or key not in b:
                out.append(path + (key,))
            else:
                out.extend(structural_diff(a[key], b[key], path + (key,)))
        return out
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            return [path]
        return [d for i, (x, y) in enumerate(zip(a, b)) for d in structural_diff(x, y, path + (i,))]
    return [] if a == b else [path]


def _resolve(tree, path):
    for key in path:
        tree = tree[key]
    return tree


# -- 1 -------------------------------------------------------------------------


def test_criterion_1_running_example_hit_counts(project, tmp_path):
    start = time.perf_counter()
    counts = {}
    for variant in ("V1", "V2", "V3"):
        d = derive_variant(
            project.platform, project.configs[variant], project.feedback, TPL, tmp_path / variant, project.index
        )
        counts[variant] = count_hit_lines(d.out_dir)
        assert "PVSCL" not in "".join(p.read_text() for p in d.out_dir.rglob("*.js"))
    elapsed = time.perf_counter() - start
    assert counts == {"V1": 4, "V2": 4, "V3": 0}
    assert elapsed < 5.0


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_preprocess_matches_oracle_for_all_64_configurations():
    sources = {p.name: p.read_text() for p in sorted((FIXTURES / "nested6").glob("*.js"))}
    assert len(sources) == 3
    start = time.perf_counter()
    checked = 0
    for selection in all_selections(FEATURES6):
        for name, src in sources.items():
            got = preprocess(src, selection).splitlines()
            want = oracle_preprocess(src, selection).splitlines()
            assert got == want, f"{name} under {selection}"
            checked += 1
    elapsed = time.perf_counter() - start
    assert checked == 64 * 3
    assert elapsed < 30.0


# -- 3, 4 and 5 ---------------------------------------------------------------


def _round_trip(project, tmp_path):
    root = project.root
    fb = "model/myFirstfeedback.yaml"
    for v in ("V1", "V2", "V3"):
        featrack("derive", "--config", f"configs/{v}.yaml", "--feedback", fb, "--out", f"variants/{v}", cwd=root)
    steps = [
        {"variant": v, "metric": m, "count": n}
        for v, counts in {"V1": (7, 4, 1), "V2": (5, 0, 2)}.items()
        for m, n in zip(METRICS, counts)
    ]
    scenario = tmp_path / "scenario.yaml"
    scenario.write_text(yaml.safe_dump({"seed": 2, "steps": steps}))
    featrack("simulate", "--scenario", str(scenario), "--variants", "variants", "--log", "feedback.log", cwd=root)
    out = root / "model" / "featureModel.feedback.yaml"
    featrack("pull", "--model", "model/usage-model.yaml", "--out", str(out), cwd=root)
    return out


def test_criterion_3_end_to_end_count_round_trip(project, tmp_path):
    start = time.perf_counter()
    out = _round_trip(project, tmp_path)
    elapsed = time.perf_counter() - start
    node = load_pull_result(out).model.feature("Commenting")
    assert [node.attribute(f"feedback.{m}").value for m in METRICS] == ["12", "4", "3"]
    assert [node.attribute(f"feedback.{m}.Highlighting").value for m in METRICS] == ["7", "4", "1"]
    assert elapsed < 10.0


def test_criterion_4_derivation_is_deterministic(project, tmp_path):
    for variant in ("V1", "V2", "V3"):
        cfg = project.configs[variant]
        a = derive_variant(project.platform, cfg, project.feedback, TPL, tmp_path / "a" / variant, project.index)
        b = derive_variant(project.platform, cfg, project.feedback, TPL, tmp_path / "b" / variant, project.index)
        assert tree_digest(a.out_dir) == tree_digest(b.out_dir)


def test_criterion_5_clone_fidelity(project, tmp_path):
    out = _round_trip(project, tmp_path)
    original = feature_model_to_dict(project.usage_fm)
    clone = feature_model_to_dict(load_pull_result(out).model)
    diffs = structural_diff(original, clone)
    assert diffs, "the pull resolved nothing"
    for path in diffs:
        assert path[-1] == "value", path
        attribute = _resolve(original, path[:-1])
        assert attribute["name"].startswith("feedback."), path
    # the pull metadata is the only extra top-level section of the written clone
    written = yaml.safe_load(out.read_text())
    assert set(written) - set(original) == {"pull"}


# -- 6 -------------------------------------------------------------------------


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _start_collector(port: int, log_path: Path) -> subprocess.Popen:
    proc = subprocess.Popen(
        [sys.executable, "-m", "featrack", "serve", "--addr", f"127.0.0.1:{port}", "--log", str(log_path)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        env={**os.environ, "FEATRACK_LOG_LEVEL": "ERROR"},
    )
    deadline = time.monotonic() + 20
    while time.monotonic() < deadline:
        try:
            conn = http.client.HTTPConnection("127.0.0.1", port, timeout=1)
            conn.request("GET", "/health")
            if conn.getresponse().status == 200:
                conn.close()
                return proc
        except OSError:
            time.sleep(0.05)
    proc.kill()
    raise RuntimeError("collector did not come up")


def _line_count(path: Path) -> int:
    try:
        with open(path, "rb") as fh:
            return fh.read().count(b"\n")
    except FileNotFoundError:
        return 0


def test_criterion_6_collector_durability_under_concurrency(tmp_path):
    emitters, per_emitter = 8, 1250
    port = _free_port()
    log_path = tmp_path / "feedback.log"
    server = _start_collector(port, log_path)
    errors: list[BaseException] = []

    def emit(k: int) -> None:
        sink = HttpSink(f"127.0.0.1:{port}", retries=400, backoff=0.02)
        try:
            for i in range(per_emitter):
                sink.send(FeedbackEvent("Commenting", METRICS[i % 3], f"V{k % 3 + 1}", client=f"e{k}", id=f"e{k}:{i}"))
        except BaseException as exc:  # surfaced in the main thread
            errors.append(exc)
        finally:
            sink.close()

    threads = [threading.Thread(target=emit, args=(k,)) for k in range(emitters)]
    try:
        for t in threads:
            t.start()
        # kill hard once a good share of the events is in, then restart on the same port
        deadline = time.monotonic() + 120
        while _line_count(log_path) < 3000 and time.monotonic() < deadline:
            time.sleep(0.01)
        killed_at = _line_count(log_path)
        server.send_signal(signal.SIGKILL)
        server.wait()
        server = _start_collector(port, log_path)
        for t in threads:
            t.join(timeout=300)
    finally:
        server.send_signal(signal.SIGTERM)
        try:
            server.wait(timeout=10)
        except subprocess.TimeoutExpired:
            server.kill()

    assert not errors, errors[:3]
    assert 0 < killed_at < emitters * per_emitter, "the restart did not happen mid-run"
    scan = scan_log(log_path)
    assert scan.corrupt_lines == [] and not scan.partial_tail
    assert len(scan.events) == emitters * per_emitter
    assert len({e.id for e in scan.events}) == emitters * per_emitter


# -- 7 -------------------------------------------------------------------------

ANCHORS = ["render();", "save(state);", "notify(user);", "log('x');", "window.open(url);", "missing();"]


def _random_pair(rng: random.Random, root: Path):
    features = FEATURES6[: rng.randint(3, 6)]
    fm = feature_model_from_dict(
        {"root": {"name": "Root", "children": [{"name": f, "kind": "optional"} for f in features]}}
    )
    platform = root / "platform"
    files = []
    for k in range(rng.randint(1, 3)):
        rel = f"src/m{k}.js"
        (platform / rel).parent.mkdir(parents=True, exist_ok=True)
        (platform / rel).write_text(random_source(rng, features, max_depth=3, n_items=rng.randint(4, 14)))
        files.append(rel)
    index = file_index_from_dict({"files": [{"file": Path(f).name, "path": f} for f in files]}, platform)
    goals = []
    for g in range(rng.randint(1, 2)):
        target = rng.choice(features)
        if rng.random() < 0.3:
            target = f"{target} AND {rng.choice(features)}"
        context = rng.choice(["ALL", rng.choice(features), f"{rng.choice(features)} OR {rng.choice(features)}"])
        metrics = []
        for m in range(rng.randint(1, 2)):
            pointcuts = []
            for rel in rng.sample(files, rng.randint(1, min(2, len(files)))):
                # mostly anchors taken from the file itself so that a fair share of models validate
                own = [line.strip() for line in (platform / rel).read_text().splitlines() if "PVSCL" not in line]
                anchor = rng.choice(own) if rng.random() < 0.85 else rng.choice(ANCHORS)
                pointcuts.append({"fileName": Path(rel).name, "path": rel, "anchor": anchor})
            metrics.append({"name": f"G{g}M{m}", "pointcuts": pointcuts})
        goals.append(
            {"name": f"G{g}", "target": target, "context": context, "questions": [{"id": "Q", "metrics": metrics}]}
        )
    return features, fm, index, platform, feedback_model_from_dict({"goals": goals})


def test_criterion_7_validation_soundness(tmp_path):
    rng = random.Random(7)
    clean = rejected = 0
    for trial in range(100):
        root = tmp_path / f"pair{trial}"
        features, fm, index, platform, model = _random_pair(rng, root)
        if has_errors(validate_feedback_model(model, fm, index, platform)):
            rejected += 1
            continue
        clean += 1
        for selection in all_selections(features):
            cfg = make_configuration("T", [f for f, on in selection.items() if on], [], fm)
            try:
                feedback_transform(platform, model, cfg, TPL, index, dest=root / "scratch")
            except TransformError as exc:
                assert "anchor-not-found" not in {p.kind for p in exc.problems}, exc
            finally:
                shutil.rmtree(root / "scratch", ignore_errors=True)
        cfg = make_configuration("D", [f for f in features if rng.random() < 0.6], [], fm)
        try:
            derive_variant(platform, cfg, model, TPL, root / "out", index, allow_multi_anchor=True)
        except TransformError as exc:
            pytest.fail(f"pair {trial}: {exc}")
    # both populations must be present for the check to mean something
    assert clean >= 30 and rejected >= 10, (clean, rejected)
