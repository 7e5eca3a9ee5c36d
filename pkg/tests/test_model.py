import json
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_step, make_traj
from shepherd.errors import EmptyTrajectory, InvalidTask, InvalidTrajectory, MalformedRecord, TaskMismatch
from shepherd.model import (
    REFERENCE_CORPUS,
    ActionKind,
    Task,
    TestOutcome,
    classify_action,
    dump_tasks,
    normalize_path,
    parse_tasks,
    parse_trajectory,
    split_counts,
    validate_trajectory,
)


@pytest.mark.parametrize(
    "action, kind, paths",
    [
        ("cat src/utils/io.py", ActionKind.READ, ["src/utils/io.py"]),
        ("pytest tests/test_io.py::test_read", ActionKind.RUN_TESTS, ["tests/test_io.py"]),
        ("echo done", ActionKind.OTHER, []),
        ("grep -rn foo src/", ActionKind.READ, ["src"]),
        ("ls", ActionKind.READ, []),
        ("head -n 20 ./setup.py", ActionKind.READ, ["setup.py"]),
        ("sed -i 's/a/b/' tests/test_x.py", ActionKind.EDIT, ["s/a/b", "tests/test_x.py"]),
        ("sed -n '1,5p' a.py", ActionKind.OTHER, ["a.py"]),
        ("python -m pytest -x", ActionKind.RUN_TESTS, []),
        ("python tests/test_api.py", ActionKind.RUN_TESTS, ["tests/test_api.py"]),
        ("python setup.py build", ActionKind.OTHER, ["setup.py"]),
        ("./scripts/run_tests.sh", ActionKind.RUN_TESTS, ["scripts/run_tests.sh"]),
        ("tox -e py310", ActionKind.RUN_TESTS, []),
        ("submit", ActionKind.SUBMIT, []),
        ("read core/base.py", ActionKind.READ, ["core/base.py"]),
        ("edit core/base.py <<< x = 1/2\n", ActionKind.EDIT, ["core/base.py"]),
        ("test", ActionKind.RUN_TESTS, []),
        ("cat /abs/../x/y.py", ActionKind.READ, ["x/y.py"]),
    ],
)
def test_classify_rule_table(action, kind, paths):
    assert classify_action(action) == (kind, paths)


def test_unified_diff_is_edit_with_header_paths():
    diff = "--- a/src/m.py\n+++ b/src/m.py\n@@ -1 +1 @@\n-x = 1\n+x = 2\n"
    assert classify_action(diff) == (ActionKind.EDIT, ["src/m.py"])


def test_classify_is_stable_across_processes():
    actions = ["cat src/utils/io.py", "pytest tests/test_io.py::test_read", "sed -i s/x/y/ a.py", "echo hi"]
    code = (
        "import json,sys;from shepherd.model import classify_action;"
        "print(json.dumps([[k.value,p] for k,p in map(classify_action, json.loads(sys.argv[1]))]))"
    )
    out = subprocess.run([sys.executable, "-c", code, json.dumps(actions)], capture_output=True, text=True, check=True)
    here = [[k.value, p] for k, p in map(classify_action, actions)]
    assert json.loads(out.stdout) == here


@given(st.text())
def test_normalize_path_idempotent(p):
    once = normalize_path(p)
    assert normalize_path(once) == once


@given(st.text(alphabet="ab/.-_ ", max_size=30))
def test_normalized_paths_have_no_dot_segments(p):
    n = normalize_path(p)
    assert not n.startswith("/")
    assert all(seg not in (".", "..") for seg in n.split("/")) if n else True


def test_task_invariants():
    with pytest.raises(InvalidTask):
        Task("x", "r", "c", "p", fail_to_pass_tests=())
    with pytest.raises(InvalidTask):
        Task("x", "r", "c", "p", ("t",), relevant_files=frozenset({"/abs/path.py"}))
    with pytest.raises(InvalidTask):
        Task("x", "r", "c", "p", ("t",), relevant_files=frozenset({"a/../b.py"}))


def test_task_file_round_trip(task):
    text = dump_tasks([task])
    assert parse_tasks(text) == [task]
    assert json.loads(text)["split"] == "train"


def test_duplicate_task_ids_rejected(task):
    with pytest.raises(InvalidTask):
        parse_tasks(dump_tasks([task, task]))


def test_reference_corpus_split_is_consistent(task):
    assert REFERENCE_CORPUS["train"] + REFERENCE_CORPUS["eval"] == REFERENCE_CORPUS["total"] == 2294
    assert split_counts([task]) == {"train": 1, "eval": 0}


def _stream(task_id="t1", resolved=False, steps=()):
    lines = [json.dumps({"kind": "header", "task_id": task_id, "resolved": resolved, "token_cost_usd": 0.01})]
    for i, (action, report) in enumerate(steps):
        lines.append(
            json.dumps(
                {"kind": "step", "index": i, "action": action, "observation": "ok", "exec_success": True, "test_report": report}
            )
        )
    return "\n".join(lines) + "\n"


GOOD_STEPS = [
    ("cat src/utils/io.py", None),
    ("sed -i 's/x/y/' src/utils/io.py", None),
    ("submit", {"tests/test_io.py::test_read": "pass", "tests/test_io.py::test_write": "pass"}),
]


def test_parse_three_steps(task):
    traj = parse_trajectory(_stream(steps=GOOD_STEPS, resolved=True).encode(), task)
    assert [s.index for s in traj.steps] == [0, 1, 2]
    assert [s.action_kind for s in traj.steps] == [ActionKind.READ, ActionKind.EDIT, ActionKind.SUBMIT]
    assert traj.steps[0].touched_paths == ("src/utils/io.py",)
    assert traj.resolved and traj.token_cost_usd == 0.01


def test_parse_reports_bad_line_number(task):
    lines = _stream(steps=GOOD_STEPS).splitlines()
    lines[1] = "{not json"
    with pytest.raises(MalformedRecord) as exc:
        parse_trajectory("\n".join(lines), task)
    assert exc.value.line == 2


def test_parse_rejects_report_on_read(task):
    steps = [("cat foo.py", {"tests/test_io.py::test_read": "fail"}), ("submit", None)]
    with pytest.raises(InvalidTrajectory) as exc:
        parse_trajectory(_stream(steps=steps), task)
    assert any("test_report present on read" in v for v in exc.value.violations)


def test_parse_errors(task):
    with pytest.raises(TaskMismatch):
        parse_trajectory(_stream(task_id="other", steps=GOOD_STEPS), task)
    with pytest.raises(EmptyTrajectory):
        parse_trajectory(_stream(steps=()), task)
    with pytest.raises(MalformedRecord):
        parse_trajectory('{"kind":"step"}\n', task)


def test_parse_reindexes_in_line_order(task):
    text = _stream(steps=GOOD_STEPS).replace('"index": 1', '"index": 7')
    traj = parse_trajectory(text, task)
    assert [s.index for s in traj.steps] == [0, 1, 2]


def test_serialization_round_trip(task):
    text = _stream(steps=GOOD_STEPS, resolved=True)
    traj = parse_trajectory(text, task)
    assert [json.loads(x) for x in traj.to_jsonl().splitlines()] == [json.loads(x) for x in text.splitlines()]
    assert parse_trajectory(traj.to_jsonl(), task) == traj


PASSING = {"tests/test_io.py::test_read": "pass", "tests/test_io.py::test_write": "pass"}


def test_validate_well_formed(task):
    traj = make_traj("t1", ["cat src/utils/io.py", ("submit", "", True, PASSING)], resolved=True)
    assert validate_trajectory(traj, task) == []


def test_validate_resolved_consistency(task):
    report = {"tests/test_io.py::test_read": "fail", "tests/test_io.py::test_write": "pass"}
    traj = make_traj("t1", ["cat a.py", ("submit", "", True, report)], resolved=True)
    violations = validate_trajectory(traj, task)
    assert len(violations) == 1 and "resolved-consistency" in violations[0]


def test_validate_contiguity(task):
    steps = (make_step(0, "ls"), make_step(2, "ls"), make_step(3, "submit", report={}))
    traj = make_traj("t1", ["ls"])
    traj = type(traj)("t1", steps, False)
    violations = validate_trajectory(traj, task)
    assert len(violations) == 1
    assert violations[0].startswith("step 1:") and "contiguity" in violations[0]


def test_validate_termination_rule(task):
    traj = make_traj("t1", ["ls", "ls"])
    assert any("termination" in v for v in validate_trajectory(traj, task))
    assert validate_trajectory(traj, task, budget=2) == []


def test_test_outcome_values():
    assert make_step(0, "pytest", report={"a": "pass"}).test_report == {"a": TestOutcome.PASS}
