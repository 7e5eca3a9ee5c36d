import pytest

from shepherd.model import Split, Step, Task, Trajectory

_CRITERIA: dict[int, tuple[str, str]] = {}


TASK = Task(
    task_id="t1",
    repo_ref="example/repo",
    base_commit="abc123",
    problem_statement="read_config in src/utils/io.py drops the last line.",
    fail_to_pass_tests=("tests/test_io.py::test_read",),
    pass_to_pass_tests=("tests/test_io.py::test_write",),
    relevant_files=frozenset({"src/utils/io.py"}),
    split=Split.TRAIN,
)


@pytest.fixture
def task() -> Task:
    return TASK


def make_step(i, action, obs="", ok=True, report=None) -> Step:
    return Step.from_action(i, action, obs, ok, report)


def make_traj(task_id, actions, resolved=False, cost=0.0) -> Trajectory:
    steps = []
    for i, a in enumerate(actions):
        if isinstance(a, tuple):
            steps.append(make_step(i, *a))
        else:
            steps.append(make_step(i, a))
    return Trajectory(task_id, tuple(steps), resolved, cost)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when == "teardown":
        return
    number, title = marker.args
    failed = call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception)
    if failed or _CRITERIA.get(number, ("PASS",))[0] == "FAIL":
        _CRITERIA[number] = ("FAIL", title)
    elif call.when == "call":
        _CRITERIA[number] = ("PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")
