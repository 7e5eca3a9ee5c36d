import textwrap

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shepherd.environment import (
    BUG_MARKER,
    FIX_MARKER,
    SIM_FAIL_TO_PASS,
    SIM_PASS_TO_PASS,
    EnvState,
    ShellEnvironment,
    SimEnvironment,
    SimTask,
    TerminationReason,
    generate_sim_task,
    load_sim_tasks,
    parse_pytest_report,
    save_sim_task,
)
from shepherd.errors import EnvironmentTerminated, WorkspaceSetupFailed
from shepherd.model import ActionKind, Task, TestOutcome

P, F = TestOutcome.PASS, TestOutcome.FAIL


def sim_env(seed=1, budget=30, **kw):
    task, sim = generate_sim_task(seed, **kw)
    return task, sim, SimEnvironment({task.task_id: sim}, budget=budget)


def test_generate_is_deterministic():
    assert generate_sim_task(42) == generate_sim_task(42)
    assert generate_sim_task(42) != generate_sim_task(43)


def test_generated_task_shape():
    task, sim = generate_sim_task(7, n_files=4, n_decoys=3)
    assert task.relevant_files == {sim.bug_path}
    assert task.fail_to_pass_tests == (SIM_FAIL_TO_PASS,)
    assert task.pass_to_pass_tests == (SIM_PASS_TO_PASS,)
    assert [p for p, c in sim.file_tree.items() if BUG_MARKER in c] == [sim.bug_path]
    assert len(sim.file_tree) == 7 and len(sim.decoy_paths) == 3
    assert FIX_MARKER in sim.fix_content and BUG_MARKER not in sim.fix_content
    assert sim.bug_path in task.problem_statement


def test_no_decoys_means_single_target():
    task, sim = generate_sim_task(3, n_files=1, n_decoys=0)
    assert list(sim.file_tree) == [sim.bug_path] and sim.decoy_paths == ()
    with pytest.raises(ValueError):
        generate_sim_task(3, n_files=0)


def test_sim_task_needs_one_bug():
    with pytest.raises(ValueError):
        SimTask(0, {"a.py": "x", "b.py": "y"}, "a.py", "fix")


def test_reset_materializes_seeded_tree(tmp_path):
    task, sim, env = sim_env()
    state = env.reset(task)
    assert state == EnvState(task.task_id, f"sim://{task.task_id}")
    assert env.files == sim.file_tree
    root = env.materialize(tmp_path)
    assert (root / sim.bug_path).read_text() == sim.file_tree[sim.bug_path]


def test_reset_twice_identical():
    task, _, env = sim_env()
    env.reset(task)
    h1 = env.workspace_hash()
    st0 = env.reset(task)
    env.exec_step(st0, "edit x.py <<< junk")
    env.reset(task)
    assert env.workspace_hash() == h1


def test_reset_unknown_task():
    env = SimEnvironment({})
    with pytest.raises(WorkspaceSetupFailed):
        env.reset(Task("nope", "r", "c", "p", ("a",)))


def test_read_bug_file():
    task, sim, env = sim_env()
    step, state = env.exec_step(env.reset(task), f"read {sim.bug_path}")
    assert BUG_MARKER in step.observation_text and step.exec_success
    assert step.action_kind == ActionKind.READ and step.touched_paths == (sim.bug_path,)
    assert state.steps_taken == 1 and not state.terminated


def test_read_missing_and_unknown_commands():
    task, _, env = sim_env()
    state = env.reset(task)
    step, state = env.exec_step(state, "read nope.py")
    assert not step.exec_success
    step, state = env.exec_step(state, "rm -rf /")
    assert not step.exec_success and step.action_kind == ActionKind.OTHER


def test_ls_lists_tree():
    task, sim, env = sim_env()
    step, _ = env.exec_step(env.reset(task), "ls")
    assert step.observation_text.splitlines() == sorted(sim.file_tree)


def test_edit_fix_then_test_passes():
    task, sim, env = sim_env()
    state = env.reset(task)
    step, state = env.exec_step(state, f"edit {sim.bug_path} <<< {sim.fix_content}")
    assert step.exec_success and step.action_kind == ActionKind.EDIT
    assert env.files[sim.bug_path] == sim.fix_content
    step, state = env.exec_step(state, "test")
    assert step.test_report == {SIM_FAIL_TO_PASS: P, SIM_PASS_TO_PASS: P}
    assert step.exec_success
    step, state = env.exec_step(state, "submit")
    assert state.termination_reason == TerminationReason.SUBMITTED
    assert env.is_resolved(state, task)


def test_editing_decoy_breaks_tree_intact():
    task, sim, env = sim_env(n_decoys=2)
    state = env.reset(task)
    _, state = env.exec_step(state, f"edit {sim.decoy_paths[0]} <<< {sim.fix_content}")
    step, state = env.exec_step(state, "test")
    assert step.test_report[SIM_PASS_TO_PASS] == F
    assert step.test_report[SIM_FAIL_TO_PASS] == F
    assert not step.exec_success


def test_fix_plus_regression_not_resolved():
    task, sim, env = sim_env(n_decoys=1)
    state = env.reset(task)
    _, state = env.exec_step(state, f"edit {sim.bug_path} <<< {sim.fix_content}")
    _, state = env.exec_step(state, f"edit {sim.decoy_paths[0]} <<< x = 1\n")
    _, state = env.exec_step(state, "submit")
    assert state.last_test_report == {SIM_FAIL_TO_PASS: P, SIM_PASS_TO_PASS: F}
    assert not env.is_resolved(state, task)


def test_not_resolved_without_any_test():
    task, _, env = sim_env(budget=2)
    state = env.reset(task)
    _, state = env.exec_step(state, "ls")
    _, state = env.exec_step(state, "ls")
    assert state.terminated and state.last_test_report is None
    assert not env.is_resolved(state, task)


def test_budget_exhaustion_at_30():
    task, _, env = sim_env()
    state = env.reset(task)
    for i in range(30):
        assert not state.terminated
        _, state = env.exec_step(state, "ls")
    assert state.steps_taken == 30
    assert state.termination_reason == TerminationReason.BUDGET_EXHAUSTED
    h = env.workspace_hash()
    with pytest.raises(EnvironmentTerminated):
        env.exec_step(state, "edit a.py <<< x")
    assert env.workspace_hash() == h


def test_no_step_after_submit():
    task, sim, env = sim_env()
    _, state = env.exec_step(env.reset(task), "submit")
    h = env.workspace_hash()
    with pytest.raises(EnvironmentTerminated):
        env.exec_step(state, f"edit {sim.bug_path} <<< {sim.fix_content}")
    assert env.workspace_hash() == h


ACTIONS = st.one_of(
    st.sampled_from(["ls", "test", "read core/base.py", "ls core", "cat x"]),
    st.builds(lambda p, c: f"edit {p} <<< {c}", st.sampled_from(["core/base.py", "a.py", "legacy/x.py"]), st.text(max_size=30)),
)


@settings(max_examples=50)
@given(st.integers(0, 500), st.lists(ACTIONS, min_size=1, max_size=12))
def test_sim_is_deterministic_state_machine(seed, actions):
    def run():
        task, _, env = sim_env(seed)
        state = env.reset(task)
        out = []
        for a in actions:
            if state.terminated:
                break
            step, state = env.exec_step(state, a)
            out.append(step.to_json())
        return out, env.workspace_hash()

    assert run() == run()


@settings(max_examples=50)
@given(st.text(max_size=400), st.integers(1, 64))
def test_observation_respects_cap(content, cap):
    task, sim = generate_sim_task(5)
    env = SimEnvironment({task.task_id: sim}, obs_cap_bytes=cap)
    state = env.reset(task)
    _, state = env.exec_step(state, f"edit big.txt <<< {content}")
    for action in ("read big.txt", "ls", "test", "bogus " + content):
        step, state = env.exec_step(state, action)
        assert len(step.observation_text.encode()) <= cap


def test_sim_task_files_round_trip(tmp_path):
    task, sim = generate_sim_task(9)
    save_sim_task(tmp_path, task.task_id, sim)
    assert load_sim_tasks(tmp_path) == {task.task_id: sim}


def test_parse_pytest_report():
    out = textwrap.dedent("""\
        tests/test_a.py::test_one PASSED
        tests/test_a.py::test_two FAILED
        ==== short test summary info ====
        PASSED tests/test_a.py::test_one
        FAILED tests/test_a.py::test_two - assert 0
        ERROR tests/test_b.py::test_three
        """)
    assert parse_pytest_report(out) == {
        "tests/test_a.py::test_one": P,
        "tests/test_a.py::test_two": F,
        "tests/test_b.py::test_three": F,
    }


@pytest.fixture
def snapshot(tmp_path):
    repo = tmp_path / "snap"
    (repo / "tests").mkdir(parents=True)
    (repo / "calc.py").write_text("def add(a, b):\n    return a - b\n")
    (repo / "tests" / "test_calc.py").write_text(
        "from calc import add\n\n\ndef test_add():\n    assert add(2, 3) == 5\n\n\ndef test_zero():\n    assert add(0, 0) == 0\n"
    )
    return Task(
        "calc-1", str(repo), "HEAD", "add() in calc.py subtracts",
        ("tests/test_calc.py::test_add",), ("tests/test_calc.py::test_zero",),
        frozenset({"calc.py"}),
    )


def shell(tmp_path, **kw):
    return ShellEnvironment(tmp_path / "ws", test_command="python3 -m pytest -rA -p no:cacheprovider {tests}", **kw)


def test_shell_episode_resolves(tmp_path, snapshot):
    env = shell(tmp_path)
    state = env.reset(snapshot)
    step, state = env.exec_step(state, "cat calc.py")
    assert step.exec_success and "a - b" in step.observation_text
    step, state = env.exec_step(state, "python3 -m pytest -rA -p no:cacheprovider tests")
    assert step.action_kind == ActionKind.RUN_TESTS and not step.exec_success
    assert step.test_report["tests/test_calc.py::test_add"] == F
    step, state = env.exec_step(state, "sed -i 's/a - b/a + b/' calc.py")
    assert step.exec_success and step.action_kind == ActionKind.EDIT
    step, state = env.exec_step(state, "submit")
    assert state.termination_reason == TerminationReason.SUBMITTED
    assert env.is_resolved(state, snapshot)
    # the snapshot itself is untouched
    assert "a - b" in (tmp_path / "snap" / "calc.py").read_text()


def test_shell_submit_unresolved(tmp_path, snapshot):
    env = shell(tmp_path)
    _, state = env.exec_step(env.reset(snapshot), "submit")
    assert state.last_test_report == {"tests/test_calc.py::test_add": F, "tests/test_calc.py::test_zero": P}
    assert not env.is_resolved(state, snapshot)


@pytest.mark.parametrize(
    "action",
    ["echo hi > ../escaped.txt", "echo hi >/tmp/shepherd_escape.txt", "echo hi | tee ../../x.txt", "sed -i s/a/b/ ../snap/calc.py"],
)
def test_shell_confines_writes(tmp_path, snapshot, action):
    env = shell(tmp_path)
    step, _ = env.exec_step(env.reset(snapshot), action)
    assert not step.exec_success
    assert "outside workspace" in step.observation_text
    assert not (tmp_path / "ws" / "escaped.txt").exists() and not (tmp_path / "escaped.txt").exists()
    assert "a - b" in (tmp_path / "snap" / "calc.py").read_text()


def test_shell_timeout_recorded(tmp_path, snapshot):
    env = shell(tmp_path, action_timeout_s=0.5)
    step, state = env.exec_step(env.reset(snapshot), "sleep 5")
    assert not step.exec_success and "timed out" in step.observation_text
    assert state.steps_taken == 1


def test_shell_observation_cap(tmp_path, snapshot):
    env = shell(tmp_path, obs_cap_bytes=100)
    step, _ = env.exec_step(env.reset(snapshot), "yes | head -c 5000")
    assert len(step.observation_text.encode()) <= 100


def test_shell_setup_failures(tmp_path, snapshot):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(WorkspaceSetupFailed):
        ShellEnvironment(blocker / "ws").reset(snapshot)
    with pytest.raises(WorkspaceSetupFailed):
        shell(tmp_path).reset(Task("x", str(tmp_path / "missing"), "c", "p", ("a",)))
