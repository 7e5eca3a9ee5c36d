"""Execution environments: a deterministic simulated repository and a local shell."""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import shlex
import shutil
import signal
import subprocess
from collections.abc import Mapping
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

from shepherd.errors import EnvironmentTerminated, WorkspaceSetupFailed
from shepherd.model import (
    DEFAULT_BUDGET,
    ActionKind,
    Split,
    Step,
    Task,
    TestOutcome,
    classify_action,
    normalize_path,
    report_passes,
)

DEFAULT_ACTION_TIMEOUT_S = 60.0
DEFAULT_OBS_CAP = 65536

BUG_MARKER = "BUG_MARKER"
FIX_MARKER = "FIX_MARKER"
SIM_FAIL_TO_PASS = "sim::bug_fixed"
SIM_PASS_TO_PASS = "sim::tree_intact"


class TerminationReason(str, Enum):
    NONE = "none"
    SUBMITTED = "submitted"
    BUDGET_EXHAUSTED = "step_budget_exhausted"


@dataclass(frozen=True)
class EnvState:
    task_id: str
    workspace_root: str
    steps_taken: int = 0
    last_test_report: dict[str, TestOutcome] | None = None
    termination_reason: TerminationReason = TerminationReason.NONE

    @property
    def terminated(self) -> bool:
        return self.termination_reason != TerminationReason.NONE


class Environment(Protocol):
    budget: int

    def reset(self, task: Task) -> EnvState: ...

    def exec_step(self, state: EnvState, action_text: str) -> tuple[Step, EnvState]: ...

    def is_resolved(self, state: EnvState, task: Task) -> bool: ...


def cap_bytes(text: str, cap: int) -> str:
    data = text.encode("utf-8")
    if len(data) <= cap:
        return text
    return data[:cap].decode("utf-8", errors="ignore")


def _advance(state: EnvState, kind: ActionKind, report, budget: int) -> EnvState:
    taken = state.steps_taken + 1
    reason = TerminationReason.NONE
    if kind == ActionKind.SUBMIT:
        reason = TerminationReason.SUBMITTED
    elif taken >= budget:
        reason = TerminationReason.BUDGET_EXHAUSTED
    return replace(
        state,
        steps_taken=taken,
        last_test_report=report if report is not None else state.last_test_report,
        termination_reason=reason,
    )


def _check_open(state: EnvState, budget: int) -> None:
    if state.terminated:
        raise EnvironmentTerminated(f"{state.task_id}: episode already ended ({state.termination_reason.value})")
    if state.steps_taken >= budget:
        raise EnvironmentTerminated(f"{state.task_id}: step budget {budget} used up")


# --- simulated repository -------------------------------------------------


@dataclass(frozen=True)
class SimTask:
    seed: int
    file_tree: dict[str, str]
    bug_path: str
    fix_content: str
    decoy_paths: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "decoy_paths", tuple(self.decoy_paths))
        holders = [p for p, c in self.file_tree.items() if BUG_MARKER in c]
        if holders != [self.bug_path]:
            raise ValueError(f"exactly one file must hold {BUG_MARKER}, found {holders}")

    def to_json(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "file_tree": dict(sorted(self.file_tree.items())),
            "bug_path": self.bug_path,
            "fix_content": self.fix_content,
            "decoy_paths": list(self.decoy_paths),
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> SimTask:
        return cls(
            seed=int(obj["seed"]),
            file_tree=dict(obj["file_tree"]),
            bug_path=obj["bug_path"],
            fix_content=obj["fix_content"],
            decoy_paths=tuple(obj.get("decoy_paths", ())),
        )


_PACKAGES = ("core", "utils", "io", "parser", "net", "cli", "models", "storage", "auth", "render")
_MODULES = ("base", "helpers", "reader", "writer", "config", "cache", "loader", "format", "client", "types")
_VERBS = ("scale", "shift", "pad", "offset", "clip", "bump", "wrap", "tally")


def generate_sim_task(
    seed: int, n_files: int = 5, n_decoys: int = 2, split: Split = Split.TRAIN
) -> tuple[Task, SimTask]:
    """Deterministic toy repository with one planted bug.

    ``n_files`` regular modules (one holds the bug) plus ``n_decoys`` look-alike
    files that define a function of the same name but need no change.
    """
    if n_files < 1:
        raise ValueError("n_files must be >= 1")
    rng = random.Random(seed)
    pairs = [(p, m) for p in _PACKAGES for m in _MODULES]
    rng.shuffle(pairs)
    paths = [f"{p}/{m}.py" for p, m in pairs[:n_files]]
    bug_path = paths[rng.randrange(n_files)]
    func = f"{rng.choice(_VERBS)}_{rng.choice(_MODULES)}"
    k = rng.randint(1, 9)

    tree: dict[str, str] = {}
    for i, path in enumerate(paths):
        if path == bug_path:
            tree[path] = f"def {func}(x):\n    return x - {k}  # {BUG_MARKER}\n"
        else:
            tree[path] = f"def helper_{i}(x):\n    return x * {rng.randint(2, 9)}\n"
    decoys = []
    for j in range(n_decoys):
        dpath = f"legacy/{func}_v{j}.py"
        tree[dpath] = f"def {func}(x):\n    return x + {k}  # kept for compatibility\n"
        decoys.append(dpath)
    fix = f"def {func}(x):\n    return x + {k}  # {FIX_MARKER}\n"
    sim = SimTask(seed, dict(sorted(tree.items())), bug_path, fix, tuple(decoys))

    digest = hashlib.sha1(json.dumps(sim.to_json(), sort_keys=True).encode()).hexdigest()
    task = Task(
        task_id=f"sim-{seed:04d}",
        repo_ref=f"sim://{seed}",
        base_commit=digest,
        problem_statement=(
            f"`{func}` defined in {bug_path} returns the wrong value: it subtracts {k} "
            f"instead of adding it. The faulty line is tagged {BUG_MARKER}; the corrected "
            f"line must carry {FIX_MARKER}."
        ),
        fail_to_pass_tests=(SIM_FAIL_TO_PASS,),
        pass_to_pass_tests=(SIM_PASS_TO_PASS,),
        relevant_files=frozenset({bug_path}),
        split=split,
    )
    return task, sim


def sim_test_report(sim: SimTask, files: Mapping[str, str]) -> dict[str, TestOutcome]:
    bug = files.get(sim.bug_path, "")
    fixed = FIX_MARKER in bug and BUG_MARKER not in bug
    others = {p: c for p, c in files.items() if p != sim.bug_path}
    base = {p: c for p, c in sim.file_tree.items() if p != sim.bug_path}
    return {
        SIM_FAIL_TO_PASS: TestOutcome.PASS if fixed else TestOutcome.FAIL,
        SIM_PASS_TO_PASS: TestOutcome.PASS if others == base else TestOutcome.FAIL,
    }


def _format_report(report: Mapping[str, TestOutcome]) -> str:
    lines = [f"{t} {'PASSED' if o == TestOutcome.PASS else 'FAILED'}" for t, o in report.items()]
    n_fail = sum(o == TestOutcome.FAIL for o in report.values())
    lines.append(f"{len(report) - n_fail} passed, {n_fail} failed")
    return "\n".join(lines)


_EDIT_RE = re.compile(r"^edit\s+(\S+)\s+<<<[ \t]?(.*)$", re.DOTALL)


class SimEnvironment:
    """In-memory repository with a closed action grammar.

    ``read <path>``, ``ls [dir]``, ``edit <path> <<< <content>``, ``test``,
    ``submit``. Anything else fails with ``exec_success=False``.
    """

    def __init__(
        self,
        sim_tasks: Mapping[str, SimTask],
        budget: int = DEFAULT_BUDGET,
        obs_cap_bytes: int = DEFAULT_OBS_CAP,
    ):
        self.sim_tasks = sim_tasks
        self.budget = budget
        self.obs_cap_bytes = obs_cap_bytes
        self.files: dict[str, str] = {}
        self._sim: SimTask | None = None

    def reset(self, task: Task) -> EnvState:
        try:
            sim = self.sim_tasks[task.task_id]
        except KeyError:
            raise WorkspaceSetupFailed(f"no simulated repository for {task.task_id!r}") from None
        self._sim = sim
        self.files = dict(sim.file_tree)
        return EnvState(task.task_id, f"sim://{task.task_id}")

    def workspace_hash(self) -> str:
        h = hashlib.sha256()
        for path, content in sorted(self.files.items()):
            h.update(path.encode() + b"\x00" + content.encode() + b"\x00")
        return h.hexdigest()

    def materialize(self, root: str | Path) -> Path:
        root = Path(root)
        for path, content in sorted(self.files.items()):
            dest = root / path
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(content, encoding="utf-8")
        return root

    def _run(self, action: str) -> tuple[str, bool, dict[str, TestOutcome] | None]:
        assert self._sim is not None
        text = action.strip()
        head, _, rest = text.partition(" ")
        rest = rest.strip()
        if head == "read":
            path = normalize_path(rest)
            if path in self.files:
                return self.files[path], True, None
            return f"error: no such file: {rest}", False, None
        if head == "ls":
            prefix = normalize_path(rest)
            listed = [p for p in sorted(self.files) if not prefix or p.startswith(prefix + "/")]
            if prefix and not listed:
                return f"error: no such directory: {rest}", False, None
            return "\n".join(listed), True, None
        if head == "edit":
            m = _EDIT_RE.match(action.lstrip())
            path = normalize_path(m.group(1)) if m else ""
            if not m or not path:
                return "error: usage: edit <path> <<< <content>", False, None
            self.files[path] = m.group(2)
            return f"wrote {len(m.group(2).encode())} bytes to {path}", True, None
        if text in ("test", "submit"):
            report = sim_test_report(self._sim, self.files)
            ok = text == "submit" or all(o == TestOutcome.PASS for o in report.values())
            return _format_report(report), ok, report
        return f"error: unknown command: {head}", False, None

    def exec_step(self, state: EnvState, action_text: str) -> tuple[Step, EnvState]:
        _check_open(state, self.budget)
        obs, ok, report = self._run(action_text)
        step = Step.from_action(state.steps_taken, action_text, cap_bytes(obs, self.obs_cap_bytes), ok, report)
        return step, _advance(state, step.action_kind, step.test_report, self.budget)

    def is_resolved(self, state: EnvState, task: Task) -> bool:
        return report_passes(state.last_test_report, task)


def load_sim_tasks(directory: str | Path) -> dict[str, SimTask]:
    """Read ``<task_id>.json`` files written by ``save_sim_task``."""
    out = {}
    for path in sorted(Path(directory).glob("*.json")):
        out[path.stem] = SimTask.from_json(json.loads(path.read_text(encoding="utf-8")))
    return out


def save_sim_task(directory: str | Path, task_id: str, sim: SimTask) -> Path:
    path = Path(directory) / f"{task_id}.json"
    path.write_text(json.dumps(sim.to_json(), indent=2) + "\n", encoding="utf-8")
    return path


# --- local shell ----------------------------------------------------------

_PYTEST_SUMMARY = re.compile(r"^(PASSED|FAILED|ERROR)\s+(\S+)", re.MULTILINE)
_PYTEST_VERBOSE = re.compile(r"^(\S+::\S+)\s+(PASSED|FAILED|ERROR)\b", re.MULTILINE)


def parse_pytest_report(output: str) -> dict[str, TestOutcome]:
    report: dict[str, TestOutcome] = {}
    for status, test_id in _PYTEST_SUMMARY.findall(output):
        report[test_id] = TestOutcome.PASS if status == "PASSED" else TestOutcome.FAIL
    for test_id, status in _PYTEST_VERBOSE.findall(output):
        report.setdefault(test_id, TestOutcome.PASS if status == "PASSED" else TestOutcome.FAIL)
    return dict(sorted(report.items()))


class ShellEnvironment:
    """Runs actions with ``bash -c`` in a per-task copy of a snapshot directory.

    ``task.repo_ref`` names the snapshot directory. Inputs are trusted: the
    only confinement is a pre-check that write targets (edit arguments,
    redirections, ``tee``) resolve inside the workspace. Use a container for
    untrusted agents.
    """

    def __init__(
        self,
        workspace_root: str | Path,
        budget: int = DEFAULT_BUDGET,
        action_timeout_s: float = DEFAULT_ACTION_TIMEOUT_S,
        obs_cap_bytes: int = DEFAULT_OBS_CAP,
        test_command: str = "python3 -m pytest -rA {tests}",
    ):
        self.workspace_root = Path(workspace_root)
        self.budget = budget
        self.action_timeout_s = action_timeout_s
        self.obs_cap_bytes = obs_cap_bytes
        self.test_command = test_command
        self._task: Task | None = None
        self.workspace: Path | None = None

    def reset(self, task: Task) -> EnvState:
        src = Path(task.repo_ref)
        dest = self.workspace_root / task.task_id
        try:
            if not src.is_dir():
                raise WorkspaceSetupFailed(f"snapshot directory not found: {src}")
            if dest.exists():
                shutil.rmtree(dest)
            self.workspace_root.mkdir(parents=True, exist_ok=True)
            shutil.copytree(src, dest, symlinks=True)
            probe = dest / ".shepherd_write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise WorkspaceSetupFailed(f"cannot set up workspace {dest}: {exc}") from exc
        self._task = task
        self.workspace = dest
        return EnvState(task.task_id, str(dest))

    def _write_targets(self, action: str, kind: ActionKind) -> list[str]:
        try:
            toks = shlex.split(action.splitlines()[0] if action.strip() else "")
        except ValueError:
            toks = action.split()
        targets = []
        for i, tok in enumerate(toks):
            if tok in (">", ">>", "1>", "2>", "&>") and i + 1 < len(toks):
                targets.append(toks[i + 1])
            elif re.match(r"^\d*>>?[^>&]", tok):
                targets.append(re.sub(r"^\d*>>?", "", tok))
        if "tee" in toks:
            targets += [t for t in toks[toks.index("tee") + 1:] if not t.startswith("-")]
        if kind == ActionKind.EDIT:
            targets += [t for t in toks[1:] if "/" in t and not t.startswith("-")]
        return [t for t in targets if t != "/dev/null"]

    def _escapes(self, target: str) -> bool:
        assert self.workspace is not None
        root = os.path.realpath(self.workspace)
        full = os.path.realpath(os.path.join(root, target))
        return os.path.commonpath([root, full]) != root

    def _shell(self, command: str) -> tuple[str, bool]:
        proc = subprocess.Popen(
            ["bash", "-c", command],
            cwd=self.workspace,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            start_new_session=True,
        )
        try:
            out, _ = proc.communicate(timeout=self.action_timeout_s)
        except subprocess.TimeoutExpired:
            os.killpg(proc.pid, signal.SIGKILL)
            proc.communicate()
            return f"error: action timed out after {self.action_timeout_s:g}s", False
        return out.decode("utf-8", errors="replace"), proc.returncode == 0

    def exec_step(self, state: EnvState, action_text: str) -> tuple[Step, EnvState]:
        _check_open(state, self.budget)
        assert self._task is not None
        kind, _ = classify_action(action_text)
        report = None
        escaped = [t for t in self._write_targets(action_text, kind) if self._escapes(t)]
        if escaped:
            obs, ok = f"error: write target outside workspace: {escaped[0]}", False
        elif kind == ActionKind.SUBMIT:
            tests = [*self._task.fail_to_pass_tests, *self._task.pass_to_pass_tests]
            obs, _ = self._shell(self.test_command.format(tests=" ".join(shlex.quote(t) for t in tests)))
            parsed = parse_pytest_report(obs)
            report = {t: parsed.get(t, TestOutcome.FAIL) for t in sorted(tests)}
            ok = True
        else:
            obs, ok = self._shell(action_text)
            if kind == ActionKind.RUN_TESTS:
                report = parse_pytest_report(obs)
        step = Step.from_action(state.steps_taken, action_text, cap_bytes(obs, self.obs_cap_bytes), ok, report)
        return step, _advance(state, kind, report, self.budget)

    def is_resolved(self, state: EnvState, task: Task) -> bool:
        return report_passes(state.last_test_report, task)
