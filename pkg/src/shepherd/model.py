"""Task and trajectory data model, trajectory ingestion, action classification."""

from __future__ import annotations

import json
import posixpath
import re
import shlex
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Any

from shepherd.errors import (
    EmptyTrajectory,
    InvalidTask,
    InvalidTrajectory,
    MalformedRecord,
    TaskMismatch,
)

DEFAULT_BUDGET = 30

# Benchmark bookkeeping: issue-resolution corpus size and the held-out subset.
REFERENCE_CORPUS = {"total": 2294, "eval": 500, "train": 1794}


class ActionKind(str, Enum):
    READ = "read"
    EDIT = "edit"
    RUN_TESTS = "run_tests"
    SUBMIT = "submit"
    OTHER = "other"


class TestOutcome(str, Enum):
    __test__ = False  # keep pytest from collecting this

    PASS = "pass"
    FAIL = "fail"


class Split(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


TestReport = Mapping[str, TestOutcome]

# Action classification rule table. Edit is checked first so that a mutating
# command touching a test file is an Edit, not a test run.
READ_COMMANDS = frozenset({"cat", "less", "head", "tail", "grep", "find", "ls", "open", "read"})
EDIT_COMMANDS = frozenset({"patch", "apply_patch", "str_replace", "write_file", "edit"})
TEST_COMMANDS = frozenset({"pytest", "tox", "unittest", "test"})
INTERPRETERS = frozenset({"python", "python3", "bash", "sh"})
SOURCE_SUFFIXES = (
    ".py", ".pyi", ".pyx", ".c", ".h", ".cc", ".cpp", ".hpp", ".js", ".ts", ".java",
    ".go", ".rs", ".rb", ".sh", ".txt", ".md", ".rst", ".cfg", ".ini", ".toml",
    ".json", ".yaml", ".yml", ".html", ".css", ".in",
)

_QUOTES = "'\"`"
_REDIRECT = re.compile(r"^\d*[<>]+&?")
_DIFF_HEADER = re.compile(r"^(?:\+\+\+|---) (?:[ab]/)?(\S+)", re.MULTILINE)


def _normalize_once(path: str) -> str:
    p = path
    prev = None
    while p != prev:
        prev = p
        p = p.strip().strip(_QUOTES)
    p = p.split("::", 1)[0]
    if not p:
        return ""
    p = posixpath.normpath(p).lstrip("/")
    parts = [seg for seg in p.split("/") if seg not in ("", ".")]
    while parts and parts[0] == "..":
        parts.pop(0)
    return "/".join(parts)


def normalize_path(path: str) -> str:
    """Normalize to a repo-relative path: no leading slash, no ``.``/``..`` segments.

    Idempotent. Returns ``""`` for inputs that reduce to nothing.
    """
    p = path
    for _ in range(16):
        nxt = _normalize_once(p)
        if nxt == p:
            break
        p = nxt
    return p


def is_normalized(path: str) -> bool:
    return bool(path) and normalize_path(path) == path


def _tokens(line: str) -> list[str]:
    try:
        return shlex.split(line, posix=True)
    except ValueError:
        return line.split()


def _looks_like_path(tok: str) -> bool:
    if not tok or tok.startswith("-") or "://" in tok:
        return False
    return "/" in tok or tok.split("::", 1)[0].endswith(SOURCE_SUFFIXES)


def _is_diff(text: str) -> bool:
    return (
        re.search(r"^--- ", text, re.MULTILINE) is not None
        and re.search(r"^\+\+\+ ", text, re.MULTILINE) is not None
    ) or text.lstrip().startswith("diff --git")


def extract_paths(action_text: str) -> list[str]:
    """Candidate repo paths referenced by an action, normalized, first-seen order."""
    raw: list[str] = []
    if _is_diff(action_text):
        raw = [m.group(1) for m in _DIFF_HEADER.finditer(action_text)]
    else:
        first = action_text.strip().splitlines()[0] if action_text.strip() else ""
        for tok in _tokens(first):
            if tok.startswith("<<"):
                break
            tok = _REDIRECT.sub("", tok)
            if _looks_like_path(tok):
                raw.append(tok)
    out: list[str] = []
    for tok in raw:
        if tok == "/dev/null":
            continue
        p = normalize_path(tok)
        if p and p not in out:
            out.append(p)
    return out


def _classify_kind(action_text: str) -> ActionKind:
    text = action_text.strip()
    if _is_diff(text):
        return ActionKind.EDIT
    toks = _tokens(text.splitlines()[0])
    if not toks:
        return ActionKind.OTHER
    head = toks[0]
    base = posixpath.basename(head)
    if head in EDIT_COMMANDS:
        return ActionKind.EDIT
    if head == "sed" and any(t == "--in-place" or t.startswith("-i") for t in toks[1:]):
        return ActionKind.EDIT
    if head in READ_COMMANDS:
        return ActionKind.READ
    if head in TEST_COMMANDS:
        return ActionKind.RUN_TESTS
    if head in INTERPRETERS:
        args = toks[1:]
        if len(args) >= 2 and args[0] == "-m" and args[1] in ("pytest", "unittest"):
            return ActionKind.RUN_TESTS
        target = next((a for a in args if not a.startswith("-")), "")
        if "test" in posixpath.basename(target):
            return ActionKind.RUN_TESTS
    elif "/" in head and "test" in base:
        return ActionKind.RUN_TESTS
    if head == "submit":
        return ActionKind.SUBMIT
    return ActionKind.OTHER


def classify_action(action_text: str) -> tuple[ActionKind, list[str]]:
    """Classify a raw agent action and pull out the paths it refers to.

    >>> classify_action("cat src/utils/io.py")
    (<ActionKind.READ: 'read'>, ['src/utils/io.py'])
    """
    if not action_text.strip():
        return ActionKind.OTHER, []
    return _classify_kind(action_text), extract_paths(action_text)


def normalize_action(action_text: str) -> str:
    """Collapse whitespace runs; used for repetition checks."""
    return " ".join(action_text.split())


@dataclass(frozen=True)
class Task:
    task_id: str
    repo_ref: str
    base_commit: str
    problem_statement: str
    fail_to_pass_tests: tuple[str, ...]
    pass_to_pass_tests: tuple[str, ...] = ()
    relevant_files: frozenset[str] = frozenset()
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        object.__setattr__(self, "fail_to_pass_tests", tuple(self.fail_to_pass_tests))
        object.__setattr__(self, "pass_to_pass_tests", tuple(self.pass_to_pass_tests))
        object.__setattr__(self, "relevant_files", frozenset(self.relevant_files))
        object.__setattr__(self, "split", Split(self.split))
        if not self.task_id:
            raise InvalidTask("task_id must be non-empty")
        if not self.fail_to_pass_tests:
            raise InvalidTask(f"{self.task_id}: fail_to_pass_tests must be non-empty")
        bad = sorted(p for p in self.relevant_files if not is_normalized(p))
        if bad:
            raise InvalidTask(f"{self.task_id}: relevant_files not normalized: {bad}")

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "repo_ref": self.repo_ref,
            "base_commit": self.base_commit,
            "problem_statement": self.problem_statement,
            "fail_to_pass": list(self.fail_to_pass_tests),
            "pass_to_pass": list(self.pass_to_pass_tests),
            "relevant_files": sorted(self.relevant_files),
            "split": self.split.value,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Task:
        return cls(
            task_id=obj["task_id"],
            repo_ref=obj["repo_ref"],
            base_commit=obj["base_commit"],
            problem_statement=obj["problem_statement"],
            fail_to_pass_tests=tuple(obj["fail_to_pass"]),
            pass_to_pass_tests=tuple(obj.get("pass_to_pass", ())),
            relevant_files=frozenset(obj.get("relevant_files", ())),
            split=Split(obj.get("split", "train")),
        )


@dataclass(frozen=True)
class Step:
    index: int
    action_text: str
    action_kind: ActionKind
    touched_paths: tuple[str, ...]
    observation_text: str
    exec_success: bool
    test_report: dict[str, TestOutcome] | None = None

    @classmethod
    def from_action(
        cls,
        index: int,
        action_text: str,
        observation_text: str,
        exec_success: bool,
        test_report: Mapping[str, TestOutcome | str] | None = None,
    ) -> Step:
        kind, paths = classify_action(action_text)
        report = None
        if test_report is not None:
            report = {k: TestOutcome(v) for k, v in test_report.items()}
        return cls(index, action_text, kind, tuple(paths), observation_text, exec_success, report)

    def to_json(self) -> dict[str, Any]:
        report = None
        if self.test_report is not None:
            report = {k: v.value for k, v in self.test_report.items()}
        return {
            "kind": "step",
            "index": self.index,
            "action": self.action_text,
            "observation": self.observation_text,
            "exec_success": self.exec_success,
            "test_report": report,
        }


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    steps: tuple[Step, ...]
    resolved: bool
    token_cost_usd: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    def final_test_report(self) -> dict[str, TestOutcome] | None:
        for step in reversed(self.steps):
            if step.test_report is not None:
                return step.test_report
        return None

    def header_json(self) -> dict[str, Any]:
        return {
            "kind": "header",
            "task_id": self.task_id,
            "resolved": self.resolved,
            "token_cost_usd": self.token_cost_usd,
        }

    def to_jsonl(self) -> str:
        lines = [self.header_json()] + [s.to_json() for s in self.steps]
        return "".join(json.dumps(obj) + "\n" for obj in lines)


def report_passes(report: Mapping[str, TestOutcome] | None, task: Task) -> bool:
    """True iff every fail-to-pass and pass-to-pass test is reported passing."""
    if report is None:
        return False
    needed = (*task.fail_to_pass_tests, *task.pass_to_pass_tests)
    return all(report.get(t) == TestOutcome.PASS for t in needed)


_TEST_KINDS = (ActionKind.RUN_TESTS, ActionKind.SUBMIT)


def validate_trajectory(t: Trajectory, task: Task, budget: int = DEFAULT_BUDGET) -> list[str]:
    """Check trajectory and step invariants; returns violation descriptions (empty if valid)."""
    violations: list[str] = []
    if t.task_id != task.task_id:
        violations.append(f"task: trajectory task_id {t.task_id!r} != task {task.task_id!r}")
    if not t.steps:
        violations.append("steps: trajectory has no steps")
        return violations
    if t.token_cost_usd < 0:
        violations.append(f"cost: token_cost_usd is negative ({t.token_cost_usd})")
    for pos, step in enumerate(t.steps):
        if step.index != pos:
            violations.append(f"step {pos}: index contiguity broken (found index {step.index})")
            break
    for pos, step in enumerate(t.steps):
        if step.test_report is not None and step.action_kind not in _TEST_KINDS:
            violations.append(
                f"step {pos}: test_report present on {step.action_kind.value} action"
            )
    if len(t.steps) > budget:
        violations.append(f"step {budget}: step budget {budget} exceeded ({len(t.steps)} steps)")
    last = t.steps[-1]
    if last.action_kind != ActionKind.SUBMIT and len(t.steps) != budget:
        violations.append(
            f"step {len(t.steps) - 1}: termination: last step is not submit and budget not reached"
        )
    if t.resolved and not report_passes(t.final_test_report(), task):
        violations.append(
            f"step {len(t.steps) - 1}: resolved-consistency: final test report does not pass all tests"
        )
    return violations


def _read_lines(raw: bytes | str | IO[Any] | Iterable[str]) -> list[str]:
    if isinstance(raw, bytes):
        return raw.decode("utf-8").splitlines()
    if isinstance(raw, str):
        return raw.splitlines()
    if hasattr(raw, "read"):
        data = raw.read()
        return _read_lines(data)
    return [ln.rstrip("\n") for ln in raw]


def _require(obj: Mapping[str, Any], key: str, types: type | tuple[type, ...], line: int) -> Any:
    if key not in obj:
        raise MalformedRecord(line, f"missing key {key!r}")
    val = obj[key]
    if not isinstance(val, types) or (isinstance(val, bool) and bool not in _as_tuple(types)):
        raise MalformedRecord(line, f"key {key!r} has wrong type {type(val).__name__}")
    return val


def _as_tuple(types: type | tuple[type, ...]) -> tuple[type, ...]:
    return types if isinstance(types, tuple) else (types,)


def parse_trajectory(
    raw: bytes | str | IO[Any] | Iterable[str], task: Task, budget: int = DEFAULT_BUDGET
) -> Trajectory:
    """Parse a trajectory JSONL stream (header line, then one step per line).

    Steps are re-indexed in line order and classified. Raises
    ``MalformedRecord`` with the 1-based line number for unparseable input,
    ``TaskMismatch``, ``EmptyTrajectory``, or ``InvalidTrajectory`` when the
    parsed trajectory breaks an invariant.
    """
    header: dict[str, Any] | None = None
    steps: list[Step] = []
    for lineno, line in enumerate(_read_lines(raw), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise MalformedRecord(lineno, "record is not a JSON object")
        kind = obj.get("kind")
        if header is None:
            if kind != "header":
                raise MalformedRecord(lineno, "first record must be the header")
            _require(obj, "task_id", str, lineno)
            _require(obj, "resolved", bool, lineno)
            cost = _require(obj, "token_cost_usd", (int, float), lineno)
            if cost < 0:
                raise MalformedRecord(lineno, "token_cost_usd must be non-negative")
            header = obj
            continue
        if kind != "step":
            raise MalformedRecord(lineno, f"unexpected record kind {kind!r}")
        _require(obj, "index", int, lineno)
        action = _require(obj, "action", str, lineno)
        if not action.strip():
            raise MalformedRecord(lineno, "empty action")
        observation = _require(obj, "observation", str, lineno)
        ok = _require(obj, "exec_success", bool, lineno)
        report = obj.get("test_report")
        if report is not None:
            if not isinstance(report, dict):
                raise MalformedRecord(lineno, "test_report must be an object or null")
            try:
                report = {str(k): TestOutcome(v) for k, v in report.items()}
            except ValueError:
                raise MalformedRecord(lineno, "test_report values must be 'pass' or 'fail'") from None
        steps.append(Step.from_action(len(steps), action, observation, ok, report))
    if header is None:
        raise MalformedRecord(1, "missing header record")
    if header["task_id"] != task.task_id:
        raise TaskMismatch(f"trajectory is for {header['task_id']!r}, expected {task.task_id!r}")
    if not steps:
        raise EmptyTrajectory(f"trajectory for {task.task_id!r} has no steps")
    traj = Trajectory(task.task_id, tuple(steps), header["resolved"], float(header["token_cost_usd"]))
    violations = validate_trajectory(traj, task, budget)
    if violations:
        raise InvalidTrajectory(violations)
    return traj


def parse_tasks(raw: bytes | str | IO[Any] | Iterable[str]) -> list[Task]:
    tasks: list[Task] = []
    seen: set[str] = set()
    for lineno, line in enumerate(_read_lines(raw), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            task = Task.from_json(obj)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from None
        except (KeyError, TypeError) as exc:
            raise MalformedRecord(lineno, f"bad task record ({exc})") from None
        if task.task_id in seen:
            raise InvalidTask(f"duplicate task_id {task.task_id!r} (line {lineno})")
        seen.add(task.task_id)
        tasks.append(task)
    return tasks


def load_tasks(path: str | Path) -> list[Task]:
    return parse_tasks(Path(path).read_text(encoding="utf-8"))


def dump_tasks(tasks: Sequence[Task]) -> str:
    return "".join(json.dumps(t.to_json()) + "\n" for t in tasks)


def split_counts(tasks: Iterable[Task]) -> dict[str, int]:
    counts = {s.value: 0 for s in Split}
    for t in tasks:
        counts[t.split.value] += 1
    return counts
