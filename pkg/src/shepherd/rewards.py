"""Heuristic step rewards and discounted returns."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from shepherd import kernels
from shepherd.errors import EmptyInput, InvalidTrajectory
from shepherd.model import (
    DEFAULT_BUDGET,
    ActionKind,
    Step,
    Task,
    TestOutcome,
    Trajectory,
    normalize_action,
    validate_trajectory,
)


@dataclass(frozen=True)
class RewardConfig:
    w_exec: float = 0.1
    w_read_relevant: float = 0.3
    w_edit_target: float = 0.5
    w_test_pass_delta: float = 1.0
    w_test_fail_delta: float = -0.2
    w_repeat: float = -0.3
    repeat_window: int = 3
    gamma: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.repeat_window < 1:
            raise ValueError(f"repeat_window must be >= 1, got {self.repeat_window}")


@dataclass
class StepReward:
    step_index: int
    components: dict[str, float]
    r: float
    G: float = 0.0
    normalized_label: float | None = None  # None until the dataset builder fills it

    def to_json(self, task_id: str) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "task_id": task_id,
            "step_index": self.step_index,
            "components": dict(self.components),
            "r": self.r,
            "G": self.G,
        }
        if self.normalized_label is not None:
            obj["label"] = self.normalized_label
        return obj

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> StepReward:
        return cls(
            step_index=int(obj["step_index"]),
            components={k: float(v) for k, v in obj["components"].items()},
            r=float(obj["r"]),
            G=float(obj["G"]),
            normalized_label=obj.get("label"),
        )


def _test_delta(
    step: Step,
    task: Task,
    prior: Mapping[str, TestOutcome] | None,
    config: RewardConfig,
) -> float:
    report = step.test_report or {}
    prior = prior or {}
    # Base state: fail-to-pass tests fail, pass-to-pass tests pass.
    newly_passing = sum(
        1
        for t in task.fail_to_pass_tests
        if report.get(t) == TestOutcome.PASS and prior.get(t, TestOutcome.FAIL) != TestOutcome.PASS
    )
    newly_failing = sum(
        1
        for t in task.pass_to_pass_tests
        if report.get(t) == TestOutcome.FAIL and prior.get(t, TestOutcome.PASS) != TestOutcome.FAIL
    )
    return config.w_test_pass_delta * newly_passing + config.w_test_fail_delta * newly_failing


def immediate_reward(
    step: Step,
    task: Task,
    prior_actions: Sequence[str],
    prior_test_report: Mapping[str, TestOutcome] | None,
    config: RewardConfig = RewardConfig(),
) -> StepReward:
    """Score one step by the heuristic components; only triggered components are recorded.

    ``prior_actions`` should hold the action texts of at most
    ``config.repeat_window`` immediately preceding steps.
    """
    comps: dict[str, float] = {}
    if step.exec_success:
        comps["exec"] = config.w_exec
    hits_relevant = bool(task.relevant_files.intersection(step.touched_paths))
    if step.action_kind == ActionKind.READ and hits_relevant:
        comps["read_relevant"] = config.w_read_relevant
    if step.action_kind == ActionKind.EDIT and hits_relevant:
        comps["edit_target"] = config.w_edit_target
    if step.action_kind in (ActionKind.RUN_TESTS, ActionKind.SUBMIT) and step.test_report is not None:
        delta = _test_delta(step, task, prior_test_report, config)
        if delta != 0.0:
            comps["test_delta"] = delta
    window = prior_actions[-config.repeat_window:] if prior_actions else ()
    norm = normalize_action(step.action_text)
    if any(normalize_action(a) == norm for a in window):
        comps["repeat"] = config.w_repeat
    return StepReward(step.index, comps, math.fsum(comps.values()))


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    """Backward recurrence G_t = r_t + gamma * G_{t+1}, with G_{T-1} = r_{T-1}."""
    if len(rewards) == 0:
        raise EmptyInput("rewards must be non-empty")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    return kernels.discounted_returns(np.asarray(rewards, dtype=np.float64), gamma).tolist()


def label_trajectory(
    t: Trajectory,
    task: Task,
    config: RewardConfig = RewardConfig(),
    budget: int = DEFAULT_BUDGET,
) -> list[StepReward]:
    violations = validate_trajectory(t, task, budget)
    if violations:
        raise InvalidTrajectory(violations)
    out: list[StepReward] = []
    prior_report = None
    for pos, step in enumerate(t.steps):
        prior = [s.action_text for s in t.steps[max(0, pos - config.repeat_window):pos]]
        out.append(immediate_reward(step, task, prior, prior_report, config))
        if step.test_report is not None:
            prior_report = step.test_report
    for sr, g in zip(out, discounted_returns([sr.r for sr in out], config.gamma)):
        sr.G = g
    return out


def labels_to_jsonl(task_id: str, rewards: Sequence[StepReward]) -> str:
    return "".join(json.dumps(r.to_json(task_id)) + "\n" for r in rewards)


def labels_from_jsonl(text: str) -> tuple[str, list[StepReward]]:
    task_id = ""
    rewards = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        task_id = obj["task_id"]
        rewards.append(StepReward.from_json(obj))
    return task_id, rewards


def config_dict(config: RewardConfig) -> dict[str, Any]:
    return asdict(config)
