"""Turn labeled trajectories into (context, action, label) training samples."""

from __future__ import annotations

import json
import math
import random
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

from shepherd.errors import EmptyInput, IndexOutOfRange, UnknownTask, UnlabeledTrajectory
from shepherd.model import DEFAULT_BUDGET, Step, Task, Trajectory
from shepherd.rewards import StepReward

DEFAULT_HISTORY = 5
DEFAULT_OBS_BUDGET = 2000
TRUNCATION_MARKER = "...[truncated]"

PROBLEM_HEADER = "PROBLEM:"
CURRENT_STEP_PREFIX = "CURRENT STEP:"


@dataclass(frozen=True)
class PRMSample:
    task_id: str
    step_index: int
    context_text: str
    action_text: str
    label: float

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "step_index": self.step_index,
            "context": self.context_text,
            "action": self.action_text,
            "label": self.label,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> PRMSample:
        return cls(obj["task_id"], int(obj["step_index"]), obj["context"], obj["action"], float(obj["label"]))


@dataclass
class DatasetStats:
    sample_count: int
    label_min: float
    label_max: float
    label_mean: float
    split_counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def truncate_bytes(text: str, budget: int) -> str:
    data = text.encode("utf-8")
    if len(data) <= budget:
        return text
    return data[:budget].decode("utf-8", errors="ignore") + TRUNCATION_MARKER


def render_context(
    task: Task,
    steps: Sequence[Step],
    t: int,
    history: int = DEFAULT_HISTORY,
    obs_budget: int = DEFAULT_OBS_BUDGET,
    budget: int = DEFAULT_BUDGET,
) -> str:
    """Render the scoring context for the action taken at step ``t``.

    The problem block comes first, then up to ``history`` preceding steps
    (observations truncated to ``obs_budget`` bytes), then a trailer naming
    the current step and the step budget.
    """
    if not 0 <= t <= len(steps):
        raise IndexOutOfRange(f"t={t} outside [0, {len(steps)}]")
    if history < 0:
        raise ValueError(f"history must be >= 0, got {history}")
    parts = [f"{PROBLEM_HEADER}\n{task.problem_statement}"]
    for i in range(max(0, t - history), t):
        s = steps[i]
        parts.append(
            f"STEP {i}:\nACTION:\n{s.action_text}\nOBSERVATION:\n{truncate_bytes(s.observation_text, obs_budget)}"
        )
    parts.append(f"{CURRENT_STEP_PREFIX} {t}/{budget}")
    return "\n\n".join(parts)


def normalize_labels(returns: Sequence[float]) -> list[float]:
    """Min-max scale to [0, 1]; a constant input maps to 0.5 everywhere."""
    if len(returns) == 0:
        raise EmptyInput("returns must be non-empty")
    lo, hi = min(returns), max(returns)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("returns must be finite")
    if hi == lo:
        return [0.5] * len(returns)
    span = hi - lo
    return [(g - lo) / span for g in returns]


def build_dataset(
    labeled: Sequence[tuple[Trajectory, Sequence[StepReward]]],
    tasks: Mapping[str, Task] | Sequence[Task],
    history: int = DEFAULT_HISTORY,
    obs_budget: int = DEFAULT_OBS_BUDGET,
    budget: int = DEFAULT_BUDGET,
) -> tuple[list[PRMSample], DatasetStats]:
    """One sample per executed step, labels min-max normalized over the whole output.

    Fills ``normalized_label`` on the passed ``StepReward`` objects as a side effect.
    """
    index = tasks if isinstance(tasks, Mapping) else {t.task_id: t for t in tasks}
    rows: list[tuple[str, int, int, Task, Trajectory, StepReward]] = []
    for ordinal, (traj, rewards) in enumerate(labeled):
        if traj.task_id not in index:
            raise UnknownTask(traj.task_id)
        if len(rewards) != len(traj.steps):
            raise UnlabeledTrajectory(
                f"{traj.task_id}: {len(rewards)} rewards for {len(traj.steps)} steps"
            )
        for pos, sr in enumerate(rewards):
            rows.append((traj.task_id, pos, ordinal, index[traj.task_id], traj, sr))
    if not rows:
        return [], DatasetStats(0, 0.0, 0.0, 0.0, {})
    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    labels = normalize_labels([r[5].G for r in rows])
    samples = []
    split_counts: dict[str, int] = {}
    for (task_id, pos, _, task, traj, sr), label in zip(rows, labels):
        sr.normalized_label = label
        ctx = render_context(task, traj.steps, pos, history, obs_budget, budget)
        samples.append(PRMSample(task_id, pos, ctx, traj.steps[pos].action_text, label))
        split_counts[task.split.value] = split_counts.get(task.split.value, 0) + 1
    stats = DatasetStats(
        sample_count=len(samples),
        label_min=min(labels),
        label_max=max(labels),
        label_mean=math.fsum(labels) / len(labels),
        split_counts=dict(sorted(split_counts.items())),
    )
    return samples, stats


def split_dataset(
    samples: Sequence[PRMSample], val_fraction: float, seed: int
) -> tuple[list[PRMSample], list[PRMSample]]:
    """Task-disjoint train/validation split; deterministic for a given seed."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    task_ids = sorted({s.task_id for s in samples})
    random.Random(seed).shuffle(task_ids)
    n_val = round(val_fraction * len(task_ids))
    val_ids = set(task_ids[:n_val])
    train = [s for s in samples if s.task_id not in val_ids]
    val = [s for s in samples if s.task_id in val_ids]
    return train, val


def samples_to_jsonl(samples: Sequence[PRMSample]) -> str:
    return "".join(json.dumps(s.to_json()) + "\n" for s in samples)


def samples_from_jsonl(text: str) -> list[PRMSample]:
    return [PRMSample.from_json(json.loads(ln)) for ln in text.splitlines() if ln.strip()]
