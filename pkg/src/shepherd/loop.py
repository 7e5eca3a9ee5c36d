"""Reward-guided inference: propose k candidates, score them, execute the argmax."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from shepherd.dataset import DEFAULT_HISTORY, DEFAULT_OBS_BUDGET, render_context
from shepherd.environment import Environment, EnvState, TerminationReason
from shepherd.errors import EmptyCandidates, EmptyCompletion, LengthMismatch, ScriptExhausted, TransportError
from shepherd.model import DEFAULT_BUDGET, Step, Task, Trajectory
from shepherd.policy import Policy, PolicyContext
from shepherd.scorer import Scorer, ScoreRequest

log = logging.getLogger(__name__)

# Failures that end one episode but must not take down a batch.
EPISODE_FAILURES = (TransportError, EmptyCompletion, ScriptExhausted)


@dataclass(frozen=True)
class SelectionRecord:
    step_index: int
    candidates: tuple[str, ...]
    scores: tuple[float, ...]
    chosen_index: int

    def to_json(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "candidates": list(self.candidates),
            "scores": list(self.scores),
            "chosen_index": self.chosen_index,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> SelectionRecord:
        return cls(obj["step_index"], tuple(obj["candidates"]), tuple(obj["scores"]), obj["chosen_index"])


@dataclass
class EpisodeResult:
    task_id: str
    resolved: bool
    steps_used: int
    total_cost_usd: float
    trajectory: Trajectory
    selection_log: list[SelectionRecord] = field(default_factory=list)
    termination_reason: TerminationReason = TerminationReason.NONE
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "resolved": self.resolved,
            "steps_used": self.steps_used,
            "total_cost_usd": self.total_cost_usd,
            "termination_reason": self.termination_reason.value,
            "error": self.error,
            "trajectory": {
                "header": self.trajectory.header_json(),
                "steps": [s.to_json() for s in self.trajectory.steps],
            },
            "selection_log": [r.to_json() for r in self.selection_log],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> EpisodeResult:
        head = obj["trajectory"]["header"]
        steps = tuple(
            Step.from_action(s["index"], s["action"], s["observation"], s["exec_success"], s["test_report"])
            for s in obj["trajectory"]["steps"]
        )
        traj = Trajectory(head["task_id"], steps, head["resolved"], head["token_cost_usd"])
        return cls(
            task_id=obj["task_id"],
            resolved=obj["resolved"],
            steps_used=obj["steps_used"],
            total_cost_usd=obj["total_cost_usd"],
            trajectory=traj,
            selection_log=[SelectionRecord.from_json(r) for r in obj["selection_log"]],
            termination_reason=TerminationReason(obj["termination_reason"]),
            error=obj.get("error"),
        )


def select_action(candidates: Sequence[str], scores: Sequence[float]) -> int:
    """Index of the highest score; the lowest index wins exact ties."""
    if len(candidates) != len(scores):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(scores)} scores")
    if not candidates:
        raise EmptyCandidates("nothing to select from")
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


def run_episode(
    task: Task,
    policy: Policy,
    scorer: Scorer,
    env: Environment,
    budget: int = DEFAULT_BUDGET,
    k: int = 4,
    history: int = DEFAULT_HISTORY,
    obs_budget: int = DEFAULT_OBS_BUDGET,
) -> EpisodeResult:
    """Run one reward-guided episode. Resets ``env`` for ``task`` first.

    Scoring contexts are rendered exactly as training samples are, so the
    scorer sees the same window and truncation at train and test time.
    Transport failures end the episode with ``error`` set; no fallback
    candidate is executed.
    """
    env.budget = budget
    state: EnvState = env.reset(task)
    steps: list[Step] = []
    log_: list[SelectionRecord] = []
    costs: list[float] = []
    error = None
    try:
        while not state.terminated:
            t = state.steps_taken
            cands = policy.propose(PolicyContext(task, tuple(steps), t, budget), k)
            costs.append(cands.generation_cost_usd)
            ctx = render_context(task, steps, t, history, obs_budget, budget)
            scores = scorer.score_batch([ScoreRequest(ctx, a) for a in cands.actions])
            chosen = select_action(cands.actions, scores)
            log_.append(SelectionRecord(t, cands.actions, tuple(float(s) for s in scores), chosen))
            step, state = env.exec_step(state, cands.actions[chosen])
            steps.append(step)
    except EPISODE_FAILURES as exc:
        error = f"{type(exc).__name__}: {exc}"
        log.warning("episode %s failed at step %d: %s", task.task_id, state.steps_taken, error)
    total = math.fsum(costs)
    resolved = error is None and env.is_resolved(state, task)
    return EpisodeResult(
        task_id=task.task_id,
        resolved=resolved,
        steps_used=state.steps_taken,
        total_cost_usd=total,
        trajectory=Trajectory(task.task_id, tuple(steps), resolved, total),
        selection_log=log_,
        termination_reason=state.termination_reason,
        error=error,
    )


def run_unguided(task: Task, policy: Policy, env: Environment, budget: int = DEFAULT_BUDGET) -> Trajectory:
    """Execute the policy's single proposal at every step, with no scorer involved."""
    env.budget = budget
    state = env.reset(task)
    steps: list[Step] = []
    costs = []
    while not state.terminated:
        cands = policy.propose(PolicyContext(task, tuple(steps), state.steps_taken, budget), 1)
        costs.append(cands.generation_cost_usd)
        step, state = env.exec_step(state, cands.actions[0])
        steps.append(step)
    return Trajectory(task.task_id, tuple(steps), env.is_resolved(state, task), math.fsum(costs))


def run_batch(
    tasks: Sequence[Task],
    policy: Policy,
    scorer: Scorer,
    env_factory: Callable[[], Environment],
    budget: int = DEFAULT_BUDGET,
    k: int = 4,
    parallelism: int = 1,
    history: int = DEFAULT_HISTORY,
    obs_budget: int = DEFAULT_OBS_BUDGET,
) -> list[EpisodeResult]:
    """One isolated episode per task; results ordered by task_id."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def one(task: Task) -> EpisodeResult:
        try:
            return run_episode(task, policy, scorer, env_factory(), budget, k, history, obs_budget)
        except Exception as exc:  # isolation: one bad episode never aborts the batch
            log.exception("episode %s crashed", task.task_id)
            return EpisodeResult(
                task.task_id, False, 0, 0.0, Trajectory(task.task_id, (), False, 0.0),
                error=f"{type(exc).__name__}: {exc}",
            )

    if parallelism == 1:
        results = [one(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, tasks))
    return sorted(results, key=lambda r: r.task_id)


def results_to_jsonl(results: Sequence[EpisodeResult]) -> str:
    return "".join(json.dumps(r.to_json()) + "\n" for r in results)


def results_from_jsonl(text: str) -> list[EpisodeResult]:
    return [EpisodeResult.from_json(json.loads(ln)) for ln in text.splitlines() if ln.strip()]
