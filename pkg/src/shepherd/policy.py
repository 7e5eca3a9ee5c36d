"""Candidate-action generators.

Every policy implements ``propose(ctx, k) -> CandidateSet`` and returns exactly
``k`` candidates on success.
"""

from __future__ import annotations

import logging
import os
import random
import re
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

import requests

from shepherd.dataset import render_context
from shepherd.environment import SimEnvironment, SimTask
from shepherd.errors import EmptyCompletion, PolicyUnavailable, ScriptExhausted
from shepherd.model import Step, Task

log = logging.getLogger(__name__)

API_KEY_ENV = "SHEPHERD_POLICY_API_KEY"


@dataclass(frozen=True)
class PolicyContext:
    task: Task
    history: tuple[Step, ...]
    step_index: int
    budget: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        if self.step_index >= self.budget:
            raise ValueError(f"step_index {self.step_index} >= budget {self.budget}")


@dataclass(frozen=True)
class CandidateSet:
    actions: tuple[str, ...]
    generation_cost_usd: float = 0.0
    token_usage: dict[str, int] = field(default_factory=lambda: {"prompt": 0, "completion": 0})
    padded: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("a candidate set needs at least one action")

    @property
    def has_duplicates(self) -> bool:
        return len(set(self.actions)) < len(self.actions)


class Policy(Protocol):
    def propose(self, ctx: PolicyContext, k: int) -> CandidateSet: ...


def _pad(actions: Sequence[str], k: int) -> tuple[tuple[str, ...], bool]:
    if len(actions) >= k:
        return tuple(actions[:k]), False
    return tuple(actions) + (actions[-1],) * (k - len(actions)), True


class ScriptedPolicy:
    """Fixed candidate lists keyed by step index."""

    def __init__(self, script: Mapping[int, Sequence[str]]):
        self.script = {int(i): list(a) for i, a in script.items()}

    def propose(self, ctx: PolicyContext, k: int) -> CandidateSet:
        if k < 1:
            raise ValueError("k must be >= 1")
        actions = self.script.get(ctx.step_index)
        if not actions:
            raise ScriptExhausted(f"no scripted actions for step {ctx.step_index}")
        padded, was_padded = _pad(actions, k)
        return CandidateSet(padded, padded=was_padded)


class SimOraclePolicy:
    """Noisy oracle for simulated tasks.

    Each step offers the correct next action plus distractors, in an order
    drawn from a RNG keyed on (seed, task, step) so proposals do not depend
    on call history. With ``k=1`` the single candidate is the oracle action
    or a distractor with equal probability.
    """

    def __init__(self, sim_tasks: Mapping[str, SimTask], seed: int = 0):
        self.sim_tasks = sim_tasks
        self.seed = seed

    def _replay(self, task: Task, history: Sequence[Step]) -> dict[str, str]:
        env = SimEnvironment({task.task_id: self.sim_tasks[task.task_id]}, budget=len(history) + 1)
        state = env.reset(task)
        for step in history:
            _, state = env.exec_step(state, step.action_text)
        return env.files

    def oracle_action(self, task: Task, history: Sequence[Step]) -> str:
        sim = self.sim_tasks[task.task_id]
        files = self._replay(task, history)
        for path in sorted(sim.file_tree):
            if path != sim.bug_path and files.get(path) != sim.file_tree[path]:
                return f"edit {path} <<< {sim.file_tree[path]}"
        if not any(s.action_text.strip() == f"read {sim.bug_path}" for s in history):
            return f"read {sim.bug_path}"
        if files.get(sim.bug_path) != sim.fix_content:
            return f"edit {sim.bug_path} <<< {sim.fix_content}"
        return "submit"

    def distractors(self, task: Task, history: Sequence[Step], rng: random.Random) -> list[str]:
        sim = self.sim_tasks[task.task_id]
        others = [p for p in sorted(sim.file_tree) if p != sim.bug_path and p not in sim.decoy_paths]
        pool = [f"read {p}" for p in [*sim.decoy_paths, *others]]
        pool += ["ls", f"grep -rn {task.task_id} ."]
        pool += [f"edit {d} <<< {sim.file_tree[d]}# touched\n" for d in sim.decoy_paths]
        if history:
            pool.append(history[-1].action_text)
        rng.shuffle(pool)
        return pool

    def propose(self, ctx: PolicyContext, k: int) -> CandidateSet:
        if k < 1:
            raise ValueError("k must be >= 1")
        rng = random.Random(f"{self.seed}:{ctx.task.task_id}:{ctx.step_index}")
        oracle = self.oracle_action(ctx.task, ctx.history)
        noise = [a for a in self.distractors(ctx.task, ctx.history, rng) if a != oracle]
        cands = [oracle, *noise[: max(1, k - 1)]]
        rng.shuffle(cands)
        actions, padded = _pad(cands, k)
        return CandidateSet(actions, padded=padded)


_FENCE = re.compile(r"```(?:action|bash|sh)[ \t]*\n(.*?)```", re.DOTALL)


def parse_completion(raw: str) -> str:
    """Extract the first fenced action block from a model reply."""
    blocks = _FENCE.findall(raw or "")
    if not blocks:
        raise EmptyCompletion("no fenced action block in completion")
    if len(blocks) > 1:
        log.warning("completion has %d action blocks; using the first", len(blocks))
    action = "\n".join(line.rstrip() for line in blocks[0].strip().splitlines())
    if not action:
        raise EmptyCompletion("fenced action block is empty")
    return action


SYSTEM_PROMPT = (
    "You are a software engineer fixing an issue in a repository through a shell. "
    "Reply with your reasoning followed by exactly one fenced block of the form\n"
    "```action\n<one shell command>\n```\n"
    "Run `submit` when the fix is complete and the tests pass."
)


class RemotePolicy:
    """Chat-completions policy sampling ``k`` completions per step.

    Cost is accumulated per call from token usage and the configured
    per-million-token prices; the running totals are thread-safe.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.8,
        price_per_mtok_prompt: float = 0.0,
        price_per_mtok_completion: float = 0.0,
        timeout: float = 120.0,
        retries: int = 3,
        backoff: Sequence[float] = (1.0, 2.0, 4.0),
        sleep: Callable[[float], None] = time.sleep,
        history_window: int = 30,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.temperature = temperature
        self.price_prompt = price_per_mtok_prompt
        self.price_completion = price_per_mtok_completion
        self.timeout = timeout
        self.retries = retries
        self.backoff = tuple(backoff)
        self.sleep = sleep
        self.history_window = history_window
        self._lock = threading.Lock()
        self.total_cost_usd = 0.0
        self.total_tokens = {"prompt": 0, "completion": 0}

    def messages(self, ctx: PolicyContext) -> list[dict[str, str]]:
        user = render_context(ctx.task, ctx.history, len(ctx.history), self.history_window, budget=ctx.budget)
        return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": user}]

    def _complete(self, messages: list[dict[str, str]], n: int) -> dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "messages": messages, "temperature": self.temperature, "n": n}
        last_err = ""
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions", json=body, headers=headers, timeout=self.timeout
                )
                if 200 <= resp.status_code < 300:
                    return resp.json()
                last_err = f"HTTP {resp.status_code}"
            except (requests.RequestException, ValueError) as exc:
                last_err = f"{type(exc).__name__}: {exc}"
            if attempt < self.retries:
                delay = self.backoff[min(attempt, len(self.backoff) - 1)] if self.backoff else 0.0
                log.warning("completion attempt %d failed (%s); retrying in %.1fs", attempt + 1, last_err, delay)
                self.sleep(delay)
        raise PolicyUnavailable(f"{self.base_url}: {last_err} after {self.retries} retries")

    def _sample(self, messages, n: int, usage: dict[str, int]) -> list[str]:
        payload = self._complete(messages, n)
        u = payload.get("usage") or {}
        usage["prompt"] += int(u.get("prompt_tokens", 0))
        usage["completion"] += int(u.get("completion_tokens", 0))
        actions = []
        for choice in payload.get("choices") or []:
            content = (choice.get("message") or {}).get("content") or ""
            try:
                actions.append(parse_completion(content))
            except EmptyCompletion:
                continue
        return actions

    def cost(self, usage: Mapping[str, int]) -> float:
        return (usage["prompt"] * self.price_prompt + usage["completion"] * self.price_completion) / 1e6

    def propose(self, ctx: PolicyContext, k: int) -> CandidateSet:
        if k < 1:
            raise ValueError("k must be >= 1")
        messages = self.messages(ctx)
        usage = {"prompt": 0, "completion": 0}
        actions = self._sample(messages, k, usage)
        if len(actions) < k:
            actions += self._sample(messages, k - len(actions), usage)
        cost = self.cost(usage)
        with self._lock:
            self.total_cost_usd += cost
            self.total_tokens["prompt"] += usage["prompt"]
            self.total_tokens["completion"] += usage["completion"]
        if not actions:
            raise EmptyCompletion(f"no parseable action in {k} completions after resampling")
        padded, was_padded = _pad(actions, k)
        return CandidateSet(padded, cost, usage, padded=was_padded)
