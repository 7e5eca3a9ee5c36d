"""Run-level metrics (resolution rate, cost, steps) and reward/outcome analysis."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

from shepherd.errors import EmptyResults, MissingLabels
from shepherd.loop import EpisodeResult
from shepherd.model import Trajectory
from shepherd.rewards import StepReward

REWARD_BASIS = "normalized_label"
DEFAULT_METHOD = "reward-guided"


@dataclass
class RunReport:
    resolved_rate: float
    avg_cost_usd: float
    avg_steps: float
    n_tasks: int
    rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def resolved_count(self) -> int:
        return sum(1 for r in self.rows if r["resolved"])


@dataclass
class RewardAnalysis:
    mean_reward_resolved: float | None
    mean_reward_unresolved: float | None
    n_steps_resolved: int
    n_steps_unresolved: int
    basis: str = REWARD_BASIS

    @property
    def empty(self) -> bool:
        return self.mean_reward_resolved is None and self.mean_reward_unresolved is None


def summarize_run(results: Sequence[EpisodeResult]) -> RunReport:
    if not results:
        raise EmptyResults("no episode results to summarize")
    n = len(results)
    rows = sorted(
        (
            {
                "task_id": r.task_id,
                "resolved": r.resolved,
                "steps_used": r.steps_used,
                "total_cost_usd": r.total_cost_usd,
                "error": r.error,
            }
            for r in results
        ),
        key=lambda row: row["task_id"],
    )
    return RunReport(
        resolved_rate=sum(1 for r in results if r.resolved) / n,
        avg_cost_usd=math.fsum(r.total_cost_usd for r in results) / n,
        avg_steps=math.fsum(r.steps_used for r in results) / n,
        n_tasks=n,
        rows=rows,
    )


def reward_gap(labeled: Sequence[tuple[Trajectory, Sequence[StepReward]]]) -> RewardAnalysis:
    """Step-weighted mean normalized label, split by trajectory outcome.

    A group with no trajectories gets ``None`` rather than 0.
    """
    groups: dict[bool, list[float]] = {True: [], False: []}
    for traj, rewards in labeled:
        for sr in rewards:
            if sr.normalized_label is None:
                raise MissingLabels(f"{traj.task_id} step {sr.step_index} has no normalized label")
            groups[traj.resolved].append(sr.normalized_label)

    def mean(xs: list[float]) -> float | None:
        return math.fsum(xs) / len(xs) if xs else None

    return RewardAnalysis(mean(groups[True]), mean(groups[False]), len(groups[True]), len(groups[False]))


def _pct(rate: float) -> str:
    return f"{rate * 100:.1f}".rstrip("0").rstrip(".") + "%"


def _fmt_reward(x: float | None) -> str:
    return "--" if x is None else f"{x:.4f}"


def _as_runs(report: RunReport | Mapping[str, RunReport], method: str) -> dict[str, RunReport]:
    return {method: report} if isinstance(report, RunReport) else dict(report)


def emit_report(
    report: RunReport | Mapping[str, RunReport],
    analysis: RewardAnalysis | None = None,
    fmt: str = "json",
    method: str = DEFAULT_METHOD,
) -> str:
    """Render one or more run reports (keyed by method name) plus an optional reward analysis."""
    runs = _as_runs(report, method)
    with_analysis = analysis is not None and not analysis.empty
    if fmt == "json":
        doc: dict[str, Any] = {"runs": {m: asdict(r) for m, r in runs.items()}}
        if with_analysis:
            doc["reward_analysis"] = asdict(analysis)
        return json.dumps(doc, indent=2) + "\n"
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [
        "| Method | % Resolved | Avg. $ | Avg. Steps |",
        "|---|---|---|---|",
    ]
    for m, r in runs.items():
        lines.append(f"| {m} | {_pct(r.resolved_rate)} | {r.avg_cost_usd:.3f} | {r.avg_steps:.1f} |")
    if with_analysis:
        lines += [
            "",
            "| Task Outcome | Average Reward |",
            "|---|---|",
            f"| Resolved Tasks | {_fmt_reward(analysis.mean_reward_resolved)} |",
            f"| Unresolved Tasks | {_fmt_reward(analysis.mean_reward_unresolved)} |",
            "",
            f"Reward basis: {analysis.basis} (step-weighted).",
        ]
    return "\n".join(lines) + "\n"


def parse_report(doc: str) -> tuple[dict[str, RunReport], RewardAnalysis | None]:
    obj = json.loads(doc)
    runs = {m: RunReport(**r) for m, r in obj["runs"].items()}
    analysis = RewardAnalysis(**obj["reward_analysis"]) if "reward_analysis" in obj else None
    return runs, analysis
