import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shepherd.analytics import RewardAnalysis, emit_report, parse_report, reward_gap, summarize_run
from shepherd.errors import EmptyResults, MissingLabels
from shepherd.model import Step, Trajectory
from shepherd.rewards import StepReward
from synth import episode, labeled_with_means, run_with_aggregates


def test_summary_example():
    rep = summarize_run([episode("b", False, 20, 0.06), episode("a", True, 10, 0.04)])
    assert rep.resolved_rate == 0.5 and rep.avg_steps == 15
    assert rep.avg_cost_usd == pytest.approx(0.05, abs=1e-15)
    assert [r["task_id"] for r in rep.rows] == ["a", "b"]
    assert rep.resolved_count == 1 and rep.n_tasks == 2


def test_all_resolved():
    assert summarize_run([episode("a", True, 3, 0), episode("b", True, 4, 0)]).resolved_rate == 1.0


def test_empty_results():
    with pytest.raises(EmptyResults):
        summarize_run([])


def test_reference_rows_from_aggregates():
    base = summarize_run(run_with_aggregates(100, 57, 0.029, 15.2))
    guided = summarize_run(run_with_aggregates(100, 51, 0.053, 12.2))
    assert (base.resolved_rate, round(base.avg_cost_usd, 3), round(base.avg_steps, 1)) == (0.57, 0.029, 15.2)
    assert (guided.resolved_rate, round(guided.avg_cost_usd, 3), round(guided.avg_steps, 1)) == (0.51, 0.053, 12.2)
    md = emit_report({"baseline": base, "reward-guided": guided}, fmt="markdown")
    assert "| baseline | 57% | 0.029 | 15.2 |" in md
    assert "| reward-guided | 51% | 0.053 | 12.2 |" in md


results_st = st.lists(
    st.builds(
        episode,
        st.text("abcdef", min_size=1, max_size=4),
        st.booleans(),
        st.integers(0, 30),
        st.floats(0, 1, allow_nan=False),
    ),
    min_size=1,
    max_size=30,
)


@settings(max_examples=100)
@given(results_st, st.randoms())
def test_permutation_invariance(results, rnd):
    shuffled = list(results)
    rnd.shuffle(shuffled)
    a, b = summarize_run(results), summarize_run(shuffled)
    assert a.resolved_rate == b.resolved_rate
    assert a.avg_steps == b.avg_steps and a.avg_cost_usd == b.avg_cost_usd


@settings(max_examples=100)
@given(results_st, st.integers(1, 5), st.integers(0, 10_000))
def test_partition_weighted_means(results, n_groups, seed):
    rng = random.Random(seed)
    groups = [[] for _ in range(n_groups)]
    for r in results:
        groups[rng.randrange(n_groups)].append(r)
    parts = [summarize_run(g) for g in groups if g]
    full = summarize_run(results)
    n = len(results)
    for attr in ("resolved_rate", "avg_cost_usd", "avg_steps"):
        combined = math.fsum(getattr(p, attr) * p.n_tasks for p in parts) / n
        assert combined == pytest.approx(getattr(full, attr), abs=1e-12)


def labeled_groups(resolved_labels, unresolved_labels):
    out = []
    for flag, groups in ((True, resolved_labels), (False, unresolved_labels)):
        for j, labels in enumerate(groups):
            traj = Trajectory(f"{flag}-{j}", tuple(Step.from_action(i, "ls", "", True) for i in range(len(labels))), flag)
            out.append((traj, [StepReward(i, {}, 0, 0, normalized_label=x) for i, x in enumerate(labels)]))
    return out


def test_reward_gap_example():
    a = reward_gap(labeled_groups([[0.6, 0.4]], [[0.5]]))
    assert a.mean_reward_resolved == pytest.approx(0.5)
    assert a.mean_reward_unresolved == pytest.approx(0.5)
    assert (a.n_steps_resolved, a.n_steps_unresolved) == (2, 1)


def test_reward_gap_is_step_weighted():
    a = reward_gap(labeled_groups([[1.0], [0.0, 0.0, 0.0]], []))
    assert a.mean_reward_resolved == pytest.approx(0.25)


def test_reward_gap_absent_group():
    a = reward_gap(labeled_groups([[0.2, 0.8]], []))
    assert a.mean_reward_unresolved is None and a.n_steps_unresolved == 0


def test_reward_gap_reference_values():
    a = reward_gap(labeled_with_means(0.4894, 0.4818))
    assert round(a.mean_reward_resolved, 4) == 0.4894
    assert round(a.mean_reward_unresolved, 4) == 0.4818


def test_reward_gap_missing_labels():
    traj = Trajectory("t", (Step.from_action(0, "ls", "", True),), True)
    with pytest.raises(MissingLabels):
        reward_gap([(traj, [StepReward(0, {}, 0, 0)])])


@given(st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=5), max_size=5),
       st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=5), max_size=5))
def test_reward_gap_means_in_unit_interval(res, unres):
    a = reward_gap(labeled_groups(res, unres))
    for m in (a.mean_reward_resolved, a.mean_reward_unresolved):
        assert m is None or 0.0 <= m <= 1.0


def test_json_round_trip():
    rep = summarize_run(run_with_aggregates(10, 4, 0.01, 7.5))
    ana = reward_gap(labeled_with_means(0.6, 0.3))
    doc = emit_report(rep, ana, fmt="json")
    runs, back = parse_report(doc)
    assert runs == {"reward-guided": rep} and back == ana
    assert emit_report(runs["reward-guided"], back, fmt="json") == doc
    assert json.loads(doc)["reward_analysis"]["basis"] == "normalized_label"


def test_markdown_layout():
    rep = summarize_run([episode("a", True, 12, 0.0534), episode("b", False, 13, 0.05)])
    md = emit_report(rep, reward_gap(labeled_with_means(0.4894, 0.4818)), fmt="markdown", method="shepherd")
    lines = md.splitlines()
    assert lines[0] == "| Method | % Resolved | Avg. $ | Avg. Steps |"
    assert lines[2] == "| shepherd | 50% | 0.052 | 12.5 |"
    assert "| Resolved Tasks | 0.4894 |" in md and "| Unresolved Tasks | 0.4818 |" in md
    assert emit_report(rep, fmt="markdown") == emit_report(rep, fmt="markdown")


def test_markdown_omits_empty_analysis():
    rep = summarize_run([episode("a", True, 1, 0)])
    md = emit_report(rep, RewardAnalysis(None, None, 0, 0), fmt="markdown")
    assert "Average Reward" not in md
    assert "reward_analysis" not in emit_report(rep, RewardAnalysis(None, None, 0, 0), fmt="json")
    with pytest.raises(ValueError):
        emit_report(rep, fmt="html")


def test_percent_formatting():
    rep = summarize_run([episode(str(i), i == 0, 1, 0) for i in range(3)])
    assert "| 33.3% |" in emit_report(rep, fmt="markdown")
