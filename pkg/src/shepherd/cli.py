"""``shepherd`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from shepherd import analytics, dataset, loop, model, rewards, scorer
from shepherd.config import Config, apply_overrides, load_config
from shepherd.environment import (
    ShellEnvironment,
    SimEnvironment,
    generate_sim_task,
    load_sim_tasks,
    save_sim_task,
)
from shepherd.errors import ConfigError, ShepherdError, TransportError
from shepherd.model import Split, Task
from shepherd.policy import RemotePolicy, ScriptedPolicy, SimOraclePolicy

log = logging.getLogger("shepherd")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_TRANSPORT = 2


class MissingInput(ShepherdError):
    pass


def _require_path(path: str | Path, kind: str = "file") -> Path:
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise MissingInput(f"missing input {kind}: {p}")
    return p


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def parse_seeds(spec: str) -> list[int]:
    """``"1..50"`` (inclusive), ``"3,5,9"`` or a mix like ``"1..3,10"``."""
    seeds: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _tasks_index(path: str) -> dict[str, Task]:
    return {t.task_id: t for t in model.load_tasks(_require_path(path))}


def _load_trajectories(directory: str, tasks: dict[str, Task], budget: int) -> list[model.Trajectory]:
    out = []
    for path in sorted(_require_path(directory, "dir").glob("*.jsonl")):
        text = path.read_text(encoding="utf-8")
        first = next((ln for ln in text.splitlines() if ln.strip()), "")
        try:
            task_id = json.loads(first).get("task_id")
        except (json.JSONDecodeError, AttributeError):
            raise model.MalformedRecord(1, f"{path}: unreadable header") from None
        if task_id not in tasks:
            raise ShepherdError(f"{path}: unknown task {task_id!r}")
        out.append(model.parse_trajectory(text, tasks[task_id], budget))
    return out


def _make_env_factory(env_kind: str, cfg: Config, tasks_file: str, workspace: str | None):
    if env_kind == "sim":
        sims = load_sim_tasks(Path(tasks_file).parent / "sim")
        return lambda: SimEnvironment(sims, cfg.env.budget, cfg.env.obs_cap_bytes), sims
    if workspace is None:
        raise ConfigError("--workspace", "required for the shell environment")

    def factory():
        return ShellEnvironment(
            workspace, cfg.env.budget, cfg.env.action_timeout_s, cfg.env.obs_cap_bytes, cfg.env.test_command
        )

    return factory, {}


def _make_policy(args, cfg: Config, sims):
    if args.policy == "remote":
        return RemotePolicy(
            cfg.policy.base_url,
            cfg.policy.model_name,
            temperature=cfg.policy.temperature,
            price_per_mtok_prompt=cfg.policy.price_per_mtok_prompt,
            price_per_mtok_completion=cfg.policy.price_per_mtok_completion,
            timeout=cfg.policy.timeout_s,
            retries=cfg.policy.retries,
        )
    if args.script:
        script = json.loads(_require_path(args.script).read_text(encoding="utf-8"))
        return ScriptedPolicy({int(k): v for k, v in script.items()})
    if not sims:
        raise ConfigError("--policy", "scripted policy needs --script outside the sim environment")
    return SimOraclePolicy(sims, seed=args.policy_seed)


def _make_scorer(spec: str | None, cfg: Config):
    if spec is None:
        spec = f"{cfg.scorer.kind}:{cfg.scorer.model_path if cfg.scorer.kind == 'feature' else cfg.scorer.url}"
    kind, _, arg = spec.partition(":")
    if kind == "feature":
        return scorer.FeatureScorer(scorer.FeatureScorerModel.load(_require_path(arg)))
    if kind == "remote":
        return scorer.RemoteScorer(arg, timeout=cfg.scorer.timeout_s, retries=cfg.scorer.retries)
    if kind == "random":
        return scorer.RandomScorer(int(arg or 0))
    if kind == "constant":
        return scorer.ConstantScorer(float(arg or 0.5))
    raise ConfigError("--scorer", f"unknown scorer spec {spec!r}")


# --- subcommands ------------------------------------------------------------


def cmd_simgen(args, cfg: Config) -> int:
    out = Path(args.out)
    tasks = []
    for seed in parse_seeds(args.seeds):
        task, sim = generate_sim_task(seed, args.n_files, args.n_decoys, Split(args.split))
        (out / "sim").mkdir(parents=True, exist_ok=True)
        save_sim_task(out / "sim", task.task_id, sim)
        tasks.append(task)
    _write(out / "tasks.jsonl", model.dump_tasks(tasks))
    print(f"wrote {len(tasks)} simulated tasks to {out}")
    return EXIT_OK


def cmd_collect(args, cfg: Config) -> int:
    tasks = _tasks_index(args.tasks)
    factory, sims = _make_env_factory(args.env, cfg, args.tasks, args.workspace)
    policy = _make_policy(args, cfg, sims)
    out = Path(args.out)
    for task_id in sorted(tasks):
        traj = loop.run_unguided(tasks[task_id], policy, factory(), cfg.env.budget)
        _write(out / f"{task_id}.jsonl", traj.to_jsonl())
    print(f"collected {len(tasks)} trajectories into {out}")
    return EXIT_OK


def cmd_label(args, cfg: Config) -> int:
    tasks = _tasks_index(args.tasks)
    out = Path(args.out)
    trajs = _load_trajectories(args.trajectories, tasks, cfg.env.budget)
    for traj in trajs:
        labels = rewards.label_trajectory(traj, tasks[traj.task_id], cfg.reward, cfg.env.budget)
        _write(out / f"{traj.task_id}.jsonl", rewards.labels_to_jsonl(traj.task_id, labels))
    print(f"labeled {len(trajs)} trajectories into {out}")
    return EXIT_OK


def cmd_dataset(args, cfg: Config) -> int:
    tasks = _tasks_index(args.tasks)
    trajs = _load_trajectories(args.trajectories, tasks, cfg.env.budget)
    labeled = [(t, rewards.label_trajectory(t, tasks[t.task_id], cfg.reward, cfg.env.budget)) for t in trajs]
    samples, stats = dataset.build_dataset(
        labeled, tasks, cfg.dataset.history, cfg.dataset.obs_cap_bytes, cfg.env.budget
    )
    train, val = dataset.split_dataset(samples, cfg.dataset.val_fraction, cfg.dataset.seed)
    out = Path(args.out)
    _write(out / "train.jsonl", dataset.samples_to_jsonl(train))
    _write(out / "val.jsonl", dataset.samples_to_jsonl(val))
    doc = stats.to_json()
    doc["train_count"] = len(train)
    doc["val_count"] = len(val)
    _write(out / "stats.json", json.dumps(doc, indent=2) + "\n")
    print(f"{stats.sample_count} samples ({len(train)} train / {len(val)} val) written to {out}")
    return EXIT_OK


def cmd_train(args, cfg: Config) -> int:
    ds = _require_path(args.dataset, "dir")
    train = dataset.samples_from_jsonl(_require_path(ds / "train.jsonl").read_text(encoding="utf-8"))
    t = cfg.train
    fitted = scorer.train_feature_scorer(train, t.epochs, t.learning_rate, t.l2, t.seed)
    val_path = ds / "val.jsonl"
    val = dataset.samples_from_jsonl(val_path.read_text(encoding="utf-8")) if val_path.is_file() else []
    if len(val) >= 2:
        metrics = scorer.evaluate_scorer(scorer.FeatureScorer(fitted), val)
        fitted.training_meta["val_mse"] = metrics["mse"]
        fitted.training_meta["val_spearman_rho"] = metrics["spearman_rho"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fitted.save(out)
    print(f"trained on {len(train)} samples, final mse {fitted.training_meta['final_mse']:.6f}; model at {out}")
    return EXIT_OK


def cmd_run(args, cfg: Config) -> int:
    tasks = model.load_tasks(_require_path(args.tasks))
    factory, sims = _make_env_factory(args.env, cfg, args.tasks, args.workspace)
    policy = _make_policy(args, cfg, sims)
    sc = _make_scorer(args.scorer, cfg)
    results = loop.run_batch(
        tasks, policy, sc, factory, cfg.env.budget, cfg.policy.k, cfg.parallelism,
        cfg.dataset.history, cfg.dataset.obs_cap_bytes,
    )
    out = Path(args.out)
    _write(out / "results.jsonl", loop.results_to_jsonl(results))
    for r in results:
        if not r.failed and r.trajectory.steps:
            _write(out / "trajectories" / f"{r.task_id}.jsonl", r.trajectory.to_jsonl())
    report = analytics.summarize_run(results) if results else None
    if report:
        print(analytics.emit_report(report, fmt="markdown", method=args.method), end="")
    failed = [r for r in results if r.failed]
    if failed and len(failed) == len(results):
        log.error("all %d episodes failed; first error: %s", len(failed), failed[0].error)
        return EXIT_TRANSPORT
    return EXIT_OK


def _labels_for_results(args, cfg: Config, results: list[loop.EpisodeResult]):
    by_id = {r.task_id: r for r in results if not r.failed and r.trajectory.steps}
    labeled: list[tuple[model.Trajectory, list[rewards.StepReward]]] = []
    if args.labels:
        for path in sorted(_require_path(args.labels, "dir").glob("*.jsonl")):
            task_id, srs = rewards.labels_from_jsonl(path.read_text(encoding="utf-8"))
            if task_id in by_id:
                labeled.append((by_id[task_id].trajectory, srs))
    else:
        tasks = _tasks_index(args.tasks) if args.tasks else {}
        for task_id, r in sorted(by_id.items()):
            if task_id in tasks:
                labeled.append((r.trajectory, rewards.label_trajectory(r.trajectory, tasks[task_id], cfg.reward, cfg.env.budget)))
    if not labeled:
        return None
    if any(sr.normalized_label is None for _, srs in labeled for sr in srs):
        flat = [sr for _, srs in labeled for sr in srs]
        for sr, lab in zip(flat, dataset.normalize_labels([sr.G for sr in flat])):
            sr.normalized_label = lab
    return analytics.reward_gap(labeled)


def cmd_analyze(args, cfg: Config) -> int:
    res_dir = _require_path(args.results, "dir")
    results = loop.results_from_jsonl(_require_path(res_dir / "results.jsonl").read_text(encoding="utf-8"))
    runs = {}
    if args.baseline:
        base = loop.results_from_jsonl(
            _require_path(Path(args.baseline) / "results.jsonl").read_text(encoding="utf-8")
        )
        runs[args.baseline_method] = analytics.summarize_run(base)
    runs[args.method] = analytics.summarize_run(results)
    analysis = _labels_for_results(args, cfg, results) if (args.labels or args.tasks) else None
    doc = analytics.emit_report(runs, analysis, args.format)
    if args.out:
        _write(Path(args.out), doc)
    else:
        sys.stdout.write(doc)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shepherd", description="Step-reward labeling and reward-guided agent runs.")
    p.add_argument("--config", help="YAML/JSON config file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simgen", help="generate deterministic simulated tasks")
    s.add_argument("--seeds", required=True, help="e.g. 1..50 or 1,2,3")
    s.add_argument("--n-files", type=int, default=5)
    s.add_argument("--n-decoys", type=int, default=2)
    s.add_argument("--split", choices=[x.value for x in Split], default="train")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simgen)

    def agent_flags(sp, with_scorer: bool):
        sp.add_argument("--tasks", required=True)
        sp.add_argument("--env", choices=["sim", "shell"], default="sim")
        sp.add_argument("--policy", choices=["scripted", "remote"], default="scripted")
        sp.add_argument("--script", help="JSON {step_index: [actions]} for the scripted policy")
        sp.add_argument("--policy-seed", type=int, default=0)
        sp.add_argument("--workspace", help="workspace root for the shell environment")
        sp.add_argument("--budget", type=int)
        sp.add_argument("--out", required=True)
        if with_scorer:
            sp.add_argument("--scorer", help="feature:<model.json> | remote:<url> | random:<seed> | constant:<v>")
            sp.add_argument("--k", type=int)
            sp.add_argument("--parallel", type=int)
            sp.add_argument("--method", default=analytics.DEFAULT_METHOD)

    s = sub.add_parser("collect", help="run the unguided policy and record trajectories")
    agent_flags(s, with_scorer=False)
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("label", help="heuristic step rewards and discounted returns")
    s.add_argument("--trajectories", required=True)
    s.add_argument("--tasks", required=True)
    s.add_argument("--budget", type=int, help="step budget the trajectories were collected under")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("dataset", help="build the PRM training set")
    s.add_argument("--trajectories", required=True)
    s.add_argument("--tasks", required=True)
    s.add_argument("--budget", type=int, help="step budget the trajectories were collected under")
    s.add_argument("--history", type=int)
    s.add_argument("--val-frac", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dataset)

    s = sub.add_parser("train", help="fit the feature scorer")
    s.add_argument("--dataset", required=True, help="directory holding train.jsonl (and val.jsonl)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--l2", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("run", help="reward-guided episodes")
    agent_flags(s, with_scorer=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("analyze", help="resolution/cost/steps table and reward analysis")
    s.add_argument("--results", required=True)
    s.add_argument("--labels", help="directory of reward-label files for the run's trajectories")
    s.add_argument("--tasks", help="task file; labels the run's trajectories when --labels is absent")
    s.add_argument("--budget", type=int, help="step budget of the run, used when labeling with --tasks")
    s.add_argument("--baseline", help="results directory of a baseline run, shown as an extra row")
    s.add_argument("--baseline-method", default="baseline")
    s.add_argument("--method", default=analytics.DEFAULT_METHOD)
    s.add_argument("--format", choices=["markdown", "json"], default="markdown")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)
    return p


def _overrides(args) -> dict[str, Any]:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "env.budget": get("budget"),
        "policy.k": get("k"),
        "parallelism": get("parallel"),
        "dataset.history": get("history"),
        "dataset.val_fraction": get("val_frac"),
        "dataset.seed": get("seed") if args.command == "dataset" else None,
        "train.epochs": get("epochs"),
        "train.learning_rate": get("lr"),
        "train.l2": get("l2"),
        "train.seed": get("seed") if args.command == "train" else None,
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), _overrides(args))
        return args.func(args, cfg)
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ShepherdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
