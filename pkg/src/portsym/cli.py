"""Command-line entry point: ``portsym <command> ...``.

File formats: datasets use the text format of :func:`portsym.core.save`;
partitions, portable models, grounded models, goal files, start files and
experiment configs are JSON (see README).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import core
from .domains import FAMILIES, make_env, task_suite
from .partition import DEFAULT_MIN_SAMPLES, DEFAULT_OVERLAP, partition_all, save_partitions
from .symbols import DISCARD_THRESHOLD, SIMILARITY_THRESHOLD, PortableModel, merge_models

CONDITION_ALIASES = {"portable": "portable", "task": "task-specific", "task-specific": "task-specific"}


def _json_arg(text: str) -> dict:
    """Inline JSON, or the path of a JSON file."""
    p = Path(text)
    if not text.lstrip().startswith("{") and p.exists():
        text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not JSON or a JSON file: {exc}") from None


def _task_descriptor(args) -> dict:
    desc = dict(args.task or {})
    desc.setdefault("family", args.domain)
    if desc["family"] != args.domain:
        raise SystemExit(f"task family {desc['family']!r} does not match --domain {args.domain!r}")
    if args.level is not None:
        desc["level"] = args.level
    if args.domain == "treasure":
        desc.setdefault("level", 0)
    if args.domain == "rodblock" and "blocks" not in desc:
        from .domains import random_task
        desc = random_task(2, seed=args.seed).descriptor()
    return desc


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def _load_model(path) -> PortableModel:
    return PortableModel.from_dict(json.loads(Path(path).read_text()))


def _load_goals(path):
    g = json.loads(Path(path).read_text())
    return np.asarray(g["states"], dtype=float), np.asarray(g["in_goal"], dtype=bool)


# -- commands --------------------------------------------------------------------

def cmd_collect(args) -> int:
    env = make_env(_task_descriptor(args), seed=args.seed)
    ds = core.collect(env, args.budget, args.seed, explore=args.explore)
    core.save(ds, args.out)
    print(f"{len(ds)} transitions ({int(ds.success.sum()) if len(ds) else 0} successful) -> {args.out}")
    return 0


def cmd_partition(args) -> int:
    ds = core.load(args.input)
    parts = partition_all(ds, args.space, eps=args.eps, min_samples=args.min_samples,
                          overlap_threshold=args.overlap, noise=args.noise)
    save_partitions(parts, args.out)
    print(f"{len(parts)} partitions -> {args.out}")
    return 0


def cmd_learn_portable(args) -> int:
    from .pipeline import learn_portable
    ds = core.load(args.input)
    # option names are shared by every task of a family
    env = make_env(task_suite(ds.domain_family, 1)[0])
    env_names = {o.option_id: o.name for o in env.options}
    model = learn_portable(ds, env_names, eps=args.eps, min_samples=args.min_samples,
                           overlap_threshold=args.overlap, negatives=args.negatives,
                           discard_threshold=args.discard_threshold,
                           similarity_threshold=args.similarity_threshold, seed=args.seed)
    if args.append_model:
        model = merge_models(_load_model(args.append_model), model, args.similarity_threshold)
    _write_json(model.to_dict(), args.out)
    print(f"{len(model.rules)} rules, {len(model.vocabulary)} symbols -> {args.out}")
    return 0


def cmd_ground(args) -> int:
    from .pipeline import ground_task
    model = _load_model(args.model)
    ds = core.load(args.input)
    states, flags = _load_goals(args.goals) if args.goals else (None, None)
    kwargs = {k: v for k, v in (("eps", args.eps), ("min_samples", args.min_samples)) if v is not None}
    gm = ground_task(model, ds, states, flags, seed=args.seed, **kwargs)
    gm.save(args.out)
    print(f"{len(gm.labeling)} labels, {len(gm.operators)} operators -> {args.out}")
    return 0


def cmd_emit_ppddl(args) -> int:
    from .ground import GroundedModel
    from .ppddl import emit_ppddl
    text = emit_ppddl(GroundedModel.load(args.grounded))
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def cmd_plan(args) -> int:
    from .ground import GroundedModel, fit_goal
    from .plan import BeliefState, search_plan
    gm = GroundedModel.load(args.grounded)
    start = json.loads(Path(args.start).read_text())
    states = np.atleast_2d(np.asarray(start["states"], dtype=float))
    if gm.space == "problem":
        obs, labels = states, np.zeros(len(states), int)
    else:
        if "obs" in start:
            obs = np.atleast_2d(np.asarray(start["obs"], dtype=float))
        elif "task" in start:
            env = make_env(start["task"])
            obs = np.array([env.observe(s) for s in states])
        else:
            raise SystemExit("start file needs 'obs' or a 'task' descriptor to compute observations")
        labels = gm.labeling.assign(states)
    keep = labels >= 0
    if not keep.any():
        raise SystemExit("no start state falls in a known partition label")
    if args.goals:
        gstates, flags = _load_goals(args.goals)
        gm.goal = fit_goal(gstates, flags, seed=args.seed, scale=gm.labeling.scale)
        gm._goal_cache.clear()
    Z = BeliefState.uniform(obs[keep], labels[keep])
    plan = search_plan(gm, Z, goal=gm.goal is not None, max_depth=args.max_depth, prob_floor=args.prob_floor,
                       particles=args.particles, seed=args.seed)
    record = {"found": plan is not None}
    if plan is not None:
        record.update(steps=[[int(o), None if p is None else int(p)] for o, p in plan.steps],
                      names=plan.names, probability=plan.probability)
    print(json.dumps(record))
    return 0 if plan is not None else 1


def cmd_experiment(args) -> int:
    from .harness import ExperimentConfig, render_plot, run_transfer_experiment, write_curve
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("domain", "condition", "permutations", "seed", "num_tasks", "sample_step", "threshold",
                "goals_per_task"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    if "domain" not in base:
        raise SystemExit("--domain is required (or set 'domain' in the config file)")
    base["condition"] = CONDITION_ALIASES.get(base.get("condition", "portable"), base.get("condition"))
    cfg = ExperimentConfig(**base)
    points = run_transfer_experiment(cfg)
    write_curve(points, args.out_csv)
    if args.out_plot:
        render_plot({cfg.condition: points}, args.out_plot)
    for p in points:
        print(f"task {p.task}: {p.cumulative_samples:.1f} +- {p.stderr:.1f}")
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="portsym", description="Learn portable symbolic models from option data.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="gather transitions by random exploration")
    p.add_argument("--domain", choices=FAMILIES, required=True)
    p.add_argument("--task", type=_json_arg, help="task descriptor: inline JSON or a JSON file")
    p.add_argument("--level", type=int, help="treasure level index (shorthand for the descriptor)")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--explore", choices=("all", "initiable"), default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    def clustering(p, eps_default=None):
        p.add_argument("--eps", type=float, default=eps_default, help="clustering radius, fraction of data range")
        p.add_argument("--min-samples", type=int, default=DEFAULT_MIN_SAMPLES)
        p.add_argument("--overlap", type=float, default=DEFAULT_OVERLAP, help="start-set overlap for merging")

    p = sub.add_parser("partition", help="partition options into subgoal partitions")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--space", choices=("ego", "problem"), default="ego")
    clustering(p, 0.1)
    p.add_argument("--noise", choices=("attach", "discard"), default="attach")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("learn-portable", help="learn egocentric symbols and rules")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--append-model", help="existing model to accumulate into")
    clustering(p)
    p.add_argument("--negatives", choices=("failures", "other"), default="failures")
    p.add_argument("--discard-threshold", type=float, default=DISCARD_THRESHOLD)
    p.add_argument("--similarity-threshold", type=float, default=SIMILARITY_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_portable)

    p = sub.add_parser("ground", help="label a task and link a portable model to it")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--goals", help="JSON file with 'states' and 'in_goal'")
    p.add_argument("--eps", type=float)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("emit-ppddl", help="write a grounded model as PPDDL")
    p.add_argument("--grounded", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_emit_ppddl)

    p = sub.add_parser("plan", help="search for a plan reaching the goal")
    p.add_argument("--grounded", required=True)
    p.add_argument("--start", required=True, help="JSON file with 'states' and 'obs' or 'task'")
    p.add_argument("--goals", help="JSON goal samples (overrides the grounded goal)")
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--prob-floor", type=float, default=0.75)
    p.add_argument("--particles", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("experiment", help="run a transfer experiment")
    p.add_argument("--config", help="JSON config file; flags override its entries")
    p.add_argument("--domain", choices=FAMILIES)
    p.add_argument("--condition", choices=sorted(CONDITION_ALIASES))
    p.add_argument("--permutations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-tasks", type=int)
    p.add_argument("--sample-step", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--goals-per-task", type=int)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-plot")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except (core.DatasetParseError, core.DatasetValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
