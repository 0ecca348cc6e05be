"""Command-line front end for the full pipeline.

Subcommands mirror the pipeline stages and communicate purely through
files, so every stage can be re-run from the previous stage's outputs:

    gen-suite -> train -> eval -> collect -> learn-rules -> report
    -> shield-eval, or `pipeline` for all of them in order.
"""

import argparse
import configparser
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from . import agent, bdr, guardrail, gridworld, summary, trace
from .bdr import BdrConfig


@dataclass
class PipelineConfig:
    lava_min: int = 1
    lava_max: int = 4
    max_steps: int = 100
    train: agent.TrainConfig = field(default_factory=agent.TrainConfig)
    eval_suite_seed: int = 20000
    eval_suite_size: int = 100
    trace_suite_seed: int = 30000
    trace_suite_size: int = 500
    run_seeds: tuple = (1, 2, 3)
    episodes_per_layout: int = 1
    bdr: BdrConfig = field(default_factory=BdrConfig)
    split_seed: int = 0
    test_fraction: float = 0.2


def load_config(path=None):
    """Read a sectioned key=value config file; missing keys keep their
    defaults."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)

    def get(section, key, cast, default):
        if parser.has_option(section, key):
            return cast(parser.get(section, key))
        return default

    cfg.lava_min = get("environment", "lava_min", int, cfg.lava_min)
    cfg.lava_max = get("environment", "lava_max", int, cfg.lava_max)
    cfg.max_steps = get("environment", "max_steps", int, cfg.max_steps)

    t = cfg.train
    cfg.train = replace(
        t,
        learning_rate=get("agent", "learning_rate", float, t.learning_rate),
        final_learning_rate=get("agent", "final_learning_rate", float,
                                t.final_learning_rate),
        gamma=get("agent", "gamma", float, t.gamma),
        optimizer=get("agent", "optimizer", str, t.optimizer),
        symmetry_augment=get("agent", "symmetry_augment",
                             lambda s: s.strip().lower() in ("1", "true",
                                                             "yes", "on"),
                             t.symmetry_augment),
        random_start=get("agent", "random_start",
                         lambda s: s.strip().lower() in ("1", "true",
                                                         "yes", "on"),
                         t.random_start),
        select_interval=get("agent", "select_interval", int,
                            t.select_interval),
        select_suite_seed=get("agent", "select_suite_seed", int,
                              t.select_suite_seed),
        select_suite_size=get("agent", "select_suite_size", int,
                              t.select_suite_size),
        epsilon_start=get("agent", "epsilon_start", float, t.epsilon_start),
        epsilon_end=get("agent", "epsilon_end", float, t.epsilon_end),
        epsilon_fraction=get("agent", "epsilon_fraction", float,
                             t.epsilon_fraction),
        batch_size=get("agent", "batch_size", int, t.batch_size),
        target_sync_interval=get("agent", "target_sync_interval", int,
                                 t.target_sync_interval),
        total_env_steps=get("agent", "total_env_steps", int, t.total_env_steps),
        buffer_capacity=get("agent", "buffer_capacity", int, t.buffer_capacity),
        warmup_steps=get("agent", "warmup_steps", int, t.warmup_steps),
        suite_size=get("agent", "train_suite_size", int, t.suite_size),
        suite_seed=get("agent", "train_suite_seed", int, t.suite_seed),
        lava_min=cfg.lava_min, lava_max=cfg.lava_max, max_steps=cfg.max_steps,
    )

    cfg.eval_suite_seed = get("eval", "suite_seed", int, cfg.eval_suite_seed)
    cfg.eval_suite_size = get("eval", "suite_size", int, cfg.eval_suite_size)
    cfg.trace_suite_seed = get("trace", "suite_seed", int, cfg.trace_suite_seed)
    cfg.trace_suite_size = get("trace", "suite_size", int, cfg.trace_suite_size)
    if parser.has_option("trace", "run_seeds"):
        cfg.run_seeds = tuple(int(s) for s in
                              parser.get("trace", "run_seeds").split(","))
    cfg.episodes_per_layout = get("eval", "episodes_per_layout", int,
                                  cfg.episodes_per_layout)

    b = cfg.bdr
    cfg.bdr = bdr.BdrConfig(
        lambda0=get("bdr", "lambda0", float, b.lambda0),
        lambda1=get("bdr", "lambda1", float, b.lambda1),
        max_degree=get("bdr", "max_degree", int, b.max_degree),
        max_clauses=get("bdr", "max_clauses", int, b.max_clauses),
        max_cg_iterations=get("bdr", "max_cg_iterations", int,
                              b.max_cg_iterations),
    )
    cfg.split_seed = get("report", "split_seed", int, cfg.split_seed)
    cfg.test_fraction = get("report", "test_fraction", float, cfg.test_fraction)
    return cfg


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _train_one(args):
    config, suite = args
    net, log = agent.train(config, suite=suite)
    return net, log


def train_seeds(config, suite, run_seeds, jobs=1):
    """Train one agent per run seed; deterministic regardless of jobs."""
    configs = [(replace(config, seed=s), suite) for s in run_seeds]
    if jobs > 1 and len(run_seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_one, configs))
    else:
        results = [_train_one(c) for c in configs]
    return dict(zip(run_seeds, results))


def _fmt_eval(res):
    return (f"episodes={res.episodes} mean_reward={res.mean_reward:.4f} "
            f"stddev={res.reward_stddev:.4f} success={res.success_rate:.4f} "
            f"lava={res.lava_rate:.4f} timeout={res.timeout_rate:.4f}")


def cmd_gen_suite(args, cfg):
    exclude = set()
    for path in args.exclude or []:
        exclude |= {gridworld.layout_hash(l)
                    for l in gridworld.read_suite(_require(path))}
    suite = gridworld.generate_suite(args.base_seed, args.count,
                                     cfg.lava_min, cfg.lava_max,
                                     exclude_hashes=exclude)
    gridworld.write_suite(suite, args.out)
    print(f"wrote {len(suite)} layouts to {args.out}")
    return 0


def cmd_train(args, cfg):
    suite = gridworld.read_suite(_require(args.suite))
    config = replace(cfg.train, seed=args.seed)
    net, log = agent.train(config, suite=suite)
    agent.save_checkpoint(net, args.out)
    if args.log:
        agent.write_train_log(log, args.log)
    print(f"trained seed {args.seed} for {config.total_env_steps} steps; "
          f"checkpoint -> {args.out}")
    return 0


def cmd_eval(args, cfg):
    net = agent.load_checkpoint(_require(args.checkpoint))
    suite = gridworld.read_suite(_require(args.suite))
    res = agent.evaluate(net, suite, args.episodes_per_layout, cfg.max_steps)
    print(_fmt_eval(res))
    return 0


def cmd_collect(args, cfg):
    suite = gridworld.read_suite(_require(args.suite))
    policies = {}
    for spec in args.checkpoint:
        seed_str, _, path = spec.partition("=")
        if not path:
            raise ValueError(f"--checkpoint expects SEED=PATH, got {spec!r}")
        policies[int(seed_str)] = agent.load_checkpoint(_require(path))
    records = trace.collect(policies, suite, cfg.max_steps)
    trace.write_trace(records, args.out)
    episodes = len({(r.run_seed, r.episode) for r in records})
    print(f"collected {len(records)} records over {episodes} episodes -> {args.out}")
    return 0


def cmd_learn_rules(args, cfg):
    records = trace.read_trace(_require(args.trace))
    stages = []
    if args.stage in ("both", "forward_vs_turn"):
        stages.append((trace.Stage.ForwardVsTurn, args.out_turn))
    if args.stage in ("both", "left_vs_right"):
        stages.append((trace.Stage.LeftVsRight, args.out_right))
    for stage, out in stages:
        dataset = trace.binarize(records, stage)
        if dataset.labels.all() or not dataset.labels.any():
            raise ValueError(f"stage {stage.value} dataset is single-class; "
                             "cannot fit a classifier")
        ruleset, info = bdr.fit(dataset, cfg.bdr, return_info=True)
        bdr.write_ruleset(ruleset, out, cfg.bdr, info.objective)
        print(f"{stage.value}: {ruleset.render()}  (objective "
              f"{info.objective:.6f}, certificate "
              f"{'ok' if info.certificate_ok else 'FAILED'}) -> {out}")
    return 0


def cmd_report(args, cfg):
    records = trace.read_trace(_require(args.trace))
    model = summary.StageModel(
        stage1=bdr.read_ruleset(_require(args.rules_turn)),
        stage2=bdr.read_ruleset(_require(args.rules_right)))
    report = summary.metrics(model, records, test_fraction=cfg.test_fraction,
                             seed=cfg.split_seed)
    text = summary.render_report(model, report, "text")
    structured = summary.render_report(model, report, "structured")
    with open(args.text_out, "w") as fh:
        fh.write(text)
    with open(args.json_out, "w") as fh:
        fh.write(structured)
    print(text)
    print(f"report -> {args.text_out}, {args.json_out}")
    return 0


def cmd_shield_eval(args, cfg):
    net = agent.load_checkpoint(_require(args.checkpoint))
    suite = gridworld.read_suite(_require(args.suite))
    if args.guardrails:
        spec = guardrail.read_guardrails(_require(args.guardrails))
    else:
        ruleset = bdr.read_ruleset(_require(args.rules))
        spec = guardrail.compile_guardrails(ruleset)
        if args.guardrails_out:
            guardrail.write_guardrails(spec, args.guardrails_out)
    res = guardrail.evaluate_shielded(net, spec, suite,
                                      cfg.episodes_per_layout, cfg.max_steps)
    lines = [
        "base:     " + _fmt_eval(res.base),
        "shielded: " + _fmt_eval(res.shielded),
        f"delta: success {res.delta_success_rate:+.4f} "
        f"lava {res.delta_lava_rate:+.4f} reward {res.delta_mean_reward:+.4f} "
        f"fallbacks={res.fallback_events}",
    ]
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out)
    print(out, end="")
    return 0


def cmd_pipeline(args, cfg):
    outdir = args.out_dir
    os.makedirs(outdir, exist_ok=True)
    path = lambda name: os.path.join(outdir, name)

    train_suite = gridworld.generate_suite(cfg.train.suite_seed,
                                           cfg.train.suite_size,
                                           cfg.lava_min, cfg.lava_max)
    train_hashes = {gridworld.layout_hash(l) for l in train_suite}
    eval_suite = gridworld.generate_suite(cfg.eval_suite_seed,
                                          cfg.eval_suite_size,
                                          cfg.lava_min, cfg.lava_max,
                                          exclude_hashes=train_hashes)
    test_suite = gridworld.generate_suite(cfg.trace_suite_seed,
                                          cfg.trace_suite_size,
                                          cfg.lava_min, cfg.lava_max,
                                          exclude_hashes=train_hashes)
    gridworld.write_suite(train_suite, path("train_suite.txt"))
    gridworld.write_suite(eval_suite, path("eval_suite.txt"))
    gridworld.write_suite(test_suite, path("test_suite.txt"))
    print(f"suites: train={len(train_suite)} eval={len(eval_suite)} "
          f"test={len(test_suite)}")

    results = train_seeds(cfg.train, train_suite, cfg.run_seeds, args.jobs)
    policies = {}
    eval_lines = []
    for seed, (net, log) in results.items():
        agent.save_checkpoint(net, path(f"checkpoint_seed{seed}.npz"))
        agent.write_train_log(log, path(f"train_log_seed{seed}.csv"))
        policies[seed] = net
        res = agent.evaluate(net, eval_suite, cfg.episodes_per_layout,
                             cfg.max_steps)
        line = f"seed {seed}: {_fmt_eval(res)}"
        eval_lines.append(line)
        print("eval " + line)
    with open(path("eval.txt"), "w") as fh:
        fh.write("\n".join(eval_lines) + "\n")

    records = trace.collect(policies, test_suite, cfg.max_steps)
    trace.write_trace(records, path("trace.csv"))
    episodes = len({(r.run_seed, r.episode) for r in records})
    print(f"trace: {len(records)} records, {episodes} episodes")

    model = summary.fit_two_stage(records, cfg.bdr)
    bdr.write_ruleset(model.stage1, path("rules_turn.json"), cfg.bdr)
    bdr.write_ruleset(model.stage2, path("rules_right.json"), cfg.bdr)
    print("stage1:", model.stage1.render())
    print("stage2:", model.stage2.render())

    report = summary.metrics(model, records, test_fraction=cfg.test_fraction,
                             seed=cfg.split_seed)
    with open(path("report.txt"), "w") as fh:
        fh.write(summary.render_report(model, report, "text"))
    with open(path("report.json"), "w") as fh:
        fh.write(summary.render_report(model, report, "structured"))

    spec = guardrail.compile_guardrails(model.stage1)
    guardrail.write_guardrails(spec, path("guardrails.json"))
    shield_lines = []
    for seed, net in policies.items():
        res = guardrail.evaluate_shielded(net, spec, test_suite,
                                          cfg.episodes_per_layout,
                                          cfg.max_steps)
        shield_lines.append(f"seed {seed} base:     {_fmt_eval(res.base)}")
        shield_lines.append(f"seed {seed} shielded: {_fmt_eval(res.shielded)}")
        shield_lines.append(
            f"seed {seed} delta: success {res.delta_success_rate:+.4f} "
            f"lava {res.delta_lava_rate:+.4f} "
            f"reward {res.delta_mean_reward:+.4f} "
            f"fallbacks={res.fallback_events}")
    with open(path("shield_eval.txt"), "w") as fh:
        fh.write("\n".join(shield_lines) + "\n")
    print("\n".join(shield_lines))
    print(f"pipeline outputs in {outdir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gridrules",
        description="Train a gridworld Q-learning agent, summarize its "
                    "policy as boolean decision rules, and feed the rules "
                    "back as action guardrails.")
    parser.add_argument("--config", help="path to a sectioned key=value "
                        "config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the agent training seed")
    parser.add_argument("--jobs", type=int, default=1,
                        help="max worker processes for parallel stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-suite", help="generate a unique layout suite")
    p.add_argument("--base-seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--exclude", action="append",
                   help="suite file(s) whose hashes must not reappear")
    p.set_defaults(func=cmd_gen_suite)

    p = sub.add_parser("train", help="train one agent on a suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--episodes-per-layout", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("collect", help="record greedy traces on a suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   metavar="SEED=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("learn-rules", help="fit DNF rule sets from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--stage", choices=["both", "forward_vs_turn",
                                       "left_vs_right"], default="both")
    p.add_argument("--out-turn", default="rules_turn.json")
    p.add_argument("--out-right", default="rules_right.json")
    p.set_defaults(func=cmd_learn_rules)

    p = sub.add_parser("report", help="metrics report for learned rules")
    p.add_argument("--trace", required=True)
    p.add_argument("--rules-turn", required=True)
    p.add_argument("--rules-right", required=True)
    p.add_argument("--text-out", default="report.txt")
    p.add_argument("--json-out", default="report.json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("shield-eval", help="paired base vs shielded evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--rules", help="Turn rule set to compile into guardrails")
    p.add_argument("--guardrails", help="explicit guardrail spec file")
    p.add_argument("--guardrails-out")
    p.add_argument("--episodes-per-layout", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shield_eval)

    p = sub.add_parser("pipeline", help="run every stage in order")
    p.add_argument("--out-dir", default="pipeline_out")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.train = replace(cfg.train, seed=args.seed)
        if args.command == "shield-eval" and not (args.rules or args.guardrails):
            parser.error("shield-eval requires --rules or --guardrails")
        return args.func(args, cfg)
    except (ValueError, FileNotFoundError, RuntimeError,
            gridworld.LayoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
