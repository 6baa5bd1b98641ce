"""
Command-line runner for the preference-loss lab.

    python dpo_run.py contour --figure 1 --out results/
    python dpo_run.py toy --seed 7 --losses dpo,dpop,dpo-nll,bdpo --svg
    python dpo_run.py verify all
    python dpo_run.py sweep --lambda 0.1,0.3,0.5,0.7,0.9

Exit codes: 0 success, 1 runtime error or failed property, 2 usage error.
"""
import argparse
import copy
import json
import logging
import sys
from contextlib import contextmanager
from typing import Dict, List, Optional

import pandas as pd
import yaml

from contour.grid import (
    FIGURE2_ALPHAS,
    GridError,
    alpha_sweep,
    check_ranges,
    evaluate_grid,
    grid_argmin,
    pw_dominance,
)
from experiment_tools.output_utils import OutputRecorder, log_run_to_mlflow
from experiment_tools.seeding import auto_seed
from experiments.gradcheck import verify_gradients
from experiments.optim import OptimizerKind
from experiments.sweeps import alpha_sweep_toy, lambda_sweep, train_many
from experiments.task import TASK_MODES, generate_toy_task
from experiments.theorems import verify_corollary1, verify_theorem1, verify_theorem2_sweep
from experiments.training import TrainingConfig
from losses import ALL_KINDS, LossDomainError, LossKind, LossSpec
from neural.checkpoint import save_policy

logger = logging.getLogger("dpo_run")

DEFAULTS = {
    "seed": 1,
    "loss": {"beta": 0.1, "alpha": 1.0, "penalty": 5.0, "mixture": 0.5},
    "training": {
        "losses": [kind.value for kind in ALL_KINDS],
        "steps": 400,
        "lr": 0.05,
        "optimizer": OptimizerKind.ADAM.value,
        "line_search": False,
        "trace_every": 1,
        "hidden": 32,
        "task_mode": "main",
        "task_seed": None,
    },
    "contour": {
        "ref": [0.4, 0.1],
        "pw_range": [0.005, 0.995],
        "pl_range": [0.005, 0.5],
        "figure2_pl_range": [0.005, 0.25],
        "alphas": list(FIGURE2_ALPHAS),
        "resolution": [200, 200],
        "mask_simplex": False,
    },
    "verify": {
        "samples": 1000,
        "backprop_seeds": 20,
        "seeds": 20,
        "simplex_steps": 5000,
        "simplex_lr": 10.0,
        "theorem2_lambdas": [0.25, 0.5, 0.75],
        "theorem2_steps": 200,
        "theorem2_lr": 1.0,
        "corollary_ref": [0.4, 0.1],
    },
    "sweep": {"lambdas": [], "alphas": []},
}

# flag dest -> (config section, key); verify reads --steps/--lr as the simplex budget
FLAG_KEYS = {
    "seed": (None, "seed"),
    "beta": ("loss", "beta"),
    "alpha": ("loss", "alpha"),
    "penalty": ("loss", "penalty"),
    "mixture": ("loss", "mixture"),
    "steps": ("training", "steps"),
    "lr": ("training", "lr"),
    "line_search": ("training", "line_search"),
    "losses": ("training", "losses"),
    "optimizer": ("training", "optimizer"),
    "trace_every": ("training", "trace_every"),
    "hidden": ("training", "hidden"),
    "task_mode": ("training", "task_mode"),
    "task_seed": ("training", "task_seed"),
    "ref": ("contour", "ref"),
    "resolution": ("contour", "resolution"),
    "mask_simplex": ("contour", "mask_simplex"),
    "samples": ("verify", "samples"),
    "backprop_seeds": ("verify", "backprop_seeds"),
    "seeds": ("verify", "seeds"),
    "theorem2_lambdas": ("verify", "theorem2_lambdas"),
    "theorem2_steps": ("verify", "theorem2_steps"),
    "lambdas": ("sweep", "lambdas"),
    "alphas": ("sweep", "alphas"),
}
VERIFY_FLAG_KEYS = {"steps": ("verify", "simplex_steps"), "lr": ("verify", "simplex_lr")}


class UsageError(ValueError):
    """Flags or configuration that make a command impossible to run."""


@contextmanager
def usage_errors():
    # anything rejected while building specs/configs is a usage problem, not a runtime one
    try:
        yield
    except (LossDomainError, GridError, ValueError) as e:
        raise UsageError(str(e)) from e


def float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a comma-separated list of numbers")
    if not values:
        raise argparse.ArgumentTypeError("expected a non-empty comma-separated list")
    return values


def loss_list(text: str) -> List[str]:
    try:
        kinds = [LossKind.from_name(v).value for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))
    if not kinds:
        raise argparse.ArgumentTypeError("expected at least one loss")
    return kinds


def resolution_arg(text: str) -> List[int]:
    sizes = [int(v) for v in float_list(text)]
    return sizes * 2 if len(sizes) == 1 else sizes


def load_config_file(path: str) -> Dict:
    with open(path) as f:
        payload = json.load(f) if path.endswith(".json") else yaml.safe_load(f)
    if payload is None:
        return {}
    if not isinstance(payload, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    return payload


def _merge(base: Dict, update: Dict) -> Dict:
    for key, value in update.items():
        if key not in base:
            raise UsageError(f"unknown config key '{key}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key '{key}' must be a mapping")
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def resolve_config(args: argparse.Namespace) -> Dict:
    """Built-in defaults, then the config file, then explicitly given flags."""
    config = copy.deepcopy(DEFAULTS)
    if args.config:
        _merge(config, load_config_file(args.config))

    keys = dict(FLAG_KEYS)
    if args.command == "verify":
        keys.update(VERIFY_FLAG_KEYS)
    for dest, (section, key) in keys.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if section is None:
            config[key] = value
        else:
            config[section][key] = value

    contour = config["contour"]
    for dest, key, index in (
        ("pw_min", "pw_range", 0),
        ("pw_max", "pw_range", 1),
        ("pl_min", "pl_range", 0),
        ("pl_max", "pl_range", 1),
        ("pl_min", "figure2_pl_range", 0),
        ("pl_max", "figure2_pl_range", 1),
    ):
        value = getattr(args, dest, None)
        if value is not None:
            contour[key] = list(contour[key])
            contour[key][index] = value

    config["seed"] = auto_seed(int(config["seed"]))
    return config


def make_spec(config: Dict, kind, **overrides) -> LossSpec:
    params = dict(config["loss"])
    params.update(overrides)
    return LossSpec(LossKind(kind), **params)


def training_config(config: Dict, spec: LossSpec, **overrides) -> TrainingConfig:
    training = config["training"]
    params = dict(
        loss_spec=spec,
        steps=int(training["steps"]),
        learning_rate=float(training["lr"]),
        optimizer=OptimizerKind(training["optimizer"]),
        line_search=bool(training["line_search"]),
        seed=config["seed"],
        trace_every=int(training["trace_every"]),
        hidden=int(training["hidden"]),
    )
    params.update(overrides)
    return TrainingConfig(**params)


def _label(value: float) -> str:
    return f"{value:g}"


def cmd_contour(args, config: Dict, recorder: OutputRecorder) -> int:
    contour = config["contour"]
    ref = tuple(contour["ref"])
    resolution = tuple(contour["resolution"])
    with usage_errors():
        if len(ref) != 2:
            raise UsageError(f"--ref takes two probabilities, got {ref}")
        if args.figure == 1:
            jobs = [(make_spec(config, kind), contour["pl_range"], kind.value) for kind in ALL_KINDS]
        elif args.figure == 2:
            jobs = [
                (make_spec(config, LossKind.DPO_NLL, alpha=alpha), contour["figure2_pl_range"],
                 f"{LossKind.DPO_NLL.value}_alpha{_label(alpha)}")
                for alpha in contour["alphas"]
            ]
        else:
            if not args.losses:
                raise UsageError("contour needs --figure or --loss")
            jobs = [(make_spec(config, kind), contour["pl_range"], kind) for kind in args.losses]
        for spec, pl_range, _ in jobs:
            check_ranges(spec, tuple(contour["pw_range"]), tuple(pl_range))

    if args.figure == 2:
        alphas = [spec.alpha for spec, _, _ in jobs]
        grids = alpha_sweep(
            ref, alphas, config["loss"]["beta"], tuple(contour["pw_range"]),
            tuple(jobs[0][1]), resolution, contour["mask_simplex"],
        )
    else:
        grids = [
            evaluate_grid(spec, ref, tuple(contour["pw_range"]), tuple(pl_range), resolution,
                          contour["mask_simplex"])
            for spec, pl_range, _ in jobs
        ]

    for grid, (_, _, name) in zip(grids, jobs):
        print(f"======= Contour {name} =======")
        recorder.write_csv(grid.to_frame(), f"contour_{name}.csv")
        meta = grid.metadata()
        pw, pl, value = grid_argmin(grid)
        print(f"argmin pw={pw:.4g} pl={pl:.4g} loss={value:.6g}")
        meta["argmin"] = {"pw": pw, "pl": pl, "loss": value}
        recorder.metrics[f"{name}.argmin_loss"] = value
        try:
            meta["loss_at_ref"] = grid.value_at(*grid.ref)
            print(f"loss at reference {grid.ref}: {meta['loss_at_ref']:.6g}")
        except GridError:
            # ref outside the plotted ranges
            meta["loss_at_ref"] = None
        if args.figure == 2:
            meta["pw_dominance"] = pw_dominance(grid)
            print(f"pw dominance: {meta['pw_dominance']:.6g}")
            recorder.metrics[f"{name}.pw_dominance"] = meta["pw_dominance"]
        recorder.write_json(meta, f"contour_{name}.json")
        if args.svg:
            from plotters import plot_contour

            recorder.register(plot_contour(grid, recorder.path(f"contour_{name}.svg"), title=name))
    return 0


def _toy_summary(task, traces, names) -> pd.DataFrame:
    rows = []
    for name, trace in zip(names, traces):
        ref_probs = trace.reference.all_probs()
        final_probs = trace.policy.all_probs()
        for prompt in range(task.num_prompts):
            roles = task.roles(prompt)
            for response in range(task.num_responses):
                rows.append(
                    {
                        "loss": name,
                        "prompt": prompt,
                        "response": response,
                        "role": roles[response],
                        "p_ref": ref_probs[prompt, response],
                        "p_final": final_probs[prompt, response],
                    }
                )
    return pd.DataFrame(rows)


def cmd_toy(args, config: Dict, recorder: OutputRecorder) -> int:
    training = config["training"]
    task_seed = training["task_seed"] if training["task_seed"] is not None else config["seed"]
    with usage_errors():
        if training["task_mode"] not in TASK_MODES:
            raise UsageError(f"task mode must be one of {TASK_MODES}")
        names = [LossKind.from_name(name).value for name in training["losses"]]
        configs = [training_config(config, make_spec(config, name)) for name in names]
        task = generate_toy_task(int(task_seed), mode=training["task_mode"])

    for name in names:
        print(f"======= Training {name} =======")
    traces = train_many(task, configs, args.workers, progress=args.progress)

    frames = {}
    for name, trace in zip(names, traces):
        frames[name] = trace.to_frame()
        recorder.write_csv(frames[name], f"toy_{name}_trace.csv")
        recorder.write_csv(trace.to_frame(extended=True), f"toy_{name}_trace_ext.csv")
        recorder.write_json(trace.metadata, f"toy_{name}_metadata.json")
        final = trace.at_step(trace.last_step)
        recorder.metrics[f"{name}.final_mean_loss"] = final.loss.mean()
        if trace.stop_reason:
            print(f"{name}: {trace.stop_reason}")
        if args.save_checkpoints:
            recorder.register(save_policy(trace.policy, recorder.path(f"toy_{name}_policy.json")))
    if args.save_checkpoints:
        recorder.register(save_policy(traces[0].reference, recorder.path("toy_reference_policy.json")))

    summary = _toy_summary(task, traces, names)
    recorder.write_csv(summary, "toy_summary.csv")
    if args.svg:
        from plotters import plot_final_probabilities, plot_training_dynamics

        recorder.register(plot_training_dynamics(frames, recorder.path("toy_dynamics.svg")))
        recorder.register(plot_final_probabilities(summary, names, recorder.path("toy_final_probs.svg")))
    return 0


SUITES = ("theorem1", "theorem2", "corollary1", "gradients")


def cmd_verify(args, config: Dict, recorder: OutputRecorder) -> int:
    verify = config["verify"]
    loss = config["loss"]
    seed = config["seed"]
    suites = SUITES if args.suite == "all" else (args.suite,)
    seeds = range(seed, seed + int(verify["seeds"]))

    with usage_errors():
        spec_bdpo = make_spec(config, LossKind.BDPO)
        spec_dpo = make_spec(config, LossKind.DPO)
        theorem2_config = training_config(
            config,
            spec_bdpo,
            steps=int(verify["theorem2_steps"]),
            learning_rate=float(verify["theorem2_lr"]),
            optimizer=OptimizerKind.PLAIN_GD,
            line_search=True,
        )
        for mixture in verify["theorem2_lambdas"]:
            make_spec(config, LossKind.BDPO, mixture=mixture)

    report = {}
    for suite in suites:
        print(f"======= Verifying {suite} =======")
        if suite == "theorem1":
            report[suite] = verify_theorem1(
                seeds, beta=loss["beta"], mixture=loss["mixture"],
                steps=int(verify["simplex_steps"]), learning_rate=float(verify["simplex_lr"]),
                workers=args.workers,
            )
        elif suite == "theorem2":
            report[suite] = verify_theorem2_sweep(
                seeds, verify["theorem2_lambdas"], theorem2_config,
                task_mode=config["training"]["task_mode"], workers=args.workers,
            )
            total = len(report[suite]["per_seed"])
            print(f"trained runs: {report[suite]['trained_runs']}/{total}")
            recorder.metrics[f"{suite}.trained_runs"] = report[suite]["trained_runs"]
        elif suite == "corollary1":
            report[suite] = verify_corollary1(
                verify["corollary_ref"], spec_bdpo, spec_dpo,
                steps=int(verify["simplex_steps"]), learning_rate=float(verify["simplex_lr"]),
            )
        else:
            report[suite] = verify_gradients(
                samples=int(verify["samples"]), backprop_seeds=int(verify["backprop_seeds"]),
                beta=loss["beta"], alpha=loss["alpha"], penalty=loss["penalty"],
                mixture=loss["mixture"], seed=seed,
            )
        passed = report[suite]["passed"]
        recorder.metrics[f"{suite}.passed"] = float(passed)
        print(f"{suite}: {'PASS' if passed else 'FAIL'}")
        for name, ok in report[suite]["properties"].items():
            if not ok:
                print(f"  failed property: {name}")

    report["passed"] = all(report[suite]["passed"] for suite in suites)
    recorder.write_json(report, "verify_report.json")
    return 0 if report["passed"] else 1


def cmd_sweep(args, config: Dict, recorder: OutputRecorder) -> int:
    sweep = config["sweep"]
    if not sweep["lambdas"] and not sweep["alphas"]:
        raise UsageError("sweep needs a parameter list: --lambda or --alpha")
    training = config["training"]
    task_seed = training["task_seed"] if training["task_seed"] is not None else config["seed"]
    with usage_errors():
        base = training_config(config, make_spec(config, LossKind.DPO))
        for mixture in sweep["lambdas"]:
            make_spec(config, LossKind.BDPO, mixture=mixture)
        for alpha in sweep["alphas"]:
            make_spec(config, LossKind.DPO_NLL, alpha=alpha)
        task = generate_toy_task(int(task_seed), mode=training["task_mode"])

    results = []
    if sweep["lambdas"]:
        print(f"======= Sweeping lambda over {sweep['lambdas']} =======")
        results.append(lambda_sweep(task, base, sweep["lambdas"], args.workers))
    if sweep["alphas"]:
        print(f"======= Sweeping alpha over {sweep['alphas']} =======")
        results.append(alpha_sweep_toy(task, base, sweep["alphas"], args.workers))

    passed = True
    for result in results:
        recorder.write_csv(result.combined_frame(), f"sweep_{result.parameter}.csv")
        recorder.write_csv(result.summary_frame(), f"sweep_{result.parameter}_summary.csv")
        monotone = result.distance_monotone()
        recorder.metrics[f"{result.parameter}.distance_monotone"] = float(monotone)
        for value, distance in zip(result.values, result.distances()):
            print(f"{result.parameter}={value:g}: trace distance to dpo {distance:.6g}")
        # only the mixture weight has an ordering to honour; alpha moves away from dpo
        if result.parameter == "lambda" and not monotone:
            print("  failed property: lambda_distance_monotone")
            passed = False
    return 0 if passed else 1


COMMANDS = {"contour": cmd_contour, "toy": cmd_toy, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", default=None, type=int)
    common.add_argument("--out", default="results", type=str)
    common.add_argument("--config", "-c", default=None, metavar="FILE", help="YAML or JSON config file")
    common.add_argument("--beta", default=None, type=float)
    common.add_argument("--penalty", default=None, type=float)
    common.add_argument("--steps", default=None, type=int)
    common.add_argument("--lr", default=None, type=float)
    common.add_argument("--line-search", default=None, action="store_true")
    common.add_argument("--svg", default=False, action="store_true")
    common.add_argument("--progress", default=False, action="store_true")
    common.add_argument("--workers", default=1, type=int)
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--mlflow-experiment-name", default=None, type=str)

    loss_params = argparse.ArgumentParser(add_help=False)
    loss_params.add_argument("--alpha", default=None, type=float)
    loss_params.add_argument("--lambda", dest="mixture", default=None, type=float)

    parser = argparse.ArgumentParser(description="Preference-loss lab: DPO, DPOP, DPO+NLL and BDPO.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    contour = subparsers.add_parser("contour", parents=[common, loss_params])
    contour.add_argument("--figure", default=None, type=int, choices=[1, 2])
    contour.add_argument("--loss", "--losses", dest="losses", default=None, type=loss_list)
    contour.add_argument("--ref", default=None, type=float_list)
    contour.add_argument("--pw-min", default=None, type=float)
    contour.add_argument("--pw-max", default=None, type=float)
    contour.add_argument("--pl-min", default=None, type=float)
    contour.add_argument("--pl-max", default=None, type=float)
    contour.add_argument("--resolution", default=None, type=resolution_arg)
    contour.add_argument("--mask-simplex", default=None, action="store_true")

    toy = subparsers.add_parser("toy", parents=[common, loss_params])
    toy.add_argument("--losses", "--loss", dest="losses", default=None, type=loss_list)
    toy.add_argument("--optimizer", default=None, choices=[k.value for k in OptimizerKind])
    toy.add_argument("--trace-every", default=None, type=int)
    toy.add_argument("--hidden", default=None, type=int)
    toy.add_argument("--task-mode", default=None, choices=list(TASK_MODES))
    toy.add_argument("--task-seed", default=None, type=int)
    toy.add_argument("--save-checkpoints", default=False, action="store_true")

    verify = subparsers.add_parser("verify", parents=[common, loss_params])
    verify.add_argument("suite", nargs="?", default="all", choices=list(SUITES) + ["all"])
    verify.add_argument("--samples", default=None, type=int)
    verify.add_argument("--seeds", default=None, type=int)
    verify.add_argument("--backprop-seeds", default=None, type=int)
    verify.add_argument("--theorem2-lambdas", default=None, type=float_list)
    verify.add_argument("--theorem2-steps", default=None, type=int)

    sweep = subparsers.add_parser("sweep", parents=[common])
    sweep.add_argument("--lambda", dest="lambdas", default=None, type=float_list)
    sweep.add_argument("--alpha", dest="alphas", default=None, type=float_list)
    sweep.add_argument("--optimizer", default=None, choices=[k.value for k in OptimizerKind])
    sweep.add_argument("--trace-every", default=None, type=int)
    sweep.add_argument("--task-seed", default=None, type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    logging.basicConfig(level=getattr(logging, args.log_level))

    try:
        config = resolve_config(args)
    except (UsageError, OSError, yaml.YAMLError, json.JSONDecodeError) as e:
        print(f"error: bad configuration: {e}", file=sys.stderr)
        return 2

    try:
        recorder = OutputRecorder(args.out)
        code = COMMANDS[args.command](args, config, recorder)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception("%s failed", args.command)
        print(f"error: {e}", file=sys.stderr)
        return 1

    recorder.write_manifest(args.command, config, config["seed"])
    if args.mlflow_experiment_name:
        log_run_to_mlflow(
            args.mlflow_experiment_name, args.command, config, recorder.metrics, recorder.paths
        )
    return code


if __name__ == "__main__":
    sys.exit(main())
