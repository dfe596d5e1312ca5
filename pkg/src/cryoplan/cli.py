"""Command-line entry point: gen, train, eval, ablate, render, serve.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Outputs are written atomically; a crashed command never leaves a partial
file where a complete one stood.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .environment import EnvError, read_traj
from .eval import (EvalError, ablation_sweep, evaluate_planners, write_report,
                   write_results_csv)
from .planners import PlannerError, PlannerSpec
from .render import RenderError, overlay_filename, render_plan_overlay
from .volume import VolumeError, generate_phantom, load_case, save_case, _atomic_write_bytes

log = logging.getLogger("cryoplan")

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "cryoplan-manifest v1"
CURVE_HEADER = "step,mean_reward,eval_dice"

_RUNTIME_ERRORS = (VolumeError, EnvError, PlannerError, EvalError, RenderError,
                   OSError, ValueError, RuntimeError)


class CliError(RuntimeError):
    """Runtime failure with a user-facing message."""


# ---------------------------------------------------------------- dataset


def write_manifest(dataset_dir: Path, ids: list[str], split: float, seed: int) -> dict:
    order = list(ids)
    np.random.default_rng(seed).shuffle(order)
    n_dev = math.ceil(split * len(order))
    manifest = {
        "format": MANIFEST_FORMAT,
        "seed": seed,
        "split": split,
        "dev": order[:n_dev],
        "holdout": order[n_dev:],
    }
    _atomic_write_bytes(dataset_dir / MANIFEST_NAME,
                        (json.dumps(manifest, indent=1) + "\n").encode("utf-8"))
    return manifest


def load_manifest(dataset_dir: Path) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise CliError(f"no dataset manifest at {path}; run `cryoplan gen` first")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != MANIFEST_FORMAT:
        raise CliError(f"{path}: not a dataset manifest")
    return manifest


def load_split(dataset_dir: Path, which: str) -> list:
    manifest = load_manifest(dataset_dir)
    cases = []
    for case_id in manifest[which]:
        path = Path(dataset_dir) / f"{case_id}.cvol"
        if not path.exists():
            raise CliError(f"manifest names {case_id} but {path} is missing")
        cases.append(load_case(path))
    return cases


def _resolve_planner_specs(cfg: RunConfig, names, out_dir: Path) -> dict[str, PlannerSpec]:
    """Build runnable PlannerSpecs, loading the policy checkpoint for rl."""
    specs = {}
    for name in names:
        pc = cfg.planner_config(name)
        if pc.kind == "rl":
            from .rl.checkpoint import CheckpointError, load_checkpoint
            from .rl.policy import PolicyPlanner

            ckpt = Path(pc.checkpoint) if pc.checkpoint else out_dir / "policy.ckpt"
            try:
                net, _, _ = load_checkpoint(ckpt)
            except CheckpointError as exc:
                raise CliError(
                    f"planner '{name}' needs a policy checkpoint: {exc}. "
                    f"Train one with `cryoplan train` or point planners.{name}.checkpoint at it."
                ) from exc
            specs[name] = PlannerSpec("rl", policy=PolicyPlanner(net), seed=cfg.seed)
        else:
            specs[name] = PlannerSpec(
                pc.kind,
                diameter_grid=pc.diameter_grid,
                geometric=pc.geometric_settings(),
                seed=cfg.seed,
            )
    return specs


# ---------------------------------------------------------------- commands


def cmd_gen(cfg: RunConfig, out_dir: Path, quiet: bool) -> int:
    cfg.phantom.validate()
    dataset_dir = Path(cfg.dataset.dir)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    phantom = replace(cfg.phantom, seed=cfg.seed)
    ids = []
    for index in range(cfg.dataset.count):
        case = generate_phantom(phantom, index)
        save_case(case, dataset_dir / f"{case.id}.cvol")
        ids.append(case.id)
    manifest = write_manifest(dataset_dir, ids, cfg.dataset.split, cfg.seed)
    if not quiet:
        print(f"generated {len(ids)} cases in {dataset_dir} "
              f"(dev {len(manifest['dev'])}, holdout {len(manifest['holdout'])})")
    return 0


def cmd_train(cfg: RunConfig, out_dir: Path, quiet: bool, resume: bool) -> int:
    from .rl.training import STATE_SUFFIX, evaluate_policy_dice, train

    dev = load_split(Path(cfg.dataset.dir), "dev")
    train_cfg = replace(cfg.train, seed=cfg.seed)
    resume_from = None
    if resume:
        state_path = out_dir / ("policy.ckpt" + STATE_SUFFIX)
        if not state_path.exists():
            raise CliError(f"--resume given but no training state at {state_path}")
        resume_from = state_path
    net, curve = train(dev, cfg.env, train_cfg, out_dir=out_dir, resume_from=resume_from)

    lines = [CURVE_HEADER] + [f"{s},{repr(r)},{repr(d)}" for s, r, d in curve]
    _atomic_write_bytes(out_dir / "curve.csv", ("\n".join(lines) + "\n").encode("utf-8"))

    eval_cases = dev[-min(train_cfg.eval_cases, len(dev)):]
    final_dice = evaluate_policy_dice(net, eval_cases, cfg.env, train_cfg.seed)
    if not quiet:
        print(f"trained {train_cfg.total_steps} steps; "
              f"final eval dice {final_dice:.4f} over {len(eval_cases)} dev cases")
        print(f"checkpoint: {out_dir / 'policy.ckpt'}")
    return 0


def cmd_eval(cfg: RunConfig, out_dir: Path, quiet: bool) -> int:
    holdout = load_split(Path(cfg.dataset.dir), "holdout")
    if not holdout:
        raise CliError("holdout split is empty; regenerate the dataset with more cases")
    specs = _resolve_planner_specs(cfg, cfg.eval.planners, out_dir)
    report = evaluate_planners(holdout, specs, cfg.env, base_seed=cfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(out_dir / "results.csv", report.results)
    write_report(out_dir / "report.txt", report)
    if not quiet:
        for agg in report.aggregates.values():
            print(f"{agg.planner:<12} dice {agg.mean_dice:.4f} +/- {agg.std_dice:.4f} "
                  f"(n={agg.n}, plan {agg.mean_plan_time_s:.3f}s)")
        print(f"results: {out_dir / 'results.csv'}")
    return 0


def cmd_ablate(cfg: RunConfig, out_dir: Path, quiet: bool, component: str, values_arg: str) -> int:
    try:
        values = [float(v) for v in values_arg.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {values_arg!r}") from None
    if not values:
        raise ConfigError("--values is empty")

    dev = load_split(Path(cfg.dataset.dir), "dev")
    holdout = load_split(Path(cfg.dataset.dir), "holdout")
    train_cfg = replace(cfg.train, seed=cfg.seed)

    policy = None
    if component == "T":
        ckpt = out_dir / "policy.ckpt"
        if ckpt.exists():
            from .rl.checkpoint import load_checkpoint
            from .rl.policy import PolicyPlanner

            policy = PolicyPlanner(load_checkpoint(ckpt)[0])
    rows = ablation_sweep(component, values, dev, holdout, cfg.env, train_cfg, policy=policy)

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["component,value,mean_dice,std_dice,train_time_s,error"]
    for r in rows:
        lines.append(f"{r.component},{r.value:g},{repr(r.mean_dice)},{repr(r.std_dice)},"
                     f"{repr(r.train_time_s)},{r.error}")
    _atomic_write_bytes(out_dir / f"ablation_{component}.csv",
                        ("\n".join(lines) + "\n").encode("utf-8"))
    if not quiet:
        for r in rows:
            status = f"dice {r.mean_dice:.4f} +/- {r.std_dice:.4f}" if not r.error else f"FAILED: {r.error}"
            print(f"{component}={r.value:g}: {status}")
    return 0


def cmd_render(out_dir: Path, quiet: bool, case_path: str, traj_path: str,
               axis: str, indices_arg: str) -> int:
    case = load_case(case_path)
    plan = read_traj(traj_path)
    from .render import parse_axis

    ax = parse_axis(axis)
    if indices_arg:
        try:
            indices = [int(v) for v in indices_arg.split(",") if v.strip() != ""]
        except ValueError:
            raise ConfigError(f"--indices must be comma-separated integers, got {indices_arg!r}") from None
    else:
        indices = [case.meta.dims[ax] // 2]
    out_dir.mkdir(parents=True, exist_ok=True)
    for index in indices:
        name = overlay_filename(case.id, plan.visit_count, ax, index)
        path = render_plan_overlay(case, plan, ax, index, out_dir / name)
        if not quiet:
            print(path)
    return 0


def cmd_serve(cfg: RunConfig, out_dir: Path, quiet: bool, host: str, port: int) -> int:
    import uvicorn

    from .service import build_app

    dataset_dir = Path(cfg.dataset.dir)
    load_manifest(dataset_dir)  # fail before binding the port when no dataset exists
    app = build_app(cfg, out_dir)
    if not quiet:
        print(f"serving manual planning backend on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning" if quiet else "info")
    return 0


# ---------------------------------------------------------------- wiring


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="run configuration TOML file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the config output directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cryoplan",
        description="cryoablation planning sandbox: phantoms, planners, benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("gen", help="generate the phantom dataset and split manifest"))

    p_train = sub.add_parser("train", help="train the placement policy on the dev split")
    _add_common(p_train)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the saved training state in the output directory")

    _add_common(sub.add_parser("eval", help="benchmark planners on the holdout split"))

    p_ablate = sub.add_parser("ablate", help="sweep one component (Table-2 style)")
    _add_common(p_ablate)
    p_ablate.add_argument("component", choices=["shaping", "C", "T"])
    p_ablate.add_argument("--values", required=True, help="comma-separated values to sweep")

    p_render = sub.add_parser("render", help="render plan overlay slices to PNG files")
    _add_common(p_render)
    p_render.add_argument("case", help="path to a .cvol case file")
    p_render.add_argument("traj", help="path to a .traj trajectory file")
    p_render.add_argument("--axis", default="z", help="slice axis: x, y or z")
    p_render.add_argument("--indices", default="", help="comma-separated slice indices")

    p_serve = sub.add_parser("serve", help="run the manual planning HTTP backend")
    _add_common(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def _load_config(args: argparse.Namespace) -> tuple[RunConfig, Path]:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg, Path(cfg.out_dir)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return 0 if exit_.code in (0, None) else 1

    try:
        cfg, out_dir = _load_config(args)
        if args.quiet:
            logging.getLogger().setLevel(logging.WARNING)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "gen":
            return cmd_gen(cfg, out_dir, args.quiet)
        if args.command == "train":
            return cmd_train(cfg, out_dir, args.quiet, args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir, args.quiet)
        if args.command == "ablate":
            return cmd_ablate(cfg, out_dir, args.quiet, args.component, args.values)
        if args.command == "render":
            return cmd_render(out_dir, args.quiet, args.case, args.traj, args.axis, args.indices)
        if args.command == "serve":
            return cmd_serve(cfg, out_dir, args.quiet, args.host, args.port)
        parser.error(f"unknown command {args.command!r}")
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main(argv=sys.argv[1:]))
