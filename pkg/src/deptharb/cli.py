"""Command-line interface: optimization runs, gradient checks, sweeps, evaluation.

Config precedence is total and fixed: preset defaults < scene-file "config"
block < command-line flags.  Exit codes: 0 success, 1 input/usage error,
2 numerical abort, 3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from datetime import datetime, timezone
from typing import Any, Sequence

import numpy as np

from .attention import AttentionError, AttentionField
from .dumpio import DumpError, read_dump, round_trip32, write_dump
from .gradcheck import DEFAULT_REL_TOL, check_gradients
from .losses import ConfigError, GuidanceConfig
from .metrics import DEFAULT_REL_THRESHOLD, build_metric_report
from .optimizer import NumericalAbort, _final_stage, run_guidance
from .scene import SceneError, SceneSpec, canonical_scene, read_scene
from .surrogate import MODES, SurrogateError, init_latent

BLOB_DEFAULT_ETA0 = 0.5
SWEEP_PARAMS = (
    "lambda_ortho",
    "lambda_compact",
    "lambda0",
    "alpha",
    "tau",
    "eta0",
    "stage1_fraction",
)
_CONFIG_FLAGS = {
    "steps": "total_steps",
    "stage1_frac": "stage1_fraction",
    "eta": "eta0",
    "eta_decay": "eta_decay",
    "lambda0": "lambda0",
    "alpha": "alpha",
    "tau": "tau",
    "lambda_ortho": "lambda_ortho",
    "lambda_compact": "lambda_compact",
    "epsilon": "epsilon",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage errors, not argparse's 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# report serialization: floats carry 17 significant digits
# ---------------------------------------------------------------------------

def _fragment(value: Any, indent: int) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if not np.isfinite(x):
            raise ValueError(f"cannot serialize non-finite number {x}")
        return format(x, ".17g")
    if isinstance(value, str):
        import json

        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}  {_fragment(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        import json

        items = [
            f"{pad}  {json.dumps(str(k))}: {_fragment(v, indent + 1)}" for k, v in value.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    raise TypeError(f"cannot serialize {type(value)!r}")


def dumps_report(doc: dict) -> str:
    return _fragment(doc, 0) + "\n"


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def resolve_config(args, file_overrides: dict) -> GuidanceConfig:
    """defaults (per preset) < scene-file config block < command-line flags."""
    preset = getattr(args, "preset", None) or "main"
    merged: dict[str, Any] = {}
    merged.update(file_overrides)
    for flag, field_name in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field_name] = value
    mode = getattr(args, "mode", None) or "raster"
    if "eta0" not in merged and mode == "blob":
        merged["eta0"] = BLOB_DEFAULT_ETA0
    return GuidanceConfig.preset(preset).updated(**merged)


def _config_echo(cfg: GuidanceConfig, args) -> dict:
    echo = cfg.as_dict()
    echo["mode"] = getattr(args, "mode", None) or "raster"
    echo["rel_threshold"] = (
        args.rel_threshold if getattr(args, "rel_threshold", None) is not None else DEFAULT_REL_THRESHOLD
    )
    echo["inner_iters"] = getattr(args, "inner_iters", None) or 1
    echo["preset"] = getattr(args, "preset", None) or "main"
    return echo


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

def build_report(
    scene: SceneSpec,
    cfg: GuidanceConfig,
    args,
    seed: int,
    field: AttentionField,
    stage: int,
) -> dict:
    rel_threshold = (
        args.rel_threshold if getattr(args, "rel_threshold", None) is not None else DEFAULT_REL_THRESHOLD
    )
    report = build_metric_report(
        field, scene, cfg, stage, rel_threshold, _config_echo(cfg, args), seed
    )
    doc = report.to_json_dict()
    doc["timestamp"] = datetime.now(timezone.utc).isoformat()
    return doc


def _print_summary(report: dict) -> None:
    losses = report["losses"]
    metrics = report["metrics"]
    print(
        f"stage {losses['stage']}: total {losses['total']:.6g} "
        f"(align {losses['align']:.6g}, ortho {losses['ortho']:.6g}, "
        f"compact {losses['compact']:.6g})"
    )
    focr_mean = metrics["focr_mean"]
    print(
        f"miou_all {metrics['miou_all']:.4f}  "
        f"focr_mean {'n/a' if focr_mean is None else f'{focr_mean:.4f}'}"
    )
    for obj in report["per_object"]:
        print(
            f"  object {obj['id']} ({obj['label'] or 'unlabeled'}): "
            f"f {obj['f']:.4f}  var {obj['var']:.6g}  iou {obj['iou']:.4f}"
        )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    scene, file_overrides = read_scene(args.scene)
    cfg = resolve_config(args, file_overrides)
    seed = args.seed
    latent0 = init_latent(scene, args.mode, seed)
    trajectory = run_guidance(scene, cfg, latent0, inner_iters=args.inner_iters)
    # report and dump both see the float32-rounded field, so a later
    # `eval` of the dump reproduces the reported numbers exactly
    rounded = round_trip32(trajectory.final_field)
    report = build_report(scene, cfg, args, seed, rounded, _final_stage(cfg))
    if args.dump:
        write_dump(args.dump, trajectory.final_field, seed)
        print(f"dump written to {args.dump}")
    if args.report:
        _write_text(args.report, dumps_report(report))
        print(f"report written to {args.report}")
    _print_summary(report)
    return 0


def cmd_eval(args) -> int:
    field, seed = read_dump(args.dump)
    scene, file_overrides = read_scene(args.scene)
    if field.count != len(scene.objects):
        raise DumpError(
            f"dump holds {field.count} maps, scene has {len(scene.objects)} objects"
        )
    if (field.height, field.width) != (scene.grid_height, scene.grid_width):
        raise DumpError(
            f"dump grid {field.height}x{field.width} != scene grid "
            f"{scene.grid_height}x{scene.grid_width}"
        )
    cfg = resolve_config(args, file_overrides)
    report = build_report(scene, cfg, args, seed, field, _final_stage(cfg))
    if args.report:
        _write_text(args.report, dumps_report(report))
        print(f"report written to {args.report}")
    _print_summary(report)
    return 0


def cmd_grad_check(args) -> int:
    if args.scene:
        scene, file_overrides = read_scene(args.scene)
    else:
        scene, file_overrides = canonical_scene(), {}
    cfg = resolve_config(args, file_overrides)
    stages = (1, 2) if args.stage == "both" else (int(args.stage),)
    worst_rel = 0.0
    worst_abs = 0.0
    failures = []
    for stage in stages:
        result = check_gradients(
            scene,
            cfg,
            mode=args.mode,
            stage=stage,
            seed=args.seed,
            samples=args.samples,
            rel_tol=args.tol,
        )
        worst_rel = max(worst_rel, result.worst_rel)
        worst_abs = max(worst_abs, result.worst_abs)
        failures.extend(result.failures)
        print(
            f"stage {stage} ({args.mode}): {result.checked} coordinates, "
            f"worst rel {result.worst_rel:.3e}, worst abs {result.worst_abs:.3e} "
            f"-> {'pass' if result.passed else f'{len(result.failures)} FAILURES'}"
        )
    print(f"worst relative error: {worst_rel:.6e}")
    if failures:
        failures.sort(key=lambda r: r.rel_err, reverse=True)
        print("worst offenders:")
        for r in failures[:10]:
            print(
                f"  {r.space} obj {r.object_index} coord {r.coordinate}: "
                f"analytic {r.analytic:.6e} fd {r.fd:.6e} "
                f"rel {r.rel_err:.3e} abs {r.abs_err:.3e}"
            )
        return 3
    return 0


def _sweep_threads(n_runs: int) -> int:
    env = os.environ.get("DEPTHARB_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise UsageError(f"DEPTHARB_THREADS must be an integer, got {env!r}") from exc
        if cap < 1:
            raise UsageError(f"DEPTHARB_THREADS must be >= 1, got {cap}")
        return min(cap, n_runs)
    return min(n_runs, os.cpu_count() or 1)


def _sweep_one(scene: SceneSpec, cfg: GuidanceConfig, args, value: float) -> dict:
    run_cfg = cfg.updated(**{args.param: value})
    latent0 = init_latent(scene, args.mode, args.seed)
    trajectory = run_guidance(scene, run_cfg, latent0, inner_iters=args.inner_iters)
    rounded = round_trip32(trajectory.final_field)
    rel_threshold = args.rel_threshold if args.rel_threshold is not None else DEFAULT_REL_THRESHOLD
    report = build_metric_report(
        rounded, scene, run_cfg, _final_stage(run_cfg), rel_threshold, {}, args.seed
    )
    breakdown = report.breakdown
    return {
        "value": value,
        "losses": {
            "align": breakdown.align,
            "ortho": breakdown.ortho,
            "compact": breakdown.compact,
            "total": breakdown.total,
        },
        "mean_interference": breakdown.mean_interference(),
        "mean_var": breakdown.mean_var(),
        "metrics": {
            "miou_all": report.miou.all,
            "focr_mean": report.focr.mean,
        },
    }


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise UsageError(
            f"unknown sweep parameter {args.param!r}; expected one of {', '.join(SWEEP_PARAMS)}"
        )
    raw = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw:
        raise UsageError("empty sweep value list")
    try:
        values = [float(v) for v in raw]
    except ValueError as exc:
        raise UsageError(f"sweep values must be numbers: {exc}") from exc

    scene, file_overrides = read_scene(args.scene)
    cfg = resolve_config(args, file_overrides)
    rows: list[dict | None] = [None] * len(values)
    with concurrent.futures.ThreadPoolExecutor(max_workers=_sweep_threads(len(values))) as pool:
        futures = {
            pool.submit(_sweep_one, scene, cfg, args, value): i for i, value in enumerate(values)
        }
        for future in concurrent.futures.as_completed(futures):
            rows[futures[future]] = future.result()

    table = {
        "param": args.param,
        "rows": rows,
        "config": _config_echo(cfg, args),
        "seed": args.seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if args.report:
        _write_text(args.report, dumps_report(table))
        print(f"sweep table written to {args.report}")

    header = f"{args.param:>16}  {'total':>12}  {'mean_I':>10}  {'mean_var':>10}  {'miou':>8}  {'focr':>8}"
    print(header)
    for row in rows:
        mean_i = row["mean_interference"]
        focr_mean = row["metrics"]["focr_mean"]
        print(
            f"{row['value']:>16.6g}  {row['losses']['total']:>12.6g}  "
            f"{'n/a' if mean_i is None else f'{mean_i:>10.4g}'}  "
            f"{row['mean_var']:>10.4g}  {row['metrics']['miou_all']:>8.4f}  "
            f"{'n/a' if focr_mean is None else f'{focr_mean:>8.4f}'}"
        )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {value}")
    return value


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--steps", type=int, default=None, help="total optimization steps")
    sub.add_argument("--stage1-frac", dest="stage1_frac", type=float, default=None,
                     help="fraction of steps in stage 1")
    sub.add_argument("--eta", type=float, default=None, help="base step size eta0")
    sub.add_argument("--eta-decay", dest="eta_decay", type=float, default=None,
                     help="per-step multiplicative step-size decay")
    sub.add_argument("--preset", choices=("main", "appendix"), default=None,
                     help="weight preset (default: main)")
    sub.add_argument("--lambda0", type=float, default=None, help="base repulsion weight")
    sub.add_argument("--alpha", type=float, default=None, help="depth-modulation sharpness")
    sub.add_argument("--tau", type=float, default=None, help="depth-modulation temperature")
    sub.add_argument("--lambda-ortho", dest="lambda_ortho", type=float, default=None,
                     help="orthogonality term weight")
    sub.add_argument("--lambda-compact", dest="lambda_compact", type=float, default=None,
                     help="compactness term weight")
    sub.add_argument("--epsilon", type=float, default=None, help="stability constant")
    sub.add_argument("--mode", choices=MODES, default="raster", help="surrogate parametrization")
    sub.add_argument("--seed", type=_seed, default=0, help="deterministic seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deptharb", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="optimize a scene and report metrics", parents=[])
    run.add_argument("--scene", required=True, help="scene JSON path")
    _add_config_flags(run)
    run.add_argument("--inner-iters", dest="inner_iters", type=int, default=1,
                     help="gradient updates per recorded step")
    run.add_argument("--rel-threshold", dest="rel_threshold", type=float, default=None,
                     help="relative threshold for layout mIoU masks")
    run.add_argument("--dump", default=None, help="write the final attention field here")
    run.add_argument("--report", default=None, help="write the JSON report here")
    run.set_defaults(func=cmd_run)

    check = subs.add_parser("grad-check", help="verify analytic gradients against finite differences")
    check.add_argument("--scene", default=None, help="scene JSON path (default: built-in canonical scene)")
    _add_config_flags(check)
    check.add_argument("--samples", type=int, default=1000, help="coordinates per space per stage")
    check.add_argument("--tol", type=float, default=DEFAULT_REL_TOL,
                       help="relative tolerance (absolute floor is tol*1e-4)")
    check.add_argument("--stage", choices=("1", "2", "both"), default="both")
    check.set_defaults(func=cmd_grad_check)

    sweep = subs.add_parser("sweep", help="run one seeded optimization per parameter value")
    sweep.add_argument("--scene", required=True, help="scene JSON path")
    _add_config_flags(sweep)
    sweep.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    sweep.add_argument("--values", required=True, help="comma-separated parameter values")
    sweep.add_argument("--inner-iters", dest="inner_iters", type=int, default=1)
    sweep.add_argument("--rel-threshold", dest="rel_threshold", type=float, default=None)
    sweep.add_argument("--report", default=None, help="write the JSON sweep table here")
    sweep.set_defaults(func=cmd_sweep)

    ev = subs.add_parser("eval", help="compute metrics for a stored attention dump")
    ev.add_argument("--dump", required=True, help="attention dump path")
    ev.add_argument("--scene", required=True, help="scene JSON path")
    _add_config_flags(ev)
    ev.add_argument("--inner-iters", dest="inner_iters", type=int, default=1)
    ev.add_argument("--rel-threshold", dest="rel_threshold", type=float, default=None)
    ev.add_argument("--report", default=None, help="write the JSON report here")
    ev.set_defaults(func=cmd_eval)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (SceneError, AttentionError, DumpError, ConfigError, SurrogateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
