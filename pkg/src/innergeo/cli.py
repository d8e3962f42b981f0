"""Command-line entry point: ``innergeo <command> [options]``.

Exit codes: 0 success, 1 a check failed (``gradcheck``), 2 malformed input,
3 numeric domain error. Errors are printed to stderr as a JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import DomainError, FormatError
from .fit import FitConfig, distill_fit, gram_mismatch, inner_residual_rms, target_depths
from .gradcheck import gradcheck_table
from .losses import LossWeights, evaluate
from .metrics import depth_metrics
from .synthetic import INIT_MODES, SceneSpec, gen_scene, init_student_state

GRADCHECK_TOL = 1e-5


def _weights(text):
    try:
        return LossWeights.from_sequence(text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _out(args, name):
    return Path(args.out) / name


def cmd_gen(args):
    spec = io.load_scene_spec(args.config) if args.config else SceneSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    scene = gen_scene(spec)
    path = io.save_scene(_out(args, "scene.json"), scene)
    print(f"wrote {path} ({len(scene.boxes)} targets, {len(scene.cloud)} points, {len(scene.cameras)} cameras)")


def _state(args, scene):
    if args.state:
        return io.load_state(args.state, scene.spec.bev)
    seed = scene.spec.seed if args.seed is None else args.seed
    return init_student_state(scene, scene.spec, args.init, args.amplitude, seed)


def cmd_init(args):
    scene = io.load_scene(args.scene)
    state = _state(argparse.Namespace(state=None, **vars(args)), scene)
    print(f"wrote {io.save_state(_out(args, 'state.json'), state)}")


def _state_summary(problem, probs, grid):
    pred, gt = target_depths(problem, probs)
    return {
        "target_metrics": depth_metrics(pred, gt).to_dict() if len(gt) else None,
        "inner_residual_rms": inner_residual_rms(problem, probs),
        "gram_mismatch": gram_mismatch(problem, grid),
    }


def cmd_losses(args):
    scene = io.load_scene(args.scene)
    state = _state(args, scene)
    problem = scene.problem()
    if len(state.depth_maps) != len(scene.cameras):
        raise FormatError("student state has a different number of depth maps than the scene has cameras",
                          field="depth_maps")
    report = evaluate(problem, state.probs, state.bev.values, args.weights or LossWeights())
    body = {**report.to_dict(), **_state_summary(problem, state.probs, state.bev.values)}
    path = io.write_document(_out(args, "losses.json"), "loss_report", body)
    print(f"total {report.total:.6g}  " + "  ".join(f"{k} {v:.6g}" for k, v in report.terms.items()))
    print(f"wrote {path}")


def cmd_fit(args):
    scene = io.load_scene(args.scene)
    cfg = io.load_fit_config(args.config) if args.config else FitConfig()
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.weights is not None:
        overrides["weights"] = args.weights
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides)
    state = io.load_state(args.state, scene.spec.bev) if args.state else None
    trace, final = distill_fit(scene, cfg, state)
    out = Path(args.out)
    io.write_document(out / "trace.json", "fit_trace", {"config": io.fit_config_to_doc(cfg), **trace.to_dict()})
    report = {"config": io.fit_config_to_doc(cfg), "status": trace.status,
              "initial": trace.records[0] if trace.records else None,
              "final": trace.records[-1] if trace.records else None,
              "initial_target_metrics": trace.initial_metrics, "final_target_metrics": trace.final_metrics,
              "initial_inner_residual_rms": trace.initial_inner_residual_rms,
              "inner_residual_rms": trace.inner_residual_rms, "gram_mismatch": trace.gram_mismatch}
    io.write_document(out / "report.json", "fit_report", report)
    if final is not None:
        io.save_state(out / "state.json", final)
    if trace.failed:
        print(f"fit diverged at step {trace.failed_step}")
        return 3
    first, last = trace.records[0]["total"], trace.records[-1]["total"]
    print(f"total {first:.6g} -> {last:.6g} ({last / first if first else 0:.4f} of initial) in {cfg.steps} steps")
    print(f"wrote {out / 'trace.json'}, {out / 'report.json'}, {out / 'state.json'}")
    return 0


def cmd_gradcheck(args):
    seeds = range(args.seed, args.seed + args.instances)
    rows = gradcheck_table(seeds, args.eps, args.coords)
    ok = True
    print(f"{'loss':<16}{'max rel error':>16}  status")
    for row in rows:
        row["pass"] = row["max_rel_error"] < GRADCHECK_TOL
        ok &= row["pass"]
        print(f"{row['loss']:<16}{row['max_rel_error']:>16.3e}  {'PASS' if row['pass'] else 'FAIL'}")
    body = {"epsilon": args.eps, "tolerance": GRADCHECK_TOL, "seeds": list(seeds), "rows": rows}
    print(f"wrote {io.write_document(_out(args, 'gradcheck.json'), 'gradcheck_report', body)}")
    return 0 if ok else 1


def cmd_metrics(args):
    pred, pred_valid = io.load_depth_values(args.pred)
    gt, gt_valid = io.load_depth_values(args.gt)
    if pred.shape != gt.shape:
        raise FormatError(f"pred shape {pred.shape} differs from gt shape {gt.shape}", field="depth")
    mask = pred_valid & gt_valid
    report = depth_metrics(pred[mask], gt[mask])
    path = io.write_document(_out(args, "metrics.json"), "metric_report", report.to_dict())
    print("  ".join(f"{k} {v:.6g}" for k, v in report.to_dict().items()))
    print(f"wrote {path}")


def build_parser():
    parser = argparse.ArgumentParser(prog="innergeo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", default=".", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen", help="generate a synthetic scene")
    p.add_argument("--config", help="scene_spec document")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("init", help="write an initial student state")
    p.add_argument("--scene", required=True)
    p.add_argument("--init", choices=INIT_MODES, default="uniform")
    p.add_argument("--amplitude", type=float, default=0.1)
    common(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("losses", help="evaluate every loss term for a student state")
    p.add_argument("--scene", required=True)
    p.add_argument("--state", help="student_state document (default: initialize with --init)")
    p.add_argument("--init", choices=INIT_MODES, default="uniform")
    p.add_argument("--amplitude", type=float, default=0.1)
    p.add_argument("--weights", type=_weights, help="det,abs,inner,ic,ik")
    common(p)
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("fit", help="gradient-descent distillation on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", help="fit_config document")
    p.add_argument("--state", help="initial student_state (default: from the config)")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weights", type=_weights, help="det,abs,inner,ic,ik")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--coords", type=int, default=30)
    p.add_argument("--eps", type=float, default=1e-6)
    common(p, seed=False)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("metrics", help="depth metrics of a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    common(p, seed=False)
    p.set_defaults(func=cmd_metrics)
    return parser


def _fail(code, kind, exc, field=None):
    err = {"error": {"kind": kind, "message": str(exc)}}
    if field is not None:
        err["error"]["field"] = field
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except FormatError as exc:
        return _fail(2, "format_error", exc, exc.field)
    except DomainError as exc:
        return _fail(3, "domain_error", exc)
    except FloatingPointError as exc:
        return _fail(3, "domain_error", exc)


if __name__ == "__main__":
    sys.exit(main())
