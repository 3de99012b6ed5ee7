"""retargetkit command line with subcommands for each pipeline stage.

Exit codes: 0 ok, 1 internal error, 2 bad input path or schema, 3 empty input,
4 numeric failure. ``--json-errors`` writes a one-line JSON error record to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augment, dataset, metrics, policy, retarget
from .skeleton import BoneClass, RobotSpec, SpecError, bone_lengths, load_robot_spec, robot_keypoint_frame

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_EMPTY, EXIT_NUMERIC = 0, 1, 2, 3, 4

_SHIPPED = Path(__file__).parent / "data" / "robots"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _need_file(path, what="file") -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_INPUT, f"{what} not found: {p}")
    return p


def _need_dir(path, what="directory") -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(EXIT_INPUT, f"{what} not found: {p}")
    return p


def _out_path(path) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise CliError(EXIT_INPUT, f"output directory does not exist: {p.parent}")
    return p


def _robot(arg) -> RobotSpec:
    """A path to a spec JSON, or the name of a bundled spec."""
    p = Path(arg)
    if not p.is_file():
        p = _SHIPPED / f"{arg}.json"
        if not p.is_file():
            raise CliError(EXIT_INPUT, f"robot spec not found: {arg}")
    return load_robot_spec(p)


def _spec_paths(items) -> list:
    if not items:
        return sorted(_SHIPPED.glob("*.json"))
    out = []
    for it in items:
        p = Path(it)
        if p.is_dir():
            out += sorted(p.glob("*.json"))
        elif p.is_file():
            out.append(p)
        else:
            raise CliError(EXIT_INPUT, f"spec file not found: {p}")
    return out


def _motion_files(path) -> list:
    p = Path(path)
    if p.is_file():
        return [p]
    return sorted(_need_dir(p, "motion directory").glob("*.json"))


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- commands -------------------------------------------------------------------

def cmd_augment(args) -> dict:
    files = _motion_files(args.motions)
    spec_files = _spec_paths(args.specs)
    out_dir = Path(args.out)
    if not out_dir.parent.exists():
        raise CliError(EXIT_INPUT, f"output directory does not exist: {out_dir.parent}")
    if not files:
        raise CliError(EXIT_EMPTY, f"no motion files in {args.motions}")
    specs = [load_robot_spec(p) for p in spec_files]
    motions = [dataset.load_motion(p) for p in files]
    out_dir.mkdir(exist_ok=True)
    corpus = augment.augment_corpus(motions, specs)
    n_orig = len(motions)
    worst = 0.0
    for i, m in enumerate(motions):
        dataset.save_motion(m, out_dir / files[i].name)
    for j, m in enumerate(corpus[n_orig:]):
        src = files[j // len(specs)]
        spec = specs[j % len(specs)]
        targets = augment.robot_bone_targets(spec)
        for f in m.frames:
            got = bone_lengths(f)
            worst = max(worst, max(abs(got[b] - targets[b]) for b in targets))
        dataset.save_motion(m, out_dir / f"{src.stem}__{spec.name}.json")
    return {"originals": n_orig, "augmented": len(corpus) - n_orig, "specs": [s.name for s in specs],
            "max_bone_error": worst}


def cmd_build_dataset(args) -> dict:
    files = _motion_files(args.corpus)
    out = _out_path(args.out)
    if args.window < 1 or args.subsample < 1:
        raise CliError(EXIT_INPUT, "window and subsample must be >= 1")
    motions = [dataset.load_motion(p) for p in files]
    motions = [m.subsample(args.subsample) if args.subsample > 1 else m for m in motions]
    tuples = []
    for m in motions:
        tuples += dataset.hindsight_expand(m, args.window) if args.window > 1 else dataset.build_tuples(m)
    if not tuples:
        raise CliError(EXIT_EMPTY, f"corpus {args.corpus} produced no tuples")
    dataset.save_tuples(tuples, out)
    meta = {"tuples": len(tuples), "motions": len(motions), "window": args.window, "subsample": args.subsample,
            "fps": sorted({m.fps for m in motions})}
    with open(str(out) + ".meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    return meta


def cmd_train(args) -> dict:
    data = _need_file(args.data, "tuple file")
    out = _out_path(args.out)
    tuples = dataset.load_tuples(data)
    if not tuples:
        raise CliError(EXIT_EMPTY, f"no tuples in {data}")
    cfg = policy.PolicyConfig(init_seed=args.seed, lambda_rot=args.lambda_rot)
    model = policy.PolicyModel(cfg)
    tc = policy.TrainConfig(epochs=args.epochs, batch=args.batch, step_size=args.lr, seed=args.seed,
                            drop_text=args.no_text)
    report = policy.train(model, tuples, tc)
    if report.diverged:
        raise CliError(EXIT_NUMERIC, f"training diverged after {report.steps} steps")
    model.save(out)
    with open(str(out) + ".report.json", "w") as f:
        json.dump({k: v for k, v in report.to_json().items() if k != "step_loss"}, f, indent=1)
    return {"checkpoint": str(out), "epochs": args.epochs, "tuples": len(tuples),
            "final_loss": report.epoch_loss[-1] if report.epoch_loss else None}


def _goals(path) -> list:
    with open(path) as f:
        d = json.load(f)
    if isinstance(d, dict) and "frames" in d:
        return [dataset.GoalSet.from_frame(fr) for fr in dataset.motion_from_json(d).frames]
    if isinstance(d, dict) and "goals" in d:
        d = d["goals"]
    if not isinstance(d, list):
        raise dataset.MotionFormatError(f"{path}: expected a motion or a list of goals")
    return [dataset.GoalSet.from_json(g) for g in d]


def closed_loop(model, spec: RobotSpec, goals, text: str, q0: dict | None = None,
                config: retarget.IkConfig = retarget.IkConfig()):
    """Generate then retarget each step; the next state is the robot's FK keypoint frame."""
    q = dict(q0) if q0 is not None else spec.zero_q()
    state = robot_keypoint_frame(spec, q)
    prev = None
    log = []
    for t, g in enumerate(goals):
        a = policy.predict(model, state, g, text)
        res = retarget.solve_pose(spec, a, prev, config)
        nxt = robot_keypoint_frame(spec, res.q)
        log.append({"t": t, "state": dataset.frame_to_json(state), "generated": dataset.frame_to_json(a),
                    "q": res.q, "next_state": dataset.frame_to_json(nxt), "ik": res.to_json()})
        prev, state = res, nxt
    return log


def cmd_generate(args) -> dict:
    ckpt = _need_file(args.checkpoint, "checkpoint")
    goals_file = _need_file(args.goals, "goal file")
    out = _out_path(args.out)
    spec = _robot(args.robot)
    model = policy.PolicyModel.load(ckpt)
    goals = _goals(goals_file)
    if not goals:
        raise CliError(EXIT_EMPTY, f"no goals in {goals_file}")
    log = closed_loop(model, spec, goals, args.text or "")
    with open(out, "w") as f:
        for row in log:
            f.write(json.dumps(row) + "\n")
    motion_out = Path(str(out) + ".motion.json")
    frames = [dataset.frame_from_json(r["next_state"]) for r in log]
    dataset.save_motion(dataset.MotionSequence(args.fps, frames, annotation=args.text or "", source_spec=spec.name),
                        motion_out)
    return {"steps": len(log), "log": str(out), "motion": str(motion_out),
            "converged": sum(all(r["ik"]["converged"]) for r in log)}


def cmd_retarget(args) -> dict:
    mfile = _need_file(args.motion, "motion file")
    out = _out_path(args.out)
    spec = _robot(args.robot)
    motion = dataset.load_motion(mfile)
    if not motion.frames:
        raise CliError(EXIT_EMPTY, f"motion {mfile} has no frames")
    results = retarget.retarget_motion(spec, motion.frames)
    with open(out, "w") as f:
        for r in results:
            f.write(json.dumps(r.to_json()) + "\n")
    return {"frames": len(results), "converged": sum(all(r.converged) for r in results),
            "errors": sum(r.error is not None for r in results)}


def cmd_evaluate(args) -> dict:
    pred_files = _motion_files(args.pred)
    ref_files = _motion_files(args.ref)
    out = _out_path(args.out) if args.out else None
    ckpt = _need_file(args.checkpoint, "checkpoint") if args.checkpoint else None
    if not pred_files or not ref_files:
        raise CliError(EXIT_EMPTY, "no motions to evaluate")
    if len(pred_files) != len(ref_files):
        raise CliError(EXIT_INPUT, f"{len(pred_files)} predicted vs {len(ref_files)} reference motions")
    preds, refs = [], []
    pm = [dataset.load_motion(p) for p in pred_files]
    rm = [dataset.load_motion(p) for p in ref_files]
    for i, (a, b) in enumerate(zip(pm, rm)):
        if len(a.frames) != len(b.frames):
            raise CliError(EXIT_INPUT, f"motion pair {i}: {len(a.frames)} vs {len(b.frames)} frames")
        preds += a.frames
        refs += b.frames
    if not preds:
        raise CliError(EXIT_EMPTY, "motions have no frames")
    kw = {"ref_lengths": [bone_lengths(f) for f in refs]}
    if ckpt is not None:
        model = policy.PolicyModel.load(ckpt)
        kw["gen_features"] = np.stack([metrics.feature_extract([f], model) for f in preds])
        kw["real_features"] = np.stack([metrics.feature_extract([f], model) for f in refs])
        if len(pm) >= 2:
            kw["text_embeds"] = np.stack([metrics.feature_extract(m.annotation, model) for m in rm])
            kw["motion_embeds"] = np.stack([metrics.feature_extract(m, model, space="aligned") for m in pm])
    report = metrics.evaluation_report(preds, refs, **kw)
    print(metrics.EMBEDDING_NOTE, file=sys.stderr)
    if metrics.EMBEDDING_NOTE not in report["notes"]:
        report["notes"].append(metrics.EMBEDDING_NOTE)
    if out is not None:
        with open(out, "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
    return report


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="retargetkit", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="JSON file; a section named after the command supplies option defaults")
    ap.add_argument("--json-errors", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="rescale motions to robot bone lengths")
    p.add_argument("--motions", required=True)
    p.add_argument("--specs", nargs="*", help="spec files or directories (default: bundled robots)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("build-dataset", help="turn motions into training tuples (JSON Lines)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--window", type=int, default=dataset.DEFAULT_WINDOW)
    p.add_argument("--subsample", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="fit the policy")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-rot", type=float, default=1.0)
    p.add_argument("--no-text", action="store_true", help="train with empty context text")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="closed-loop generation and retargeting toward a goal sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--robot", required=True)
    p.add_argument("--goals", required=True, help="motion JSON (its end effectors) or list of goal sets")
    p.add_argument("--text", default="")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("retarget", help="solve joint angles for each frame of a motion")
    p.add_argument("--robot", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("evaluate", help="score predicted motions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return ap


def _parse(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg_path = _need_file(args.config, "config file")
        with open(cfg_path) as f:
            cfg = json.load(f)
        section = cfg.get(args.command, {})
        if not isinstance(section, dict):
            raise CliError(EXIT_INPUT, f"config section {args.command!r} must be an object")
        sub = next(a for a in ap._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
        sp = sub.choices[args.command]
        known = {a.dest for a in sp._actions}
        bad = set(k.replace("-", "_") for k in section) - known
        if bad:
            raise CliError(EXIT_INPUT, f"unknown options in config section {args.command!r}: {sorted(bad)}")
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})
        if "seed" in cfg and "--seed" not in argv:
            ap.set_defaults(seed=cfg["seed"])
        args = ap.parse_args(argv)
    return args


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, (retarget.NumericError, policy.PolicyNumericError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, json.JSONDecodeError, dataset.MotionFormatError,
                        SpecError, policy.PolicyConfigError, KeyError, ValueError)):
        return EXIT_INPUT
    return EXIT_INTERNAL


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        args = _parse(argv)
        _emit(args.func(args))
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        code = _exit_code(exc)
        if json_errors:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
        else:
            print(f"retargetkit: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
