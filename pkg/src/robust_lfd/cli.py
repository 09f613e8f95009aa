"""Command-line interface: ``robust-lfd <command> [options]``.

Every command accepts ``--seed``.  Results go to stdout (or ``--out``) as
plain text; failures exit nonzero with a message tagged by the stage that
failed, e.g. ``robust-lfd: [consistency] ...``.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .consistency import DEFAULT_NU_D, DEFAULT_NU_S, ConsistencyError, filter_consistent
from .evaluation import EvaluationError, r2_report, success_experiment, table1_experiment
from .kernels import QPError
from .model import ACTION_FIELDS, STATE_DIM, STATE_FIELDS, ValidationError, read_dataset, write_dataset
from .perception import PerceptionError, extract_state, height_from_depth, read_image, segment
from .perception import DEFAULT_THRESHOLD, HeightImage
from .policy import HyperGrid, PolicyError, VectorPolicy, learn_intended_policy
from .synthlab import TeacherConfig, augment, generate_dataset, spec_to_dict

# exit codes by failing stage
EXIT_CODES = {
    "input": 3,
    "perception": 4,
    "consistency": 5,
    "regression": 6,
    "solver": 7,
    "evaluation": 8,
    "precondition": 9,
}


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_data(path):
    try:
        return read_dataset(path)
    except (OSError, ValidationError) as exc:
        raise StageError("input", str(exc)) from exc


def _load_policy(path):
    try:
        return VectorPolicy.load(path)
    except (OSError, ValidationError) as exc:
        raise StageError("input", str(exc)) from exc


def _teacher(args) -> TeacherConfig:
    return TeacherConfig(p_intent=args.p_intent, p_exec=args.p_exec)


# --------------------------------------------------------------------------
# commands


def cmd_generate(args):
    D, specs = generate_dataset(args.n, _teacher(args), seed=args.seed, render_noise=args.render_noise)
    write_dataset(D, args.out)
    if args.scenes:
        with open(args.scenes, "w", encoding="utf-8") as fh:
            for i, spec in zip(D.ids, specs):
                fh.write(json.dumps({"id": int(i), **spec_to_dict(spec)}) + "\n")
    counts = {lab: D.labels.count(lab) for lab in sorted(set(D.labels))}
    print(f"wrote {len(D)} demonstrations to {args.out} " + " ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_augment(args):
    D = _load_data(args.data)
    A = augment(D, args.copies, seed=args.seed, sigma=args.sigma)
    write_dataset(A, args.out)
    print(f"wrote {len(A)} demonstrations ({len(D)} originals) to {args.out}")


def cmd_filter(args):
    D = _load_data(args.data)
    kept, report = filter_consistent(D, args.nu_d, args.nu_s, seed=args.seed)
    if args.out:
        write_dataset(kept, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("\n".join(report.to_lines()) + "\n")
    s = report.summary()
    print(" ".join(f"{k}={v}" for k, v in s.items()))


def cmd_train(args):
    D = _load_data(args.data)
    grid = HyperGrid(seed=args.seed)
    policy, report = learn_intended_policy(
        D, args.nu_d, args.nu_s, grid, filter_demos=not args.no_filter,
        max_support_vectors=args.max_support_vectors,
    )
    policy.save(args.out)
    removed = "n/a" if report is None else str(len(report.removed_ids))
    n_sv = sum(len(p.alpha) for p in policy.scalars)
    print(f"wrote policy to {args.out} demos={len(D)} removed={removed} support_vectors={n_sv}")


def cmd_predict(args):
    policy = _load_policy(args.policy)
    if args.state is not None:
        S = np.array([args.state], dtype=float)
        ids = [0]
    else:
        D = _load_data(args.data)
        S, ids = D.states, D.ids
    lines = ["id " + " ".join(ACTION_FIELDS)]
    for i, s in zip(ids, S):
        a = policy.raw_action(s) if args.raw else policy.act(s)
        lines.append(f"{int(i)} " + " ".join(repr(float(v)) for v in a.as_array()))
    _emit("\n".join(lines) + "\n", args.out)


def cmd_evaluate(args):
    policy = _load_policy(args.policy)
    D = _load_data(args.data)
    rep = r2_report(policy, D)
    _emit("\n".join(rep.lines()) + "\n", args.out)


def cmd_rollout(args):
    policy = _load_policy(args.policy)
    table = success_experiment(policy, n_scenes=args.scenes, grasps=args.grasps, seed=args.seed,
                               render_noise=args.render_noise)
    _emit(table.report(), args.out)


def cmd_table1(args):
    seeds = range(args.seed, args.seed + args.n_seeds)
    cfg = _teacher(args)
    progress = None
    if args.verbose:
        def progress(r):
            print(f"seed {r.seed}: filtered={r.filtered.mean:.4f} unfiltered={r.unfiltered.mean:.4f}",
                  file=sys.stderr)
    res = table1_experiment(args.demos, seeds, cfg, args.nu_d, args.nu_s, progress=progress)
    _emit(res.report(), args.out)


def cmd_extract(args):
    try:
        header, data = read_image(args.image)
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("input", f"cannot read image {args.image}: {exc}") from exc
    pitch, origin = header["pitch"], tuple(header["origin"])
    if header.get("kind") == "depth":
        if args.reference is None:
            raise StageError("input", "depth images need --reference (plane distance)")
        h = height_from_depth(data, np.full(data.shape, args.reference), pitch, origin)
    elif header.get("kind") == "height":
        h = HeightImage(data, pitch, origin)
    else:
        raise StageError("input", f"unsupported image kind {header.get('kind')!r}")
    s = extract_state(segment(h, args.threshold), h)
    values = s.as_array()
    _emit("\n".join(f"{n} {float(v)!r}" for n, v in zip(STATE_FIELDS, values)) + "\n", args.out)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-lfd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.set_defaults(func=fn)
        return sp

    def teacher_opts(sp):
        sp.add_argument("--p-exec", type=float, default=TeacherConfig.p_exec,
                        help="probability of an execution deviation")
        sp.add_argument("--p-intent", type=float, default=TeacherConfig.p_intent,
                        help="probability of an intention deviation")

    def nu_opts(sp):
        sp.add_argument("--nu-d", type=float, default=DEFAULT_NU_D, help="nu of the demonstration-space model")
        sp.add_argument("--nu-s", type=float, default=DEFAULT_NU_S, help="nu of the state-space model")

    sp = add("generate", cmd_generate, "synthesize scenes and teacher demonstrations")
    sp.add_argument("--n", type=int, default=525)
    sp.add_argument("--out", required=True, help="dataset file (JSON lines)")
    sp.add_argument("--scenes", help="also write the scene specs (JSON lines)")
    sp.add_argument("--render-noise", type=float, default=1.0, help="depth noise sigma (mm)")
    teacher_opts(sp)

    sp = add("augment", cmd_augment, "add translated and flipped copies")
    sp.add_argument("--data", required=True)
    sp.add_argument("--copies", type=int, default=1)
    sp.add_argument("--sigma", type=float, default=25.0, help="translation sigma (mm)")
    sp.add_argument("--out", required=True)

    sp = add("filter", cmd_filter, "remove inconsistent demonstrations")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="filtered dataset file")
    sp.add_argument("--report", help="per-demonstration audit file (JSON lines)")
    nu_opts(sp)

    sp = add("train", cmd_train, "filter and fit the policy")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="policy file (JSON)")
    sp.add_argument("--no-filter", action="store_true", help="fit on all demonstrations")
    sp.add_argument("--max-support-vectors", type=int)
    nu_opts(sp)

    sp = add("predict", cmd_predict, "predict actions for states")
    sp.add_argument("--policy", required=True)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset whose states are used")
    src.add_argument("--state", type=float, nargs=STATE_DIM, metavar="V", help="one state vector")
    sp.add_argument("--raw", action="store_true", help="skip post-processing")
    sp.add_argument("--out")

    sp = add("evaluate", cmd_evaluate, "per-dimension R^2 of a policy on a dataset")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")

    sp = add("rollout", cmd_rollout, "grasp success over synthetic scenes")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--scenes", type=int, default=14)
    sp.add_argument("--grasps", type=int, default=5)
    sp.add_argument("--render-noise", type=float, default=1.0)
    sp.add_argument("--out")

    sp = add("table1", cmd_table1, "filtered vs unfiltered comparison")
    sp.add_argument("--n-seeds", type=int, default=1, help="seeds seed .. seed+n-1 (default 1)")
    sp.add_argument("--demos", type=int, default=525)
    sp.add_argument("--out")
    sp.add_argument("--verbose", action="store_true", help="per-seed progress on stderr")
    teacher_opts(sp)
    nu_opts(sp)

    sp = add("extract", cmd_extract, "state features from a height or depth image file")
    sp.add_argument("image")
    sp.add_argument("--reference", type=float, help="reference plane distance for depth images")
    sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    sp.add_argument("--out")
    return p


def _stage_of(exc: BaseException) -> str:
    if isinstance(exc, StageError):
        return exc.stage
    if isinstance(exc, PolicyError):
        return exc.stage if exc.stage in EXIT_CODES else "regression"
    if isinstance(exc, ConsistencyError):
        return "consistency"
    if isinstance(exc, PerceptionError):
        return "perception"
    if isinstance(exc, QPError):
        return "solver"
    if isinstance(exc, EvaluationError):
        return "evaluation"
    return "input"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (StageError, PolicyError, ConsistencyError, PerceptionError, QPError, EvaluationError,
            ValidationError, ValueError, OSError) as exc:
        stage = _stage_of(exc)
        msg = str(exc)
        if not msg.startswith("["):
            msg = f"[{stage}] {msg}"
        print(f"robust-lfd: {msg}", file=sys.stderr)
        return EXIT_CODES[stage]
    return 0


if __name__ == "__main__":
    sys.exit(main())
