"""Command-line entry point: ``fairflip <subcommand> ...``.

Every subcommand that writes files also writes ``<first output>.provenance.json``
holding the parsed configuration and the library version, enough to re-run it.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    JOINT_COLUMNS,
    LABEL,
    LabeledDataset,
    estimate_priors,
    infer_schema,
    load_labeled,
    load_probs,
    load_rule,
    make_criterion,
    to_jsonable,
    write_columns,
    write_labeled,
    write_probs,
    write_rule,
)
from .metrics import apply_rule, composite, evaluate
from .scores import DEFAULT_ETA_FLOOR, bias_scores, corrupt, load_scores, write_scores
from .search import DEFAULT_M, DEFAULT_N_DIRS, METHODS, build_pool, frontier, rule_from_pool

log = logging.getLogger("fairflip")


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def parse_delta(text: str) -> float:
    """``inf`` or a number in ``(0, 1]``."""
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"delta {text!r} is not a number or 'inf'") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"delta {value} outside (0, 1]; use 'inf' for no constraint")
    return value


def _nonneg(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


# ---------------------------------------------------------------------------
# shared loading


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        raise StageError(name, str(exc)) from exc


def _load_data(path, attr, with_features=False) -> LabeledDataset:
    schema = infer_schema(path, LABEL, (attr,))
    if not with_features:
        schema = type(schema)(schema.label, schema.attributes, ())
    return load_labeled(path, schema)


def _criterion(args):
    return make_criterion(args.criterion, args.attr)


def _provenance(args, outputs) -> None:
    outputs = [Path(o) for o in outputs if o is not None]
    if not outputs:
        return
    config = {k: v for k, v in vars(args).items() if k != "func"}
    record = {"command": args.command, "config": config, "version": __version__, "outputs": [str(o) for o in outputs]}
    path = outputs[0].with_name(outputs[0].name + ".provenance.json")
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=to_jsonable) + "\n")


def _require_seed(args, why: str) -> None:
    if args.seed is None:
        raise StageError("config", f"--seed is required {why}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    from .synth import default_spec, sample

    spec = default_spec() if args.n is None else default_spec().with_total(args.n)
    data = _stage("sample", sample, spec, args.seed)
    _stage("write", write_labeled, data, args.out)
    print(f"wrote {data.n} rows to {args.out}")
    return [args.out]


def cmd_train_aux(args):
    from .synth import SoftmaxHyper, fit_joint_model

    if len(args.predict) != len(args.out):
        raise StageError("config", "--predict and --out need the same number of paths")
    train = _stage("load training data", _load_data, args.train, args.attr, True)
    hyper = SoftmaxHyper(rate=args.rate, iterations=args.iterations, l2=args.l2, seed=args.seed)
    model = _stage("train", fit_joint_model, train, hyper, args.attr)
    for src, dst in zip(args.predict, args.out):
        data = _stage("load prediction data", _load_data, src, args.attr, True)
        if data.feature_names != train.feature_names:
            raise StageError("predict", f"{src} has features {data.feature_names}, model expects {train.feature_names}")
        joint = model.predict_proba(data.features)
        cols = {"p_y": joint[:, 2] + joint[:, 3]}
        cols.update({c: joint[:, j] for j, c in enumerate(JOINT_COLUMNS)})
        _stage("write", write_columns, dst, cols)
        print(f"wrote {data.n} probability rows to {dst}")
    return args.out


def cmd_score(args):
    crit = _criterion(args)
    priors_data = _stage("load prior data", _load_data, args.priors_from, args.attr)
    crit = _stage("estimate priors", estimate_priors, priors_data, crit)
    probs = _stage("load probabilities", load_probs, args.probs, crit)
    scores = _stage("score", bias_scores, probs, crit, args.eta_floor)
    _stage("write", write_scores, scores, args.out)
    print(f"wrote {scores.n} score rows (K={scores.K}) to {args.out}")
    return [args.out]


def cmd_corrupt(args):
    crit = _criterion(args)
    probs = _stage("load probabilities", load_probs, args.probs, crit)
    noisy = _stage("corrupt", corrupt, probs, args.alpha, args.seed)
    _stage("write", write_probs, noisy, args.out)
    print(f"wrote {noisy.n} corrupted rows to {args.out}")
    return [args.out]


def _scored(args):
    scores = _stage("load scores", load_scores, args.scores)
    data = _stage("load labels", _load_data, args.data, args.attr)
    if scores.n != data.n:
        raise StageError("load", f"{args.scores} has {scores.n} rows but {args.data} has {data.n}")
    return scores, data


def _search_params(args, K):
    if args.method is None:
        args.method = "threshold" if K == 1 else "directions"
    if args.method == "pairs" or (args.method == "directions" and K > 2):
        _require_seed(args, f"for the {args.method} method")
    return {"M": args.M, "n_dirs": args.n_dirs, "seed": 0 if args.seed is None else args.seed}


def cmd_fit(args):
    crit = _criterion(args)
    scores, val = _scored(args)
    params = _search_params(args, scores.K)
    pool = _stage("search", build_pool, args.method, scores, val, crit, **params)
    rule = _stage("select", rule_from_pool, pool, args.delta, scores, val, crit)
    _stage("write", write_rule, rule, args.out)
    p = rule.provenance
    print(f"feasible={p['feasible']} val_accuracy={p['val_accuracy']:.6f} val_cc={p['val_cc']:.6f} flips={p['val_flips']}")
    return [args.out]


def cmd_apply(args):
    rule = _stage("load rule", load_rule, args.rule)
    scores = _stage("load scores", load_scores, args.scores)
    pred, flips = _stage("apply", apply_rule, rule, scores)
    _stage("write", write_columns, args.out, {"yhat": scores.yhat, "pred": pred, "flip": flips.astype(np.int64)})
    print(f"flipped {int(flips.sum())} of {scores.n} predictions")
    return [args.out]


def _report_rows(report, crit):
    rows = [("accuracy", report.accuracy)]
    rows += [(f"disparity_{name}", d) for name, d in zip(crit.names, report.disparities)]
    rows += [("cc", report.cc), ("flips", report.flip_count)]
    return rows


def cmd_eval(args):
    crit = _criterion(args)
    scores, data = _scored(args)
    if args.rule is None:
        report = _stage("evaluate", composite, scores.yhat, data, crit)
    else:
        rule = _stage("load rule", load_rule, args.rule)
        report = _stage("evaluate", evaluate, rule, scores, data, crit)
    rows = _report_rows(report, crit)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerows(rows)
    if args.out:
        _stage("write", _write_rows, args.out, rows)
    return [args.out]


def _write_rows(path, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(rows)


def cmd_frontier(args):
    crit = _criterion(args)
    scores, val = _scored(args)
    test = None
    if (args.test_scores is None) != (args.test_data is None):
        raise StageError("config", "--test-scores and --test-data go together")
    if args.test_scores is not None:
        ts = _stage("load test scores", load_scores, args.test_scores)
        td = _stage("load test labels", _load_data, args.test_data, args.attr)
        if ts.n != td.n:
            raise StageError("load", "test scores and test labels differ in length")
        test = (ts, td)
    params = _search_params(args, scores.K)
    points = _stage("search", frontier, scores, val, crit, args.deltas, args.method, test, **params)
    header = ["delta", "feasible", "val_acc", "val_cc", "val_flips", "test_acc", "test_cc", "test_flips"]
    rows = []
    for p in points:
        t = p.test_report
        rows.append(
            [
                "inf" if math.isinf(p.delta) else repr(p.delta),
                int(p.feasible),
                repr(p.val_report.accuracy),
                repr(p.val_report.cc),
                p.val_report.flip_count,
                "" if t is None else repr(t.accuracy),
                "" if t is None else repr(t.cc),
                "" if t is None else t.flip_count,
            ]
        )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    outputs = [args.out]
    if args.plot:
        from .plotting import render_frontier

        _stage("render", render_frontier, points, args.plot)
        outputs.append(args.plot)
    print(f"wrote {len(points)} frontier points to {args.out}")
    return outputs


def cmd_oracle(args):
    from .oracle import complementary_slackness, instance_from_scores, rule_from_dual, solve_dual, solve_primal

    crit = _criterion(args)
    scores, val = _scored(args)
    if args.mode == "empirical":
        inst = _stage("build LP", instance_from_scores, scores, 0.0, val, crit)
    else:
        inst = _stage("build LP", instance_from_scores, scores, 0.0)
    # any delta at or above the largest baseline disparity leaves the LP unconstrained
    delta = min(args.delta, float(np.abs(inst.c_star).max()))
    inst = type(inst)(inst.eta, inst.F, inst.c_star, delta)
    sol = _stage("solve primal", solve_primal, inst)
    if sol.status != "optimal":
        raise StageError("solve primal", f"no flip vector satisfies delta={args.delta}")
    z, dual_value = _stage("solve dual", solve_dual, inst, seed=0 if args.seed is None else args.seed)
    cols = {"kappa": sol.kappa, "flip": sol.deterministic.astype(np.int64)}
    _stage("write", write_columns, args.out, cols)
    outputs = [args.out]
    print(f"objective={sol.objective!r} dual={dual_value!r} fractional={sol.fractional.size}")
    print(f"complementary_slackness={complementary_slackness(inst, sol):.3g}")
    print("z_primal=" + ",".join(repr(float(v)) for v in sol.z))
    if args.rule_out:
        rule = rule_from_dual(sol.z, delta=args.delta, mode=args.mode, objective=sol.objective)
        _stage("write", write_rule, rule, args.rule_out)
        outputs.append(args.rule_out)
    return outputs


def cmd_render(args):
    from .plotting import render_scatter

    scores = _stage("load scores", load_scores, args.scores)
    data = None if args.data is None else _stage("load labels", _load_data, args.data, args.attr)
    rule = None if args.rule is None else _stage("load rule", load_rule, args.rule)
    _stage("render", render_scatter, scores, args.out, rule, data, args.attr)
    print(f"wrote {args.out}")
    return [args.out]


# ---------------------------------------------------------------------------
# parser


def _common(p, criterion=True):
    p.add_argument("--attr", default="A", help="sensitive attribute column (default A)")
    if criterion:
        p.add_argument("--criterion", required=True, choices=["dp", "eop", "eo"])


def _search_flags(p):
    p.add_argument("--method", default=None, choices=METHODS, help="default: threshold for K=1, directions otherwise")
    p.add_argument("--M", type=_positive_int, default=DEFAULT_M, help="subsample size for the pairs method")
    p.add_argument("--n-dirs", dest="n_dirs", type=_positive_int, default=DEFAULT_N_DIRS)
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairflip", description="Fairness post-processing by flipping predictions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample the two-dimensional Gaussian mixture")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=_positive_int, default=None, help="total size (default: 500/100/100/500 cells)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-aux", help="fit p(Y, A | X) by softmax regression and predict")
    _common(p, criterion=False)
    p.add_argument("--train", required=True)
    p.add_argument("--predict", nargs="+", required=True)
    p.add_argument("--out", nargs="+", required=True)
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--iterations", type=_positive_int, default=5000)
    p.add_argument("--l2", type=_nonneg, default=1e-4)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train_aux)

    p = sub.add_parser("score", help="compute base predictions, confidences and bias scores")
    _common(p)
    p.add_argument("--probs", required=True)
    p.add_argument("--priors-from", dest="priors_from", required=True, help="labeled file for group priors")
    p.add_argument("--eta-floor", dest="eta_floor", type=float, default=DEFAULT_ETA_FLOOR)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("corrupt", help="add Unif(-alpha, 2 alpha) noise to a probability table")
    _common(p)
    p.add_argument("--probs", required=True)
    p.add_argument("--alpha", type=_nonneg, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("fit", help="search a flipping rule on validation scores")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True, help="validation labels and attributes")
    p.add_argument("--delta", type=parse_delta, required=True)
    _search_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", help="apply a rule to scores")
    p.add_argument("--rule", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval", help="accuracy and disparities of base or flipped predictions")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rule", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("frontier", help="fit rules over several deltas and tabulate them")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-scores", dest="test_scores", default=None)
    p.add_argument("--test-data", dest="test_data", default=None)
    p.add_argument("--deltas", type=parse_delta, nargs="+", required=True)
    _search_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="SVG path for the accuracy/criterion plot")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("oracle", help="solve the flipping linear program exactly")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=parse_delta, required=True)
    p.add_argument("--mode", choices=["empirical", "model"], default="empirical")
    p.add_argument("--seed", type=int, default=None, help="seed of the dual subgradient restarts")
    p.add_argument("--out", required=True)
    p.add_argument("--rule-out", dest="rule_out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("render", help="scatter plot of two-component bias scores")
    _common(p, criterion=False)
    p.add_argument("--scores", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--rule", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        outputs = args.func(args)
        _provenance(args, outputs)
    except StageError as exc:
        print(f"fairflip {args.command}: {exc.stage} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
