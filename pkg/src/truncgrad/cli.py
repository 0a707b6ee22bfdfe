"""Command-line entry point: ``truncgrad <command> [flags]``.

Exit codes: 0 success, 1 bad flags or unreadable input, 2 numerical
divergence, 3 a regret inequality failed.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import LABEL_MODES, ParseError, generate_synthetic, read_examples, scan_meta, substream, train_test_split, write_examples
from .evaluation import CvPlan, cross_validate, evaluate, predict_scores, sparsity_frontier, write_cv_csv, write_sweep_csv
from .learner import RULE_ALIASES, ConfigError, DivergenceError, LearnerConfig, Rule, RunTrace, read_model, train, write_model
from .loss import LossKind, assumption_constants
from .reference import eager_reference_train
from .truncation import INF
from .verify import (
    MAX_ORACLE_DIM,
    MAX_ORACLE_N,
    RunRecord,
    VerificationError,
    check_corollary1,
    check_theorem1,
    l1_optimum_oracle,
    lemma1_margins,
    log_prefixes,
    write_reports,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the contract reserves 2 for divergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _theta(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity", "+inf"):
        return INF
    v = float(text)
    if math.isnan(v):
        raise argparse.ArgumentTypeError("theta must be a number or 'inf'")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [_theta(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_learner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rule", default="truncated_gradient", choices=sorted({r.value for r in Rule} | set(RULE_ALIASES)))
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--g", type=float, default=0.0)
    p.add_argument("--theta", type=_theta, default=INF, help="number or 'inf'")
    p.add_argument("--g-equals-theta", action="store_true", help="set theta to the value of --g")
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--loss", default="square", choices=[k.value for k in LossKind])
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--lr-decay-power", type=float, default=0.0)
    p.add_argument("--pass-lr-decay", type=float, default=1.0)
    p.add_argument("--sampling", default="sequential", choices=["sequential", "uniform_random"])
    p.add_argument("--steps", type=int, default=None, help="draws for uniform sampling")
    p.add_argument("--vw-normalize", action="store_true")
    p.add_argument("--vw-clip", action="store_true")
    p.add_argument("--final-threshold", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", default="raw", choices=LABEL_MODES, help="label convention of the input")


def _config(args) -> LearnerConfig:
    theta = args.g if args.g_equals_theta else args.theta
    return LearnerConfig(
        eta=args.eta,
        g=args.g,
        theta=theta,
        K=args.K,
        rule=args.rule,
        loss=args.loss,
        passes=args.passes,
        lr_decay_power=args.lr_decay_power,
        pass_lr_decay=args.pass_lr_decay,
        sampling=args.sampling,
        steps=args.steps,
        vw_normalize=args.vw_normalize,
        vw_clip=args.vw_clip,
        seed=args.seed,
        final_threshold=args.final_threshold,
    )


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"cannot read {p}")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_manifest(path: str | Path, entries: dict[str, object]) -> None:
    Path(path).write_text("".join(f"{k}={_fmt(v)}\n" for k, v in entries.items()), encoding="utf-8")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


# -- commands --------------------------------------------------------------


def run_train(args) -> int:
    cfg = _config(args)
    _require_files(args.data)
    model_path = Path(args.model)
    manifest_path = Path(args.manifest) if args.manifest else model_path.with_name(model_path.name + ".manifest")

    started = time.perf_counter()
    examples = read_examples(args.data, args.labels)
    result = train(examples, cfg)
    write_model(model_path, result.weights, cfg)
    if args.trace:
        result.trace.to_csv(args.trace)
    if args.snapshots:
        dim = args.dim if args.dim is not None else max((ex.max_index() for ex in examples), default=-1) + 1
        ref = eager_reference_train(examples, cfg, dim=dim, record=True)
        np.save(args.snapshots, ref.snapshots)

    entries: dict[str, object] = {"tool": "truncgrad", "version": __version__, "command": "train"}
    entries.update({f"config.{k}": v for k, v in cfg.as_dict().items()})
    entries.update(
        {
            "seed": cfg.seed,
            "input": Path(args.data).name,
            "input_sha256": sha256_file(args.data),
            "labels": args.labels,
            "n_examples": len(examples),
            "steps": result.steps,
            "nnz": len(result.weights),
            "peak_nnz": result.peak_nnz,
            "model_sha256": sha256_file(model_path),
        }
    )
    if args.record_time:
        entries["wall_clock_seconds"] = round(time.perf_counter() - started, 3)
    write_manifest(manifest_path, entries)
    print(f"trained {result.steps} steps, {len(result.weights)} nonzero weights -> {model_path}")
    return EXIT_OK


def run_predict(args) -> int:
    _require_files(args.model, args.data)
    cfg, weights = read_model(args.model)
    examples = read_examples(args.data, args.labels, allow_unlabeled=True)
    scores = predict_scores(weights, examples, cfg)
    text = "".join(f"{s!r}\n" for s in scores)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if examples and all(ex.label is not None for ex in examples):
        metrics = evaluate(weights, examples, cfg)
        entries = {"n": len(examples)}
        entries.update({k: v for k, v in metrics.items() if not math.isnan(v)})
        if args.metrics:
            write_manifest(args.metrics, entries)
        else:
            print(" ".join(f"{k}={_fmt(v)}" for k, v in entries.items()), file=sys.stderr)
    return EXIT_OK


def _split(args, examples):
    if args.test:
        return examples, read_examples(args.test, args.labels)
    return train_test_split(examples, args.test_fraction, args.seed)


def run_sweep(args) -> int:
    base = _config(args)
    _require_files(args.data, args.test)
    examples = read_examples(args.data, args.labels)
    tr, te = _split(args, examples)
    results = sparsity_frontier(tr, te, base, args.grid, param=args.param, jobs=args.jobs)
    write_sweep_csv(args.out, results)
    for r in results:
        flag = f" error: {r.error}" if r.error else ""
        print(f"{args.param}={r.value!r} nnz={r.nnz} auc={r.auc:.4f} ratio={r.auc_ratio:.4f}{flag}")
    return EXIT_OK


def run_cv(args) -> int:
    base = _config(args)
    plan = CvPlan(
        folds=args.folds,
        etas=args.etas or [base.eta],
        gs=args.gs or [base.g],
        passes=args.passes_grid or [base.passes],
        pass_lr_decays=args.pass_lr_decays or [base.pass_lr_decay],
        metric=args.metric,
        tolerance=args.tolerance,
    )
    plan.configs(base)  # validates every grid point before any I/O
    _require_files(args.data)
    examples = read_examples(args.data, args.labels)
    result = cross_validate(examples, plan, base, seed=args.seed, jobs=args.jobs)
    if args.out:
        write_cv_csv(args.out, result, args.metric)
    b = result.best
    print(f"selected eta={b.eta!r} g={b.g!r} passes={b.passes} pass_lr_decay={b.pass_lr_decay!r}")
    return EXIT_OK


def run_verify(args) -> int:
    _require_files(args.data, args.trace, args.snapshots, args.model)
    cfg, _ = read_model(args.model)
    examples = read_examples(args.data, args.labels)
    trace = RunTrace.from_csv(args.trace)
    snapshots = np.load(args.snapshots)
    record = RunRecord.from_run(examples, trace, snapshots, cfg)
    if args.C is not None:
        C = args.C
    elif args.scan_C:
        C = scan_meta(examples).C
    else:
        raise VerificationError("the feature bound is required: pass --C or --scan-C")
    constants = assumption_constants(cfg.loss, C)

    dim = record.weights.shape[1]
    comparators = {"zero": np.zeros(dim)}
    if "final" in args.comparators:
        comparators["final"] = record.weights[-1].copy()
    if "random" in args.comparators:
        comparators["random"] = substream(args.seed, "comparator").standard_normal(dim)
    if "oracle" in args.comparators and cfg.loss is not LossKind.HINGE:
        if dim <= MAX_ORACLE_DIM and record.T <= MAX_ORACLE_N:
            comparators["oracle"], _ = l1_optimum_oracle(record.X, record.y, cfg.g, cfg.loss)
        else:
            print(f"skipping oracle comparator: needs dim <= {MAX_ORACLE_DIM} and T <= {MAX_ORACLE_N}", file=sys.stderr)

    reports = []
    for name, w_bar in comparators.items():
        for T in log_prefixes(record.T):
            reports.append(check_theorem1(record, w_bar, constants, T, name))
            if cfg.loss is LossKind.SQUARE and 1.0 - 2.0 * C * C * record.eta > 0.0:
                reports.append(check_corollary1(record, w_bar, C, T, name))
    rng = substream(args.seed, "lemma")
    steps = np.arange(record.T)
    if args.lemma_steps is not None and args.lemma_steps < record.T:
        steps = np.sort(rng.choice(record.T, args.lemma_steps, replace=False))
    margins = lemma1_margins(record, constants, steps.tolist(), rng)
    worst = float(margins.min(initial=math.inf))

    write_reports(args.out, reports)
    failed = [r for r in reports if not r.holds]
    lemma_ok = not margins.size or worst >= -1e-9
    print(f"{len(reports) - len(failed)}/{len(reports)} bound checks hold; lemma min margin {worst:.3g} over {len(steps)} steps")
    return EXIT_OK if not failed and lemma_ok else EXIT_CHECK_FAILED


def run_gen_synthetic(args) -> int:
    ds = generate_synthetic(
        args.n,
        args.informative,
        args.noise,
        args.noise_p,
        args.label_noise,
        args.seed,
        margin=args.margin,
        scale=args.scale,
    )
    write_examples(args.out, ds.examples)
    truth = Path(args.truth) if args.truth else Path(args.out).with_name(Path(args.out).name + ".truth")
    write_model(truth, ds.true_weights, LearnerConfig(loss="square"))
    print(f"wrote {len(ds.examples)} examples to {args.out}; ground truth in {truth}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="truncgrad", description="Sparse online learning with truncated gradient.")
    parser.add_argument("--version", action="version", version=f"truncgrad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on an svmlight file")
    _add_learner_flags(p)
    p.add_argument("data")
    p.add_argument("-o", "--model", default="model.txt")
    p.add_argument("--manifest", default=None, help="default: <model>.manifest")
    p.add_argument("--trace", default=None, help="write the per-step trace as CSV")
    p.add_argument("--snapshots", default=None, help="write dense weight snapshots (.npy) for verify-regret")
    p.add_argument("--dim", type=int, default=None, help="snapshot dimension (default: max index + 1)")
    p.add_argument("--record-time", action="store_true", help="add wall-clock time to the manifest")
    p.set_defaults(func=run_train)

    p = sub.add_parser("predict", help="score examples with a trained model")
    p.add_argument("data")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-o", "--out", default=None, help="scores file (default: stdout)")
    p.add_argument("--metrics", default=None, help="write AUC/accuracy/loss here when labels are present")
    p.add_argument("--labels", default="raw", choices=LABEL_MODES)
    p.set_defaults(func=run_predict)

    p = sub.add_parser("sweep", help="trace a sparsity frontier over g or theta")
    _add_learner_flags(p)
    p.add_argument("data")
    p.add_argument("--param", default="g", choices=["g", "theta"])
    p.add_argument("--grid", type=_floats, required=True, help="comma-separated values")
    p.add_argument("--test", default=None, help="held-out file (default: split the data)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--out", default="sweep.csv")
    p.set_defaults(func=run_sweep)

    p = sub.add_parser("cv", help="k-fold grid search")
    _add_learner_flags(p)
    p.add_argument("data")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--etas", type=_floats, default=None)
    p.add_argument("--gs", type=_floats, default=None)
    p.add_argument("--passes-grid", type=_ints, default=None)
    p.add_argument("--pass-lr-decays", type=_floats, default=None)
    p.add_argument("--metric", default="accuracy", choices=["accuracy", "auc", "loss"])
    p.add_argument("--tolerance", type=float, default=0.0, help="accept configs this close to the best, then pick the sparsest")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=run_cv)

    p = sub.add_parser("verify-regret", help="check the regret inequalities on a recorded run")
    p.add_argument("--data", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--snapshots", required=True)
    p.add_argument("--model", required=True, help="model file whose header gives the run's config")
    p.add_argument("--C", type=float, default=None, help="feature norm bound")
    p.add_argument("--scan-C", action="store_true", help="compute the bound from the data")
    p.add_argument("--comparators", type=lambda s: s.split(","), default=["zero", "final", "oracle", "random"])
    p.add_argument("--lemma-steps", type=int, default=None, help="sample this many steps for the per-step check")
    p.add_argument("--labels", default="raw", choices=LABEL_MODES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default="regret.csv")
    p.set_defaults(func=run_verify)

    p = sub.add_parser("gen-synthetic", help="write a synthetic classification dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--informative", type=int, default=10)
    p.add_argument("--noise", type=int, default=1000)
    p.add_argument("--noise-p", type=float, default=0.05)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--truth", default=None, help="default: <out>.truth")
    p.set_defaults(func=run_gen_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError, ParseError, VerificationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
