"""``nctreduce`` command line: extract -> train -> evaluate -> reduce.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import fnmatch
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .evaluation import (
    EvaluationError, SplitConfig, evaluate_model, format_cv_summary, format_summary,
    kfold_cv, split, subsample_trials, write_report_csv,
)
from .features import (
    CODINGS, FeatureRow, SchemaMismatch, features_from_document, read_feature_csv,
    write_feature_csv,
)
from .glm import (
    FitControls, GLMError, ModelSpec, extended_pool, default_pool, fit_model, forward_stepwise,
    infer_coding, load_model, predict_proba, save_model, write_trace_csv,
)
from .harmony import NoteLabel, UnparseableRN
from .kern import KernError, check_durations, parse_kern
from .reduce import ReduceConfig, colorize

LOGGER = logging.getLogger("nctreduce")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
KERN_SUFFIXES = (".krn", ".krm")


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_DATA):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict, inputs: Sequence[Path],
                    extra: Optional[dict] = None) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {str(p): _digest(p) for p in inputs},
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    manifest.update(extra or {})
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _melody_policy(value: str):
    if value == "last":
        return None
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'last' or an integer, got {value!r}") from None


def _fraction(value: str) -> float:
    x = float(value)
    if not 0.0 < x < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {value}")
    return x


def _threshold(value: str) -> float:
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"threshold must lie in [0, 1], got {value}")
    return x


def _load_rows(path: Path, subset: Optional[str]) -> list[FeatureRow]:
    try:
        rows = read_feature_csv(path.read_text(encoding="utf-8"))
    except SchemaMismatch as exc:
        raise CLIError(f"{path}: {exc}") from None
    if subset:
        rows = [r for r in rows if fnmatch.fnmatchcase(r.piece_id, subset)]
    return rows


def _labeled(rows: Sequence[FeatureRow]) -> list[FeatureRow]:
    kept = [r for r in rows if r.is_labeled]
    if len(kept) < len(rows):
        LOGGER.info("excluding %d unlabeled row(s)", len(rows) - len(kept))
    return kept


def _extract_one(job: tuple[str, str, object, str, str]):
    """Worker: (rows, duration-warning count, skip reason or None)."""
    path, piece_id, policy, coding, rn_policy = job
    try:
        doc = parse_kern(Path(path).read_text(encoding="utf-8"), source_id=path)
        warnings = check_durations(doc)
        rows = features_from_document(doc, piece_id, policy, coding, rn_policy)
    except UnparseableRN as exc:
        return None, 0, f"strict: unparseable harmony token {exc}"
    except (KernError, ValueError, UnicodeDecodeError) as exc:
        return None, 0, str(exc)
    return rows, len(warnings), None


def cmd_extract(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise CLIError(f"corpus directory {corpus} does not exist")
    files = sorted(p for p in corpus.rglob("*") if p.suffix.lower() in KERN_SUFFIXES and p.is_file())
    if not files:
        raise CLIError(f"no .krn/.krm files under {corpus}")
    jobs = [
        (str(p), p.relative_to(corpus).with_suffix("").as_posix(),
         args.melody_spine, args.coding, args.on_unparseable_rn)
        for p in files
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            outcomes = list(pool.map(_extract_one, jobs))
    else:
        outcomes = [_extract_one(job) for job in jobs]

    rows: list[FeatureRow] = []
    skipped, parsed, duration_warnings = [], [], 0
    for job, (file_rows, n_warn, error) in sorted(zip(jobs, outcomes), key=lambda item: item[0][1]):
        if error is not None:
            if error.startswith("strict:") and args.on_unparseable_rn == "strict":
                raise CLIError(f"{job[0]}: {error[len('strict: '):]}")
            skipped.append({"file": job[0], "reason": error})
            LOGGER.warning("skipping %s: %s", job[0], error)
            continue
        rows.extend(file_rows)
        duration_warnings += n_warn
        parsed.append(job[0])
    if not parsed:
        raise CLIError(f"none of the {len(files)} file(s) under {corpus} could be parsed")

    out = Path(args.out)
    out.write_text(write_feature_csv(rows), encoding="utf-8")
    labeled = [r for r in rows if r.is_labeled]
    n_ct = sum(r.label is NoteLabel.CT for r in labeled)
    stats = {
        "files_found": len(files),
        "files_parsed": len(parsed),
        "files_skipped": skipped,
        "duration_warnings": duration_warnings,
        "rows": len(rows),
        "rows_labeled": len(labeled),
        "rows_unlabeled": len(rows) - len(labeled),
        "ct_share": n_ct / len(labeled) if labeled else None,
        "nct_share": 1 - n_ct / len(labeled) if labeled else None,
    }
    _write_manifest(out, "extract", _config(args), [Path(p) for p in parsed], stats)
    print(f"{len(parsed)}/{len(files)} files parsed, {len(skipped)} skipped; "
          f"{len(labeled)} labeled row(s), {len(rows) - len(labeled)} unlabeled")
    if labeled:
        print(f"CT share {stats['ct_share']:.2%}, NCT share {stats['nct_share']:.2%}")
    return EXIT_OK


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}


def cmd_train(args) -> int:
    features = Path(args.features)
    rows = _labeled(_load_rows(features, args.subset))
    if not rows:
        raise CLIError("no labeled rows to train on")
    if args.holdout is not None:
        try:
            rows, _ = split(rows, SplitConfig(args.holdout, args.granularity, args.seed))
        except EvaluationError as exc:
            raise CLIError(str(exc)) from None
    controls = FitControls()
    coding = infer_coding(rows)
    trace = []
    if args.select == "fixed":
        try:
            spec = ModelSpec.parse(args.terms, coding)
        except ValueError as exc:
            raise CLIError(f"--terms: {exc}", EXIT_USAGE) from None
    try:
        if args.select == "fixed":
            fit = fit_model(rows, spec, controls)
        else:
            pool = extended_pool() if args.pool == "extended" else default_pool()
            fit, trace = forward_stepwise(rows, pool, controls, coding)
    except GLMError as exc:
        raise CLIError(f"fitting failed: {exc}", EXIT_NUMERIC) from None
    if not fit.converged:
        raise CLIError(f"model {fit.spec} did not converge (separated or ill-conditioned data)",
                       EXIT_NUMERIC)

    out = Path(args.out)
    out.write_text(save_model(fit), encoding="utf-8")
    trace_path = out.with_suffix(".trace.csv")
    trace_path.write_text(write_trace_csv(trace), encoding="utf-8")
    summary = {"terms": [t.name for t in fit.spec.terms], "n_obs": fit.n_obs,
               "log_likelihood": fit.log_likelihood, "aic": fit.aic, "iterations": fit.iterations}
    _write_manifest(out, "train", _config(args), [features], {"summary": summary})
    print(f"model: {fit.spec}")
    print(f"n = {fit.n_obs}, log-likelihood = {fit.log_likelihood:.4f}, AIC = {fit.aic:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    features = Path(args.features)
    rows = _labeled(_load_rows(features, args.subset))
    if not rows:
        raise CLIError("no labeled rows to evaluate")
    try:
        fit = load_model(Path(args.model).read_text(encoding="utf-8"))
    except (GLMError, ValueError) as exc:
        raise CLIError(f"{args.model}: {exc}") from None
    entries = []
    try:
        if args.kfold is not None:
            cv = kfold_cv(rows, fit.spec, args.kfold, args.seed, args.threshold)
            entries = [("fold", i, r) for i, r in enumerate(cv.folds)] + [("mean", "", cv.mean)]
            text = format_cv_summary(cv) + f"\nBaseline accuracy: {cv.mean.baseline_accuracy:.2%}"
        elif args.trials is not None:
            res = subsample_trials(rows, fit, args.sample, args.trials, args.seed, args.threshold)
            entries = [("trial", i, r) for i, r in enumerate(res.trials)] + [("mean", "", res.mean)]
            text = format_summary(res.mean, f"{args.trials} trials of {args.sample} rows (mean)")
        else:
            if args.split is not None:
                _, rows = split(rows, SplitConfig(args.split, args.granularity, args.seed))
                title = f"Held-out {args.split:.0%} split"
            else:
                title = "All rows"
            report = evaluate_model(fit, rows, args.threshold)
            entries = [("test", "", report)]
            text = format_summary(report, title)
    except (EvaluationError, ValueError) as exc:
        raise CLIError(str(exc)) from None
    except GLMError as exc:
        raise CLIError(str(exc), EXIT_NUMERIC) from None
    out = Path(args.report)
    out.write_text(write_report_csv(entries), encoding="utf-8")
    _write_manifest(out, "evaluate", _config(args), [features, Path(args.model)])
    print(text)
    return EXIT_OK


def cmd_reduce(args) -> int:
    score = Path(args.score)
    try:
        doc = parse_kern(score.read_text(encoding="utf-8"), source_id=str(score))
        rows = features_from_document(doc, score.stem, args.melody_spine)
        fit = load_model(Path(args.model).read_text(encoding="utf-8"))
    except (KernError, GLMError, ValueError) as exc:
        raise CLIError(str(exc)) from None
    try:
        config = ReduceConfig(args.threshold, args.ct_color, args.nct_color, args.unscored_color)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from None
    probs = predict_proba(fit, rows)
    out = Path(args.out)
    out.write_text(colorize(doc, rows, probs, config, args.melody_spine), encoding="utf-8")
    inputs = [score, Path(args.model)]
    if args.probs_out:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["piece_id", "note_index", "probability", "prediction"])
        for row, p in zip(rows, probs):
            writer.writerow([row.piece_id, row.note_index, f"{p:.6f}",
                             "CT" if p >= args.threshold else "NCT"])
        Path(args.probs_out).write_text(buf.getvalue(), encoding="utf-8")
    _write_manifest(out, "reduce", _config(args), inputs)
    n_nct = sum(p < args.threshold for p in probs)
    print(f"{len(rows)} melody notes, {n_nct} predicted NCT at threshold {args.threshold:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nctreduce", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="kern corpus -> feature CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--melody-spine", type=_melody_policy, default=None,
                   help="'last' (right-most **kern, default) or a kern-spine index")
    p.add_argument("--coding", choices=CODINGS, default="ternary")
    p.add_argument("--on-unparseable-rn", choices=("skip", "strict"), default="skip")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit a logistic model")
    p.add_argument("--features", required=True)
    p.add_argument("--subset", help="glob on piece_id, e.g. '*_00_*' for themes")
    p.add_argument("--select", choices=("stepwise", "fixed"), default="stepwise")
    p.add_argument("--terms", default="DI,AI,Dur,Beat")
    p.add_argument("--pool", choices=("default", "extended"), default="default")
    p.add_argument("--holdout", type=_fraction, help="train only on the complement of this test fraction")
    p.add_argument("--granularity", choices=("row", "piece"), default="row")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--subset")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--split", type=_fraction)
    mode.add_argument("--kfold", type=int)
    mode.add_argument("--trials", type=int)
    p.add_argument("--sample", type=int, default=2400)
    p.add_argument("--granularity", choices=("row", "piece"), default="row")
    p.add_argument("--threshold", type=_threshold, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reduce", help="colour predicted NCTs in a score")
    p.add_argument("--score", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=_threshold, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--probs-out")
    p.add_argument("--melody-spine", type=_melody_policy, default=None)
    p.add_argument("--ct-color", default="black")
    p.add_argument("--nct-color", default="hotpink")
    p.add_argument("--unscored-color", default="black")
    p.set_defaults(func=cmd_reduce)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"nctreduce {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"nctreduce {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
