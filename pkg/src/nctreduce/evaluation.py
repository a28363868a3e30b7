"""Train/test splits, cross-validation, subsampling trials and metrics.

CT is the positive class throughout.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .features import FeatureRow
from .glm import FitControls, FittedModel, ModelSpec, fit_model, labels_of, predict_proba
from .harmony import NoteLabel

LOGGER = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


class DegenerateSplit(EvaluationError):
    pass


class DegenerateFold(EvaluationError):
    pass


class SampleTooLarge(EvaluationError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    granularity: str = "row"  # or "piece"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.granularity not in ("row", "piece"):
            raise ValueError(f"granularity must be 'row' or 'piece', got {self.granularity!r}")


@dataclass
class EvalReport:
    n_test: int
    baseline_accuracy: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    threshold: float = 0.5


def _both_classes(rows: Sequence[FeatureRow]) -> bool:
    labels = {r.label for r in rows}
    return NoteLabel.CT in labels and NoteLabel.NCT in labels


def split(rows: Sequence[FeatureRow], config: SplitConfig = SplitConfig()):
    """Reproducible disjoint (train, test) partition."""
    rows = list(rows)
    if len(rows) < 2:
        raise DegenerateSplit("need at least two rows to split")
    rng = np.random.default_rng(config.seed)
    for _ in range(10):
        if config.granularity == "row":
            n_test = min(max(int(round(len(rows) * config.test_fraction)), 1), len(rows) - 1)
            order = rng.permutation(len(rows))
            test_idx = set(order[:n_test].tolist())
        else:
            pieces = sorted({r.piece_id for r in rows})
            if len(pieces) < 2:
                raise DegenerateSplit("piece-level split needs at least two pieces")
            target = len(rows) * config.test_fraction
            test_pieces: set[str] = set()
            count = 0
            for i in rng.permutation(len(pieces)):
                if count >= target or len(test_pieces) == len(pieces) - 1:
                    break
                test_pieces.add(pieces[i])
                count += sum(r.piece_id == pieces[i] for r in rows)
            test_idx = {i for i, r in enumerate(rows) if r.piece_id in test_pieces}
        train = [r for i, r in enumerate(rows) if i not in test_idx]
        test = [r for i, r in enumerate(rows) if i in test_idx]
        if _both_classes(train):
            return train, test
    raise DegenerateSplit("training part lacks one of the classes after 10 draws")


def auc_score(labels: Sequence[float], scores: Sequence[float]) -> Optional[float]:
    """Mann-Whitney AUC with average ranks for ties; None for a single class."""
    labels = np.asarray(labels, dtype=float)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metrics(labels: Sequence[float], probs: Sequence[float], threshold: float = 0.5) -> EvalReport:
    labels = np.asarray(labels, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if labels.shape != probs.shape or labels.size == 0:
        raise EvaluationError("labels and probabilities must be equally long and non-empty")
    pred = probs >= threshold
    truth = labels == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    auc = auc_score(labels, probs)
    if auc is None:
        LOGGER.info("test labels contain a single class; AUC undefined")
    return EvalReport(
        n_test=int(labels.size),
        baseline_accuracy=float(truth.mean()),
        accuracy=float(np.mean(pred == truth)),
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc,
        threshold=threshold,
    )


def evaluate_model(fit: FittedModel, rows: Sequence[FeatureRow], threshold: float = 0.5) -> EvalReport:
    return metrics(labels_of(rows), predict_proba(fit, rows), threshold)


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Unweighted mean of each metric; AUC over the reports that define it."""
    if not reports:
        raise EvaluationError("nothing to average")
    aucs = [r.auc for r in reports if r.auc is not None]
    return EvalReport(
        n_test=int(round(np.mean([r.n_test for r in reports]))),
        baseline_accuracy=float(np.mean([r.baseline_accuracy for r in reports])),
        accuracy=float(np.mean([r.accuracy for r in reports])),
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        auc=float(np.mean(aucs)) if aucs else None,
        threshold=reports[0].threshold,
    )


@dataclass
class CVResult:
    mean: EvalReport
    folds: list[EvalReport]
    train_ct_share: float
    fold_train_ct_shares: list[float] = field(default_factory=list)


def kfold_cv(
    rows: Sequence[FeatureRow], spec: ModelSpec, k: int = 10, seed: int = 0,
    threshold: float = 0.5, controls: Optional[FitControls] = None,
) -> CVResult:
    """Shuffle once, cut into ``k`` near-equal folds, refit ``spec`` on each
    complement and score the held-out fold."""
    rows = [r for r in rows if r.is_labeled]
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(rows) < k:
        raise DegenerateFold(f"{len(rows)} rows cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(rows))
    folds = np.array_split(order, k)
    reports, shares = [], []
    for i, held_out in enumerate(folds):
        held = set(held_out.tolist())
        train = [r for j, r in enumerate(rows) if j not in held]
        test = [rows[j] for j in held_out]
        if not _both_classes(train):
            raise DegenerateFold(f"fold {i}: training part lacks a class")
        fit = fit_model(train, spec, controls)
        if not fit.converged:
            LOGGER.warning("fold %d: fit did not converge", i)
        reports.append(evaluate_model(fit, test, threshold))
        shares.append(float(labels_of(train).mean()))
    return CVResult(average_reports(reports), reports, float(np.mean(shares)), shares)


@dataclass
class TrialsResult:
    mean: EvalReport
    trials: list[EvalReport]


def subsample_trials(
    rows: Sequence[FeatureRow], fit: FittedModel, sample_size: int = 2400,
    trials: int = 50, seed: int = 0, threshold: float = 0.5,
) -> TrialsResult:
    """Score a fixed model on repeated random subsets drawn without replacement."""
    rows = [r for r in rows if r.is_labeled]
    if sample_size > len(rows):
        raise SampleTooLarge(f"sample of {sample_size} requested from {len(rows)} rows")
    if sample_size < 1 or trials < 1:
        raise ValueError("sample_size and trials must be positive")
    labels = labels_of(rows)
    probs = predict_proba(fit, rows)
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        idx = rng.choice(len(rows), size=sample_size, replace=False)
        reports.append(metrics(labels[idx], probs[idx], threshold))
    return TrialsResult(average_reports(reports), reports)


REPORT_COLUMNS = ("scope", "index") + tuple(f.name for f in fields(EvalReport))


def write_report_csv(entries: Sequence[tuple[str, object, EvalReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for scope, index, report in entries:
        values = asdict(report)
        writer.writerow([scope, index] + [_fmt(values[c]) for c in REPORT_COLUMNS[2:]])
    return buf.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_summary(report: EvalReport, title: str = "Evaluation") -> str:
    auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
    return "\n".join([
        f"{title} (n = {report.n_test}, threshold = {report.threshold:g}):",
        f"Baseline accuracy: {report.baseline_accuracy:.2%}",
        f"Accuracy: {report.accuracy:.2%}",
        f"Precision: {report.precision:.4f}",
        f"Recall: {report.recall:.4f}",
        f"f1: {report.f1:.4f}",
        f"AUC: {auc}",
    ])


def format_cv_summary(cv: CVResult) -> str:
    """Cross-validation block: training CT share, then the averaged metrics."""
    m = cv.mean
    auc = "n/a" if m.auc is None else f"{m.auc:.4f}"
    return "\n".join([
        f"{len(cv.folds)}-fold cross-validation (unweighted mean over folds)",
        f"Percentage of chord tones in the training set: {cv.train_ct_share:.2%}",
        "Cross-validation:",
        f"Accuracy: {m.accuracy:.2%}",
        f"Precision: {m.precision:.4f}",
        f"Recall: {m.recall:.4f}",
        f"f1: {m.f1:.4f}",
        f"AUC: {auc}",
    ])
