"""Logistic regression with interaction terms.

Design matrices are built from :class:`~nctreduce.features.FeatureRow` lists,
coefficients are fitted by Newton/IRLS, and terms are chosen by forward
stepwise search on AIC.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit

from .features import FeatureRow, IntervalClass
from .harmony import NoteLabel

LOGGER = logging.getLogger(__name__)

FACTORS = ("DI", "AI", "Dur", "Beat", "Boundary", "FromRest", "ToRest")
CORE_FACTORS = FACTORS[:4]
EXTRA_FACTORS = FACTORS[4:]
INTERVAL_FACTORS = ("DI", "AI")
INTERVAL_LEVELS = ("step", "leap", "none")  # reference first
INTERCEPT = "(Intercept)"
MODEL_VERSION = "1"


class GLMError(ValueError):
    pass


class EmptyData(GLMError):
    pass


class AllSameLabel(GLMError):
    pass


class RankDeficient(GLMError):
    def __init__(self, columns: Sequence[str]):
        super().__init__("design matrix is rank deficient; dependent columns: " + ", ".join(columns))
        self.columns = list(columns)


@dataclass(frozen=True)
class Term:
    factors: frozenset

    def __post_init__(self):
        if not self.factors:
            raise ValueError("a term needs at least one factor")
        unknown = set(self.factors) - set(FACTORS)
        if unknown:
            raise ValueError(f"unknown factor(s) {sorted(unknown)}; choose from {FACTORS}")

    @classmethod
    def of(cls, *factors: str) -> "Term":
        return cls(frozenset(factors))

    @classmethod
    def parse(cls, text: str) -> "Term":
        return cls(frozenset(p.strip() for p in text.split(":") if p.strip()))

    @property
    def ordered(self) -> tuple[str, ...]:
        return tuple(f for f in FACTORS if f in self.factors)

    @property
    def name(self) -> str:
        return ":".join(self.ordered)

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def sort_key(self) -> tuple:
        return (self.order, tuple(FACTORS.index(f) for f in self.ordered))

    def sub_terms(self) -> list["Term"]:
        """Proper, non-empty factor subsets."""
        return [
            Term(frozenset(c))
            for r in range(1, self.order)
            for c in itertools.combinations(self.ordered, r)
        ]

    def __str__(self) -> str:
        return self.name


def canonical(terms: Iterable[Term]) -> tuple[Term, ...]:
    return tuple(sorted(set(terms), key=lambda t: t.sort_key))


def default_pool() -> tuple[Term, ...]:
    """Main effects of DI, AI, Dur, Beat and all their 2- and 3-way interactions."""
    return canonical(
        Term(frozenset(c)) for r in (1, 2, 3) for c in itertools.combinations(CORE_FACTORS, r)
    )


def extended_pool() -> tuple[Term, ...]:
    """Default pool plus Boundary/FromRest/ToRest and their 2-way interactions
    with every other factor."""
    extra = [Term.of(f) for f in EXTRA_FACTORS]
    extra += [
        Term(frozenset(pair))
        for pair in itertools.combinations(FACTORS, 2)
        if set(pair) & set(EXTRA_FACTORS)
    ]
    return canonical(default_pool() + tuple(extra))


def main_effects() -> tuple[Term, ...]:
    return canonical(Term.of(f) for f in CORE_FACTORS)


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[Term, ...]
    coding: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: {f: INTERVAL_LEVELS for f in INTERVAL_FACTORS}
    )

    def __post_init__(self):
        object.__setattr__(self, "terms", canonical(self.terms))
        object.__setattr__(self, "coding", {f: tuple(self.coding.get(f, INTERVAL_LEVELS)) for f in INTERVAL_FACTORS})
        for factor, levels in self.coding.items():
            if not levels or levels[0] != "step" or set(levels) - set(INTERVAL_LEVELS):
                raise ValueError(f"{factor} levels must start with reference 'step': {levels}")
        present = set(self.terms)
        for term in self.terms:
            missing = [s.name for s in term.sub_terms() if s not in present]
            if missing:
                raise ValueError(f"term {term} violates hierarchy; missing {missing}")

    @classmethod
    def parse(cls, text: str, coding: Optional[Mapping[str, tuple[str, ...]]] = None) -> "ModelSpec":
        terms = [Term.parse(t) for t in text.split(",") if t.strip()]
        return cls(tuple(terms), coding or {f: INTERVAL_LEVELS for f in INTERVAL_FACTORS})

    def with_term(self, term: Term) -> "ModelSpec":
        return ModelSpec(self.terms + (term,), self.coding)

    def __str__(self) -> str:
        return " + ".join(["1"] + [t.name for t in self.terms])


def infer_coding(rows: Sequence[FeatureRow]) -> dict[str, tuple[str, ...]]:
    """Interval levels actually observed (step is always kept as reference)."""
    coding = {}
    for factor in INTERVAL_FACTORS:
        seen = {_interval_level(_interval(r, factor)) for r in rows}
        coding[factor] = tuple(lv for lv in INTERVAL_LEVELS if lv == "step" or lv in seen)
    return coding


def _interval(row: FeatureRow, factor: str) -> IntervalClass:
    return row.departing if factor == "DI" else row.arriving


def _interval_level(value: IntervalClass) -> str:
    return "step" if value is IntervalClass.UNISON else value.value


def factor_columns(
    rows: Sequence[FeatureRow], factor: str, coding: Mapping[str, tuple[str, ...]]
) -> list[tuple[str, np.ndarray]]:
    """Indicator (or real) columns for one factor against its reference level."""
    if factor in INTERVAL_FACTORS:
        levels = coding[factor]
        values = [_interval_level(_interval(r, factor)) for r in rows]
        unseen = sum(v not in levels for v in values)
        if unseen:
            LOGGER.warning("%d %s value(s) outside the model's levels %s mapped to reference 'step'",
                           unseen, factor, levels)
        return [
            (f"{factor}_{lv}", np.array([v == lv for v in values], dtype=float))
            for lv in levels[1:]
        ]
    if factor == "Dur":
        return [("Dur", np.array([float(r.duration_q) for r in rows]))]
    attr = {"Beat": "on_beat", "Boundary": "boundary", "FromRest": "from_rest", "ToRest": "to_rest"}[factor]
    return [(factor, np.array([getattr(r, attr) for r in rows], dtype=float))]


def term_columns(
    rows: Sequence[FeatureRow], term: Term, coding: Mapping[str, tuple[str, ...]],
    _cache: Optional[dict] = None,
) -> list[tuple[str, np.ndarray]]:
    """Elementwise products of the constituent factors' columns."""
    parts = []
    for factor in term.ordered:
        if _cache is not None and factor in _cache:
            parts.append(_cache[factor])
            continue
        cols = factor_columns(rows, factor, coding)
        if _cache is not None:
            _cache[factor] = cols
        parts.append(cols)
    out = []
    for combo in itertools.product(*parts):
        name = ":".join(n for n, _ in combo)
        vec = combo[0][1]
        for _, other in combo[1:]:
            vec = vec * other
        out.append((name, vec))
    return out


@dataclass
class Design:
    X: np.ndarray
    y: Optional[np.ndarray]
    columns: list[str]
    column_terms: list[str]


def labels_of(rows: Sequence[FeatureRow]) -> np.ndarray:
    """CT = 1, NCT = 0; unlabeled rows are a caller error."""
    bad = sum(r.label is NoteLabel.UNLABELED for r in rows)
    if bad:
        raise GLMError(f"{bad} unlabeled row(s); filter them before fitting or scoring")
    return np.array([r.label is NoteLabel.CT for r in rows], dtype=float)


def build_design(
    rows: Sequence[FeatureRow], spec: ModelSpec, with_labels: bool = True,
    _cache: Optional[dict] = None,
) -> Design:
    if not rows:
        raise EmptyData("no rows to build a design matrix from")
    cols = [np.ones(len(rows))]
    names = [INTERCEPT]
    terms = [INTERCEPT]
    for term in spec.terms:
        for name, vec in term_columns(rows, term, spec.coding, _cache):
            cols.append(vec)
            names.append(name)
            terms.append(term.name)
    X = np.column_stack(cols)
    y = None
    if with_labels:
        for j in range(1, X.shape[1]):
            if np.ptp(X[:, j]) == 0:
                LOGGER.warning("design column %s is constant (%g)", names[j], X[0, j])
        y = labels_of(rows)
    return Design(X, y, names, terms)


@dataclass
class FitControls:
    tol: float = 1e-8
    max_iter: int = 50
    ridge: float = 1e-10
    separation_bound: float = 30.0
    rank_tol: float = 1e-7


@dataclass
class FittedModel:
    beta: np.ndarray
    log_likelihood: float
    n_obs: int
    converged: bool
    iterations: int
    columns: list[str] = field(default_factory=list)
    spec: Optional[ModelSpec] = None
    column_terms: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.beta)

    @property
    def aic(self) -> float:
        return aic(self)

    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.columns, map(float, self.beta)))


def log_likelihood(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def score(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Gradient of the Bernoulli log-likelihood."""
    return X.T @ (y - expit(X @ beta))


def aic(fit: FittedModel) -> float:
    return 2.0 * fit.k - 2.0 * fit.log_likelihood


def dependent_columns(X: np.ndarray, names: Sequence[str], tol: float = 1e-7) -> list[str]:
    """Columns lying (numerically) in the span of the columns to their left."""
    norms = np.linalg.norm(X, axis=0)
    dependent = []
    kept: list[int] = []
    for j in range(X.shape[1]):
        if norms[j] == 0:
            dependent.append(f"{names[j]} (all zero)")
            continue
        col = X[:, j] / norms[j]
        if kept:
            basis = X[:, kept] / norms[kept]
            coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
            if np.linalg.norm(col - basis @ coef) < tol:
                dependent.append(names[j])
                continue
        kept.append(j)
    return dependent


def fit_logistic(
    X: np.ndarray, y: np.ndarray, controls: Optional[FitControls] = None,
    columns: Optional[Sequence[str]] = None,
) -> FittedModel:
    """Maximum-likelihood logistic regression by Newton/IRLS.

    Starts from beta = 0, stops when the largest score component drops below
    ``controls.tol``.  A tiny ridge on the Hessian diagonal keeps the Newton
    system solvable.  If coefficients outgrow ``separation_bound`` (complete
    or quasi-complete separation) or the iteration budget runs out, the last
    iterate is returned with ``converged=False``.
    """
    c = controls or FitControls()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = list(columns) if columns is not None else [f"x{j}" for j in range(p)]
    if n == 0:
        raise EmptyData("no observations")
    if n < p:
        raise GLMError(f"more coefficients ({p}) than observations ({n})")
    if np.all(y == y[0]):
        raise AllSameLabel(f"all {n} labels are {int(y[0])}")
    dependent = dependent_columns(X, names, c.rank_tol)
    if dependent:
        raise RankDeficient(dependent)

    beta = np.zeros(p)
    ll = log_likelihood(X, y, beta)
    converged = False
    iterations = 0
    while True:
        eta = X @ beta
        mu = expit(eta)
        grad = X.T @ (y - mu)
        if np.max(np.abs(grad)) < c.tol:
            converged = True
            break
        if iterations >= c.max_iter:
            LOGGER.warning("IRLS did not converge in %d iterations (max |score| %.3g)",
                           c.max_iter, np.max(np.abs(grad)))
            break
        w = mu * (1.0 - mu)
        hess = (X * w[:, None]).T @ X
        hess[np.diag_indices_from(hess)] += c.ridge
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            candidate = beta + t * step
            ll_new = log_likelihood(X, y, candidate)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-8:
                break
            t *= 0.5
        beta, ll = candidate, ll_new
        iterations += 1
        if np.max(np.abs(beta)) > c.separation_bound:
            LOGGER.warning("coefficients exceed %g after %d iterations; data look separated",
                           c.separation_bound, iterations)
            break
    return FittedModel(beta, ll, n, converged, iterations, names)


def fit_model(
    rows: Sequence[FeatureRow], spec: ModelSpec, controls: Optional[FitControls] = None,
    _cache: Optional[dict] = None,
) -> FittedModel:
    design = build_design(rows, spec, _cache=_cache)
    fit = fit_logistic(design.X, design.y, controls, design.columns)
    fit.spec = spec
    fit.column_terms = design.column_terms
    return fit


def predict_proba(fit: FittedModel, rows: Sequence[FeatureRow]) -> np.ndarray:
    if fit.spec is None:
        raise GLMError("model has no term specification")
    if not rows:
        return np.zeros(0)
    design = build_design(rows, fit.spec, with_labels=False)
    coef = fit.coefficients()
    if sorted(design.columns) != sorted(coef):
        raise GLMError(f"design columns {design.columns} do not match model columns {fit.columns}")
    beta = np.array([coef[c] for c in design.columns])
    return expit(design.X @ beta)


@dataclass(frozen=True)
class TraceStep:
    round: int
    term: str
    aic_before: float
    aic_after: float


def forward_stepwise(
    rows: Sequence[FeatureRow],
    pool: Optional[Sequence[Term]] = None,
    controls: Optional[FitControls] = None,
    coding: Optional[Mapping[str, tuple[str, ...]]] = None,
) -> tuple[FittedModel, list[TraceStep]]:
    """Greedy forward selection on AIC, respecting term hierarchy.

    Each round fits every pool term whose sub-terms are already in the model
    and keeps the one with the lowest AIC; ties go to the lower-order term,
    then the lexically smaller name.  Candidates that cannot be fitted
    (dependent columns or separation) are skipped for that round.  Stops
    when no candidate lowers the AIC.
    """
    pool = canonical(pool if pool is not None else default_pool())
    coding = coding or infer_coding(rows)
    cache: dict = {}
    spec = ModelSpec((), coding)
    current = fit_model(rows, spec, controls, cache)
    if not current.converged:
        raise GLMError("intercept-only model did not converge")
    trace: list[TraceStep] = []
    rnd = 0
    while True:
        rnd += 1
        chosen = set(spec.terms)
        eligible = [
            t for t in pool
            if t not in chosen and all(s in chosen for s in t.sub_terms())
        ]
        results = []
        for term in eligible:
            try:
                fit = fit_model(rows, spec.with_term(term), controls, cache)
            except RankDeficient as exc:
                LOGGER.info("round %d: skipping %s (%s)", rnd, term, exc)
                continue
            if not fit.converged:
                LOGGER.info("round %d: skipping %s (fit did not converge)", rnd, term)
                continue
            results.append((round(fit.aic, 9), term.order, term.name, term, fit))
        if not results:
            break
        best = min(results, key=lambda r: r[:3])
        _, _, _, term, fit = best
        if not fit.aic < current.aic:
            break
        trace.append(TraceStep(rnd, term.name, current.aic, fit.aic))
        LOGGER.info("round %d: + %s  AIC %.4f -> %.4f", rnd, term, current.aic, fit.aic)
        spec = spec.with_term(term)
        current = fit
    return current, trace


def write_trace_csv(trace: Sequence[TraceStep]) -> str:
    lines = ["round,term,aic_before,aic_after"]
    lines += [f"{s.round},{s.term},{s.aic_before!r},{s.aic_after!r}" for s in trace]
    return "\n".join(lines) + "\n"


def save_model(fit: FittedModel) -> str:
    """Line-oriented, tab-separated model file."""
    if fit.spec is None:
        raise GLMError("only models fitted from a ModelSpec can be saved")
    lines = [f"model-version\t{MODEL_VERSION}"]
    for factor in INTERVAL_FACTORS:
        lines.append(f"coding\t{factor}\t{','.join(fit.spec.coding[factor])}")
    lines += [
        f"fit\tn_obs\t{fit.n_obs}",
        f"fit\tlog_likelihood\t{fit.log_likelihood!r}",
        f"fit\taic\t{fit.aic!r}",
        f"fit\tconverged\t{int(fit.converged)}",
        f"fit\titerations\t{fit.iterations}",
    ]
    for term, col, b in zip(fit.column_terms, fit.columns, fit.beta):
        lines.append(f"{term}\t{col}\t{float(b)!r}")
    return "\n".join(lines) + "\n"


def load_model(text: str) -> FittedModel:
    coding: dict[str, tuple[str, ...]] = {}
    stats: dict[str, str] = {}
    terms: list[str] = []
    columns: list[str] = []
    beta: list[float] = []
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t") != ["model-version", MODEL_VERSION]:
        raise GLMError(f"not a version-{MODEL_VERSION} model file")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise GLMError(f"model line {lineno}: expected 3 tab-separated fields")
        if parts[0] == "coding":
            coding[parts[1]] = tuple(parts[2].split(","))
        elif parts[0] == "fit":
            stats[parts[1]] = parts[2]
        else:
            terms.append(parts[0])
            columns.append(parts[1])
            beta.append(float(parts[2]))
    spec = ModelSpec(
        tuple(Term.parse(t) for t in dict.fromkeys(terms) if t != INTERCEPT),
        coding or {f: INTERVAL_LEVELS for f in INTERVAL_FACTORS},
    )
    fit = FittedModel(
        beta=np.array(beta),
        log_likelihood=float(stats.get("log_likelihood", "nan")),
        n_obs=int(stats.get("n_obs", 0)),
        converged=stats.get("converged", "1") == "1",
        iterations=int(stats.get("iterations", 0)),
        columns=columns,
        spec=spec,
        column_terms=terms,
    )
    return fit
