"""Joint selection of mean model and working correlation.

:func:`select` fits the dropout model once, fits every candidate by WGEE,
and scores each with JEAIC, JEBIC, MLIC and QICWr.  A candidate whose fit
fails gets ``inf`` for every criterion and a diagnostic message, so a
failed candidate can never be selected but is still reported.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import mlic, qicw_r
from .data import MeanModelSpec, design_matrices
from .dropout import DropoutFit, DropoutSpec, fit_dropout
from .el import count_parameters, el_criteria
from .exceptions import WgeeselError
from .families import get_family
from .wgee import normalize_structure, wgee_fit

CRITERIA = ("JEAIC", "JEBIC", "MLIC", "QICWr")
SELECTABLE = ("IND", "EXC", "AR1", "STATIONARY")
MAX_SUBSETS = 64
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class CandidateModel:
    spec: MeanModelSpec
    structure: str
    label: str = ""

    def __post_init__(self):
        s = normalize_structure(self.structure)
        if s not in SELECTABLE:
            raise ValueError(f"structure {s} cannot be a selection candidate")
        object.__setattr__(self, "structure", s)

    def sort_key(self):
        return (self.spec.covariates, not self.spec.intercept, SELECTABLE.index(self.structure))


def _as_spec(subset, names, intercept=True):
    if isinstance(subset, MeanModelSpec):
        return subset
    idx = []
    for item in subset:
        if isinstance(item, str):
            if item not in names:
                raise ValueError(f"unknown covariate {item!r}")
            idx.append(list(names).index(item))
        else:
            idx.append(int(item))
    return MeanModelSpec(tuple(sorted(idx)), intercept)


def enumerate_candidates(covariate_names, policy="all-subsets", structures=("IND", "EXC", "AR1"),
                         max_subsets=None) -> list:
    """Cross mean models with correlation structures in a deterministic order.

    ``policy`` is ``"all-subsets"`` (every subset of the covariates, always
    with the intercept) or an explicit sequence of subsets given by name
    or index.  Candidates are ordered lexicographically by covariate
    indices, then IND < EXC < AR1 < STATIONARY.
    """
    names = list(covariate_names)
    if isinstance(policy, str):
        if policy != "all-subsets":
            raise ValueError(f"unknown candidate policy {policy!r}")
        subsets = [c for k in range(len(names) + 1) for c in itertools.combinations(range(len(names)), k)]
    else:
        subsets = list(policy)
    specs = [_as_spec(s, names) for s in subsets]
    if len(set(specs)) != len(specs):
        dup = next(s for s in specs if specs.count(s) > 1)
        raise ValueError(f"duplicate mean model {dup.label(names)!r} in candidate list")
    if max_subsets is not None and len(specs) > max_subsets:
        raise ValueError(f"{len(specs)} mean models exceed the cap of {max_subsets}; pass an explicit list")
    structs = []
    for s in structures:
        s = normalize_structure(s)
        if s not in structs:
            structs.append(s)
    cands = [CandidateModel(sp, st, f"{sp.label(names)}/{st}") for sp in specs for st in structs]
    if not cands:
        raise ValueError("empty candidate set")
    return sorted(cands, key=CandidateModel.sort_key)


@dataclass
class CandidateRow:
    candidate: CandidateModel
    p_tilde: int
    values: dict
    neg2logr: float = math.inf
    el_status: str = "not run"
    converged: bool = False
    message: str = ""
    fit: object = None


def argmin_with_ties(values, p_tilde):
    """Index of the smallest finite value, breaking ties by fewer parameters then order.

    Returns ``(index, tied)``; ``index`` is ``None`` when no value is finite.
    """
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    if not finite.any():
        return None, False
    vmin = v[finite].min()
    close = np.flatnonzero(finite & (np.abs(v - vmin) <= _TIE_RTOL * max(1.0, abs(vmin))))
    best = min(close, key=lambda k: (p_tilde[k], k))
    return int(best), len(close) > 1


@dataclass
class CriterionTable:
    rows: list
    covariate_names: tuple
    n: int
    best: dict = field(default_factory=dict)
    ties: dict = field(default_factory=dict)

    def __post_init__(self):
        pt = [row.p_tilde for row in self.rows]
        for c in CRITERIA:
            self.best[c], self.ties[c] = argmin_with_ties(self.column(c), pt)

    def column(self, criterion) -> np.ndarray:
        return np.array([row.values[criterion] for row in self.rows])

    def selected(self, criterion):
        k = self.best[criterion]
        return None if k is None else self.rows[k].candidate

    def _coef_text(self, row):
        if row.fit is None:
            return ""
        names = (["(Intercept)"] if row.candidate.spec.intercept else []) + [
            self.covariate_names[c] for c in row.candidate.spec.covariates]
        se = row.fit.std_errors
        return ";".join(f"{nm}={b:.6g}({s:.4g})" for nm, b, s in zip(names, row.fit.beta, se))

    def to_tsv(self) -> str:
        head = ["label", "mean", "structure", "p_tilde", "converged", "el_status", "neg2logR",
                *CRITERIA, "selected_by", "coefficients", "message"]
        lines = ["\t".join(head)]
        for k, row in enumerate(self.rows):
            sel = ",".join(c for c in CRITERIA if self.best[c] == k)
            cells = [row.candidate.label, row.candidate.spec.label(self.covariate_names),
                     row.candidate.structure, str(row.p_tilde), str(row.converged).lower(),
                     row.el_status, _fmt(row.neg2logr), *(_fmt(row.values[c]) for c in CRITERIA),
                     sel, self._coef_text(row), row.message.replace("\t", " ").replace("\n", " ")]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        head = ["candidate", "p~", *CRITERIA, "EL"]
        body = []
        for k, row in enumerate(self.rows):
            cells = [row.candidate.label, str(row.p_tilde)]
            for c in CRITERIA:
                mark = "*" if self.best[c] == k else " "
                cells.append(f"{_fmt(row.values[c], 3)}{mark}")
            cells.append(row.el_status if row.converged else "FIT FAILED")
            body.append(cells)
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        out = ["  ".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(head, widths)))]
        out += ["  ".join(x.rjust(w) if i else x.ljust(w) for i, (x, w) in enumerate(zip(cells, widths)))
                for cells in body]
        out.append("")
        for c in CRITERIA:
            cand = self.selected(c)
            tie = " (tie broken)" if self.ties[c] else ""
            out.append(f"{c:6s} selects {cand.label if cand else 'nothing (all failed)'}{tie}")
        return "\n".join(out) + "\n"


def _fmt(v, digits=None):
    if v is None or (isinstance(v, float) and math.isinf(v)):
        return "inf"
    if digits is not None:
        return f"{v:.{digits}f}"
    return f"{v:.10g}"


def _resolve_dropout(dataset, dropout):
    if isinstance(dropout, DropoutFit):
        return dropout
    if dropout is None:
        dropout = DropoutSpec()
    if isinstance(dropout, DropoutSpec):
        return dropout.fit(dataset)
    return fit_dropout(dataset, dropout)


def _fit_one(dataset, cand, dfit):
    try:
        return wgee_fit(dataset, cand.spec, cand.structure, dfit), ""
    except (WgeeselError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        return None, f"{type(err).__name__}: {err}"


def select(dataset, candidates, dropout=None, full_spec: MeanModelSpec | None = None,
           n_jobs=1) -> CriterionTable:
    """Evaluate every candidate and tabulate the four criteria.

    Parameters
    ----------
    dataset : LongitudinalDataset
    candidates : list of CandidateModel
    dropout : DropoutSpec, DropoutFit, hazard array or (array, names)
        How to obtain the dropout model; it is fitted once.  Failure to fit
        it propagates.
    full_spec : MeanModelSpec, optional
        Largest mean model; defaults to the union of candidate covariates.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("empty candidate set")
    dfit = _resolve_dropout(dataset, dropout)
    if full_spec is None:
        cols = sorted({c for cand in candidates for c in cand.spec.covariates})
        full_spec = MeanModelSpec(tuple(cols), any(c.spec.intercept for c in candidates))

    if n_jobs == 1:
        results = [_fit_one(dataset, c, dfit) for c in candidates]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_fit_one)(dataset, c, dfit) for c in candidates)

    # largest mean model per structure, for MLIC's reference means
    full_fits = {}
    for cand, (fit, _) in zip(candidates, results):
        if cand.spec == full_spec and fit is not None:
            full_fits[cand.structure] = fit
    for st in {c.structure for c in candidates} - set(full_fits):
        fit, _ = _fit_one(dataset, CandidateModel(full_spec, st), dfit)
        full_fits[st] = fit

    rows = []
    q = dfit.q
    for cand, (fit, msg) in zip(candidates, results):
        pt = count_parameters(cand.spec.p, cand.structure, dataset.T, q)
        vals = dict.fromkeys(CRITERIA, math.inf)
        row = CandidateRow(cand, pt, vals, message=msg, fit=fit)
        if fit is not None:
            row.converged = True
            notes = []
            try:
                elc = el_criteria(fit, dataset, dfit, full_spec)
                row.neg2logr, row.el_status = elc.el.neg2logr, elc.el.status
                vals["JEAIC"], vals["JEBIC"] = elc.jeaic, elc.jebic
            except (WgeeselError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
                row.el_status = "error"
                notes.append(f"EL: {err}")
            try:
                ff = full_fits.get(cand.structure)
                if ff is None:
                    raise WgeeselError("largest mean model failed to fit")
                vals["MLIC"] = mlic(fit, ff, dfit, dataset)
            except (WgeeselError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
                notes.append(f"MLIC: {err}")
            try:
                vals["QICWr"] = qicw_r(fit, dfit, dataset)
            except (WgeeselError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
                notes.append(f"QICWr: {err}")
            row.message = "; ".join(notes)
        rows.append(row)
    return CriterionTable(rows=rows, covariate_names=dataset.covariate_names, n=dataset.n)


class JointSelector(BaseEstimator):
    """Estimator front end to :func:`select`.

    After ``fit(dataset)`` the chosen candidate under ``criterion`` is in
    ``best_candidate_`` and its WGEE fit in ``best_fit_``; ``predict``
    returns fitted marginal means for a dataset with the same covariates.
    """

    def __init__(self, candidates="all-subsets", structures=("IND", "EXC", "AR1"), criterion="JEBIC",
                 dropout_lags=1, dropout_covariates=True, n_jobs=1):
        self.candidates = candidates
        self.structures = structures
        self.criterion = criterion
        self.dropout_lags = dropout_lags
        self.dropout_covariates = dropout_covariates
        self.n_jobs = n_jobs

    def fit(self, dataset, y=None):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        cands = enumerate_candidates(dataset.covariate_names, self.candidates, self.structures,
                                     max_subsets=MAX_SUBSETS)
        dspec = DropoutSpec(self.dropout_lags, True, self.dropout_covariates)
        self.table_ = select(dataset, cands, dspec, n_jobs=self.n_jobs)
        k = self.table_.best[self.criterion]
        if k is None:
            raise WgeeselError(f"no candidate has a finite {self.criterion}")
        self.best_candidate_ = self.table_.rows[k].candidate
        self.best_fit_ = self.table_.rows[k].fit
        return self

    def predict(self, dataset):
        check_is_fitted(self, "best_fit_")
        X = design_matrices(dataset, self.best_candidate_.spec)
        return get_family(self.best_fit_.family).mean(X @ self.best_fit_.beta)
