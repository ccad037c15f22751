"""Weighted generalized estimating equations for monotone-dropout panels.

The mean parameters solve

    sum_i D_i' V_i^{-1} W_i (Y_i - mu_i) = 0,

with ``W_i = diag(r_ij / omega_ij)`` and ``V_i = A_i^{1/2} C(rho) A_i^{1/2}``.
Fisher-scoring steps for ``beta`` alternate with moment updates of the
dispersion ``phi`` and the correlation ``rho`` computed from weighted
Pearson residuals.

Moment estimators for the structures nested in a stationary correlation
solve the pooled lag equations

    sum_i U_im = phi * rho_m * (n (T - m) - p),
    U_im = sum_j (r_{i,j+m} / omega_{i,j+m}) e_ij e_{i,j+m},

which is the same normalization used by the empirical-likelihood
estimating function in :mod:`wgeesel.el`.  The unstructured estimator uses
one equation per pair with denominator ``(n - p) phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import toeplitz
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_panel
from .data import MeanModelSpec, design_matrices
from .dropout import ipw_weights
from .exceptions import (
    ConvergenceError,
    DataValidationError,
    NotPositiveDefiniteError,
    SingularMatrixError,
)
from .families import get_family

STRUCTURES = ("IND", "EXC", "AR1", "STATIONARY", "UNSTRUCTURED")
RHO_BOUND = 0.99
_VAR_FLOOR = 1e-10

_ALIASES = {
    "ind": "IND", "independence": "IND", "independent": "IND",
    "exc": "EXC", "exch": "EXC", "exchangeable": "EXC", "cs": "EXC",
    "ar1": "AR1", "ar(1)": "AR1", "autoregressive": "AR1",
    "sta": "STATIONARY", "stat": "STATIONARY", "stationary": "STATIONARY",
    "un": "UNSTRUCTURED", "uns": "UNSTRUCTURED", "unstructured": "UNSTRUCTURED",
}


def normalize_structure(kind) -> str:
    if isinstance(kind, WorkingCorrelation):
        return kind.kind
    key = str(kind).strip().lower()
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown correlation structure {kind!r}") from None


def n_corr_params(kind, T) -> int:
    kind = normalize_structure(kind)
    return {"IND": 0, "EXC": 1, "AR1": 1, "STATIONARY": T - 1,
            "UNSTRUCTURED": T * (T - 1) // 2}[kind]


@dataclass(frozen=True, eq=False)
class WorkingCorrelation:
    """A working correlation structure and its parameter vector."""

    kind: str
    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_structure(self.kind))
        object.__setattr__(self, "rho", np.atleast_1d(np.asarray(self.rho, dtype=float)))

    def matrix(self, T) -> np.ndarray:
        return correlation_matrix(self, T)

    def stationary_rho(self, T) -> np.ndarray:
        """Lag-indexed correlations ``(rho_1, .., rho_{T-1})`` of this structure."""
        k = self.kind
        if k == "IND":
            return np.zeros(T - 1)
        if k == "EXC":
            return np.full(T - 1, self.rho[0])
        if k == "AR1":
            return self.rho[0] ** np.arange(1, T)
        if k == "STATIONARY":
            return self.rho.copy()
        raise ValueError("an unstructured correlation has no stationary embedding")


def correlation_matrix(structure, T) -> np.ndarray:
    """Materialize ``C(rho)`` as a ``T x T`` matrix.

    Raises
    ------
    NotPositiveDefiniteError
        The resulting matrix is not positive definite.
    """
    if not isinstance(structure, WorkingCorrelation):
        structure = WorkingCorrelation(structure)
    kind, rho = structure.kind, structure.rho
    need = n_corr_params(kind, T)
    if kind != "IND" and rho.size != need:
        raise ValueError(f"{kind} with T={T} needs {need} correlation parameter(s), got {rho.size}")
    if np.any(np.abs(rho) >= 1):
        raise ValueError("correlation parameters must lie in (-1, 1)")
    if kind == "IND":
        return np.eye(T)
    if kind == "UNSTRUCTURED":
        C = np.eye(T)
        iu = np.triu_indices(T, 1)
        C[iu] = rho
        C.T[iu] = rho
    else:
        C = toeplitz(np.concatenate(([1.0], structure.stationary_rho(T))))
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"{kind} working correlation with rho={rho} is not positive definite") from None
    return C


def pearson_residuals(y0, mu, var, r) -> np.ndarray:
    return np.where(r == 1, (y0 - mu) / np.sqrt(var), 0.0)


def lag_products(e, w) -> np.ndarray:
    """``U_im = sum_j w_{i,j+m} e_ij e_{i,j+m}`` for ``m = 1..T-1``; shape ``(n, T-1)``."""
    T = e.shape[1]
    out = np.empty((e.shape[0], T - 1))
    for m in range(1, T):
        out[:, m - 1] = np.sum(w[:, m:] * e[:, :-m] * e[:, m:], axis=1)
    return out


def _dispersion(e, w, p):
    n, T = e.shape
    if n * T <= p:
        raise DataValidationError(f"cannot estimate dispersion: nT = {n * T} <= p = {p}")
    phi = float(np.sum(w * e ** 2) / (n * T - p))
    if not phi > 0:
        raise DataValidationError("estimated dispersion is not positive")
    return phi


def estimate_dispersion(residuals, r, omega, p) -> float:
    """``phi = sum_ij e_ij^2 r_ij / omega_ij / (nT - p)``."""
    e = np.where(np.asarray(r) == 1, residuals, 0.0)
    return _dispersion(e, ipw_weights(r, omega), p)


def _rho(e, w, r, kind, p, phi):
    n, T = e.shape
    if kind == "IND":
        return np.zeros(0)
    if T < 2:
        raise DataValidationError("correlation needs at least two occasions")
    pairs = np.array([r[:, m:].sum() for m in range(1, T)])
    if kind == "UNSTRUCTURED":
        if n <= p:
            raise DataValidationError("n must exceed p for the unstructured estimator")
        j, k = np.triu_indices(T, 1)
        if np.any(r[:, k].sum(axis=0) == 0):
            raise DataValidationError("no observed pairs for some occasion pair")
        rho = np.sum(w[:, k] * e[:, j] * e[:, k], axis=0) / ((n - p) * phi)
    else:
        lags = 1 if kind == "AR1" else T - 1
        if np.any(pairs[:lags] == 0):
            m = int(np.argmax(pairs[:lags] == 0)) + 1
            raise DataValidationError(f"no observed pairs at lag {m}")
        U = lag_products(e, w)[:, :lags].sum(axis=0)
        denom = n * (T - np.arange(1, lags + 1)) - p
        if np.any(denom <= 0):
            raise DataValidationError("too few subjects for the correlation estimator")
        if kind == "EXC":
            rho = np.array([U.sum() / (phi * denom.sum())])
        else:
            rho = U / (phi * denom)
    return np.clip(rho, -RHO_BOUND, RHO_BOUND)


def estimate_rho(residuals, r, omega, structure, p, phi) -> np.ndarray:
    """Moment estimate of the working-correlation parameters, clipped to +-0.99.

    EXC pools all lags, AR1 uses lag 1 only, STATIONARY keeps one value per
    lag and UNSTRUCTURED one per occasion pair (upper triangle, row-major).
    """
    kind = normalize_structure(structure)
    if kind == "IND":
        raise ValueError("the independence structure has no correlation parameters")
    r = np.asarray(r)
    e = np.where(r == 1, residuals, 0.0)
    return _rho(e, ipw_weights(r, omega), r, kind, p, phi)


class GeeTerms(NamedTuple):
    mu: np.ndarray      # (n, T)
    var: np.ndarray     # (n, T)
    D: np.ndarray       # (n, T, p)  d mu / d beta'
    B: np.ndarray       # (n, p, T)  D' V^{-1} W
    resid: np.ndarray   # (n, T)     W-masked raw residual y - mu (0 where unobserved)


def gee_terms(X, beta, family, C, phi, w, y0, r) -> GeeTerms:
    """Per-subject pieces of the WGEE estimating function at ``beta``."""
    fam = get_family(family)
    eta = X @ beta
    mu = fam.mean(eta)
    var = np.maximum(fam.variance(mu), _VAR_FLOOR)
    D = fam.dmu_deta(eta)[..., None] * X
    s = 1.0 / np.sqrt(phi * var)
    Cinv = np.linalg.inv(C)
    Vinv = s[:, :, None] * Cinv[None] * s[:, None, :]
    B = np.einsum("itp,its->ips", D, Vinv) * w[:, None, :]
    resid = np.where(r == 1, y0 - mu, 0.0)
    return GeeTerms(mu, var, D, B, resid)


@dataclass(frozen=True, eq=False)
class WgeeFit:
    """Result of a WGEE fit.

    ``residuals`` are Pearson residuals ``(y - mu) / sqrt(v(mu))`` (0 at
    unobserved cells); the weights are applied where they are used.
    """

    beta: np.ndarray
    corr: WorkingCorrelation
    phi: float
    mu_hat: np.ndarray
    residuals: np.ndarray
    robust_cov: np.ndarray
    converged: bool
    iterations: int
    family: str
    spec: MeanModelSpec | None = None
    score_norm: float = 0.0

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.robust_cov))


def _solve_stage(X, y0, r, w, fam, kind, beta, max_iter, tol):
    n, T, p = X.shape
    phi, rho, C = 1.0, np.zeros(0), np.eye(T)
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = fam.mean(eta)
        var = np.maximum(fam.variance(mu), _VAR_FLOOR)
        e = pearson_residuals(y0, mu, var, r)
        if not fam.fixed_scale:
            phi = _dispersion(e, w, p)
        if kind != "IND":
            rho = _rho(e, w, r, kind, p, phi)
            C = correlation_matrix(WorkingCorrelation(kind, rho), T)
        terms = gee_terms(X, beta, fam, C, phi, w, y0, r)
        E = np.einsum("ipt,itq->pq", terms.B, terms.D)
        g = np.einsum("ipt,it->p", terms.B, terms.resid)
        try:
            step = np.linalg.solve(E, g)
        except np.linalg.LinAlgError:
            raise SingularMatrixError("WGEE information matrix is singular") from None
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise ConvergenceError("WGEE step produced non-finite coefficients")
        if np.max(np.abs(step)) < tol:
            return beta, it, True
    return beta, max_iter, False


def _final_state(X, y0, r, w, fam, kind, beta):
    n, T, p = X.shape
    mu = fam.mean(X @ beta)
    var = np.maximum(fam.variance(mu), _VAR_FLOOR)
    e = pearson_residuals(y0, mu, var, r)
    phi = 1.0 if fam.fixed_scale else _dispersion(e, w, p)
    rho = _rho(e, w, r, kind, p, phi) if kind != "IND" else np.zeros(0)
    corr = WorkingCorrelation(kind, rho)
    C = correlation_matrix(corr, T)
    terms = gee_terms(X, beta, fam, C, phi, w, y0, r)
    return corr, C, phi, e, terms


def _sandwich(terms, n):
    if n < 2:
        raise SingularMatrixError("the sandwich estimator needs at least two subjects")
    E = np.einsum("ipt,itq->pq", terms.B, terms.D)
    Q = np.einsum("ipt,it->ip", terms.B, terms.resid)
    M = Q.T @ Q
    if np.linalg.cond(E) > 1e13:
        raise SingularMatrixError("WGEE information matrix is singular")
    Einv = np.linalg.inv(E)
    V = Einv @ M @ Einv.T
    return 0.5 * (V + V.T)


def fit_arrays(X, y, r, w, family, structure, max_iter=100, tol=1e-8, spec=None) -> WgeeFit:
    """Fit WGEE on stacked arrays.

    ``X`` is ``(n, T, p)``, ``y`` is ``(n, T)`` (values at ``r == 0`` are
    ignored), ``w`` holds the diagonal weights (0 where unobserved).  The
    independence fit is computed first and seeds the requested structure.

    Raises
    ------
    ConvergenceError
        No convergence in ``max_iter`` iterations; the partial fit is
        attached as ``err.fit``.
    SingularMatrixError, NotPositiveDefiniteError
    """
    fam = get_family(family)
    kind = normalize_structure(structure)
    X = np.asarray(X, dtype=float)
    r = np.asarray(r)
    y0 = np.where(r == 1, y, 0.0)
    w = np.where(r == 1, w, 0.0)
    n, T, p = X.shape

    beta, iters, ok = _solve_stage(X, y0, r, w, fam, "IND", np.zeros(p), max_iter, tol)
    if ok and kind != "IND":
        beta, more, ok = _solve_stage(X, y0, r, w, fam, kind, beta, max_iter, tol)
        iters += more
    corr, C, phi, e, terms = _final_state(X, y0, r, w, fam, kind, beta)
    score = np.einsum("ipt,it->p", terms.B, terms.resid)
    try:
        cov = _sandwich(terms, n)
    except SingularMatrixError:
        cov = np.full((p, p), np.nan)
    fit = WgeeFit(beta=beta, corr=corr, phi=phi, mu_hat=terms.mu, residuals=e, robust_cov=cov,
                  converged=ok, iterations=iters, family=fam.name, spec=spec,
                  score_norm=float(np.linalg.norm(score)))
    if not ok:
        raise ConvergenceError(f"WGEE ({kind}) did not converge in {max_iter} iterations", fit=fit)
    return fit


def wgee_fit(dataset, spec: MeanModelSpec, structure, dropout_fit=None,
             max_iter=100, tol=1e-8) -> WgeeFit:
    """Fit a candidate mean model with a working correlation structure.

    ``dropout_fit`` supplies the observation probabilities; without it
    every observed cell gets weight 1 (ordinary GEE on the observed data).
    """
    X = design_matrices(dataset, spec)
    w = dropout_fit.weights(dataset.r) if dropout_fit is not None else dataset.r.astype(float)
    return fit_arrays(X, dataset.y_filled, dataset.r, w, dataset.family, structure,
                      max_iter=max_iter, tol=tol, spec=spec)


def fit_terms(fit: WgeeFit, dataset, dropout_fit=None, X=None) -> GeeTerms:
    """Recompute :class:`GeeTerms` for ``fit`` on ``dataset``."""
    if X is None:
        X = design_matrices(dataset, fit.spec)
    w = dropout_fit.weights(dataset.r) if dropout_fit is not None else dataset.r.astype(float)
    C = correlation_matrix(fit.corr, dataset.T)
    return gee_terms(X, fit.beta, fit.family, C, fit.phi, w, dataset.y_filled, dataset.r)


def sandwich_variance(fit: WgeeFit, dataset, dropout_fit=None) -> np.ndarray:
    """Robust covariance ``E^{-1} M E^{-T}`` of ``beta_hat``.

    ``E = sum_i D_i' V_i^{-1} W_i D_i`` and ``M = sum_i q_i q_i'`` with
    ``q_i = D_i' V_i^{-1} W_i (Y_i - mu_i)``.
    """
    return _sandwich(fit_terms(fit, dataset, dropout_fit), dataset.n)


class WGEE(BaseEstimator):
    """Weighted GEE estimator on ``(n, T, p)`` design arrays.

    Parameters
    ----------
    family : {"binary", "gaussian"}
    structure : {"IND", "EXC", "AR1", "STATIONARY", "UNSTRUCTURED"}
    max_iter, tol : convergence controls for the alternating updates.

    ``fit(X, y, sample_weight)`` takes outcomes with ``NaN`` at unobserved
    cells and the inverse-probability weights ``1 / omega`` (ignored where
    ``y`` is missing).
    """

    def __init__(self, family="binary", structure="EXC", max_iter=100, tol=1e-8):
        self.family = family
        self.structure = structure
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y, sample_weight=None):
        X, y, r, w = check_panel(X, y, sample_weight)
        fit = fit_arrays(X, y, r, w, self.family, self.structure, self.max_iter, self.tol)
        self.fit_ = fit
        self.coef_ = fit.beta
        self.rho_ = fit.corr.rho
        self.scale_ = fit.phi
        self.robust_cov_ = fit.robust_cov
        self.n_iter_ = fit.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[:, :, None]
        return get_family(self.family).mean(X @ self.coef_)
