"""Logistic dropout hazard fitted by partial likelihood, and IPW weights.

For occasions ``j = 2..T`` a subject still under observation at ``j-1``
continues to be observed at ``j`` with probability
``lambda_ij = expit(H_ij' theta)``.  Only at-risk transitions
(``r[i, j-1] == 1``) enter the likelihood.  The cumulative product of the
continuation probabilities gives ``omega_ij``, the probability that ``y_ij``
is observed, and the WGEE weight of an observed cell is ``1 / omega_ij``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConvergenceError, SeparationError, SingularMatrixError

OMEGA_FLOOR = 1e-6
SEPARATION_NORM = 30.0


@dataclass(frozen=True, eq=False)
class DropoutFit:
    """Fitted dropout model.

    ``scores`` holds the per-subject score contributions ``s_i(theta_hat)``
    (shape ``(n, q)``); they sum to ~0 at the estimate and are reused by
    MLIC and by the empirical-likelihood estimating function.
    """

    theta: np.ndarray
    lambda_hat: np.ndarray
    omega_hat: np.ndarray
    scores: np.ndarray
    iterations: int
    converged: bool
    names: tuple = ()

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    def weights(self, r) -> np.ndarray:
        """Diagonal WGEE weights ``r_ij / omega_ij`` (exactly 0 where ``r == 0``)."""
        return ipw_weights(r, self.omega_hat)

    def summary(self) -> str:
        if self.q == 0:
            return "no dropout model: every cell observed"
        names = self.names or tuple(f"theta{k}" for k in range(self.q))
        width = max(len(s) for s in names)
        lines = [f"{'term':<{width}}  estimate"]
        lines += [f"{nm:<{width}}  {v: .6f}" for nm, v in zip(names, self.theta)]
        om = self.omega_hat[:, 1:] if self.omega_hat.shape[1] > 1 else self.omega_hat
        lines.append(
            f"omega: min {om.min():.4f}  median {np.median(om):.4f}  max {om.max():.4f}"
            f"  (iterations {self.iterations})"
        )
        return "\n".join(lines)


def observation_weights(lam) -> np.ndarray:
    """Cumulative products ``omega_ij = lambda_i1 * ... * lambda_ij`` row-wise.

    >>> observation_weights([[1.0, 0.5, 0.5]]).tolist()
    [[1.0, 0.5, 0.25]]
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    if not np.allclose(lam[:, 0], 1.0):
        raise ValueError("lambda at baseline must equal 1")
    if np.any(~(lam > 0) | (lam > 1)):
        raise ValueError("continuation probabilities must lie in (0, 1]")
    return np.cumprod(lam, axis=1)


def ipw_weights(r, omega, floor=OMEGA_FLOOR) -> np.ndarray:
    """Inverse-probability weights ``r / omega`` with ``omega`` floored at ``floor``.

    Observed cells whose ``omega`` falls below ``floor`` trigger a
    ``RuntimeWarning`` reporting how many were floored.
    """
    r = np.asarray(r)
    omega = np.asarray(omega, dtype=float)
    obs = r == 1
    low = obs & (omega < floor)
    if low.any():
        warnings.warn(f"{int(low.sum())} observation weight(s) floored at {floor:g}",
                      RuntimeWarning, stacklevel=2)
    return np.where(obs, 1.0 / np.maximum(omega, floor), 0.0)


def hazard_design(dataset, lags=1, intercept=True, covariates=True):
    """Build per-cell hazard covariates ``H_ij``.

    Columns are, in order: an intercept, ``y_{i,j-1} .. y_{i,j-lags}``, then
    the dataset's dropout covariates (all of them when ``covariates`` is
    True, none when False, or the named subset).  A lagged outcome that is
    unobserved or precedes baseline is set to 0; such cells are never at
    risk through that lag anyway.

    Returns
    -------
    H : ndarray (n, T, q)
    names : tuple of str
    """
    n, T = dataset.n, dataset.T
    cols, names = [], []
    if intercept:
        cols.append(np.ones((n, T)))
        names.append("intercept")
    yf = dataset.y_filled
    for k in range(1, lags + 1):
        lag = np.zeros((n, T))
        if k < T:
            lag[:, k:] = yf[:, :-k]
        cols.append(lag)
        names.append(f"y_lag{k}")
    if covariates is True:
        sel = list(range(len(dataset.dropout_names)))
    elif covariates is False or covariates is None:
        sel = []
    else:
        sel = [dataset.dropout_names.index(c) for c in covariates]
    for c in sel:
        cols.append(dataset.h[:, :, c])
        names.append(dataset.dropout_names[c])
    if not cols:
        raise ValueError("hazard model has no columns")
    return np.stack(cols, axis=2), tuple(names)


def _loglik(eta, d):
    return float(np.sum(d * eta - np.logaddexp(0.0, eta)))


def _fit_hazard(H, r, max_iter=50, tol=1e-10):
    H = np.asarray(H, dtype=float)
    r = np.asarray(r)
    n, T, q = H.shape
    at_risk = r[:, :-1] == 1
    Z = H[:, 1:][at_risk]
    d = r[:, 1:][at_risk].astype(float)
    if d.size == 0:
        raise ValueError("no at-risk transitions (T must be at least 2)")
    if d.all() or not d.any():
        raise SeparationError(
            "every at-risk transition has the same outcome; the hazard MLE is infinite"
        )

    theta = np.zeros(q)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = Z @ theta
        lam = expit(eta)
        score = Z.T @ (d - lam)
        info = (Z * (lam * (1.0 - lam))[:, None]).T @ Z
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularMatrixError("dropout information matrix is singular") from None
        ll0 = _loglik(eta, d)
        t = 1.0
        while _loglik(Z @ (theta + t * step), d) < ll0 - 1e-12 * abs(ll0) and t > 1e-10:
            t *= 0.5
        theta = theta + t * step
        if np.linalg.norm(theta) > SEPARATION_NORM:
            lam = expit(Z @ theta)
            sc = np.linalg.norm(Z.T @ (d - lam)) / n
            raise SeparationError(
                f"hazard coefficients diverged (|theta| = {np.linalg.norm(theta):.1f}, "
                f"score norm {sc:.2e}); complete separation"
            )
        if np.max(np.abs(t * step)) <= tol * (1.0 + np.max(np.abs(theta))):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"dropout model did not converge in {max_iter} iterations")

    lam_full = np.ones((n, T))
    lam_full[:, 1:] = expit(H[:, 1:] @ theta)
    omega = np.cumprod(lam_full, axis=1)
    resid = np.zeros((n, T))
    resid[:, 1:] = np.where(at_risk, r[:, 1:] - lam_full[:, 1:], 0.0)
    scores = np.einsum("it,itq->iq", resid, H)
    return theta, lam_full, omega, scores, it


def fit_dropout(dataset, hazard, names=(), max_iter=50, tol=1e-10) -> DropoutFit:
    """Maximize the dropout partial likelihood by damped Newton-Raphson.

    Parameters
    ----------
    dataset : LongitudinalDataset
    hazard : ndarray (n, T, q)
        Hazard covariates, e.g. from :func:`hazard_design`.  Row ``j = 1`` is
        ignored.

    Raises
    ------
    SeparationError
        The likelihood is maximized at infinity.
    ConvergenceError
        No convergence within ``max_iter`` Newton steps.
    """
    if isinstance(hazard, tuple):
        hazard, names = hazard
    theta, lam, omega, scores, it = _fit_hazard(hazard, dataset.r, max_iter, tol)
    return DropoutFit(theta=theta, lambda_hat=lam, omega_hat=omega, scores=scores,
                      iterations=it, converged=True, names=tuple(names))


def no_dropout(dataset) -> DropoutFit:
    """Null dropout model for a panel with every cell observed (``q = 0``, ``omega = 1``)."""
    if not np.all(dataset.r == 1):
        raise ValueError("dataset has missing cells; fit a dropout model instead")
    n, T = dataset.n, dataset.T
    return DropoutFit(theta=np.zeros(0), lambda_hat=np.ones((n, T)), omega_hat=np.ones((n, T)),
                      scores=np.zeros((n, 0)), iterations=0, converged=True)


class DropoutModel(BaseEstimator):
    """Estimator wrapper around :func:`fit_dropout`.

    ``fit(H, r)`` takes hazard covariates ``(n, T, q)`` and observation
    indicators ``(n, T)``.  ``predict_proba`` returns continuation
    probabilities and ``transform`` the observation probabilities ``omega``.
    """

    def __init__(self, max_iter=50, tol=1e-10):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, H, r):
        theta, lam, omega, scores, it = _fit_hazard(H, r, self.max_iter, self.tol)
        self.coef_ = theta
        self.scores_ = scores
        self.n_iter_ = it
        return self

    def predict_proba(self, H):
        check_is_fitted(self, "coef_")
        H = np.asarray(H, dtype=float)
        lam = np.ones(H.shape[:2])
        lam[:, 1:] = expit(H[:, 1:] @ self.coef_)
        return lam

    def transform(self, H):
        return np.cumprod(self.predict_proba(H), axis=1)


@dataclass(frozen=True)
class DropoutSpec:
    """Recipe for hazard covariates; see :func:`hazard_design`."""

    lags: int = 1
    intercept: bool = True
    covariates: object = True

    def design(self, dataset):
        cov = self.covariates if isinstance(self.covariates, bool) else tuple(self.covariates)
        return hazard_design(dataset, self.lags, self.intercept, cov)

    def fit(self, dataset, **kw) -> DropoutFit:
        """Fit the hazard; a panel without dropout gets :func:`no_dropout`."""
        if np.all(dataset.r == 1):
            return no_dropout(dataset)
        return fit_dropout(dataset, self.design(dataset), **kw)
