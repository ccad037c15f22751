"""Empirical-likelihood criteria JEAIC and JEBIC.

A candidate (mean model, working correlation) is scored by how well its
WGEE estimates satisfy the *full* estimating function: the mean equations
of the largest mean model, lag-wise correlation equations of a stationary
structure, and the dropout score.  For subject ``i``::

    G_i = ( D_i' V_i^{-1} W_i (Y_i - mu_i(beta_tilde)),       L entries
            U_i(beta_tilde) - h(rho_c) phi,                   T-1 entries
            s_i(theta_hat) )                                  q entries

``beta_tilde`` pads the candidate coefficients with zeros at the columns it
omits and ``rho_c`` is the candidate correlation written lag by lag.  The
log empirical-likelihood ratio of ``{G_i}`` is computed through its convex
dual in the Lagrange multiplier.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .data import MeanModelSpec, design_matrices
from .wgee import WgeeFit, gee_terms, lag_products, n_corr_params, pearson_residuals


@dataclass(frozen=True, eq=False)
class FullEEContext:
    full_spec: MeanModelSpec
    theta_hat: np.ndarray
    beta_tilde: np.ndarray
    rho_c: np.ndarray
    phi: float
    n: int
    T: int
    p: int

    @property
    def L(self) -> int:
        return self.beta_tilde.shape[0]

    @property
    def q(self) -> int:
        return self.theta_hat.shape[0]

    @property
    def L_tilde(self) -> int:
        return self.L + (self.T - 1) + self.q


def _embed(fit: WgeeFit, full_spec: MeanModelSpec) -> np.ndarray:
    spec = fit.spec
    if spec is None:
        raise ValueError("candidate fit carries no mean-model spec")
    if not full_spec.contains(spec):
        raise ValueError(f"candidate columns {spec.covariates} are not nested in the full model {full_spec.covariates}")
    offset = int(full_spec.intercept)
    beta_tilde = np.zeros(full_spec.p)
    k = 0
    if spec.intercept:
        beta_tilde[0] = fit.beta[0]
        k = 1
    for c, b in zip(spec.covariates, fit.beta[k:]):
        beta_tilde[offset + full_spec.covariates.index(c)] = b
    return beta_tilde


def full_ee_context(fit: WgeeFit, full_spec: MeanModelSpec, dropout_fit, n: int, T: int) -> FullEEContext:
    """Embed a candidate fit into the coordinates of the full estimating function."""
    if fit.corr.kind == "UNSTRUCTURED":
        raise ValueError(
            "UNSTRUCTURED candidates are not nested in the stationary full model; "
            "JEAIC/JEBIC are undefined for them"
        )
    return FullEEContext(
        full_spec=full_spec, theta_hat=np.asarray(dropout_fit.theta), beta_tilde=_embed(fit, full_spec),
        rho_c=fit.corr.stationary_rho(T), phi=fit.phi, n=n, T=T, p=fit.p,
    )


def build_full_ee(fit: WgeeFit, dataset, dropout_fit, full_spec: MeanModelSpec) -> np.ndarray:
    """Per-subject full estimating function, shape ``(n, L + T - 1 + q)``.

    The mean block uses the candidate's working correlation written as a
    stationary (Toeplitz) matrix; for IND that is the identity.
    """
    n, T = dataset.n, dataset.T
    ctx = full_ee_context(fit, full_spec, dropout_fit, n, T)
    if dropout_fit.scores.shape[0] != n:
        raise ValueError("dropout scores do not match the number of subjects")
    XF = design_matrices(dataset, full_spec)
    r = dataset.r
    w = dropout_fit.weights(r)
    C = toeplitz(np.concatenate(([1.0], ctx.rho_c)))
    terms = gee_terms(XF, ctx.beta_tilde, fit.family, C, ctx.phi, w, dataset.y_filled, r)
    mean_block = np.einsum("ipt,it->ip", terms.B, terms.resid)
    e = pearson_residuals(dataset.y_filled, terms.mu, terms.var, r)
    U = lag_products(e, w)
    h = ctx.rho_c * (T - np.arange(1, T) - ctx.p / n)
    corr_block = U - h * ctx.phi
    return np.hstack([mean_block, corr_block, dropout_fit.scores])


@dataclass(frozen=True, eq=False)
class ElResult:
    """Solution of the empirical-likelihood inner problem.

    ``p`` are the implied probabilities ``1 / (n (1 + lambda' G_i))``.
    For an infeasible problem ``neg2logr`` is ``inf`` and ``lam``/``p`` are
    the last iterate.
    """

    lam: np.ndarray
    neg2logr: float
    p: np.ndarray
    status: str
    iterations: int

    @property
    def solved(self) -> bool:
        return self.status == "solved"


def solve_lagrange(G, max_iter=100, tol=1e-10, max_halvings=40) -> ElResult:
    """Find the multiplier minimizing ``-sum_i log(1 + lambda' G_i)``.

    Damped Newton iterations keep ``1 + lambda' G_i > 1/n`` for every
    subject.  When zero is not inside the convex hull of the ``G_i`` the
    dual is unbounded; the iterates then fail to settle and the result is
    reported with ``status == "infeasible"``.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    n, k = G.shape
    if n <= k:
        warnings.warn(f"empirical likelihood with n={n} <= {k} constraints", RuntimeWarning, stacklevel=2)
    floor = 1.0 / n
    lam = np.zeros(k)
    z = np.ones(n)
    obj = 0.0
    status = "infeasible"
    it = 0
    for it in range(1, max_iter + 1):
        Gz = G / z[:, None]
        grad = -Gz.sum(axis=0)
        H = Gz.T @ Gz
        step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        dec2 = float(-grad @ step)
        psum = float(np.sum(1.0 / z)) / n
        if (dec2 <= 1e-16 or np.linalg.norm(grad) <= tol) and abs(psum - 1.0) <= 1e-8:
            status = "solved"
            # one undamped polishing step; Newton is quadratic here
            zc = 1.0 + G @ (lam + step)
            if np.all(zc > floor) and -float(np.sum(np.log(zc))) <= obj:
                lam, z = lam + step, zc
            break
        t = 1.0
        for _ in range(max_halvings):
            cand = lam + t * step
            zc = 1.0 + G @ cand
            if np.all(zc > floor):
                oc = -float(np.sum(np.log(zc)))
                if oc <= obj:
                    break
            t *= 0.5
        else:
            break
        lam, z, obj = cand, zc, oc
        if not np.all(np.isfinite(lam)):
            break
    if status != "solved" and dec2 <= 1e-12 and abs(psum - 1.0) <= 1e-6:
        # stalled on round-off at the optimum; an unbounded dual keeps a large decrement
        status = "solved"
    p = 1.0 / (n * z)
    if status != "solved":
        return ElResult(lam=lam, neg2logr=math.inf, p=p, status="infeasible", iterations=it)
    return ElResult(lam=lam, neg2logr=neg2_log_elr(G, lam), p=p, status="solved", iterations=it)


def neg2_log_elr(G, lam) -> float:
    """``2 sum_i log(1 + lambda' G_i)``."""
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    z = 1.0 + G @ np.atleast_1d(lam)
    if np.any(z <= 0):
        raise ValueError("1 + lambda'G_i must be positive for every subject")
    return float(2.0 * np.sum(np.log(z)))


def count_parameters(p: int, structure, T: int, q: int) -> int:
    """Total parameter count: mean + free correlation parameters + dropout."""
    return p + n_corr_params(structure, T) + q


def jeaic_jebic(neg2logr: float, p_tilde: int, n: int) -> tuple:
    """``(-2 log R + 2 p_tilde, -2 log R + p_tilde log n)``; ``inf`` stays ``inf``."""
    if neg2logr is None or not math.isfinite(neg2logr):
        return math.inf, math.inf
    return neg2logr + 2.0 * p_tilde, neg2logr + p_tilde * math.log(n)


@dataclass(frozen=True, eq=False)
class ElCriteria:
    jeaic: float
    jebic: float
    p_tilde: int
    el: ElResult


def el_criteria(fit: WgeeFit, dataset, dropout_fit, full_spec: MeanModelSpec) -> ElCriteria:
    """JEAIC and JEBIC for one fitted candidate."""
    G = build_full_ee(fit, dataset, dropout_fit, full_spec)
    res = solve_lagrange(G)
    pt = count_parameters(fit.p, fit.corr.kind, dataset.T, dropout_fit.q)
    a, b = jeaic_jebic(res.neg2logr, pt, dataset.n)
    return ElCriteria(jeaic=a, jebic=b, p_tilde=pt, el=res)
