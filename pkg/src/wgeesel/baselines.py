"""Comparison criteria: MLIC and QICWr for WGEE fits under dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import design_matrices
from .exceptions import SingularMatrixError
from .families import get_family
from .wgee import WgeeFit, _sandwich, correlation_matrix, fit_terms


def _inv(A, what):
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e13:
        raise SingularMatrixError(f"{what} is singular")
    return np.linalg.inv(A)


@dataclass(frozen=True, eq=False)
class MlicParts:
    loss: float
    E_n: np.ndarray
    J_n: np.ndarray
    mu0: np.ndarray

    @property
    def penalty(self) -> float:
        return float(2.0 * np.trace(np.linalg.solve(self.E_n, self.J_n)))

    @property
    def value(self) -> float:
        return self.loss + self.penalty


def mlic_parts(fit: WgeeFit, full_fit: WgeeFit, dropout_fit, dataset) -> MlicParts:
    """Weighted quadratic loss and trace-penalty pieces of MLIC.

    ``full_fit`` supplies the reference means ``mu0`` from the largest mean
    model.  The dropout-score projection ``G_i`` corrects ``J_n`` for the
    estimation of the hazard model.
    """
    terms = fit_terms(fit, dataset, dropout_fit)
    w = dropout_fit.weights(dataset.r)
    y0 = dataset.y_filled
    loss = float(np.sum(w * terms.resid ** 2))

    E = np.einsum("ipt,itq->pq", terms.B, terms.D)
    Q = np.einsum("ipt,it->ip", terms.B, terms.resid)             # (n, p)
    eps = np.where(dataset.r == 1, w * (y0 - full_fit.mu_hat), 0.0)  # (n, T)
    s = dropout_fit.scores                                         # (n, q)
    if s.shape[1]:
        G = s @ _inv(s.T @ s, "sum of squared dropout scores") @ (s.T @ Q)  # row i is G_i'
    else:
        G = np.zeros_like(Q)
    # D_i' V_i^{-1} eps_i eps_i' D_i  - G_i eps_i' D_i, summed over i
    BV = np.einsum("itp,its->ips", terms.D, _vinv(fit, terms, dataset.T))
    a = np.einsum("ipt,it->ip", BV, eps)                          # D'V^{-1} eps
    epsD = np.einsum("it,itq->iq", eps, terms.D)                  # eps' D
    J = a.T @ epsD - G.T @ epsD
    return MlicParts(loss=loss, E_n=E, J_n=J, mu0=full_fit.mu_hat)


def _vinv(fit, terms, T):
    C = correlation_matrix(fit.corr, T)
    s = 1.0 / np.sqrt(fit.phi * terms.var)
    return s[:, :, None] * np.linalg.inv(C)[None] * s[:, None, :]


def mlic(fit: WgeeFit, full_fit: WgeeFit, dropout_fit, dataset) -> float:
    """MLIC = sum_i (Y_i - mu_i)' W_i (Y_i - mu_i) + 2 tr(E_n^{-1} J_n)."""
    parts = mlic_parts(fit, full_fit, dropout_fit, dataset)
    _inv(parts.E_n, "E_n")
    return parts.value


@dataclass(frozen=True, eq=False)
class QicwParts:
    qw: float
    phi_I: np.ndarray
    v_w: np.ndarray

    @property
    def penalty(self) -> float:
        return float(2.0 * np.trace(self.phi_I @ self.v_w))

    @property
    def value(self) -> float:
        return -2.0 * self.qw + self.penalty


def qicw_parts(fit: WgeeFit, dropout_fit, dataset) -> QicwParts:
    fam = get_family(fit.family)
    X = design_matrices(dataset, fit.spec)
    r = dataset.r
    w = dropout_fit.weights(r) if dropout_fit is not None else r.astype(float)
    mu = fam.mean(X @ fit.beta)
    q = np.where(r == 1, fam.quasi_loglik(dataset.y_filled, mu), 0.0)
    qw = float(np.sum(w * q))
    # canonical links: -d2 q / d beta d beta' = (dmu/deta) x x'
    c = w * fam.dmu_deta(X @ fit.beta)
    phi_I = np.einsum("it,itp,itq->pq", c, X, X)
    v_w = _sandwich(fit_terms(fit, dataset, dropout_fit, X=X), dataset.n)
    return QicwParts(qw=qw, phi_I=phi_I, v_w=v_w)


def qicw_r(fit: WgeeFit, dropout_fit, dataset) -> float:
    """QICWr = -2 sum_ij (r_ij/omega_ij) q(y_ij, mu_ij) + 2 tr(Phi_I V_w).

    ``q`` is the scale-free log quasi-likelihood (Bernoulli log-likelihood,
    or ``-(y - mu)^2 / 2``) and ``V_w`` the robust sandwich of ``fit``.
    """
    return qicw_parts(fit, dropout_fit, dataset).value
