"""Outcome families: Bernoulli with logit link, Gaussian with identity link.

Both links are canonical, so ``dmu_deta == variance`` for the binary family
and the quasi-likelihood Hessian has the closed form used by QICWr.
"""

import numpy as np
from scipy.special import expit

_EPS = 1e-12


class Binary:
    name = "binary"
    fixed_scale = True

    @staticmethod
    def mean(eta):
        return expit(eta)

    @staticmethod
    def dmu_deta(eta):
        mu = expit(eta)
        return mu * (1.0 - mu)

    @staticmethod
    def variance(mu):
        return mu * (1.0 - mu)

    @staticmethod
    def quasi_loglik(y, mu):
        mu = np.clip(mu, _EPS, 1.0 - _EPS)
        return y * np.log(mu) + (1.0 - y) * np.log1p(-mu)


class Gaussian:
    name = "gaussian"
    fixed_scale = False

    @staticmethod
    def mean(eta):
        return np.asarray(eta, dtype=float)

    @staticmethod
    def dmu_deta(eta):
        return np.ones_like(eta, dtype=float)

    @staticmethod
    def variance(mu):
        return np.ones_like(mu, dtype=float)

    @staticmethod
    def quasi_loglik(y, mu):
        # scale-free: -(y - mu)^2 / 2
        return -0.5 * (y - mu) ** 2


_FAMILIES = {"binary": Binary, "gaussian": Gaussian}


def get_family(name):
    if not isinstance(name, str):
        return name
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; expected one of {sorted(_FAMILIES)}") from None
