"""Mean links and variance functions for marginal regression models.

Each family couples a strictly increasing mean link h(eta) with the
matching variance function v(mu); dispersion is fixed at 1.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.special import expit

from .errors import InputError

# floor applied to degenerate fitted means before variances are formed
MEAN_FLOOR = 1e-10

_ALIASES = {
    "gaussian": "identity-gaussian",
    "identity": "identity-gaussian",
    "identity-gaussian": "identity-gaussian",
    "normal": "identity-gaussian",
    "bernoulli": "logit-bernoulli",
    "binomial": "logit-bernoulli",
    "logit": "logit-bernoulli",
    "logit-bernoulli": "logit-bernoulli",
    "poisson": "log-poisson",
    "log": "log-poisson",
    "log-poisson": "log-poisson",
}


class LinkFamily(enum.Enum):
    GAUSSIAN = "identity-gaussian"
    BERNOULLI = "logit-bernoulli"
    POISSON = "log-poisson"

    @classmethod
    def parse(cls, name: str) -> "LinkFamily":
        try:
            return cls(_ALIASES[str(name).strip().lower()])
        except KeyError:
            raise InputError(f"unknown link family {name!r}") from None

    @property
    def short_name(self) -> str:
        return {"identity-gaussian": "gaussian",
                "logit-bernoulli": "bernoulli",
                "log-poisson": "poisson"}[self.value]

    def mean(self, eta: np.ndarray) -> np.ndarray:
        """h(eta)."""
        if self is LinkFamily.GAUSSIAN:
            return np.asarray(eta, dtype=float)
        if self is LinkFamily.BERNOULLI:
            return expit(eta)
        return np.exp(eta)

    def mean_slope(self, eta: np.ndarray) -> np.ndarray:
        """h'(eta); strictly positive for every finite eta."""
        if self is LinkFamily.GAUSSIAN:
            return np.ones_like(np.asarray(eta, dtype=float))
        if self is LinkFamily.BERNOULLI:
            mu = expit(eta)
            return mu * (1.0 - mu)
        return np.exp(eta)

    def mean_curvature(self, eta: np.ndarray) -> np.ndarray:
        """h''(eta)."""
        if self is LinkFamily.GAUSSIAN:
            return np.zeros_like(np.asarray(eta, dtype=float))
        if self is LinkFamily.BERNOULLI:
            mu = expit(eta)
            return mu * (1.0 - mu) * (1.0 - 2.0 * mu)
        return np.exp(eta)

    def mean_slope_from(self, mu: np.ndarray) -> np.ndarray:
        """h'(eta) expressed through mu = h(eta); avoids recomputing h."""
        if self is LinkFamily.GAUSSIAN:
            return np.ones_like(np.asarray(mu, dtype=float))
        if self is LinkFamily.BERNOULLI:
            return mu * (1.0 - mu)
        return np.asarray(mu, dtype=float)

    def mean_curvature_from(self, mu: np.ndarray) -> np.ndarray:
        """h''(eta) expressed through mu = h(eta)."""
        if self is LinkFamily.GAUSSIAN:
            return np.zeros_like(np.asarray(mu, dtype=float))
        if self is LinkFamily.BERNOULLI:
            return mu * (1.0 - mu) * (1.0 - 2.0 * mu)
        return np.asarray(mu, dtype=float)

    def variance(self, mu: np.ndarray) -> np.ndarray:
        """v(mu) with dispersion 1."""
        if self is LinkFamily.GAUSSIAN:
            return np.ones_like(np.asarray(mu, dtype=float))
        if self is LinkFamily.BERNOULLI:
            return mu * (1.0 - mu)
        return np.asarray(mu, dtype=float)

    def variance_slope(self, mu: np.ndarray) -> np.ndarray:
        """v'(mu)."""
        if self is LinkFamily.GAUSSIAN:
            return np.zeros_like(np.asarray(mu, dtype=float))
        if self is LinkFamily.BERNOULLI:
            return 1.0 - 2.0 * mu
        return np.ones_like(np.asarray(mu, dtype=float))

    def clip_mean(self, mu: np.ndarray) -> np.ndarray:
        """Pull fitted means away from the boundary of the variance domain."""
        if self is LinkFamily.GAUSSIAN:
            return mu
        if self is LinkFamily.BERNOULLI:
            return np.clip(mu, MEAN_FLOOR, 1.0 - MEAN_FLOOR)
        return np.maximum(mu, MEAN_FLOOR)

    def check_support(self, y: np.ndarray) -> None:
        """Raise InputError when responses fall outside the family support."""
        y = np.asarray(y)
        if not np.all(np.isfinite(y)):
            raise InputError("responses must be finite")
        if self is LinkFamily.BERNOULLI and not np.all((y == 0) | (y == 1)):
            raise InputError("bernoulli responses must be 0 or 1")
        if self is LinkFamily.POISSON:
            if np.any(y < 0) or not np.all(y == np.floor(y)):
                raise InputError("poisson responses must be nonnegative integers")
