"""Stacked model matrices and model-implied moments.

The observed vector stacks the per-wave indicator blocks and appends the
covariate columns; the latent vector puts covariates first (they are
exogenous) followed by one block per wave with latents in topological
order. Under that ordering the latent coefficient matrix is strictly lower
triangular, so (I - Gamma) is unit lower triangular and every solve is a
forward substitution.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


@dataclass(frozen=True)
class StackedLayout:
    """Index bookkeeping between template names and stacked coordinates."""

    spec: object
    obs_names: tuple
    lat_names: tuple
    topo_latents: tuple

    @classmethod
    def from_spec(cls, spec):
        topo = spec.topological_latents()
        obs = list(spec.observed_columns())
        lat = list(spec.covariate_names)
        for t in range(1, spec.waves + 1):
            lat.extend(f"{name}@{t}" for name in topo)
        return cls(spec, tuple(obs), tuple(lat), topo)

    @property
    def n_obs(self):
        return len(self.obs_names)

    @property
    def n_lat(self):
        return len(self.lat_names)

    @property
    def n_cov(self):
        return len(self.spec.covariate_names)

    def obs_index(self, indicator, wave):
        p = self.spec.n_indicators
        return (wave - 1) * p + self.spec.indicator_names.index(indicator)

    def cov_obs_index(self, covariate):
        p = self.spec.n_indicators
        return p * self.spec.waves + self.spec.covariate_names.index(covariate)

    def lat_index(self, latent, wave):
        q = self.spec.n_latents
        return self.n_cov + (wave - 1) * q + self.topo_latents.index(latent)

    def cov_lat_index(self, covariate):
        return self.spec.covariate_names.index(covariate)


@dataclass
class AssembledMatrices:
    """The stacked parameter matrices for one parameter vector.

    ``lam`` is the block-diagonal loading matrix (plus unit rows tying each
    covariate column to its exogenous latent), ``gamma`` holds the
    within-wave coefficients, the autoregressive blocks and the covariate
    effects, ``psi`` the latent disturbance covariance and ``theta_resid``
    the measurement residual covariance.
    """

    layout: StackedLayout
    mu: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    psi: np.ndarray
    theta_resid: np.ndarray

    def check_invariants(self, atol=0.0):
        """Raise AssertionError if structural invariants are violated."""
        n = self.gamma.shape[0]
        upper = np.triu(self.gamma, k=0)
        if np.any(np.abs(upper) > atol):
            raise AssertionError("gamma is not strictly lower triangular")
        if not np.allclose(self.psi, self.psi.T):
            raise AssertionError("psi is not symmetric")
        if not np.allclose(self.theta_resid, self.theta_resid.T):
            raise AssertionError("theta_resid is not symmetric")
        if self.lam.shape != (len(self.layout.obs_names), n):
            raise AssertionError("lambda shape mismatch")


def _solve_i_minus_gamma(gamma, rhs):
    """Forward substitution for (I - Gamma) x = rhs with unit diagonal."""
    return solve_triangular(
        np.eye(gamma.shape[0]) - gamma, rhs, lower=True, unit_diagonal=True
    )


def latent_covariance(gamma, psi):
    """Covariance of the latent vector: (I-Gamma)^-1 Psi (I-Gamma)^-T.

    Computed by two forward substitutions; Gamma must be strictly lower
    triangular.
    """
    x = _solve_i_minus_gamma(gamma, np.asarray(psi, dtype=float))
    w = _solve_i_minus_gamma(gamma, x.T)
    return (w + w.T) / 2.0


def implied_covariance(m):
    """Model-implied covariance of the observed vector."""
    w = latent_covariance(m.gamma, m.psi)
    sigma = m.lam @ w @ m.lam.T + m.theta_resid
    return (sigma + sigma.T) / 2.0


def implied_means(m, alpha):
    """Model-implied means: mu + Lambda (I-Gamma)^-1 alpha.

    ``alpha`` is the latent disturbance mean vector (length = latent count,
    covariates included). Estimation keeps it at zero; the simulator may
    not.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (m.gamma.shape[0],):
        raise ValueError(
            f"alpha has length {alpha.shape}, expected ({m.gamma.shape[0]},)"
        )
    eta_mean = _solve_i_minus_gamma(m.gamma, alpha)
    return m.mu + m.lam @ eta_mean
