"""Maximum-likelihood estimation of the stacked model.

The discrepancy is the classical ML fit function

    F(S, Sigma) = tr(S Sigma^-1) + log|Sigma| - log|S| - p

plus, when the mean structure is active (some intercept constrained), the
quadratic mean residual (ybar - mu)' Sigma^-1 (ybar - mu). Non-PD trial
covariances return a large finite penalty instead of raising, which keeps
line searches total. The gradient is analytic and is contractually required
to agree with central finite differences.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .assemble import implied_covariance, latent_covariance
from .errors import NonPositiveDefiniteError, UnderIdentifiedError
from .optimize import minimize_bfgs
from .paramtable import compute_starts, gather_gradient, theta_to_matrices

PENALTY_BASE = 1e10


@dataclass
class SampleMoments:
    """Sample covariance/means of all observed columns after listwise deletion."""

    S: np.ndarray
    ybar: np.ndarray
    n: int
    names: tuple = ()

    @property
    def n_observed(self):
        return self.S.shape[0]

    def moment_count(self, with_means=True):
        p = self.n_observed
        return p * (p + 1) // 2 + (p if with_means else 0)


def moments_from_data(data, spec=None, columns=None):
    """Compute SampleMoments from a complete-case data table.

    ``data`` is a pandas DataFrame (or anything 2-d with named columns via
    ``columns``); column order follows the spec's observed layout when a
    spec is given. Uses the n-1 denominator, pairing with chi2 = (n-1) F.
    """
    if spec is not None:
        columns = list(spec.observed_columns())
    if columns is not None:
        data = data[columns]
        names = tuple(columns)
    else:
        names = tuple(getattr(data, "columns", ()))
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-d table with at least two rows")
    return SampleMoments(
        S=np.atleast_2d(np.cov(x, rowvar=False, ddof=1)),
        ybar=x.mean(axis=0),
        n=x.shape[0],
        names=names,
    )


@dataclass
class FitResult:
    """Estimates and convergence diagnostics for one model fit."""

    table: object
    moments: SampleMoments
    theta_hat: np.ndarray
    f_min: float
    converged: bool
    iterations: int
    grad_norm: float
    n_evals: int
    status: str
    mean_active: bool
    se: np.ndarray | None = None
    vcov: np.ndarray | None = None
    se_message: str | None = None
    _optimized_mask: np.ndarray | None = field(default=None, repr=False)

    def matrices(self):
        return theta_to_matrices(self.table, self.theta_hat)

    def estimate(self, name):
        """Estimated value of a parameter by canonical entry or slot name."""
        e = self.table.entry(name)
        if e.status == "fixed":
            return e.value
        return float(self.theta_hat[e.slot])


def _chol_logdet(matrix):
    """Cholesky factor and log-determinant, or (None, None) if not PD."""
    try:
        L = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return None, None
    return L, 2.0 * float(np.sum(np.log(np.diag(L))))


def _penalty(sigma):
    eigvals = np.linalg.eigvalsh((sigma + sigma.T) / 2.0)
    return PENALTY_BASE + float(np.sum(np.abs(eigvals[eigvals < 0])))


def fml_discrepancy(S, sigma, meandiff=None):
    """ML discrepancy between a sample and an implied covariance.

    ``meandiff`` is the mean residual (ybar - mu); when given, its quadratic
    form joins the discrepancy. Returns a large finite penalty when sigma is
    not positive definite. Raises only on dimension mismatch.
    """
    S = np.asarray(S, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if S.shape != sigma.shape or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"shape mismatch: S {S.shape} vs sigma {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        return PENALTY_BASE * 100.0
    L, logdet_sigma = _chol_logdet(sigma)
    if L is None:
        return _penalty(sigma)
    _, logdet_s = _chol_logdet(S)
    if logdet_s is None:
        sign, logdet_s = np.linalg.slogdet(S)
        if sign <= 0:
            raise NonPositiveDefiniteError("sample covariance is not PD")
    p = S.shape[0]
    s_solved = cho_solve((L, True), S)
    value = float(np.trace(s_solved)) + logdet_sigma - logdet_s - p
    if meandiff is not None:
        d = np.asarray(meandiff, dtype=float)
        if d.shape != (p,):
            raise ValueError(f"meandiff has shape {d.shape}, expected ({p},)")
        half = solve_triangular(L, d, lower=True)
        value += float(half @ half)
    return value


class _Objective:
    """Discrepancy and analytic gradient as functions of the free vector."""

    def __init__(self, table, moments, mean_active):
        self.table = table
        self.moments = moments
        self.mean_active = mean_active
        _, self.logdet_s = _chol_logdet(moments.S)
        if self.logdet_s is None:
            raise NonPositiveDefiniteError(
                "sample covariance matrix is not positive definite"
            )
        self.p = moments.n_observed
        self._cache_key = None
        self._cache = None

    def _pieces(self, theta):
        key = theta.tobytes()
        if key == self._cache_key:
            return self._cache
        m = theta_to_matrices(self.table, theta)
        eye = np.eye(m.gamma.shape[0])
        k = solve_triangular(eye - m.gamma, eye, lower=True, unit_diagonal=True)
        w = k @ m.psi @ k.T
        w = (w + w.T) / 2.0
        sigma = m.lam @ w @ m.lam.T + m.theta_resid
        sigma = (sigma + sigma.T) / 2.0
        L, logdet = _chol_logdet(sigma)
        d = (self.moments.ybar - m.mu) if self.mean_active else None
        self._cache_key = key
        self._cache = (m, k, w, sigma, L, logdet, d)
        return self._cache

    def value(self, theta):
        m, k, w, sigma, L, logdet, d = self._pieces(theta)
        if not np.all(np.isfinite(sigma)):
            return PENALTY_BASE * 100.0
        if L is None:
            return _penalty(sigma)
        value = (
            float(np.trace(cho_solve((L, True), self.moments.S)))
            + logdet
            - self.logdet_s
            - self.p
        )
        if d is not None:
            half = solve_triangular(L, d, lower=True)
            value += float(half @ half)
        return value

    def grad(self, theta):
        m, k, w, sigma, L, logdet, d = self._pieces(theta)
        if not np.all(np.isfinite(sigma)):
            return np.zeros(self.table.free_count)
        if L is None:
            # subgradient of the PD penalty: push negative eigenvalues up
            vals, vecs = np.linalg.eigh(sigma)
            neg = vecs[:, vals < 0]
            g_sigma = -neg @ neg.T
            g_mu = None
        else:
            middle = sigma - self.moments.S
            if d is not None:
                middle = middle - np.outer(d, d)
            a = cho_solve((L, True), middle)
            g_sigma = cho_solve((L, True), a.T).T
            g_sigma = (g_sigma + g_sigma.T) / 2.0
            g_mu = -2.0 * cho_solve((L, True), d) if d is not None else None
        p_lat = m.lam.T @ g_sigma @ m.lam
        grads = {
            "lam": 2.0 * g_sigma @ m.lam @ w,
            "gamma": 2.0 * k.T @ p_lat @ w,
            "psi": k.T @ p_lat @ k,
            "theta_resid": g_sigma,
            "mu": g_mu,
        }
        return gather_gradient(self.table, grads)


def gradient(table, theta, moments):
    """Analytic gradient of the discrepancy at theta.

    Matches central finite differences with step 1e-6*max(1,|theta_i|)
    within 1e-4 relative error on admissible points (enforced by tests).
    """
    mean_active = table.has_mean_structure
    return _Objective(table, moments, mean_active).grad(
        np.asarray(theta, dtype=float)
    )


def _mu_slot_mask(table):
    """Boolean mask over slots: True where the slot only fills intercepts."""
    is_mu = np.zeros(table.free_count, dtype=bool)
    touched = np.zeros(table.free_count, dtype=bool)
    for e in table.entries:
        if e.slot is None:
            continue
        touched[e.slot] = True
        if e.target == "mu":
            is_mu[e.slot] = True
    return is_mu & touched


def fit(moments, table, warm_start=None, f_tol=1e-8, g_tol=1e-5, max_iter=5000):
    """Fit the model by quasi-Newton minimization of the ML discrepancy.

    Converged means: relative objective change < f_tol AND max |gradient|
    < g_tol within max_iter iterations; f_min is reported either way. When
    no intercept is constrained the mean structure is saturated: intercept
    slots are profiled out analytically (mean term contributes exactly
    zero) and only covariance-side slots enter the optimizer.
    """
    layout = table.layout
    if moments.n_observed != layout.n_obs:
        raise ValueError(
            f"moments have {moments.n_observed} columns, model has {layout.n_obs}"
        )
    if moments.names and tuple(moments.names) != layout.obs_names:
        raise ValueError("moment column names do not match the model layout")
    # strictly more parameters than moments is unfittable; equality is a
    # just-identified (saturated) model and must run
    if table.free_count > moments.moment_count(with_means=True):
        raise UnderIdentifiedError(
            f"{table.free_count} free parameters with only "
            f"{moments.moment_count(with_means=True)} sample moments"
        )
    L, _ = _chol_logdet(moments.S)
    if L is None:
        raise NonPositiveDefiniteError(
            "sample covariance matrix is not positive definite"
        )
    mean_active = table.has_mean_structure
    objective = _Objective(table, moments, mean_active)
    x0 = np.asarray(
        warm_start if warm_start is not None else compute_starts(table, moments),
        dtype=float,
    )
    if x0.shape != (table.free_count,):
        raise ValueError(
            f"start vector has shape {x0.shape}, expected ({table.free_count},)"
        )

    mu_mask = _mu_slot_mask(table)
    saturated = not mean_active
    if saturated:
        # saturated intercepts equal the sample means exactly
        x0 = x0.copy()
        for e in table.entries:
            if e.slot is not None and e.target == "mu":
                x0[e.slot] = moments.ybar[e.si]
        active = ~mu_mask
    else:
        active = np.ones(table.free_count, dtype=bool)

    base = x0.copy()

    def expand(z):
        full = base.copy()
        full[active] = z
        return full

    res = minimize_bfgs(
        lambda z: objective.value(expand(z)),
        lambda z: objective.grad(expand(z))[active],
        x0[active],
        f_tol=f_tol,
        g_tol=g_tol,
        max_iter=max_iter,
    )
    theta_hat = expand(res.x)
    return FitResult(
        table=table,
        moments=moments,
        theta_hat=theta_hat,
        f_min=res.f,
        converged=bool(res.converged),
        iterations=res.iterations,
        grad_norm=float(np.max(np.abs(res.grad))) if res.grad.size else 0.0,
        n_evals=res.n_evals,
        status=res.status,
        mean_active=mean_active,
        _optimized_mask=active,
    )


def standard_errors(result, moments=None):
    """Wald standard errors from the finite-difference Hessian at theta-hat.

    vcov = (2/(n-1)) H^-1 over the optimized slots; saturated intercept
    slots get NaN (they equal sample means and carry no model-based SE).
    SEs are withheld (None, with a message) when H is not PD or the fit did
    not converge. Returns (se, vcov) and stores both on the result.
    """
    moments = moments or result.moments
    table = result.table
    if not result.converged:
        result.se_message = "fit did not converge; standard errors withheld"
        return None, None
    objective = _Objective(table, moments, result.mean_active)
    mask = result._optimized_mask
    idx = np.flatnonzero(mask)
    k = idx.size
    theta = result.theta_hat
    h = np.zeros((k, k))
    for col, j in enumerate(idx):
        step = 1e-5 * max(1.0, abs(theta[j]))
        up = theta.copy()
        up[j] += step
        down = theta.copy()
        down[j] -= step
        h[:, col] = (objective.grad(up)[mask] - objective.grad(down)[mask]) / (
            2.0 * step
        )
    h = (h + h.T) / 2.0
    try:
        L = np.linalg.cholesky(h)
    except np.linalg.LinAlgError:
        result.se_message = "discrepancy Hessian not positive definite; SEs withheld"
        return None, None
    vcov_small = cho_solve((L, True), np.eye(k)) * (2.0 / (moments.n - 1))
    vcov = np.full((table.free_count, table.free_count), np.nan)
    vcov[np.ix_(idx, idx)] = vcov_small
    se = np.full(table.free_count, np.nan)
    se[idx] = np.sqrt(np.maximum(np.diag(vcov_small), 0.0))
    result.se = se
    result.vcov = vcov
    result.se_message = None
    return se, vcov


def standardize(result, matrices=None):
    """Standardized coefficients per parameter entry.

    Edges a->b scale by sd(source)/sd(target) of the latent covariance;
    loadings scale by sd(latent)/sd(indicator). Returns {entry name: value}
    for every lambda/beta/pi/c entry.
    """
    m = matrices if matrices is not None else result.matrices()
    w = latent_covariance(m.gamma, m.psi)
    sigma = implied_covariance(m)
    with np.errstate(invalid="ignore"):
        sd_lat = np.sqrt(np.diag(w))
        sd_obs = np.sqrt(np.diag(sigma))
    out = {}
    for e in result.table.entries:
        raw = e.value if e.status == "fixed" else float(result.theta_hat[e.slot])
        if e.target == "lambda":
            out[e.name] = raw * sd_lat[e.sj] / sd_obs[e.si]
        elif e.target in ("beta", "pi", "c"):
            out[e.name] = raw * sd_lat[e.sj] / sd_lat[e.si]
    return out


def r_squared(result, latent, wave):
    """Share of a latent's variance explained by its structural equation.

    Covariate (exogenous) latents have no structural equation; reported as
    None. Template latents without incoming edges get 0 by the formula.
    """
    spec = result.table.spec
    if latent in spec.covariate_names:
        return None
    if latent not in spec.latents:
        raise KeyError(f"unknown latent '{latent}'")
    m = result.matrices()
    w = latent_covariance(m.gamma, m.psi)
    i = result.table.layout.lat_index(latent, wave)
    total = w[i, i]
    if total <= 0:
        return np.nan
    return float(1.0 - m.psi[i, i] / total)
