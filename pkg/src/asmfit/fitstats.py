"""Model-fit metrics and invariance-ladder comparison.

chi2 uses the (n-1) scaling of the minimized discrepancy. The RMSEA point
formula divides by n (kept exactly as printed even though chi2 uses n-1;
the discrepancy is documented). The null model fixes all covariances at
zero and is fit analytically.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import ncx2

from .estimate import fml_discrepancy

CFI_CUTOFF = 0.90  # good fit: greater than .90
SRMR_CUTOFF = 0.08  # good fit: less than .08
RMSEA_CUTOFF = 0.06  # good fit: less than .06
DELTA_CFI_RULE = 0.01


@dataclass
class FitIndices:
    chi2: float
    df: int
    cfi: float
    srmr: float
    rmsea: float
    rmsea_ci90: tuple
    n: int
    chi2_null: float = np.nan
    df_null: int = 0

    def cutoffs(self):
        """Pass/fail of the three conventional cutoff rules."""
        return {
            "cfi>.90": "pass" if self.cfi > CFI_CUTOFF else "fail",
            "srmr<.08": "pass" if self.srmr < SRMR_CUTOFF else "fail",
            "rmsea<.06": "pass" if self.rmsea < RMSEA_CUTOFF else "fail",
        }


def null_model_fit(moments):
    """Analytic fit of the zero-covariance null model.

    With Sigma = diag(S) the discrepancy reduces to sum(log s_jj) - log|S|;
    no optimizer involved. Returns (chi2_null, df_null).
    """
    S = moments.S
    f_null = fml_discrepancy(S, np.diag(np.diag(S)))
    p = S.shape[0]
    return (moments.n - 1) * f_null, p * (p - 1) // 2


def cfi(chi2, df, chi2_null, df_null):
    """Comparative fit index with the conventional clamps.

    Both noncentrality terms are floored at zero; the ratio is clamped to
    [0, 1]; a zero null term defines CFI = 1.
    """
    d_null = max(chi2_null - df_null, 0.0)
    d_spec = max(chi2 - df, 0.0)
    if d_null == 0.0:
        return 1.0
    return float(min(max((d_null - d_spec) / d_null, 0.0), 1.0))


def srmr(S, sigma_hat):
    """Standardized root mean square residual.

    r_jk is the observed-minus-implied correlation; the sum runs over j<=k
    including the diagonal (which contributes zero, since both correlation
    diagonals are one) and e = p(p+1)/2 counts those cells.
    """
    S = np.asarray(S, dtype=float)
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if S.shape != sigma_hat.shape:
        raise ValueError(f"shape mismatch: {S.shape} vs {sigma_hat.shape}")
    if np.any(np.diag(S) <= 0) or np.any(np.diag(sigma_hat) <= 0):
        raise ValueError("zero or negative variance column")
    r = _to_corr(S) - _to_corr(sigma_hat)
    p = S.shape[0]
    idx = np.triu_indices(p)
    e = p * (p + 1) // 2
    return float(np.sqrt(np.sum(r[idx] ** 2) / e))


def _to_corr(matrix):
    d = 1.0 / np.sqrt(np.diag(matrix))
    return matrix * np.outer(d, d)


def rmsea(chi2, df, n):
    """RMSEA point value and 90% confidence interval.

    Point: sqrt(max(chi2/df - 1, 0)/n). The CI inverts the noncentral
    chi-square: lambda_L gives tail probability 0.95 at the observed chi2,
    lambda_U gives 0.05; each bound is sqrt(lambda/(df*n)), floored at 0.
    """
    if df <= 0:
        raise ValueError("rmsea needs df > 0")
    point = float(np.sqrt(max(chi2 / df - 1.0, 0.0) / n))
    lam_lo = _invert_noncentrality(chi2, df, 0.95)
    lam_hi = _invert_noncentrality(chi2, df, 0.05)
    ci = (
        float(np.sqrt(lam_lo / (df * n))),
        float(np.sqrt(lam_hi / (df * n))),
    )
    return point, ci


def _invert_noncentrality(chi2, df, target, tol=1e-8):
    """Smallest lambda with ncx2.cdf(chi2; df, lambda) = target, by bisection."""
    if ncx2.cdf(chi2, df, 0.0) <= target:
        return 0.0
    lo, hi = 0.0, max(4.0 * df, 4.0 * chi2, 1.0)
    while ncx2.cdf(chi2, df, hi) > target:
        hi *= 2.0
        if hi > 1e12:
            return hi
    while hi - lo > tol * max(1.0, hi):
        mid = (lo + hi) / 2.0
        if ncx2.cdf(chi2, df, mid) > target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def fit_indices(result):
    """All four indices for a finished fit."""
    from .assemble import implied_covariance

    moments = result.moments
    chi2 = (moments.n - 1) * result.f_min
    df = moments.moment_count(with_means=True) - result.table.free_count
    if df < 0:
        raise ValueError("negative degrees of freedom")
    chi2_null, df_null = null_model_fit(moments)
    sigma_hat = implied_covariance(result.matrices())
    point, ci = rmsea(chi2, df, moments.n)
    return FitIndices(
        chi2=float(chi2),
        df=int(df),
        cfi=cfi(chi2, df, chi2_null, df_null),
        srmr=srmr(moments.S, sigma_hat),
        rmsea=point,
        rmsea_ci90=ci,
        n=moments.n,
        chi2_null=float(chi2_null),
        df_null=int(df_null),
    )


@dataclass
class LadderStep:
    baseline: str
    constrained: str
    delta_chi2: float
    delta_df: int
    delta_cfi: float
    retained: bool

    @property
    def verdict(self):
        return "not different" if self.retained else "different"


@dataclass
class LadderComparison:
    steps: list
    selected: str


def compare_invariance(ladder):
    """Compare adjacent models of an invariance ladder.

    ``ladder`` is a list of (label, FitIndices) ordered from least to most
    constrained on one dataset. Each step is retained when Delta-CFI < .01;
    the selected model is the most constrained one reachable through
    retained steps. Raises ValueError when df is not strictly increasing
    (non-nested inputs) or sample sizes differ.
    """
    if len(ladder) < 1:
        raise ValueError("empty ladder")
    labels = [lab for lab, _ in ladder]
    idx = [ix for _, ix in ladder]
    for a, b in zip(idx, idx[1:]):
        if b.df <= a.df:
            raise ValueError(
                f"models are not nested: df must increase, got {a.df} -> {b.df}"
            )
        if b.n != a.n:
            raise ValueError("ladder models were fit to different sample sizes")
    steps = []
    selected = labels[0]
    blocked = False
    for i in range(len(ladder) - 1):
        delta_cfi = idx[i].cfi - idx[i + 1].cfi
        retained = delta_cfi < DELTA_CFI_RULE
        steps.append(
            LadderStep(
                baseline=labels[i],
                constrained=labels[i + 1],
                delta_chi2=idx[i + 1].chi2 - idx[i].chi2,
                delta_df=idx[i + 1].df - idx[i].df,
                delta_cfi=delta_cfi,
                retained=retained,
            )
        )
        if not blocked and retained:
            selected = labels[i + 1]
        else:
            blocked = True
    return LadderComparison(steps=steps, selected=selected)
