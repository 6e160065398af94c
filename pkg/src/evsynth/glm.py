"""Maximum-likelihood fitting for the supported regression families.

Families: ``gaussian`` (ordinary least squares), ``logit`` and ``probit``
(Bernoulli outcomes fit by Newton iterations with step halving).  Fits
report the coefficient covariance used downstream: the unbiased-dispersion
normal-equations covariance for OLS and the inverse observed Fisher
information for the binomial links.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

FAMILIES = ("gaussian", "logit", "probit")
BINOMIAL_FAMILIES = ("logit", "probit")

COND_LIMIT = 1e12
MAX_ITER = 50
GRAD_TOL = 1e-8
SEPARATION_EPS = 1e-8
SEPARATION_BETA_LIMIT = 15.0


class GlmError(Exception):
    pass


class DataError(GlmError):
    """Malformed input data (CSV problems, bad outcome values, ...)."""


class SingularDesignError(GlmError):
    """X'X condition number at or above COND_LIMIT."""


class NotConvergedError(GlmError):
    """Newton iterations exhausted without meeting the gradient tolerance."""


class SeparationError(GlmError):
    """Fitted probabilities collapsed onto {0, 1} (complete separation)."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class IrlsStep(NamedTuple):
    loglik: float
    grad_inf: float
    max_abs_beta: float
    prob_margin: float  # max over observations of min(p, 1 - p)


@dataclass
class Dataset:
    """Design matrix, response and family, ready to fit.

    Invariants checked at construction: X is finite with more rows than
    columns, y is finite with matching length, and binomial responses take
    values in {0, 1} with both classes allowed to be checked at fit time.
    """

    X: np.ndarray
    y: np.ndarray
    family: str
    names: tuple[str, ...]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise DataError("X must be a 2-d array")
        n, p = self.X.shape
        if self.y.shape != (n,):
            raise DataError("y length does not match X")
        if n <= p:
            raise DataError(f"need more observations than coefficients (n={n}, p={p})")
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise DataError("non-finite values in data")
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}")
        if self.family in BINOMIAL_FAMILIES and not np.isin(self.y, (0.0, 1.0)).all():
            raise DataError("binomial outcome must take values in {0, 1}")
        self.names = tuple(self.names)
        if len(self.names) != p:
            raise DataError("names length does not match X")
        if len(set(self.names)) != p:
            raise DataError("duplicate column names")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class FitResult:
    """Fitted coefficients and the quantities the evidence engine needs."""

    beta: np.ndarray
    cov: np.ndarray
    dispersion: float
    n: int
    p: int
    family: str
    names: tuple[str, ...]
    converged: bool
    log_likelihood: float
    linear_predictor_var: float
    warnings: list[str] = field(default_factory=list)
    trace: list[IrlsStep] = field(default_factory=list, repr=False)


def add_intercept(d: Dataset, name: str = "intercept") -> Dataset:
    """Prepend a constant column named ``name``."""
    if name in d.names:
        raise DataError(f"column {name!r} already present")
    X = np.column_stack([np.ones(d.n), d.X])
    return Dataset(X, d.y, d.family, (name,) + d.names)


def dataset_from_csv(path, outcome: str, predictors: list[str] | None = None,
                     family: str = "gaussian", intercept: bool = True) -> Dataset:
    """Load a Dataset from a headed CSV file.

    Parameters
    ----------
    path : str or Path
    outcome : str
        Column used as the response.
    predictors : list of str, optional
        Predictor columns, in order.  Defaults to every non-outcome column
        in file order.
    family : str
    intercept : bool
        Prepend a constant ``intercept`` column (default True).

    Raises
    ------
    DataError
        On missing columns, missing cells or non-numeric values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if outcome not in header:
        raise DataError(f"{path}: outcome column {outcome!r} not found")
    if predictors is None:
        predictors = [c for c in header if c != outcome]
    missing = [c for c in predictors if c not in header]
    if missing:
        raise DataError(f"{path}: predictor columns {missing} not found")

    def column(name: str) -> np.ndarray:
        j = header.index(name)
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            if j >= len(row) or row[j].strip() == "":
                raise DataError(f"{path}: missing value in column {name!r}, data row {i + 1}")
            try:
                out[i] = float(row[j])
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {row[j]!r} in column {name!r}, "
                    f"data row {i + 1}") from None
        return out

    y = column(outcome)
    X = np.column_stack([column(c) for c in predictors]) if predictors else \
        np.empty((len(rows), 0))
    d = Dataset(X, y, family, tuple(predictors))
    return add_intercept(d) if intercept else d


def _condition_guard(X: np.ndarray):
    XtX = X.T @ X
    cond = np.linalg.cond(XtX)
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise SingularDesignError(f"X'X condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    return XtX


def fit_ols(d: Dataset) -> FitResult:
    """Ordinary least squares via the normal equations.

    Dispersion is the unbiased estimate RSS / (n - p) and the coefficient
    covariance is dispersion * (X'X)^-1.  A zero-residual fit is returned
    with a ``degenerate dispersion`` warning rather than an error.
    """
    if d.family != "gaussian":
        raise DataError(f"fit_ols requires the gaussian family, got {d.family!r}")
    X, y = d.X, d.y
    XtX = _condition_guard(X)
    beta = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    dof = d.n - d.p
    phi = rss / dof
    cov = phi * np.linalg.inv(XtX)
    cov = (cov + cov.T) / 2.0
    warnings_list = []
    if phi <= 0.0 or rss <= 1e-12 * max(1.0, float(y @ y)):
        warnings_list.append("degenerate dispersion: residual sum of squares is zero")
    loglik = math.inf if rss == 0.0 else \
        -0.5 * d.n * (math.log(2.0 * math.pi * rss / d.n) + 1.0)
    return FitResult(beta=beta, cov=cov, dispersion=phi, n=d.n, p=d.p,
                     family=d.family, names=d.names, converged=True,
                     log_likelihood=loglik,
                     linear_predictor_var=float(np.var(X @ beta, ddof=1)),
                     warnings=warnings_list)


def _logit_parts(X, y, beta):
    z = X @ beta
    loglik = float(y @ z - np.logaddexp(0.0, z).sum())
    mu = expit(z)
    grad = X.T @ (y - mu)
    w = mu * (1.0 - mu)
    neg_hess = X.T @ (w[:, None] * X)
    margin = float(np.minimum(mu, 1.0 - mu).max())
    return loglik, grad, neg_hess, margin


def _probit_parts(X, y, beta):
    z = X @ beta
    log_p1 = log_ndtr(z)
    log_p0 = log_ndtr(-z)
    loglik = float(y @ log_p1 + (1.0 - y) @ log_p0)
    log_pdf = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)
    r1 = np.exp(log_pdf - log_p1)   # pdf / cdf, the Mills ratio arm for y = 1
    r0 = np.exp(log_pdf - log_p0)   # pdf / (1 - cdf)
    grad = X.T @ (y * r1 - (1.0 - y) * r0)
    curvature = y * (z * r1 + r1 * r1) + (1.0 - y) * (r0 * r0 - z * r0)
    neg_hess = X.T @ (curvature[:, None] * X)
    p = ndtr(z)
    margin = float(np.minimum(p, 1.0 - p).max())
    return loglik, grad, neg_hess, margin


def _binomial_loglik(X, y, beta, family):
    if family == "logit":
        z = X @ beta
        return float(y @ z - np.logaddexp(0.0, z).sum())
    z = X @ beta
    return float(y @ log_ndtr(z) + (1.0 - y) @ log_ndtr(-z))


def fit_binomial(d: Dataset, max_iter: int = MAX_ITER, grad_tol: float = GRAD_TOL,
                 separation_eps: float = SEPARATION_EPS,
                 separation_beta_limit: float = SEPARATION_BETA_LIMIT,
                 check_separation: bool = True) -> FitResult:
    """Newton fit of a logit or probit regression.

    Each step solves the observed-information system and halves the step
    until the log-likelihood does not decrease.  Convergence requires the
    max-abs score to fall below ``grad_tol`` within ``max_iter`` iterations.
    The coefficient covariance is the inverse observed Fisher information
    at the optimum.

    Raises
    ------
    SeparationError
        If the iterate history satisfies :func:`detect_separation` (all
        fitted probabilities within ``separation_eps`` of {0, 1} at some
        iterate, or coefficients beyond ``separation_beta_limit`` without
        score convergence).
    NotConvergedError
        If iterations are exhausted without separation.
    """
    if d.family not in BINOMIAL_FAMILIES:
        raise DataError(f"fit_binomial requires a binomial family, got {d.family!r}")
    if d.y.min() == d.y.max():
        raise DataError("binomial response contains a single class")
    X, y = d.X, d.y
    _condition_guard(X)
    parts = _logit_parts if d.family == "logit" else _probit_parts

    beta = np.zeros(d.p)
    trace: list[IrlsStep] = []
    converged = False
    loglik, grad, neg_hess, margin = parts(X, y, beta)
    for _ in range(max_iter):
        grad_inf = float(np.abs(grad).max())
        trace.append(IrlsStep(loglik, grad_inf, float(np.abs(beta).max()), margin))
        if grad_inf < grad_tol:
            converged = True
            break
        try:
            delta = np.linalg.solve(neg_hess, grad)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(neg_hess, grad, rcond=None)[0]
        step = 1.0
        accepted = False
        while step > 2.0 ** -30:
            cand = beta + step * delta
            cand_ll = _binomial_loglik(X, y, cand, d.family)
            if cand_ll >= loglik - 1e-12:
                beta = cand
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        loglik, grad, neg_hess, margin = parts(X, y, beta)
    else:
        trace.append(IrlsStep(loglik, float(np.abs(grad).max()),
                              float(np.abs(beta).max()), margin))

    if not converged and (not trace or trace[-1].loglik != loglik):
        trace.append(IrlsStep(loglik, float(np.abs(grad).max()),
                              float(np.abs(beta).max()), margin))

    if check_separation and detect_separation(d, trace, eps=separation_eps,
                                              beta_limit=separation_beta_limit,
                                              grad_tol=grad_tol):
        raise SeparationError("complete separation detected", trace=trace)
    if not converged:
        raise NotConvergedError(
            f"no convergence in {max_iter} iterations "
            f"(|score| = {trace[-1].grad_inf:.3e})")

    cov = np.linalg.inv(neg_hess)
    cov = (cov + cov.T) / 2.0
    return FitResult(beta=beta, cov=cov, dispersion=1.0, n=d.n, p=d.p,
                     family=d.family, names=d.names, converged=True,
                     log_likelihood=loglik,
                     linear_predictor_var=float(np.var(X @ beta, ddof=1)),
                     trace=trace)


def fit(d: Dataset, **kwargs) -> FitResult:
    """Dispatch to :func:`fit_ols` or :func:`fit_binomial` by family."""
    if d.family == "gaussian":
        return fit_ols(d)
    return fit_binomial(d, **kwargs)


def detect_separation(d: Dataset, trace: list[IrlsStep], eps: float = SEPARATION_EPS,
                      beta_limit: float = SEPARATION_BETA_LIMIT,
                      grad_tol: float = GRAD_TOL) -> bool:
    """Separation predicate over a Newton iterate history.

    True when every fitted probability sat within ``eps`` of {0, 1} at any
    iterate, or when the final iterate has a coefficient beyond
    ``beta_limit`` in magnitude while the score never met ``grad_tol``.
    """
    if d.family not in BINOMIAL_FAMILIES:
        raise DataError("separation is defined for binomial families only")
    if not trace:
        return False
    if any(step.prob_margin <= eps for step in trace):
        return True
    last = trace[-1]
    return last.max_abs_beta > beta_limit and last.grad_inf >= grad_tol


def mz_r2(fit_result: FitResult) -> float:
    """McKelvey-Zavoina pseudo R^2 for a binomial fit.

    Var(X beta) / (Var(X beta) + link variance), with link variance
    pi^2 / 3 for logit and 1 for probit.
    """
    if fit_result.family not in BINOMIAL_FAMILIES:
        raise DataError("mz_r2 is defined for binomial families only")
    link_var = math.pi ** 2 / 3.0 if fit_result.family == "logit" else 1.0
    v = fit_result.linear_predictor_var
    return v / (v + link_var)
