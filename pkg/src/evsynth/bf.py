"""Bayes factors for constrained hypotheses against the unconstrained model.

A fitted model yields a coefficient posterior; a small fraction of the
likelihood information yields an adjusted prior centered on the boundary of
the hypothesis.  The Bayes factor of hypothesis vs unconstrained model is
fit over complexity: the posterior and prior masses of the constrained
region for inequality constraints, and the posterior and prior densities at
the constraint point for equality constraints (the Savage-Dickey ratio).
Mixed systems multiply the equality density ratio by the ratio of
conditional inequality probabilities given the equalities.

Region probabilities use the exact CDF for a single inequality row and
Monte Carlo integration otherwise.  Zero-mass corner cases are reported
with +-inf sentinels; a 0/0 Bayes factor raises :class:`NumericError`.
"""

from __future__ import annotations

import json
import math
import warnings as _warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy import linalg as sla
from scipy.special import ndtr
from scipy.stats import t as student_t

from . import hypothesis as hyp
from .glm import FitResult

DEFAULT_DRAWS = 100_000


class NumericError(ArithmeticError):
    """Degenerate Bayes factor arithmetic (0/0 masses, bad scale matrices)."""


@dataclass(frozen=True)
class CoefDistribution:
    """Normal or Student-t distribution over named coefficients."""

    kind: str                      # "normal" | "student-t"
    mean: np.ndarray
    scale: np.ndarray
    names: tuple[str, ...]
    df: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        object.__setattr__(self, "names", tuple(self.names))
        p = self.mean.shape[0]
        if self.kind not in ("normal", "student-t"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.scale.shape != (p, p):
            raise ValueError("scale shape does not match mean")
        if len(self.names) != p:
            raise ValueError("names length does not match mean")
        if np.abs(self.scale - self.scale.T).max(initial=0.0) > 1e-10:
            raise ValueError("scale matrix is not symmetric")
        if self.kind == "student-t" and (self.df is None or self.df <= 0):
            raise ValueError("student-t requires positive degrees of freedom")


@dataclass(frozen=True)
class FractionSpec:
    """Fraction b of the likelihood information granted to the prior."""

    b: float
    rule: str = "explicit"
    J: int | None = None

    def __post_init__(self):
        if not (0.0 < self.b < 1.0):
            raise ValueError(f"fraction b must lie in (0, 1), got {self.b!r}")
        if self.J is not None and (self.J < 1 or int(self.J) != self.J):
            raise ValueError("J must be a positive integer")

    @classmethod
    def linear_model(cls, n: int, p: int) -> "FractionSpec":
        # b = (p + 1) / n, with p counting every design column
        return cls((p + 1) / n, rule="linear-model")

    @classmethod
    def glm(cls, n: int, J: int) -> "FractionSpec":
        # b = J / n, J = number of independent constraints in the study
        if J < 1:
            raise ValueError("J must be at least 1")
        return cls(J / n, rule="glm", J=J)

    @classmethod
    def explicit(cls, b: float) -> "FractionSpec":
        return cls(b, rule="explicit")


@dataclass
class EvidenceRecord:
    """One hypothesis evaluated in one study."""

    study_id: str
    hypothesis: str
    fit: float
    complexity: float
    log_bf_iu: float
    log_bf_ic: float | None
    mc_se_fit: float
    mc_se_complexity: float
    mc_draws: int
    family: str = ""
    n: int = 0
    alternative: str = "unconstrained"

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, float) and math.isinf(value):
                out[key] = "inf" if value > 0 else "-inf"
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvidenceRecord":
        data = dict(data)
        for key in ("fit", "complexity", "log_bf_iu", "log_bf_ic",
                    "mc_se_fit", "mc_se_complexity"):
            if data.get(key) is not None:
                data[key] = float(data[key])
        data["mc_draws"] = int(data["mc_draws"])
        data["n"] = int(data.get("n", 0))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvidenceRecord":
        return cls.from_dict(json.loads(text))


def build_posterior(fit: FitResult) -> CoefDistribution:
    """Coefficient posterior: Student-t(beta, cov, n - p) for gaussian fits,
    Normal(beta, cov) for binomial fits."""
    if fit.family == "gaussian":
        return CoefDistribution("student-t", fit.beta, fit.cov, fit.names,
                                df=float(fit.n - fit.p))
    return CoefDistribution("normal", fit.beta, fit.cov, fit.names)


def build_prior(fit: FitResult, frac: FractionSpec,
                center: np.ndarray) -> CoefDistribution:
    """Adjusted fractional prior: scale cov / b, centered at ``center``.

    Gaussian fits give a Cauchy (Student-t with df 1); binomial fits give a
    Normal.
    """
    center = np.asarray(center, dtype=float)
    if center.shape != fit.beta.shape:
        raise ValueError("center length does not match the fitted coefficients")
    scale = fit.cov / frac.b
    if fit.family == "gaussian":
        return CoefDistribution("student-t", center, scale, fit.names, df=1.0)
    return CoefDistribution("normal", center, scale, fit.names)


def default_fraction(fit: FitResult,
                     systems: list[hyp.ConstraintSystem]) -> FractionSpec:
    """Family rule: (p + 1) / n for gaussian, J / n for binomial."""
    if fit.family == "gaussian":
        return FractionSpec.linear_model(fit.n, fit.p)
    return FractionSpec.glm(fit.n, constraint_count(systems))


def constraint_count(systems: list[hyp.ConstraintSystem]) -> int:
    """Number of independent constraint rows across ``systems`` (min 1)."""
    names: list[str] = []
    for h in systems:
        for name in h.param_names:
            if name not in names:
                names.append(name)
    blocks = [hyp.embed_rows(h, names)[0] for h in systems]
    stacked = np.vstack(blocks) if blocks else np.zeros((0, 0))
    rank = int(np.linalg.matrix_rank(stacked)) if stacked.size else 0
    return max(rank, 1)


def adjustment_center(h: hyp.ConstraintSystem,
                      names: tuple[str, ...] | None = None) -> np.ndarray:
    """Boundary point the adjusted prior is centered on.

    The minimum-norm solution of the stacked boundary system
    ``[R_e; R_i] beta = [r_e; r_i]``.  If the system is inconsistent the
    least-squares solution is returned with a RuntimeWarning.  With
    ``names`` given, the solution is embedded into that coefficient space
    (zeros elsewhere).
    """
    A = np.vstack([h.R_e, h.R_i])
    b = np.concatenate([h.r_e, h.r_i])
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.abs(A @ x - b).max(initial=0.0) > 1e-8:
        _warnings.warn("inconsistent boundary system; least-squares center used",
                       RuntimeWarning, stacklevel=2)
    if names is None:
        return x
    out = np.zeros(len(names))
    index = {name: j for j, name in enumerate(names)}
    missing = [n for n in h.param_names if n not in index]
    if missing:
        raise hyp.NameMappingError(
            f"hypothesis names {missing} not among coefficients {list(names)}")
    for name, value in zip(h.param_names, x):
        out[index[name]] = value
    return out


# ---------------------------------------------------------------------------
# region probabilities and densities

def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    wmax = max(float(w.max(initial=0.0)), 0.0)
    if float(w.min(initial=0.0)) < -1e-8 * max(1.0, wmax):
        raise NumericError("transformed scale matrix is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def _orthant_prob(kind: str, mean: np.ndarray, scale: np.ndarray,
                  df: float | None, rng, draws: int,
                  method: str) -> tuple[float, float, int]:
    """P(eta > 0) with eta ~ kind(mean, scale, df).

    Returns (probability, MC standard error, draws used).  One row uses the
    exact CDF unless method="mc"; several rows always use Monte Carlo.
    """
    k = mean.shape[0]
    if method not in ("auto", "exact", "mc"):
        raise ValueError(f"unknown method {method!r}")
    if method == "exact" and k > 1:
        raise NumericError("exact region probability requires a single inequality row")
    if k == 1 and method != "mc":
        s = math.sqrt(max(float(scale[0, 0]), 0.0))
        if s == 0.0:
            return (1.0 if mean[0] > 0 else 0.0), 0.0, 0
        z = float(mean[0]) / s
        p = float(student_t.cdf(z, df)) if kind == "student-t" else float(ndtr(z))
        return p, 0.0, 0
    if rng is None:
        rng = np.random.default_rng()
    A = _psd_sqrt(scale)
    z = rng.standard_normal((draws, k))
    x = z @ A.T
    if kind == "student-t":
        x /= np.sqrt(rng.chisquare(df, draws) / df)[:, None]
    x += mean
    p = float(np.all(x > 0.0, axis=1).mean())
    se = math.sqrt(p * (1.0 - p) / draws)
    return p, se, draws


def prob_region(dist: CoefDistribution, h: hyp.ConstraintSystem,
                rng=None, draws: int = DEFAULT_DRAWS,
                method: str = "auto") -> tuple[float, float]:
    """Probability that ``dist`` satisfies the inequality rows of ``h``.

    ``h`` must have inequality rows only; equality constraints take the
    density path.  Returns (probability, MC standard error); the standard
    error is 0 on the exact single-row path.
    """
    if h.n_eq:
        raise ValueError("prob_region requires an inequality-only hypothesis")
    eta = hyp.transform_constraints(h, dist.mean, dist.scale, dist.names,
                                    dist.df).ineq
    p, se, _ = _orthant_prob(dist.kind, eta.mean, eta.scale, dist.df,
                             rng, draws, method)
    return p, se


def _eq_density(dist: CoefDistribution, h: hyp.ConstraintSystem) -> float:
    """Marginal density of the equality rows evaluated at their boundary."""
    eta = hyp.transform_constraints(h, dist.mean, dist.scale, dist.names,
                                    dist.df).eq
    k = eta.mean.shape[0]
    try:
        chol = np.linalg.cholesky(eta.scale)
    except np.linalg.LinAlgError:
        raise NumericError("equality rows give a rank-deficient transformed scale; "
                           "remove redundant equality constraints") from None
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    q = sla.solve_triangular(chol, -eta.mean, lower=True)
    quad = float(q @ q)
    if dist.kind == "normal":
        log_pdf = -0.5 * (k * math.log(2.0 * math.pi) + log_det + quad)
    else:
        nu = dist.df
        log_pdf = (math.lgamma((nu + k) / 2.0) - math.lgamma(nu / 2.0)
                   - 0.5 * (k * math.log(nu * math.pi) + log_det)
                   - (nu + k) / 2.0 * math.log1p(quad / nu))
    return math.exp(log_pdf)


def _condition_on_equalities(dist: CoefDistribution,
                             h: hyp.ConstraintSystem) -> tuple[np.ndarray, np.ndarray]:
    """Mean and scale of the inequality rows given the equality rows hold.

    Gaussian conditioning on the scale matrix; for Student-t the degrees of
    freedom are kept unchanged (documented approximation).
    """
    R, r = hyp.embed_rows(h, dist.names)
    m = R @ dist.mean - r
    S = R @ dist.scale @ R.T
    S = (S + S.T) / 2.0
    ke = h.n_eq
    try:
        cho = sla.cho_factor(S[:ke, :ke])
    except np.linalg.LinAlgError:
        raise NumericError("equality rows give a rank-deficient transformed scale; "
                           "remove redundant equality constraints") from None
    cross = S[ke:, :ke]
    mean_c = m[ke:] - cross @ sla.cho_solve(cho, m[:ke])
    scale_c = S[ke:, ke:] - cross @ sla.cho_solve(cho, S[:ke, ke:])
    return mean_c, (scale_c + scale_c.T) / 2.0


def _log_mass(dist: CoefDistribution, h: hyp.ConstraintSystem,
              rng, draws: int, method: str) -> tuple[float, float, float, int]:
    """(log mass, mass, MC se, draws used) of ``dist`` under ``h``.

    Mass means region probability for inequality-only systems, boundary
    density for equality-only systems, and density times conditional
    region probability for mixed systems.
    """
    if h.n_eq and h.n_ineq:
        dens = _eq_density(dist, h)
        mean_c, scale_c = _condition_on_equalities(dist, h)
        p, se, used = _orthant_prob(dist.kind, mean_c, scale_c, dist.df,
                                    rng, draws, method)
        log_dens = math.log(dens) if dens > 0.0 else -math.inf
        log_p = math.log(p) if p > 0.0 else -math.inf
        return log_dens + log_p, dens * p, dens * se, used
    if h.n_eq:
        dens = _eq_density(dist, h)
        return (math.log(dens) if dens > 0.0 else -math.inf), dens, 0.0, 0
    eta = hyp.transform_constraints(h, dist.mean, dist.scale, dist.names,
                                    dist.df).ineq
    p, se, used = _orthant_prob(dist.kind, eta.mean, eta.scale, dist.df,
                                rng, draws, method)
    return (math.log(p) if p > 0.0 else -math.inf), p, se, used


def density_at_equality(dist: CoefDistribution, h: hyp.ConstraintSystem) -> float:
    """Density of the equality rows of ``h`` at their stated values."""
    if h.n_eq == 0:
        raise ValueError("hypothesis has no equality rows")
    return _eq_density(dist, h)


# ---------------------------------------------------------------------------
# Bayes factors

def _log_complement_ratio(f: float, c: float) -> float | None:
    """log of (f / c) / ((1 - f) / (1 - c)) with sentinel handling."""
    log_num = (math.log(f) if f > 0.0 else -math.inf) + \
              (math.log1p(-c) if c < 1.0 else -math.inf)
    log_den = (math.log(c) if c > 0.0 else -math.inf) + \
              (math.log1p(-f) if f < 1.0 else -math.inf)
    if math.isinf(log_num) and math.isinf(log_den):
        _warnings.warn("indeterminate complement Bayes factor (0/0)",
                       RuntimeWarning, stacklevel=3)
        return None
    if log_num == -math.inf:
        return -math.inf
    if log_den == -math.inf:
        return math.inf
    return log_num - log_den


def bf_iu(posterior: CoefDistribution, adjusted_prior: CoefDistribution,
          h: hyp.ConstraintSystem, rng=None, draws: int = DEFAULT_DRAWS,
          method: str = "auto", label: str = "H", study_id: str = "",
          family: str = "", n: int = 0,
          alternative: str = "unconstrained") -> EvidenceRecord:
    """Bayes factor of ``h`` against the unconstrained model.

    Fit is the posterior mass of the constrained region (or boundary
    density), complexity the same quantity under the adjusted prior, and
    the Bayes factor their ratio.  The record also carries the Bayes factor
    against the complement when ``h`` is inequality-only.

    The posterior mass is computed before the prior mass, consuming ``rng``
    in that order.

    Raises
    ------
    NumericError
        If both masses are zero (e.g. a contradictory system).
    """
    log_f, f, f_se, used_f = _log_mass(posterior, h, rng, draws, method)
    log_c, c, c_se, used_c = _log_mass(adjusted_prior, h, rng, draws, method)
    if log_f == -math.inf and log_c == -math.inf:
        raise NumericError("fit and complexity are both zero; "
                           "the Bayes factor is undefined")
    if log_c == -math.inf:
        _warnings.warn("complexity underflowed to zero; Bayes factor reported "
                       "as +inf", RuntimeWarning, stacklevel=2)
        log_bf = math.inf
    elif log_f == -math.inf:
        log_bf = -math.inf
    else:
        log_bf = log_f - log_c
    log_ic = _log_complement_ratio(f, c) if h.n_eq == 0 else None
    return EvidenceRecord(study_id=study_id, hypothesis=label, fit=f,
                          complexity=c, log_bf_iu=log_bf, log_bf_ic=log_ic,
                          mc_se_fit=f_se, mc_se_complexity=c_se,
                          mc_draws=max(used_f, used_c), family=family, n=n,
                          alternative=alternative)


def bf_ic(record: EvidenceRecord) -> float:
    """log Bayes factor against the complement, from a stored record."""
    if record.log_bf_ic is None:
        raise NumericError("record has no complement Bayes factor "
                           "(equality constraints present)")
    return record.log_bf_ic


def bf_between(rec_i: EvidenceRecord, rec_j: EvidenceRecord) -> float:
    """log BF of hypothesis i against hypothesis j via transitivity."""
    a, b = rec_i.log_bf_iu, rec_j.log_bf_iu
    if math.isinf(a) and math.isinf(b) and a == b:
        raise NumericError("indeterminate between-hypothesis Bayes factor "
                           "(both sentinels)")
    if b == math.inf:
        _warnings.warn("denominator Bayes factor is +inf; ratio reported as 0",
                       RuntimeWarning, stacklevel=2)
        return -math.inf
    if b == -math.inf:
        return math.inf
    return a - b


def pmps(log_bfs, priors=None) -> np.ndarray:
    """Posterior model probabilities from log Bayes factors vs a common base.

    Computed in log space with max subtraction.  +inf sentinels receive an
    equal share of 1 among themselves; -inf yields probability 0.
    """
    lb = np.asarray(log_bfs, dtype=float)
    m = lb.shape[0]
    if m == 0:
        raise ValueError("no hypotheses")
    if np.isnan(lb).any():
        raise NumericError("NaN log Bayes factor")
    if priors is None:
        priors = np.full(m, 1.0 / m)
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (m,) or (priors <= 0).any() or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be positive and sum to 1")
    if np.isposinf(lb).any():
        top = np.isposinf(lb)
        return top / top.sum()
    w = np.log(priors) + lb
    if np.isneginf(w).all():
        raise NumericError("all hypotheses have zero support")
    e = np.exp(w - w.max())
    return e / e.sum()


def evaluate(fit: FitResult, h: hyp.ConstraintSystem, label: str,
             study_id: str = "", frac: FractionSpec | None = None,
             rng=None, draws: int = DEFAULT_DRAWS, method: str = "auto",
             alternative: str = "unconstrained") -> EvidenceRecord:
    """Full pipeline for one fitted study and one hypothesis.

    Builds the posterior, the boundary-centered adjusted prior (fraction
    from :func:`default_fraction` unless given), and returns the evidence
    record.
    """
    if frac is None:
        frac = default_fraction(fit, [h])
    center = adjustment_center(h, names=fit.names)
    posterior = build_posterior(fit)
    prior = build_prior(fit, frac, center)
    return bf_iu(posterior, prior, h, rng=rng, draws=draws, method=method,
                 label=label, study_id=study_id, family=fit.family, n=fit.n,
                 alternative=alternative)
