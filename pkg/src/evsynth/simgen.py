"""Synthetic data and study plans for the simulation studies.

Six standard-normal predictors with pairwise correlation 0.3 feed a linear
predictor with effect pattern (0, 1, 1, 1, 2, 3), rescaled so the model
explains a target share of outcome variance on its own scale: the target
R^2 directly for gaussian outcomes, and the latent-variable (McKelvey-
Zavoina) R^2 for logit and probit outcomes.  Studies 1-8 compare one
gaussian, one logit and one probit study per iteration; studies 9-11 track
a growing sequence of gaussian studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import glm

DEFAULT_WEIGHTS = (0.0, 1.0, 1.0, 1.0, 2.0, 3.0)
DEFAULT_RHO = 0.3
N_GRID = (25, 50, 100, 200, 400, 800)
R2_GRID = (0.02, 0.09, 0.25)
SEQUENTIAL_SIMS = (9, 10, 11)
SEQUENTIAL_N_GRID = (25, 200)
SEQUENTIAL_R2 = 0.09
SEQUENTIAL_STUDIES = 150
MAX_REDRAWS = 100


class PersistentSeparationError(Exception):
    """A binomial study stayed separated after the redraw budget."""


def rng_stream(*keys: int) -> np.random.Generator:
    """Independent generator keyed by a tuple of non-negative integers.

    Streams for distinct key tuples are independent and do not depend on
    the order in which they are created, so parallel work can draw from
    per-task streams reproducibly.
    """
    return np.random.default_rng(list(keys))


@dataclass(frozen=True)
class DataGenSpec:
    """One study's generative model."""

    family: str
    n: int
    r2: float
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    rho: float = DEFAULT_RHO
    seed: int | None = None

    def __post_init__(self):
        if self.family not in glm.FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 < self.r2 < 1.0:
            raise ValueError("r2 must lie in (0, 1)")
        k = len(self.weights)
        if k < 2:
            raise ValueError("need at least two predictors")
        if not -1.0 / (k - 1) < self.rho < 1.0:
            raise ValueError("rho outside the positive-definite range")
        if self.n <= k:
            raise ValueError("need more observations than predictors")


def predictor_cov(spec: DataGenSpec) -> np.ndarray:
    k = len(spec.weights)
    return np.full((k, k), spec.rho) + (1.0 - spec.rho) * np.eye(k)


def latent_variance(spec: DataGenSpec) -> float:
    """Target variance of the linear predictor on the outcome scale."""
    r2 = spec.r2
    if spec.family == "gaussian":
        return r2
    if spec.family == "logit":
        return r2 * (math.pi ** 2 / 3.0) / (1.0 - r2)
    return r2 / (1.0 - r2)


def compute_beta(spec: DataGenSpec) -> np.ndarray:
    """Effect pattern rescaled to hit the target explained variance.

    beta = a * sqrt(V / (a' Sigma a)) where a is the weight pattern, Sigma
    the predictor covariance and V the target linear-predictor variance, so
    Var(X beta) = V by construction.
    """
    a = np.asarray(spec.weights, dtype=float)
    denom = float(a @ predictor_cov(spec) @ a)
    return a * math.sqrt(latent_variance(spec) / denom)


def gen_dataset(spec: DataGenSpec, rng: np.random.Generator | None = None,
                probe=None, max_redraws: int = MAX_REDRAWS,
                return_probe: bool = False):
    """Draw one study dataset, redrawing binomial studies that separate.

    Parameters
    ----------
    spec : DataGenSpec
    rng : Generator, optional
        Falls back to a generator seeded with ``spec.seed``.
    probe : callable, optional
        Trial fit run on each binomial draw; it must raise
        :class:`evsynth.glm.SeparationError` to request a redraw.  Defaults
        to fitting the full model (intercept plus every predictor).
    max_redraws : int
        Budget of full-dataset redraws for binomial families.
    return_probe : bool
        Also return the probe's result for the accepted draw.

    Raises
    ------
    PersistentSeparationError
        If every attempt within the budget separated.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    beta = compute_beta(spec)
    chol = np.linalg.cholesky(predictor_cov(spec))
    names = tuple(f"x{j + 1}" for j in range(len(spec.weights)))

    if probe is None and spec.family != "gaussian":
        def probe(d):
            return glm.fit_binomial(glm.add_intercept(d))

    attempts = max_redraws + 1
    for _ in range(attempts):
        X = rng.standard_normal((spec.n, len(beta))) @ chol.T
        eta = X @ beta
        if spec.family == "gaussian":
            y = eta + rng.standard_normal(spec.n) * math.sqrt(1.0 - spec.r2)
            d = glm.Dataset(X, y, spec.family, names)
            return (d, None) if return_probe else d
        if spec.family == "logit":
            p = 1.0 / (1.0 + np.exp(-eta))
        else:
            from scipy.special import ndtr
            p = ndtr(eta)
        y = (rng.random(spec.n) < p).astype(float)
        if y.min() == y.max():
            continue
        d = glm.Dataset(X, y, spec.family, names)
        try:
            result = probe(d)
        except glm.SeparationError:
            continue
        return (d, result) if return_probe else d
    raise PersistentSeparationError(
        f"{spec.family} study (n={spec.n}, r2={spec.r2}) separated in all "
        f"{attempts} attempts")


def tertile_categorize(d: glm.Dataset, column: str,
                       labels: tuple[str, str, str] = ("low", "medium", "high")
                       ) -> glm.Dataset:
    """Replace ``column`` with three rank-third indicator columns.

    Group sizes differ by at most one, with remainders assigned to the
    lower groups first; ties keep data order (stable sort).  Any column
    named ``intercept`` is dropped, since the three indicators span it.
    """
    if column not in d.names:
        raise glm.DataError(f"column {column!r} not found")
    j = d.names.index(column)
    values = d.X[:, j]
    if np.unique(values).size < 3:
        raise glm.DataError(f"column {column!r} has fewer than 3 distinct values")
    n = d.n
    base, rem = divmod(n, 3)
    sizes = (base + (rem > 0), base + (rem > 1), base)
    order = np.argsort(values, kind="stable")
    group = np.empty(n, dtype=int)
    start = 0
    for g, size in enumerate(sizes):
        group[order[start:start + size]] = g
        start += size
    indicators = np.stack([(group == g).astype(float) for g in range(3)], axis=1)
    new_names = tuple(f"{column}_{lab}" for lab in labels)
    for name in new_names:
        if name in d.names:
            raise glm.DataError(f"column {name!r} already present")

    cols, names = [], []
    for k, name in enumerate(d.names):
        if name == column:
            cols.append(indicators)
            names.extend(new_names)
        elif name == "intercept":
            continue
        else:
            cols.append(d.X[:, k:k + 1])
            names.append(name)
    return glm.Dataset(np.hstack(cols), d.y, d.family, tuple(names))


def scale_score(d: glm.Dataset, columns: list[str], name: str = "scale") -> glm.Dataset:
    """Replace ``columns`` with their row-wise mean as one new column."""
    if len(columns) < 2:
        raise glm.DataError("scale score needs at least two columns")
    missing = [c for c in columns if c not in d.names]
    if missing:
        raise glm.DataError(f"columns {missing} not found")
    if name in d.names and name not in columns:
        raise glm.DataError(f"column {name!r} already present")
    idx = [d.names.index(c) for c in columns]
    score = d.X[:, idx].mean(axis=1)

    cols, names = [], []
    inserted = False
    first = min(idx)
    for k, col_name in enumerate(d.names):
        if col_name in columns:
            if k == first and not inserted:
                cols.append(score[:, None])
                names.append(name)
                inserted = True
            continue
        cols.append(d.X[:, k:k + 1])
        names.append(col_name)
    return glm.Dataset(np.hstack(cols), d.y, d.family, tuple(names))


def apply_transform(d: glm.Dataset, transform: str | None) -> glm.Dataset:
    """Apply a study-plan transform tag to a raw dataset."""
    if transform is None:
        return d
    kind, _, arg = transform.partition(":")
    if kind == "tertile":
        return tertile_categorize(d, arg)
    if kind == "scale":
        return scale_score(d, arg.split(","))
    raise ValueError(f"unknown transform {transform!r}")


@dataclass(frozen=True)
class StudyPlanEntry:
    """How to generate and analyze one study within an iteration."""

    study_index: int
    spec: DataGenSpec
    transform: str | None
    intercept: bool
    hypotheses: tuple[str, ...]


_PART1 = {
    1: dict(hyps=("x4 < x5 < x6",), transform=None, intercept=True),
    2: dict(hyps=("x4 < x5 < x6",), transform=None, intercept=True),
    3: dict(hyps=("x6 > 0",), transform=None, intercept=True),
    4: dict(hyps=("x6_low < x6_medium < x6_high",), transform="tertile:x6",
            intercept=False),
    5: dict(hyps=("scale > 0",), transform="scale:x2,x3,x4", intercept=True),
    6: dict(hyps=("{x2, x3, x4} > 0",), transform=None, intercept=True),
    7: dict(hyps=("{x2, x3, x4} < 0",), transform=None, intercept=True),
    8: dict(hyps=("{x1, x2, x3} > 0",), transform=None, intercept=True),
}

_SEQUENTIAL_HYPS = {
    9: ("x2 > 0",),
    10: ("x1 > 0",),
    11: ("{x2, x3, x4} > 0",),
}
DECOMPOSED_11 = ("x2 > 0", "x3 > 0", "x4 > 0")


def study_plan(sim_id: int, n: int, r2: float,
               rng: np.random.Generator | None = None,
               n_studies: int | None = None,
               decomposed: bool = False) -> list[StudyPlanEntry]:
    """Per-iteration plan of studies for one simulation condition.

    Simulations 1-8 yield one gaussian, one logit and one probit study of
    size ``n``; simulation 2 additionally forces one uniformly chosen study
    down to n = 25.  Simulations 9-11 yield ``n_studies`` gaussian studies
    (default 150).  ``decomposed`` replaces simulation 11's joint
    hypothesis with its three single-coefficient parts.
    """
    if sim_id in _PART1:
        cfg = _PART1[sim_id]
        ns = [n, n, n]
        if sim_id == 2:
            if rng is None:
                raise ValueError("simulation 2 needs an rng to place its n=25 study")
            ns[int(rng.integers(3))] = 25
        return [StudyPlanEntry(i, DataGenSpec(fam, ns[i], r2),
                               cfg["transform"], cfg["intercept"], cfg["hyps"])
                for i, fam in enumerate(("gaussian", "logit", "probit"))]
    if sim_id in _SEQUENTIAL_HYPS:
        if decomposed and sim_id != 11:
            raise ValueError("the decomposed variant applies to simulation 11 only")
        hyps = DECOMPOSED_11 if (sim_id == 11 and decomposed) else _SEQUENTIAL_HYPS[sim_id]
        count = SEQUENTIAL_STUDIES if n_studies is None else n_studies
        if count < 1:
            raise ValueError("need at least one study")
        return [StudyPlanEntry(i, DataGenSpec("gaussian", n, r2), None, True, hyps)
                for i in range(count)]
    raise ValueError(f"unknown simulation id {sim_id!r}")
