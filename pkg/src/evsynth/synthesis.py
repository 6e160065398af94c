"""Sequential aggregation of evidence across studies.

Each study contributes one log Bayes factor per hypothesis label (the
alternative occupies a label of its own, with log BF 0 per study when it is
the unconstrained model).  Aggregation multiplies Bayes factors, i.e. sums
logs, so the result is independent of study order, and posterior model
probabilities renormalize the prior odds by the accumulated evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .bf import NumericError, pmps


class LabelMismatchError(ValueError):
    """A study update does not cover exactly the tracked labels."""


class DuplicateStudyError(ValueError):
    """A study id was aggregated twice."""


def aggregate_log_bf(values: Iterable[float]) -> float:
    """Sum per-study log Bayes factors with sentinel awareness.

    +inf and -inf dominate a finite sum; mixing the two raises
    :class:`NumericError`.
    """
    total = 0.0
    seen_pos = seen_neg = False
    for v in values:
        v = float(v)
        if math.isnan(v):
            raise NumericError("NaN log Bayes factor in aggregation")
        seen_pos |= v == math.inf
        seen_neg |= v == -math.inf
        if seen_pos and seen_neg:
            raise NumericError("conflicting +inf and -inf sentinels in aggregation")
        if not math.isinf(v):
            total += v
    if seen_pos:
        return math.inf
    if seen_neg:
        return -math.inf
    return total


@dataclass
class SynthesisState:
    """Running evidence totals over a fixed label set."""

    labels: tuple[str, ...]
    prior_probs: np.ndarray
    cum_log_bf: np.ndarray
    study_count: int = 0
    study_ids: tuple[str, ...] = ()
    trail: tuple[tuple[str, dict], ...] = ()

    def pmps(self) -> np.ndarray:
        return pmps(self.cum_log_bf, self.prior_probs)

    def as_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "prior_probs": [float(x) for x in self.prior_probs],
            "aggregated_log_bf": {lab: float(v)
                                  for lab, v in zip(self.labels, self.cum_log_bf)},
            "pmps": {lab: float(v) for lab, v in zip(self.labels, self.pmps())},
            "study_count": self.study_count,
            "trail": [{"study_id": sid, "log_bf": dict(logs)}
                      for sid, logs in self.trail],
        }


def new_state(labels: Iterable[str], priors=None) -> SynthesisState:
    """Fresh state over ``labels`` with uniform priors by default."""
    labels = tuple(labels)
    if not labels:
        raise ValueError("no labels")
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate labels")
    if priors is None:
        priors = np.full(len(labels), 1.0 / len(labels))
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (len(labels),) or (priors <= 0).any() \
            or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be positive and sum to 1")
    return SynthesisState(labels=labels, prior_probs=priors,
                          cum_log_bf=np.zeros(len(labels)))


def update(state: SynthesisState, study_id: str,
           log_bfs: Mapping[str, float]) -> SynthesisState:
    """Fold one study's log Bayes factors into the running totals.

    ``log_bfs`` must provide exactly the tracked labels; each study id may
    be aggregated once.
    """
    if study_id in state.study_ids:
        raise DuplicateStudyError(f"study {study_id!r} already aggregated")
    if set(log_bfs) != set(state.labels):
        raise LabelMismatchError(
            f"update labels {sorted(log_bfs)} do not match state labels "
            f"{sorted(state.labels)}")
    new_cum = np.array([aggregate_log_bf((cum, float(log_bfs[lab])))
                        for lab, cum in zip(state.labels, state.cum_log_bf)])
    entry = (study_id, {lab: float(log_bfs[lab]) for lab in state.labels})
    return replace(state, cum_log_bf=new_cum,
                   study_count=state.study_count + 1,
                   study_ids=state.study_ids + (study_id,),
                   trail=state.trail + (entry,))


def merge(a: SynthesisState, b: SynthesisState) -> SynthesisState:
    """Combine two partial aggregations over the same labels and priors."""
    if a.labels != b.labels:
        raise LabelMismatchError("states track different labels")
    if not np.array_equal(a.prior_probs, b.prior_probs):
        raise ValueError("states have different priors")
    overlap = set(a.study_ids) & set(b.study_ids)
    if overlap:
        raise DuplicateStudyError(f"studies {sorted(overlap)} present in both states")
    cum = np.array([aggregate_log_bf((x, y))
                    for x, y in zip(a.cum_log_bf, b.cum_log_bf)])
    return SynthesisState(labels=a.labels, prior_probs=a.prior_probs,
                          cum_log_bf=cum,
                          study_count=a.study_count + b.study_count,
                          study_ids=a.study_ids + b.study_ids,
                          trail=a.trail + b.trail)
