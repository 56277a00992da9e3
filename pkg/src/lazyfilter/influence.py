"""Lazy influence sign and the exact (retraining) influence oracle."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from lazyfilter.errors import ArchitectureMismatch, InvalidInput
from lazyfilter.model import ModelState, as_arrays, empirical_risk, fit, per_example_losses


@dataclass(frozen=True)
class Vote:
    contributor_id: int
    tester_id: int
    true_sign: int
    released_sign: int


@dataclass(frozen=True)
class InfluenceOracleResult:
    value: float
    sign: int
    converged: bool
    risk_without: float
    risk_with: float


@dataclass(frozen=True)
class OracleConfig:
    """How "full training" is done for the exact influence."""

    weight_decay: float = 1e-2
    tol: float = 1e-6
    max_iter: int = 10_000


def sign_of(value: float) -> int:
    # zero counts as +1: a neutral update is no evidence against the batch
    return 1 if value >= 0 else -1


def lazy_sign(test_set, base: ModelState, updated: ModelState) -> int:
    """+1 if the update does not raise the summed test loss, else -1."""
    if not base.same_layout(updated):
        raise ArchitectureMismatch("base and updated models differ in layout")
    X, y = as_arrays(test_set)
    if len(y) == 0:
        raise InvalidInput("empty test set")
    # math.fsum keeps the sum exact, so the sign cannot depend on point order
    diffs = per_example_losses(base, (X, y)) - per_example_losses(updated, (X, y))
    return sign_of(math.fsum(diffs.tolist()))


def exact_influence(
    train_set,
    candidate_batch,
    model_template: ModelState,
    eval_set,
    cfg: OracleConfig = OracleConfig(),
    cancel: threading.Event | None = None,
) -> InfluenceOracleResult:
    """Risk drop on ``eval_set`` from retraining with ``candidate_batch`` added.

    Both models are trained from ``model_template`` to convergence on the
    ridge-regularised risk; the value is positive when the batch helps.
    """
    Xt, yt = as_arrays(train_set)
    Xc, yc = as_arrays(candidate_batch)
    if len(yt) == 0 or len(yc) == 0:
        raise InvalidInput("train set and candidate batch must be non-empty")
    if model_template.arch.hidden:
        raise InvalidInput("exact influence needs the convex linear model")
    without = fit(model_template, (Xt, yt), cfg.weight_decay, cfg.tol, cfg.max_iter)
    if cancel is not None and cancel.is_set():
        raise InterruptedError("exact influence cancelled")
    both = (np.concatenate([Xt, Xc]), np.concatenate([yt, yc]))
    with_ = fit(model_template, both, cfg.weight_decay, cfg.tol, cfg.max_iter)
    r0 = empirical_risk(without.model, eval_set)
    r1 = empirical_risk(with_.model, eval_set)
    value = r0 - r1
    return InfluenceOracleResult(value, sign_of(value), without.converged and with_.converged, r0, r1)


def sign_agreement(trials) -> float:
    trials = list(trials)
    if not trials:
        raise InvalidInput("no trials")
    return sum(1 for a, b in trials if a == b) / len(trials)
