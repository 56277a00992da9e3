"""Filtration quality, model accuracy and multi-seed sweeps.

This is the only module that reads the ground-truth corruption flags.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from lazyfilter.config import apply_overrides
from lazyfilter.data import desk_dataset, stratified_split
from lazyfilter.errors import InvalidInput
from lazyfilter.federation import FederationConfig, simulate
from lazyfilter.model import ModelState, predict
from lazyfilter.rng import substream

log = logging.getLogger(__name__)

METRIC_FIELDS = ("recall", "precision", "accuracy", "f1")


@dataclass(frozen=True)
class FiltrationMetrics:
    """Positive class = corrupted batch; a positive prediction = rejected."""

    recall: float
    precision: float
    accuracy: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    # set when a ratio had a zero denominator and fell back to 1.0
    degenerate: tuple = ()

    @classmethod
    def from_confusion(cls, tp: int, fp: int, tn: int, fn: int) -> "FiltrationMetrics":
        total = tp + fp + tn + fn
        if total == 0:
            raise InvalidInput("empty confusion matrix")
        degenerate = []
        if tp + fn:
            recall = tp / (tp + fn)
        else:
            recall = 1.0
            degenerate.append("recall")
        if tp + fp:
            precision = tp / (tp + fp)
        else:
            precision = 1.0
            degenerate.append("precision")
        f1 = 0.0 if recall + precision == 0 else 2 * recall * precision / (recall + precision)
        return cls(recall, precision, (tp + tn) / total, f1, tp, fp, tn, fn, tuple(degenerate))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def compute_metrics(outcome, participants) -> FiltrationMetrics:
    decided = outcome.accepted | outcome.rejected
    truth = {p.id: p.is_corrupted for p in participants}
    if set(truth) != decided:
        raise InvalidInput("decisions do not cover exactly the participants")
    tp = sum(1 for i in outcome.rejected if truth[i])
    fp = len(outcome.rejected) - tp
    fn = sum(1 for i in outcome.accepted if truth[i])
    tn = len(outcome.accepted) - fn
    return FiltrationMetrics.from_confusion(tp, fp, tn, fn)


def oracle_accepted(participants) -> set:
    """Ids a perfect filter would keep (used for the oracle-filtered baseline)."""
    return {p.id for p in participants if not p.is_corrupted}


def model_accuracy(model: ModelState, eval_set) -> float:
    if len(eval_set) == 0:
        raise InvalidInput("empty evaluation set")
    return float(np.mean(predict(model, eval_set) == eval_set.y))


@dataclass
class SweepCell:
    params: dict
    runs: list = field(default_factory=list)  # (seed, {metric: value})
    failures: list = field(default_factory=list)  # (seed, message)

    def values(self, metric: str) -> np.ndarray:
        return np.array([m[metric] for _, m in self.runs], dtype=np.float64)

    def mean(self, metric: str) -> float:
        v = self.values(metric)
        return float(v.mean()) if v.size else math.nan

    def std(self, metric: str) -> float:
        # population std so a single run reports 0
        v = self.values(metric)
        return float(v.std()) if v.size else math.nan

    @property
    def metrics(self) -> list:
        return list(self.runs[0][1]) if self.runs else []

    def summary(self) -> dict:
        return {
            "params": self.params,
            "runs": len(self.runs),
            "seeds": [s for s, _ in self.runs],
            "mean": {k: self.mean(k) for k in self.metrics},
            "std": {k: self.std(k) for k in self.metrics},
            "failures": [{"seed": s, "error": e} for s, e in self.failures],
        }


@dataclass
class SweepResult:
    axes: dict
    cells: list

    def __iter__(self):
        return iter(self.cells)

    def cell(self, **params) -> SweepCell:
        for c in self.cells:
            if all(c.params.get(k) == v for k, v in params.items()):
                return c
        raise KeyError(params)

    def summary(self) -> dict:
        return {"axes": self.axes, "cells": [c.summary() for c in self.cells]}


def grid(axes: dict) -> list[dict]:
    names = list(axes)
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]


def run_once(cfg: FederationConfig, seed: int, dataset_fn=None, holdout_fraction: float = 0.0):
    """One seeded simulation; returns (simulation, metrics dict)."""
    cfg = apply_overrides(cfg, {"master_seed": seed})
    if dataset_fn is None:
        data = default_dataset(cfg, seed, holdout_fraction)
    else:
        data = dataset_fn(cfg, seed)
    holdout = None
    if holdout_fraction > 0:
        holdout, data = stratified_split(data, holdout_fraction, substream(seed, "holdout"))
    sim = simulate(cfg, data)
    values = compute_metrics(sim.outcome, sim.participants).as_dict()
    if holdout is not None:
        values["model_accuracy"] = model_accuracy(sim.outcome.model_after, holdout)
    return sim, values


def default_dataset(cfg: FederationConfig, seed: int, holdout_fraction: float = 0.0):
    return desk_dataset(cfg.partition, seed, extra_fraction=holdout_fraction)


def sweep(base_cfg: FederationConfig, axes: dict, runs_per_cell: int = 8, seeds=None,
          dataset_fn=None, holdout_fraction: float = 0.0, on_run=None) -> SweepResult:
    """Run every grid cell once per seed and keep per-run metrics.

    ``axes`` maps flat config keys (see :mod:`lazyfilter.config`) to value
    lists. A failing run is recorded against its cell and skipped.
    """
    if not axes:
        axes = {}
    seeds = list(seeds) if seeds is not None else list(range(runs_per_cell))
    if not seeds:
        raise InvalidInput("no seeds")
    cells = []
    for params in grid(axes):
        cfg = apply_overrides(base_cfg, params)
        cell = SweepCell(params)
        for seed in seeds:
            try:
                sim, values = run_once(cfg, seed, dataset_fn, holdout_fraction)
            except Exception as e:  # noqa: BLE001 - recorded, sweep continues
                log.warning("cell %s seed %s failed: %s", params, seed, e)
                cell.failures.append((seed, f"{type(e).__name__}: {e}"))
                continue
            cell.runs.append((seed, values))
            if on_run is not None:
                on_run(params, seed, sim, values)
        cells.append(cell)
    return SweepResult({k: list(v) for k, v in axes.items()}, cells)


def pooled_std(a: SweepCell, b: SweepCell, metric: str) -> float:
    return math.sqrt((a.std(metric) ** 2 + b.std(metric) ** 2) / 2)


def non_decreasing_within_std(cells, metric: str = "recall") -> bool:
    """True if each consecutive mean drops by at most one pooled std."""
    return all(
        b.mean(metric) >= a.mean(metric) - pooled_std(a, b, metric)
        for a, b in zip(cells, cells[1:])
    )
