"""Desk-scale experiment presets and the oracle verification suite.

Every preset runs on synthetic Gaussian blobs with a linear softmax model,
sized to finish on a single CPU:

``table1``  IID and Dirichlet(0.1) filtering quality, N=100, eps=1.
``fig2``    final-model accuracy, unfiltered vs oracle-filtered vs lazily
            filtered, for a rising share of corrupted participants. Uses a
            500-dimensional task where the linear head can memorise noise.
``fig4``    F1 over a local-epochs x learning-rate grid (IID, eps=1).
``fig6``    recall/precision over participants x epsilon (Dirichlet 0.1).
``custom``  a single cell built from overrides only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lazyfilter.config import apply_overrides
from lazyfilter.data import (
    CorruptionConfig,
    ParticipantRecord,
    corrupt,
    desk_dataset,
    load_csv,
    make_synthetic,
    stratified_split,
)
from lazyfilter.federation import (
    FederationConfig,
    collect_votes,
    filter_and_update,
    final_update,
    prepare,
)
from lazyfilter.influence import OracleConfig, exact_influence, lazy_sign, sign_agreement
from lazyfilter.metrics import compute_metrics, model_accuracy, oracle_accepted
from lazyfilter.model import TrainConfig, fit, linear_model, train
from lazyfilter.privacy import VotePrivacy
from lazyfilter.rng import substream


@dataclass(frozen=True)
class Preset:
    name: str
    axes: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    holdout_fraction: float = 0.0


PRESETS = {
    "custom": Preset("custom"),
    "table1": Preset("table1", axes={"alpha": ["iid", 0.1]}, holdout_fraction=0.1),
    "fig2": Preset(
        "fig2",
        axes={"corrupt_frac": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]},
        overrides={"participants": 50, "final_epochs": 100, "final_lr": 4.0},
        dataset={"dim": 500},
        holdout_fraction=0.2,
    ),
    "fig4": Preset("fig4", axes={"epochs": [1, 3, 5, 7, 9], "lr": [0.5, 1.0, 2.0, 4.0]}),
    "fig6": Preset(
        "fig6",
        axes={"participants": [50, 100, 200], "epsilon": [0.75, 1.0, 2.0]},
        overrides={"alpha": 0.1},
    ),
}

DATASET_DEFAULTS = {"classes": 10, "dim": 20, "separation": 6.0, "headroom": 1.2, "csv": None}


def dataset_factory(settings: dict, extra_fraction: float = 0.0):
    """Build the ``dataset_fn(cfg, seed)`` used by sweeps."""
    s = {**DATASET_DEFAULTS, **settings}
    if s["csv"]:
        loaded = load_csv(s["csv"])
        return lambda cfg, seed: loaded

    def make(cfg: FederationConfig, seed: int):
        return desk_dataset(cfg.partition, seed, s["classes"], s["dim"], s["separation"],
                            s["headroom"], extra_fraction)

    return make


def motivation_run(cfg: FederationConfig, seed: int, dataset_fn, holdout_fraction: float):
    """Final-model accuracy with no filter, a perfect filter, and the lazy filter.

    Returns ``(values, outcome)`` where ``outcome`` is the lazy-filter round.
    """
    cfg = apply_overrides(cfg, {"master_seed": seed})
    data = dataset_fn(cfg, seed)
    holdout, data = stratified_split(data, holdout_fraction, substream(seed, "holdout"))
    _, participants, _, m0, _ = prepare(cfg, data)
    everyone = {p.id for p in participants}
    unfiltered = final_update(m0, participants, everyone, cfg.final_cfg)
    oracle = final_update(m0, participants, oracle_accepted(participants), cfg.final_cfg)
    privacy = {p.id: VotePrivacy(p.privacy_p) for p in participants}
    sums, votes = collect_votes(participants, m0, cfg, privacy)
    outcome = filter_and_update(m0, participants, sums, votes, cfg.final_cfg)
    values = {
        "warmup_accuracy": model_accuracy(m0, holdout),
        "unfiltered_accuracy": model_accuracy(unfiltered, holdout),
        "oracle_accuracy": model_accuracy(oracle, holdout),
        "filtered_accuracy": model_accuracy(outcome.model_after, holdout),
        **compute_metrics(outcome, participants).as_dict(),
    }
    return values, outcome


@dataclass(frozen=True)
class AgreementTrial:
    seed: int
    kind: str
    lazy: int
    oracle: int
    oracle_value: float
    converged: bool


def sign_agreement_trials(
    instances: int = 30,
    seed: int = 0,
    class_count: int = 10,
    dim: int = 20,
    separation: float = 6.0,
    train_size: int = 100,
    batch_size: int = 100,
    test_size: int = 50,
    eval_size: int = 1000,
    lazy_cfg: TrainConfig = TrainConfig(local_epochs=5, learning_rate=2.0),
    oracle_cfg: OracleConfig = OracleConfig(),
) -> list[AgreementTrial]:
    """Lazy sign vs. exact influence sign, one clean and one fully corrupted
    candidate batch per instance."""
    trials = []
    for i in range(instances):
        s = seed * 100_003 + i
        n = train_size + batch_size + test_size + eval_size
        data = make_synthetic(class_count, dim, int(np.ceil(1.5 * n / class_count)), separation, s)
        order = substream(s, "oracle").permutation(len(data))
        cut = np.cumsum([train_size, batch_size, test_size, eval_size])
        train_set = data.subset(order[: cut[0]])
        clean = data.subset(order[cut[0] : cut[1]])
        tester = data.subset(order[cut[1] : cut[2]])
        evaluation = data.subset(order[cut[2] : cut[3]])
        template = linear_model(dim, class_count, bias=False)
        base = fit(template, train_set, oracle_cfg.weight_decay, oracle_cfg.tol, oracle_cfg.max_iter).model
        record = ParticipantRecord(0, clean, tester)
        bad = corrupt([record], CorruptionConfig(1.0, 1.0), class_count, s)[0].train_batch
        for kind, batch in (("clean", clean), ("corrupted", bad)):
            updated = train(base, batch, lazy_cfg)
            res = exact_influence(train_set, batch, template, evaluation, oracle_cfg)
            trials.append(AgreementTrial(s, kind, lazy_sign(tester, base, updated), res.sign,
                                         res.value, res.converged))
    return trials


def verify(instances: int = 30, seed: int = 0) -> dict:
    trials = sign_agreement_trials(instances, seed)
    return {
        "instances": instances,
        "trials": len(trials),
        "agreement": sign_agreement([(t.lazy, t.oracle) for t in trials]),
        "all_converged": all(t.converged for t in trials),
        "detail": [t.__dict__ for t in trials],
    }
