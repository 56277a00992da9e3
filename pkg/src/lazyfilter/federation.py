"""One federated filtering round: warm-up, contributor updates, tester votes,
2-means threshold, filtering and the final model update.

Only two things cross participant boundaries here: a contributor's noised
head update and a tester's released vote. Ground-truth corruption flags are
never consulted; scoring lives in :mod:`lazyfilter.metrics`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from lazyfilter.data import (
    CorruptionConfig,
    Dataset,
    PartitionConfig,
    PartitionReport,
    ParticipantRecord,
    corrupt,
    dirichlet_partition,
    split_warmup,
)
from lazyfilter.errors import InvalidInput, NumericalError, StageError
from lazyfilter.influence import Vote, lazy_sign
from lazyfilter.model import (
    ModelState,
    TrainConfig,
    apply_head_delta,
    fit,
    head_delta,
    linear_model,
    mlp_model,
    train,
)
from lazyfilter.privacy import (
    GradientNoiseConfig,
    VotePrivacy,
    clip_and_noise,
    p_from_epsilon,
    randomized_response,
)
from lazyfilter.rng import substream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FederationConfig:
    partition: PartitionConfig = PartitionConfig()
    corruption: CorruptionConfig = CorruptionConfig()
    train_cfg: TrainConfig = TrainConfig(local_epochs=5, learning_rate=2.0)
    noise_cfg: GradientNoiseConfig = GradientNoiseConfig(clip_threshold=1.0, noise_multiplier=0.05)
    epsilon_target: float = 1.0
    master_seed: int = 0
    rounds: int = 1
    final_cfg: TrainConfig = TrainConfig(local_epochs=100, learning_rate=2.0, freeze_body=False)
    warmup_weight_decay: float = 1e-2
    hidden: int = 0  # 0 selects the linear model
    # no intercept: a shared bias moves every tester's loss the same way and drowns the vote
    bias: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise InvalidInput("rounds must be >= 1")
        if not self.epsilon_target >= 0:
            raise InvalidInput("epsilon_target must be non-negative")
        if self.hidden < 0:
            raise InvalidInput("hidden must be >= 0")

    @property
    def participant_count(self) -> int:
        return self.partition.participant_count

    @property
    def vote_p(self) -> float:
        return p_from_epsilon(self.epsilon_target)


@dataclass
class RoundOutcome:
    vote_sums: dict
    threshold: float
    accepted: set
    rejected: set
    votes: list
    model_after: ModelState
    round_index: int = 0
    degenerate_threshold: bool = False
    all_rejected: bool = False
    warnings: list = field(default_factory=list)

    def true_sums(self) -> dict:
        sums = {i: 0 for i in self.vote_sums}
        for v in self.votes:
            sums[v.contributor_id] += v.true_sign
        return sums

    def model_digest(self) -> str:
        return hashlib.sha256(self.model_after.params.tobytes()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "threshold": self.threshold,
            "degenerate_threshold": self.degenerate_threshold,
            "all_rejected": self.all_rejected,
            "contributors": [
                {"id": i, "vote_sum": s, "accepted": i in self.accepted}
                for i, s in sorted(self.vote_sums.items())
            ],
            "accepted": sorted(self.accepted),
            "rejected": sorted(self.rejected),
            "vote_count": len(self.votes),
            "model_sha256": self.model_digest(),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def votes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["contributor_id", "tester_id", "true_sign", "released_sign"])
        for v in self.votes:
            w.writerow([v.contributor_id, v.tester_id, v.true_sign, v.released_sign])
        return buf.getvalue()


def initial_model(dim: int, class_count: int, cfg: FederationConfig) -> ModelState:
    if cfg.hidden:
        return mlp_model(dim, class_count, cfg.hidden, substream(cfg.master_seed, "warmup_train"), cfg.bias)
    return linear_model(dim, class_count, cfg.bias)


def warmup_model(warmup: Dataset, template: ModelState, weight_decay: float = 1e-2) -> ModelState:
    """Train M_0 to convergence on the center's warm-up data."""
    if len(warmup) == 0:
        raise InvalidInput("empty warm-up set")
    missing = np.flatnonzero(warmup.class_counts() == 0)
    if missing.size:
        warnings.warn(f"warm-up data has no examples of classes {missing.tolist()}", stacklevel=2)
    result = fit(template, warmup, weight_decay=weight_decay)
    if not result.converged:
        log.info("warm-up fit stopped at gradient norm %.3g", result.grad_norm)
    return result.model


def contributor_update(participant: ParticipantRecord, base: ModelState, train_cfg: TrainConfig,
                       noise_cfg: GradientNoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Noised head delta after ``k`` local epochs with the body frozen."""
    if len(participant.train_batch) == 0:
        raise InvalidInput(f"participant {participant.id} has an empty train batch")
    cfg = replace(train_cfg, freeze_body=True)
    try:
        trained = train(base, participant.train_batch, cfg, rng)
    except NumericalError as e:
        raise NumericalError(f"participant {participant.id}: {e}", participant.id) from e
    return clip_and_noise(head_delta(base, trained), noise_cfg, rng)


def tester_vote(tester: ParticipantRecord, base: ModelState, payload, contributor_id: int,
                priv: VotePrivacy, rng: np.random.Generator) -> Vote:
    if tester.id == contributor_id:
        raise InvalidInput("a participant never votes on its own batch")
    updated = apply_head_delta(base, payload)
    true_sign = lazy_sign(tester.test_set, base, updated)
    released = randomized_response(true_sign, priv, contributor_id, rng)
    return Vote(contributor_id, tester.id, true_sign, released)


def two_means(values) -> tuple[float, float, bool]:
    """1-D Lloyd's algorithm with k=2 seeded at (min, max).

    Returns ``(low_center, high_center, degenerate)``; degenerate means all
    values are equal and both centers coincide.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise InvalidInput("2-means needs at least two values")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo, hi, True
    assign = None
    while True:
        # ties go to the low cluster
        new_assign = np.abs(x - hi) < np.abs(x - lo)
        if assign is not None and np.array_equal(new_assign, assign):
            return lo, hi, False
        assign = new_assign
        lo, hi = float(x[~assign].mean()), float(x[assign].mean())


def kmeans_threshold(vote_sums) -> float:
    lo, hi, _ = two_means(vote_sums)
    return (lo + hi) / 2


def decide(vote_sums: dict, threshold: float) -> tuple[set, set]:
    """(accepted, rejected); only sums strictly below ``threshold`` are rejected."""
    rejected = {i for i, s in vote_sums.items() if s < threshold}
    return set(vote_sums) - rejected, rejected


def final_update(base: ModelState, participants, accepted_ids, cfg: TrainConfig) -> ModelState:
    """Train from ``base`` on the pooled train batches of ``accepted_ids``."""
    batches = [p.train_batch for p in participants if p.id in accepted_ids]
    if not batches:
        return base
    return train(base, Dataset.concat(batches), cfg)


def filter_and_update(base: ModelState, participants, vote_sums: dict, votes: list,
                      final_cfg: TrainConfig, round_index: int = 0) -> RoundOutcome:
    lo, hi, degenerate = two_means(list(vote_sums.values()))
    threshold = (lo + hi) / 2
    accepted, rejected = decide(vote_sums, threshold)
    model = final_update(base, participants, accepted, final_cfg)
    out = RoundOutcome(dict(vote_sums), threshold, accepted, rejected, list(votes), model,
                       round_index, degenerate, not accepted)
    if not accepted:
        out.warnings.append("every contributor was rejected; model left unchanged")
    if degenerate:
        out.warnings.append("all vote sums equal; threshold is degenerate")
    return out


def collect_votes(participants, base: ModelState, cfg: FederationConfig, privacy: dict,
                  round_index: int = 0) -> tuple[dict, list]:
    seed = cfg.master_seed
    votes = []
    sums = {}
    for a in participants:
        payload = contributor_update(a, base, cfg.train_cfg, cfg.noise_cfg,
                                     substream(seed, "contributor", round_index, a.id))
        total = 0
        for b in participants:
            if b.id == a.id:
                continue
            v = tester_vote(b, base, payload, a.id, privacy[b.id],
                            substream(seed, "tester", round_index, b.id, a.id))
            votes.append(v)
            total += v.released_sign
        sums[a.id] = total
    return sums, votes


@dataclass
class Simulation:
    """Everything a round produced, including the ground-truth participant records."""

    participants: list
    warmup: Dataset
    initial_model: ModelState
    partition_report: PartitionReport
    outcomes: list

    @property
    def outcome(self) -> RoundOutcome:
        return self.outcomes[-1]


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


def prepare(cfg: FederationConfig, dataset: Dataset):
    """Warm-up split, partition, corruption and M_0 for one simulation."""
    seed = cfg.master_seed
    with stage("partition"):
        warmup, pool = split_warmup(dataset, cfg.partition, seed)
        participants, report = dirichlet_partition(pool, cfg.partition, seed)
    with stage("corrupt"):
        participants = corrupt(participants, cfg.corruption, dataset.class_count, seed)
    p = cfg.vote_p
    participants = [replace(x, privacy_p=p) for x in participants]
    with stage("warmup"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        template = initial_model(dataset.dim, dataset.class_count, cfg)
        m0 = warmup_model(warmup, template, cfg.warmup_weight_decay)
    return warmup, participants, report, m0, [str(w.message) for w in caught]


def simulate(cfg: FederationConfig, dataset: Dataset) -> Simulation:
    warmup, participants, report, model, notes = prepare(cfg, dataset)
    privacy = {x.id: VotePrivacy(x.privacy_p) for x in participants}
    outcomes = []
    m0 = model
    for t in range(cfg.rounds):
        with stage("vote"):
            sums, votes = collect_votes(participants, model, cfg, privacy, t)
        with stage("filter"):
            outcome = filter_and_update(model, participants, sums, votes, cfg.final_cfg, t)
        outcome.warnings[:0] = notes
        outcomes.append(outcome)
        model = outcome.model_after
    return Simulation(participants, warmup, m0, report, outcomes)


def run_round(cfg: FederationConfig, dataset: Dataset) -> RoundOutcome:
    return simulate(cfg, dataset).outcome
