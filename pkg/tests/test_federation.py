import ast
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import lazyfilter.federation as federation
from lazyfilter.config import apply_overrides
from lazyfilter.data import ParticipantRecord, desk_dataset, make_synthetic
from lazyfilter.errors import InvalidInput, NumericalError, StageError
from lazyfilter.federation import (
    FederationConfig,
    collect_votes,
    contributor_update,
    decide,
    filter_and_update,
    kmeans_threshold,
    prepare,
    run_round,
    simulate,
    two_means,
    warmup_model,
)
from lazyfilter.metrics import model_accuracy
from lazyfilter.model import LabeledExample, TrainConfig, head_delta, linear_model, train
from lazyfilter.privacy import GradientNoiseConfig, VotePrivacy


def small_cfg(**overrides):
    base = {"participants": 10, "train_batch": 40, "test_size": 20, "master_seed": 3}
    return apply_overrides(FederationConfig(), {**base, **overrides})


def dataset_for(cfg, seed=0):
    return desk_dataset(cfg.partition, seed)


@pytest.fixture(scope="module")
def small_run():
    cfg = small_cfg()
    return cfg, simulate(cfg, dataset_for(cfg))


# --- k-means threshold -----------------------------------------------------

def test_threshold_examples():
    assert kmeans_threshold([-10, -10, 10, 10]) == 0.0
    assert two_means([-5, -4, 6, 7])[:2] == (-4.5, 6.5)
    assert kmeans_threshold([-5, -4, 6, 7]) == 1.0
    assert two_means([3, 3, 3]) == (3.0, 3.0, True)
    assert kmeans_threshold([3, 3, 3]) == 3.0


def test_threshold_needs_two_values():
    with pytest.raises(InvalidInput):
        kmeans_threshold([4])


def test_lloyd_moves_past_initial_centres():
    # min/max seeding puts 10 alone, Lloyd pulls 2 into the upper cluster
    lo, hi, _ = two_means([0, 0, 1, 2, 10])
    assert (lo, hi) == (0.75, 10.0)
    lo, hi, _ = two_means([0, 8, 9, 10])
    assert (lo, hi) == (0.0, 9.0)


@given(st.lists(st.integers(-99, 99), min_size=2, max_size=60))
def test_threshold_lies_between_extremes_and_is_order_free(sums):
    t = kmeans_threshold(sums)
    assert min(sums) <= t <= max(sums)
    assert kmeans_threshold(sorted(sums, reverse=True)) == pytest.approx(t, abs=1e-12)


# --- filtering --------------------------------------------------------------

def batch_participants(n, dim=2, C=2):
    data = make_synthetic(C, dim, 10 * n, 4.0, seed=0)
    return [ParticipantRecord(i, data.subset(range(10 * i, 10 * i + 10)), data.subset([0])) for i in range(n)]


def test_strictly_below_threshold_is_rejected():
    parts = batch_participants(2)
    out = filter_and_update(linear_model(2, 2), parts, {0: -3, 1: 5}, [], TrainConfig(1, 0.1, False))
    assert out.threshold == 1.0
    assert out.rejected == {0} and out.accepted == {1}
    parts = batch_participants(3)
    out = filter_and_update(linear_model(2, 2), parts, {0: -2, 1: 0, 2: 2}, [], TrainConfig(1, 0.1, False))
    # centres -1 and 2 after Lloyd, threshold 0.5; the middle sum sits below it
    assert out.rejected == {0, 1}


def test_sum_on_threshold_is_accepted():
    assert decide({1: -3, 2: 5}, 0.0) == ({2}, {1})
    assert decide({1: -3, 2: 0, 3: 5}, 0.0) == ({2, 3}, {1})


def test_equidistant_sum_joins_the_low_cluster():
    parts = batch_participants(3)
    out = filter_and_update(linear_model(2, 2), parts, {0: -4, 1: 0, 2: 4}, [], TrainConfig(1, 0.1, False))
    assert out.threshold == 1.0
    assert out.accepted == {2} and out.rejected == {0, 1}


def test_degenerate_round_accepts_everyone():
    parts = batch_participants(3)
    m = linear_model(2, 2)
    out = filter_and_update(m, parts, {0: 2, 1: 2, 2: 2}, [], TrainConfig(1, 0.1, False))
    assert out.degenerate_threshold and out.accepted == {0, 1, 2}
    assert not out.all_rejected and out.model_after != m


def test_contributor_payload_is_the_clipped_delta(small_run):
    cfg, sim = small_run
    p = sim.participants[0]
    no_noise = GradientNoiseConfig(clip_threshold=1e9, noise_multiplier=0.0)
    payload = contributor_update(p, sim.initial_model, cfg.train_cfg, no_noise, np.random.default_rng(0))
    expected = head_delta(sim.initial_model, train(sim.initial_model, p.train_batch, cfg.train_cfg))
    assert np.array_equal(payload, expected)
    tight = GradientNoiseConfig(clip_threshold=1e-3, noise_multiplier=0.0)
    clipped = contributor_update(p, sim.initial_model, cfg.train_cfg, tight, np.random.default_rng(0))
    assert np.linalg.norm(clipped) == pytest.approx(1e-3)


def test_payload_is_head_sized_and_deterministic(small_run):
    cfg, sim = small_run
    p, m0 = sim.participants[1], sim.initial_model
    a = contributor_update(p, m0, cfg.train_cfg, cfg.noise_cfg, np.random.default_rng(5))
    b = contributor_update(p, m0, cfg.train_cfg, cfg.noise_cfg, np.random.default_rng(5))
    assert a.shape == m0.head.shape
    assert np.array_equal(a, b)


def test_payload_is_last_layer_only_for_mlp():
    cfg = small_cfg(hidden=8)
    sim = simulate(cfg, dataset_for(cfg))
    m0 = sim.initial_model
    payload = contributor_update(sim.participants[0], m0, cfg.train_cfg, cfg.noise_cfg, np.random.default_rng(0))
    assert payload.size == m0.head.size < m0.params.size


def test_training_failure_names_the_participant(small_run):
    cfg, sim = small_run
    p = sim.participants[2]
    huge = replace(p, train_batch=p.train_batch.with_labels(p.train_batch.y))
    bad = TrainConfig(local_epochs=3, learning_rate=1e308)
    with pytest.raises(NumericalError) as err, np.errstate(all="ignore"):
        contributor_update(huge, sim.initial_model.with_params(sim.initial_model.params * 1e300), bad,
                           cfg.noise_cfg, np.random.default_rng(0))
    assert err.value.participant_id == p.id


def test_zero_payload_votes_plus_one_and_no_noise_releases_truth(small_run):
    _, sim = small_run
    a, b = sim.participants[:2]
    zero = np.zeros_like(sim.initial_model.head)
    vote = federation.tester_vote(b, sim.initial_model, zero, a.id, VotePrivacy(0.0), np.random.default_rng(0))
    assert vote.true_sign == vote.released_sign == 1
    assert (vote.contributor_id, vote.tester_id) == (a.id, b.id)
    with pytest.raises(InvalidInput):
        federation.tester_vote(a, sim.initial_model, zero, a.id, VotePrivacy(0.0), np.random.default_rng(0))


# --- full round -------------------------------------------------------------

def test_outcome_invariants(small_run):
    cfg, sim = small_run
    out = sim.outcome
    n = cfg.participant_count
    ids = {p.id for p in sim.participants}
    assert len(out.votes) == n * (n - 1)
    assert all(v.contributor_id != v.tester_id for v in out.votes)
    assert out.accepted | out.rejected == ids and not out.accepted & out.rejected
    for i, s in out.vote_sums.items():
        assert s == sum(v.released_sign for v in out.votes if v.contributor_id == i)
        assert abs(s) <= n - 1
        assert (s < out.threshold) == (i in out.rejected)


def test_hundred_participants_get_ninety_nine_votes_each():
    cfg = apply_overrides(FederationConfig(), {"train_batch": 10, "test_size": 5})
    data = desk_dataset(cfg.partition, 0)
    _, parts, _, m0, _ = prepare(cfg, data)
    privacy = {p.id: VotePrivacy(p.privacy_p) for p in parts}
    sums, votes = collect_votes(parts, m0, cfg, privacy)
    assert len(votes) == 100 * 99
    counts = np.bincount([v.contributor_id for v in votes])
    assert counts.tolist() == [99] * 100


def test_clean_run_without_noise_accepts_everyone():
    cfg = small_cfg(corrupt_frac=0.0, epsilon="inf", sigma=0.0)
    out = run_round(cfg, dataset_for(cfg))
    assert out.rejected == set()


def test_same_seed_same_outcome(small_run):
    cfg, sim = small_run
    again = run_round(cfg, dataset_for(cfg))
    assert again.to_json() == sim.outcome.to_json()
    assert again.votes_csv() == sim.outcome.votes_csv()
    assert again.model_after == sim.outcome.model_after


def test_different_seed_different_votes(small_run):
    cfg, sim = small_run
    other = run_round(replace(cfg, master_seed=99), dataset_for(cfg))
    assert other.votes_csv() != sim.outcome.votes_csv()


def test_corrupted_contributors_collect_fewer_true_votes():
    gaps = []
    for seed in range(3):
        cfg = small_cfg(participants=20, epsilon="inf", master_seed=seed)
        sim = simulate(cfg, dataset_for(cfg, seed))
        sums = sim.outcome.true_sums()
        bad = [sums[p.id] for p in sim.participants if p.is_corrupted]
        good = [sums[p.id] for p in sim.participants if not p.is_corrupted]
        gaps.append(np.mean(good) - np.mean(bad))
    assert min(gaps) > 0


def test_warmup_model_beats_chance():
    cfg = small_cfg()
    sim = simulate(cfg, dataset_for(cfg))
    holdout = make_synthetic(10, 20, 50, 6.0, seed=123)
    assert model_accuracy(sim.initial_model, holdout) > 0.1


def test_warmup_edge_cases():
    m = linear_model(2, 3)
    empty = make_synthetic(3, 2, 1, 1.0, 0).subset([])
    with pytest.raises(InvalidInput):
        warmup_model(empty, m)
    two_classes = make_synthetic(3, 2, 5, 4.0, 0)
    two_classes = two_classes.subset(np.flatnonzero(two_classes.y < 2))
    with pytest.warns(UserWarning, match="no examples of classes"):
        warmup_model(two_classes, m)


def test_multi_round_reuses_memo_and_chains_models():
    cfg = small_cfg(rounds=2)
    sim = simulate(cfg, dataset_for(cfg))
    first, second = sim.outcomes
    assert second.round_index == 1
    assert first.model_after != second.model_after


def test_stage_failures_are_named():
    cfg = small_cfg(participants=500)
    tiny = make_synthetic(10, 20, 10, 6.0, 0)
    with pytest.raises(StageError) as err:
        simulate(cfg, tiny)
    assert err.value.stage == "partition"


def test_outcome_json_shape(small_run):
    _, sim = small_run
    doc = json.loads(sim.outcome.to_json())
    assert set(doc) >= {"threshold", "accepted", "rejected", "contributors", "vote_count", "model_sha256"}
    assert sim.outcome.votes_csv().splitlines()[0] == "contributor_id,tester_id,true_sign,released_sign"


def test_federation_never_reads_ground_truth():
    source = Path(federation.__file__).read_text()
    tree = ast.parse(source)
    names = {n.attr for n in ast.walk(tree) if isinstance(n, ast.Attribute)}
    names |= {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}
    assert "is_corrupted" not in names
    assert "is_corrupted" not in source


def test_config_validation():
    with pytest.raises(InvalidInput):
        FederationConfig(rounds=0)
    with pytest.raises(InvalidInput):
        FederationConfig(epsilon_target=-1.0)
    assert FederationConfig().vote_p == pytest.approx(0.75508, abs=1e-5)


def test_examples_iterate_as_labeled_examples(small_run):
    _, sim = small_run
    first = next(iter(sim.participants[0].train_batch))
    assert isinstance(first, LabeledExample) and first.features.shape == (20,)
