import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lazyfilter.data import CorruptionConfig, ParticipantRecord, corrupt, make_synthetic
from lazyfilter.errors import ArchitectureMismatch, InvalidInput
from lazyfilter.influence import (
    OracleConfig,
    exact_influence,
    lazy_sign,
    sign_agreement,
    sign_of,
)
from lazyfilter.model import TrainConfig, fit, linear_model, mlp_model, train
from lazyfilter.rng import substream


def split(seed, sizes, C=10, d=20, sep=6.0):
    data = make_synthetic(C, d, int(np.ceil(1.5 * sum(sizes) / C)), sep, seed)
    order = substream(seed, "oracle").permutation(len(data))
    cuts = np.cumsum([0, *sizes])
    return [data.subset(order[a:b]) for a, b in zip(cuts, cuts[1:])]


def test_tie_rule():
    assert sign_of(0.0) == 1 and sign_of(-0.0) == 1 and sign_of(-1e-300) == -1


def test_identical_models_vote_plus_one(blobs):
    m = linear_model(blobs.dim, 3).with_params(np.arange(15.0) / 10)
    assert lazy_sign(blobs, m, m) == 1


def test_update_that_lowers_every_loss_votes_plus_one(blobs):
    m = linear_model(blobs.dim, 3)
    better = train(m, blobs, TrainConfig(local_epochs=3, learning_rate=0.5))
    assert lazy_sign(blobs, m, better) == 1
    assert lazy_sign(blobs, better, m) == -1


def test_lazy_sign_errors(blobs):
    m = linear_model(blobs.dim, 3)
    with pytest.raises(InvalidInput):
        lazy_sign([], m, m)
    with pytest.raises(ArchitectureMismatch):
        lazy_sign(blobs, m, linear_model(blobs.dim, 3, bias=False))


@given(st.integers(0, 10_000))
def test_lazy_sign_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(15, 3)), rng.integers(0, 3, 15)
    a = linear_model(3, 3).with_params(rng.normal(size=12))
    b = a.with_params(a.params + rng.normal(0, 1e-3, 12))
    perm = rng.permutation(15)
    assert lazy_sign((X, y), a, b) == lazy_sign((X[perm], y[perm]), a, b)


@given(st.integers(0, 10_000))
def test_lazy_sign_of_a_model_against_itself(seed):
    rng = np.random.default_rng(seed)
    m = linear_model(2, 4).with_params(rng.normal(0, 10, 12))
    assert lazy_sign((rng.normal(size=(5, 2)), rng.integers(0, 4, 5)), m, m) == 1


def test_clean_and_mislabelled_batches_get_opposite_signs():
    hits = 0
    for seed in range(8):
        train_set, batch, tests = split(seed, [100, 100, 50])
        base = fit(linear_model(20, 10, bias=False), train_set, 1e-2).model
        bad = corrupt([ParticipantRecord(0, batch, tests)], CorruptionConfig(1.0, 0.9), 10, seed)[0]
        cfg = TrainConfig(local_epochs=5, learning_rate=2.0)
        clean_sign = lazy_sign(tests, base, train(base, batch, cfg))
        bad_sign = lazy_sign(tests, base, train(base, bad.train_batch, cfg))
        hits += (clean_sign == 1) + (bad_sign == -1)
    assert hits / 16 >= 0.9


def test_duplicated_points_have_near_zero_influence():
    train_set, evaluation = split(1, [200, 500], C=3, d=5, sep=8.0)
    template = linear_model(5, 3, bias=False)
    res = exact_influence(train_set, train_set, template, evaluation, OracleConfig(weight_decay=0.0))
    assert res.converged
    assert abs(res.value) < 1e-3


@pytest.mark.parametrize("seed", range(8))
def test_oracle_signs_for_clean_and_mislabelled_batches(seed):
    train_set, batch, evaluation = split(seed, [100, 100, 1000])
    template = linear_model(20, 10, bias=False)
    clean = exact_influence(train_set, batch, template, evaluation)
    bad_batch = batch.with_labels((batch.y + 1 + substream(seed, "corrupt").integers(0, 9, len(batch))) % 10)
    bad = exact_influence(train_set, bad_batch, template, evaluation)
    assert clean.converged and bad.converged
    assert clean.value >= 0 and clean.sign == 1
    assert bad.value <= 0 and bad.sign == -1
    assert clean.value == pytest.approx(clean.risk_without - clean.risk_with)


def test_oracle_rejects_non_convex_and_empty_inputs(blobs):
    with pytest.raises(InvalidInput):
        exact_influence(blobs, blobs, mlp_model(blobs.dim, 3, 4, np.random.default_rng(0)), blobs)
    with pytest.raises(InvalidInput):
        exact_influence([], blobs, linear_model(blobs.dim, 3), blobs)


def test_oracle_can_be_cancelled(blobs):
    stop = threading.Event()
    stop.set()
    with pytest.raises(InterruptedError):
        exact_influence(blobs, blobs, linear_model(blobs.dim, 3), blobs, cancel=stop)


def test_sign_agreement_examples():
    assert sign_agreement([(1, 1), (-1, -1)]) == 1.0
    assert sign_agreement([(1, -1), (-1, 1)]) == 0.0
    assert sign_agreement([(1, 1), (1, 1), (-1, -1), (1, -1)]) == 0.75
    with pytest.raises(InvalidInput):
        sign_agreement([])
