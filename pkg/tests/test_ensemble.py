import json
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from balens.classifier import ClassifierSpec, TrainConfig, TrainedUnit, predict_proba_batch, train
from balens.dataset import split_by_user, SplitSpec
from balens.ensemble import (
    HEALTHY_LABEL,
    POSITIVE_LABEL,
    EnsembleSuite,
    PredictionBatch,
    ReferralPolicy,
    derive_seed,
    fuse_majority,
    fuse_probability,
    load_suite,
    predict,
    predict_batch,
    prediction_from_probs,
    save_suite,
    train_suite,
    uncertainty,
    write_predictions,
)
from balens.errors import ConfigError, DataError
from balens.resampling import BagPlan, down_sample

probs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=25)


def test_fusion_examples():
    assert fuse_probability([0.2, 0.4, 0.9]) == pytest.approx(0.5, abs=1e-15)
    assert uncertainty([0.3, 0.3, 0.3]) == 0.0
    assert uncertainty([0.0, 1.0]) == 0.5
    assert uncertainty([0.05, 0.95, 0.05, 0.95]) == pytest.approx(0.45, abs=1e-12)


def test_majority_vote():
    assert fuse_majority([0.9, 0.8, 0.1]) == POSITIVE_LABEL
    assert fuse_majority([0.9, 0.2, 0.1]) == HEALTHY_LABEL
    # 2-2 tie: mean 0.525 decides
    assert fuse_majority([0.9, 0.8, 0.2, 0.2]) == POSITIVE_LABEL
    assert fuse_majority([0.6, 0.6, 0.1, 0.1]) == HEALTHY_LABEL
    # exactly 0.5 is not a positive vote
    assert fuse_majority([0.5, 0.5, 0.9]) == HEALTHY_LABEL
    np.testing.assert_array_equal(fuse_majority([[0.9, 0.8, 0.1], [0.1, 0.1, 0.9]]), [True, False])


@given(probs)
def test_fusion_against_statistics_module(p):
    assert fuse_probability(p) == pytest.approx(statistics.fmean(p), abs=1e-12)
    assert uncertainty(p) == pytest.approx(statistics.pstdev(p), abs=1e-9)


@given(probs, st.randoms(use_true_random=False))
def test_fusion_permutation_invariant(p, r):
    q = list(p)
    r.shuffle(q)
    assert fuse_probability(q) == pytest.approx(fuse_probability(p), abs=1e-15)
    assert uncertainty(q) == pytest.approx(uncertainty(p), abs=1e-12)
    assert fuse_majority(q) == fuse_majority(p)


@given(probs)
def test_fusion_bounds(p):
    mu = fuse_probability(p)
    s = uncertainty(p)
    assert min(p) - 1e-15 <= mu <= max(p) + 1e-15
    assert 0.0 <= s <= 0.5 + 1e-15
    if len(set(p)) == 1:
        assert s == pytest.approx(0.0, abs=1e-15)


@given(probs)
def test_majority_matches_brute_force(p):
    yes = sum(1 for v in p if v > 0.5)
    no = len(p) - yes
    want = yes > no if yes != no else statistics.fmean(p) > 0.5
    assert (fuse_majority(p) == POSITIVE_LABEL) == want


def test_fusion_rejects_bad_input():
    for bad in ([], [0.2, 1.2], [float("nan")]):
        with pytest.raises(ValueError):
            fuse_probability(bad)


def test_prediction_referral_rules():
    p = prediction_from_probs([0.05, 0.95, 0.05, 0.95], ReferralPolicy(0.12))
    assert p.uncertainty == pytest.approx(0.45)
    assert p.referred and p.escalation == "repeat-audio-test"
    assert p.decision == HEALTHY_LABEL  # mean is exactly 0.5
    q = prediction_from_probs([0.7, 0.72, 0.69], ReferralPolicy(0.12))
    assert q.decision == POSITIVE_LABEL and not q.referred and q.escalation is None
    # sigma equal to the threshold is not referred
    r = prediction_from_probs([0.4, 0.6], ReferralPolicy(0.1))
    assert r.uncertainty == pytest.approx(0.1) and r.referred == (r.uncertainty > 0.1)
    assert prediction_from_probs([0.4, 0.6], ReferralPolicy(0.0)).referred


def test_policy_validation():
    with pytest.raises(ConfigError):
        ReferralPolicy(-0.1)


def test_derive_seed_is_stable():
    assert derive_seed(3, 1) == derive_seed(3, 1)
    assert len({derive_seed(3, i) for i in range(50)}) == 50
    assert derive_seed(3, 1) != derive_seed(4, 1)


@pytest.fixture(scope="module")
def split(small_data):
    return split_by_user(small_data, SplitSpec(0.1, 0.2, 5))


SPEC = ClassifierSpec(4, "mlp_head", 8)
CFG = TrainConfig(learning_rate=1e-3, max_epochs=6, seed=0)


@pytest.fixture(scope="module")
def suite(split):
    return train_suite(split.train, split.validation, BagPlan(4, 11), SPEC, CFG)


def test_suite_shape_and_seeds(suite, split):
    assert len(suite) == 4
    assert suite.unit_seeds == tuple(derive_seed(11, i) for i in (1, 2, 3, 4))
    assert all(u.config.seed == s for u, s in zip(suite.units, suite.unit_seeds))
    assert len(suite.bag_ids) == 4


def test_suite_deterministic_and_worker_invariant(suite, split, backend):
    other = train_suite(split.train, split.validation, BagPlan(4, 11), SPEC, CFG, workers=3, backend=backend)
    for a, b in zip(suite.units, other.units):
        np.testing.assert_allclose(a.parameters, b.parameters, rtol=1e-8, atol=1e-10)
    same = train_suite(split.train, split.validation, BagPlan(4, 11), SPEC, CFG, workers=4)
    for a, b in zip(suite.units, same.units):
        assert a.parameters.tobytes() == b.parameters.tobytes()


def test_single_bag_suite_equals_down_sample_model(split):
    one = train_suite(split.train, split.validation, BagPlan(1, 21), SPEC, CFG)
    alone = train(SPEC, TrainConfig(1e-3, max_epochs=6, seed=derive_seed(21, 1)),
                  down_sample(split.train, 21), split.validation)
    assert one.units[0].parameters.tobytes() == alone.parameters.tobytes()
    batch = predict_batch(one, split.test)
    np.testing.assert_array_equal(batch.uncertainty, 0.0)
    np.testing.assert_array_equal(batch.mean_prob, predict_proba_batch(alone, split.test.features))


def test_predict_batch_matches_units(suite, split):
    batch = predict_batch(suite, split.test, ReferralPolicy(0.01))
    assert isinstance(batch, PredictionBatch) and len(batch) == len(split.test)
    P = np.column_stack([predict_proba_batch(u, split.test.features) for u in suite.units])
    np.testing.assert_array_equal(batch.unit_probs, P)
    np.testing.assert_allclose(batch.mean_prob, P.mean(axis=1), atol=1e-15)
    np.testing.assert_allclose(batch.uncertainty, P.std(axis=1), atol=1e-12)
    np.testing.assert_array_equal(batch.referred, batch.uncertainty > 0.01)
    one = predict(suite, split.test.features[3], ReferralPolicy(0.01))
    # a single row may go through a different BLAS path than the full matrix
    assert one.mean_prob == pytest.approx(batch[3].mean_prob, abs=1e-15)
    np.testing.assert_allclose(one.unit_probs, batch[3].unit_probs, atol=1e-15)
    assert batch[3].id == split.test.ids[3]


def test_predict_dimension_mismatch(suite):
    with pytest.raises(DataError, match="dimension mismatch"):
        predict(suite, [1.0, 2.0])


def test_threshold_zero_refers_all_disagreement(suite, split):
    batch = predict_batch(suite, split.test, ReferralPolicy(0.0))
    assert batch.referred.all()


def test_suite_round_trip(tmp_path, suite, split):
    save_suite(suite, tmp_path / "s")
    back = load_suite(tmp_path / "s")
    assert back.unit_seeds == suite.unit_seeds and back.bag_ids == suite.bag_ids and back.plan == suite.plan
    a = predict_batch(suite, split.test)
    b = predict_batch(back, split.test)
    assert a.mean_prob.tobytes() == b.mean_prob.tobytes()
    assert a.uncertainty.tobytes() == b.uncertainty.tobytes()


def test_corrupt_suite_rejected(tmp_path, suite):
    save_suite(suite, tmp_path / "s")
    unit = tmp_path / "s" / "unit_02.json"
    doc = json.loads(unit.read_text())
    doc["parameters"][0] += 1e-3
    unit.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="checksum mismatch for unit_02.json"):
        load_suite(tmp_path / "s")
    with pytest.raises(DataError):
        load_suite(tmp_path / "missing")


def test_write_predictions(tmp_path, suite, split):
    batch = predict_batch(suite, split.test)
    write_predictions(batch, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "id,mean_prob,uncertainty,decision,referred"
    first = lines[1].split(",")
    assert first[0] == split.test.ids[0]
    assert float(first[1]) == batch.mean_prob[0]
    assert first[3] in (POSITIVE_LABEL, HEALTHY_LABEL)


def test_suite_requires_units():
    with pytest.raises(ConfigError):
        EnsembleSuite(units=(), plan=BagPlan(1, 0))
