import numpy as np
import pytest
from synth import blobs, planted_overfit

from dropirls import NoiseModel, TrainConfig, train_explicit, train_hinge, train_logistic
from dropirls.baseline import ExplicitCorpus, explicit_objective
from dropirls.linear import Loss, TrainingError, variational_objective


def test_single_clean_copy_equals_raw_training():
    data = blobs(0, n=40)
    cfg = TrainConfig(c=0.7, noise=NoiseModel.dropout(0.0))
    for loss, train in ((Loss.HINGE, train_hinge), (Loss.LOGISTIC, train_logistic)):
        a = train_explicit(data, cfg, 1, seed=3, engine=loss)
        b = train(data, cfg)
        np.testing.assert_allclose(a.augmented, b.augmented, rtol=1e-12, atol=1e-12)


def test_many_copies_approach_marginalized_weights():
    for seed in range(3):
        data, _ = planted_overfit(seed, n_train=100, n_test=1, dim=100)
        cfg = TrainConfig(c=1.0, noise=NoiseModel.dropout(0.2))
        a = train_explicit(data, cfg, 256, seed).w
        b = train_hinge(data, cfg).w
        assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) >= 0.95


def test_same_seed_same_model_different_seed_differs():
    data = blobs(1, n=30)
    cfg = TrainConfig(noise=NoiseModel.dropout(0.5))
    a = train_explicit(data, cfg, 4, seed=9)
    b = train_explicit(data, cfg, 4, seed=9)
    c = train_explicit(data, cfg, 4, seed=10)
    np.testing.assert_array_equal(a.augmented, b.augmented)
    assert not np.array_equal(a.augmented, c.augmented)


def test_streaming_matches_in_memory():
    data, _ = planted_overfit(2, n_train=600, n_test=1, dim=20)
    cfg = TrainConfig(c=1.0, noise=NoiseModel.dropout(0.3))
    a = train_explicit(data, cfg, 3, seed=1)
    b = train_explicit(data, cfg, 3, seed=1, stream_threshold=0)
    np.testing.assert_allclose(a.augmented, b.augmented, rtol=1e-10, atol=1e-12)


def test_corpus_shape_and_unbiasedness():
    data = blobs(2, n=10, dim=3)
    corpus = ExplicitCorpus(data, 2000, 0, NoiseModel.dropout(0.4)).materialize()
    assert len(corpus) == 20_000
    means = corpus.X.toarray().reshape(10, 2000, 3).mean(axis=1)
    np.testing.assert_allclose(means, data.X.toarray(), atol=0.1)
    np.testing.assert_array_equal(corpus.y[:2000], data.y[0])


def test_explicit_objective_tends_to_expected_loss():
    data = blobs(3, n=10)
    cfg = TrainConfig(c=1.0, noise=NoiseModel.dropout(0.0))
    model = train_hinge(data, cfg)
    assert explicit_objective(model, data, cfg, 5, 0) == pytest.approx(variational_objective(model, data, cfg))


def test_argument_checks():
    data = blobs(4, n=10)
    with pytest.raises(ValueError):
        train_explicit(data, TrainConfig(), 0, seed=0)
    with pytest.raises(TrainingError):
        train_explicit(data, TrainConfig(), 1, seed=0, engine=Loss.EPS_INSENSITIVE)
