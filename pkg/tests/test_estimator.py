import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from snd.estimator import KDENoveltyScorer, SubjectNoveltyDetector
from snd.score import fit_kde, novelty_score


def test_kde_scorer_matches_functional_api():
    rng = np.random.default_rng(0)
    X, Z = rng.normal(size=(50, 3)), rng.normal(size=(10, 3))
    est = KDENoveltyScorer(bandwidth=0.7).fit(X)
    ref = novelty_score(Z, fit_kde(X, 0.7))
    np.testing.assert_allclose(est.novelty_score(Z).values, ref.values)
    assert est.bandwidth_ == 0.7 and est.n_features_in_ == 3
    assert set(np.unique(est.predict(Z))) <= {-1, 1}
    assert np.mean(est.predict(X) == -1) == pytest.approx(0.06, abs=0.05)


def test_kde_scorer_validation():
    est = KDENoveltyScorer()
    with pytest.raises(NotFittedError):
        est.score_samples(np.zeros((1, 2)))
    est.fit(np.random.default_rng(0).normal(size=(10, 2)))
    with pytest.raises(ValueError):
        est.score_samples(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        est.score_samples(np.array([[np.nan, 0.0]]))


def test_get_params_and_clone():
    det = SubjectNoveltyDetector(latent_dim=8, epochs=3, bandwidth="scott")
    params = det.get_params()
    assert params["latent_dim"] == 8 and params["bandwidth"] == "scott"
    c = clone(det)
    assert c.get_params() == params and c is not det
    assert det.train_config().latent_dim == 8


def test_detector_fit_transform_predict():
    rng = np.random.default_rng(0)
    X = rng.random((24, 3, 28, 28), dtype=np.float32)
    det = SubjectNoveltyDetector(latent_dim=4, epochs=1, batch_size=12, random_state=1).fit(X)
    assert det.transform(X).shape == (24, 4)
    assert det.background_features(X[:3]).shape == (3, 4)
    assert det.score_samples(X).shape == (24,)
    assert set(np.unique(det.predict(X))) <= {-1, 1}
    flat = X.reshape(24, -1)
    np.testing.assert_allclose(det.transform(flat[:2].reshape(2, 3, 28, 28)), det.transform(X[:2]))
    with pytest.raises(ValueError):
        det.transform(np.zeros((2, 3, 20, 20), np.float32))


def test_detector_flat_input_needs_shape():
    with pytest.raises(ValueError):
        SubjectNoveltyDetector(epochs=1).fit(np.zeros((4, 12)))
