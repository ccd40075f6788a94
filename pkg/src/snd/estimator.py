"""scikit-learn style wrappers around the training and scoring routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_images
from .nets import encode_array
from .score import fit_kde, log_density, novelty_score
from .train import TrainConfig, train


class KDENoveltyScorer(OutlierMixin, BaseEstimator):
    """Isotropic Gaussian KDE on feature vectors.

    ``score_samples`` follows the scikit-learn convention (higher is more
    normal) and returns the log-density; :meth:`novelty_score` returns the
    negative density (higher is more novel).
    """

    def __init__(self, bandwidth="median", max_bank=10_000, contamination=0.05, random_state=0):
        self.bandwidth = bandwidth
        self.max_bank = max_bank
        self.contamination = contamination
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_features(X)
        self.kde_ = fit_kde(X, self.bandwidth, max_bank=self.max_bank, seed=self.random_state)
        self.bandwidth_ = self.kde_.bandwidth
        self.n_features_in_ = X.shape[1]
        self.offset_ = float(np.quantile(self.score_samples(X), self.contamination))
        return self

    def score_samples(self, X):
        check_is_fitted(self, "kde_")
        return log_density(check_features(X, self.n_features_in_), self.kde_)

    def decision_function(self, X):
        return self.score_samples(X) - self.offset_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def novelty_score(self, X, log_space=None):
        check_is_fitted(self, "kde_")
        return novelty_score(check_features(X, self.n_features_in_), self.kde_, log_space=log_space)


class SubjectNoveltyDetector(TransformerMixin, OutlierMixin, BaseEstimator):
    """Subject/background-disentangling autoencoder with KDE scoring on subject features.

    ``fit`` takes an unlabeled ``(n, C, H, W)`` image stack; ``n_components``
    is the number of training backgrounds. ``transform`` returns subject
    features; ``score_samples`` the KDE log-density of those features.
    """

    def __init__(self, latent_dim=32, n_components=3, omega1=1.0, omega2=0.1, epochs=100, batch_size=128,
                 learning_rate=1e-3, weight_decay=5.0, critic_ratio=1, critic_objective="mle", eps=1e-6,
                 bandwidth="median", contamination=0.05, image_shape=None, random_state=0):
        self.latent_dim = latent_dim
        self.n_components = n_components
        self.omega1 = omega1
        self.omega2 = omega2
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.critic_ratio = critic_ratio
        self.critic_objective = critic_objective
        self.eps = eps
        self.bandwidth = bandwidth
        self.contamination = contamination
        self.image_shape = image_shape
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            omega1=self.omega1, omega2=self.omega2, batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay, seed=self.random_state,
            eps=self.eps, critic_ratio=self.critic_ratio, critic_objective=self.critic_objective,
            latent_dim=self.latent_dim, n_components=self.n_components,
        )

    def fit(self, X, y=None):
        X = check_images(X, self.image_shape, min_samples=2)
        self.model_, self.train_log_ = train(X, self.train_config())
        self.image_shape_ = X.shape[1:]
        self.scorer_ = KDENoveltyScorer(self.bandwidth, contamination=self.contamination,
                                        random_state=self.random_state).fit(encode_array(self.model_, X).z_s)
        self.offset_ = self.scorer_.offset_
        return self

    def _latents(self, X):
        check_is_fitted(self, "model_")
        return encode_array(self.model_, check_images(X, self.image_shape_))

    def transform(self, X):
        return self._latents(X).z_s

    def background_features(self, X):
        return self._latents(X).z_b

    def score_samples(self, X):
        return self.scorer_.score_samples(self.transform(X))

    def decision_function(self, X):
        return self.score_samples(X) - self.offset_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def novelty_score(self, X, log_space=None):
        return self.scorer_.novelty_score(self.transform(X), log_space=log_space)
