"""scikit-learn style wrappers around the factorization and the detector.

Spectrograms keep the library's ``(n_bins, n_frames)`` layout rather than
sklearn's ``(n_samples, n_features)``; the wrappers exist for parameter
handling (``get_params``/``set_params``/``clone``) and a familiar fit/predict
surface, not for use inside sklearn pipelines.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import EPS, check_matrix, check_positive_int, check_same_shape
from .detection import DEFAULT_THRESHOLD, detect
from .exceptions import InvalidInputError
from .factorization import FactorizationConfig, factorize, onmf_update
from .pipeline import PipelineConfig, analyze


def _fixed_basis_gains(B, X, G, n_iter):
    # KL gain updates with the bases frozen
    colsum = np.maximum(B.sum(axis=0)[:, None], EPS)
    for _ in range(n_iter):
        G = np.maximum(G * (B.T @ (X / np.maximum(B @ G, EPS))) / colsum, EPS)
    return G


class TwoChannelNMF(BaseEstimator, TransformerMixin):
    """Joint factorization of an internal and an external magnitude spectrogram.

    Parameters mirror :class:`FactorizationConfig`; ``random_state`` is its
    ``seed``.

    Attributes
    ----------
    model_ : NmfModel
    cost_trace_ : CostTrace
    n_iter_ : int
    components_ : ndarray (K_S + K_V, n_bins)
        Source bases followed by noise bases, one per row.
    """

    def __init__(self, n_source_bases=8, n_noise_bases=48, max_iter=100, beta_ortho=1.0,
                 tol=1e-4, early_stopping=False, init="svd", random_state=0, n_threads=1):
        self.n_source_bases = n_source_bases
        self.n_noise_bases = n_noise_bases
        self.max_iter = max_iter
        self.beta_ortho = beta_ortho
        self.tol = tol
        self.early_stopping = early_stopping
        self.init = init
        self.random_state = random_state
        self.n_threads = n_threads

    def _config(self):
        return FactorizationConfig(
            n_source_bases=self.n_source_bases,
            n_noise_bases=self.n_noise_bases,
            max_iter=self.max_iter,
            beta_ortho=self.beta_ortho,
            tol=self.tol,
            early_stopping=self.early_stopping,
            seed=self.random_state,
            n_threads=self.n_threads,
            init=self.init,
        )

    def fit(self, X, Y):
        X = check_matrix(X, "X")
        Y = check_matrix(Y, "Y")
        check_same_shape(X, Y, ("X", "Y"))
        self.model_, self.cost_trace_ = factorize(X, Y, self._config())
        self.n_iter_ = self.model_.n_iter
        self.components_ = np.hstack([self.model_.B_S, self.model_.B_V]).T
        self.n_features_in_ = X.shape[0]
        return self

    def fit_transform(self, X, Y):
        self.fit(X, Y)
        return np.vstack([self.model_.G_S, self.model_.G_V])

    def transform(self, X):
        """Gains of ``X`` under the fitted bases (``(K_S + K_V, n_frames)``)."""
        check_is_fitted(self, "model_")
        X = check_matrix(X, "X")
        if X.shape[0] != self.n_features_in_:
            raise InvalidInputError(f"X has {X.shape[0]} bins, model was fitted on {self.n_features_in_}")
        B = self.components_.T
        rng = np.random.default_rng(self.random_state)
        G = rng.uniform(EPS, 1.0, size=(B.shape[1], X.shape[1]))
        return _fixed_basis_gains(B, X, G, self.max_iter)

    def source_model(self):
        check_is_fitted(self, "model_")
        return self.model_.source_model()

    def noise_model(self):
        check_is_fitted(self, "model_")
        return self.model_.noise_model()


class OrthogonalNMF(BaseEstimator, TransformerMixin):
    """Single-channel NMF with approximately orthogonal bases (baseline)."""

    def __init__(self, n_components=8, max_iter=100, random_state=0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def fit_transform(self, X, y=None):
        X = check_matrix(X, "X")
        k = check_positive_int(self.n_components, "n_components")
        check_positive_int(self.max_iter, "max_iter")
        rng = np.random.default_rng(self.random_state)
        B = rng.uniform(EPS, 1.0, size=(X.shape[0], k))
        G = rng.uniform(EPS, 1.0, size=(k, X.shape[1]))
        # match the data scale so the first updates are not dominated by it
        B *= np.sqrt(max(X.mean(), EPS) / max((B @ G).mean(), EPS))
        G *= np.sqrt(max(X.mean(), EPS) / max((B @ G).mean(), EPS))
        for _ in range(self.max_iter):
            B, G = onmf_update(B, G, X)
        self.components_ = B.T
        self.n_features_in_ = X.shape[0]
        self.n_iter_ = self.max_iter
        self.reconstruction_err_ = float(np.linalg.norm(X - B @ G))
        return G

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_matrix(X, "X")
        if X.shape[0] != self.n_features_in_:
            raise InvalidInputError(f"X has {X.shape[0]} bins, model was fitted on {self.n_features_in_}")
        B = self.components_.T
        G = np.random.default_rng(self.random_state).uniform(EPS, 1.0, size=(B.shape[1], X.shape[1]))
        BtB, BtX = B.T @ B, B.T @ X
        for _ in range(self.max_iter):
            G = np.maximum(G * BtX / np.maximum(BtB @ G, np.finfo(float).tiny), EPS)
        return G

    def inverse_transform(self, G):
        check_is_fitted(self, "components_")
        return self.components_.T @ check_matrix(G, "G")


class WheezeDetector(BaseEstimator, ClassifierMixin):
    """Unsupervised wheeze classifier over two-channel recordings.

    ``X`` passed to :meth:`predict` is a sequence of recordings, each either an
    object with ``internal``/``external`` buffers or an ``(internal, external)``
    pair. :meth:`fit` learns nothing; it only records the label set so the
    estimator can be scored like any classifier.
    """

    def __init__(self, config=None, threshold=DEFAULT_THRESHOLD):
        self.config = config
        self.threshold = threshold

    def _pipeline_config(self):
        cfg = self.config if self.config is not None else PipelineConfig()
        return cfg.with_overrides(threshold=self.threshold)

    def fit(self, X=None, y=None):
        self.classes_ = np.array([0, 1])
        return self

    @staticmethod
    def _channels(rec):
        if hasattr(rec, "internal") and hasattr(rec, "external"):
            return rec.internal, rec.external
        try:
            internal, external = rec
        except (TypeError, ValueError):
            raise InvalidInputError("each recording must be an (internal, external) pair") from None
        return internal, external

    def analyze(self, X):
        """Full :class:`PipelineResult` for every recording."""
        cfg = self._pipeline_config()
        return [analyze(*self._channels(rec), cfg) for rec in X]

    def decision_function(self, X):
        """Gini index of each recording's wheeze energy profile."""
        return np.array([r.detection.profile_gini for r in self.analyze(X)])

    def predict(self, X):
        return (self.decision_function(X) >= self.threshold).astype(int)

    def detect_model(self, model):
        """Detection on an already fitted :class:`NmfModel`."""
        return detect(model, self.threshold)
