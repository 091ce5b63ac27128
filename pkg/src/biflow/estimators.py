"""scikit-learn style wrappers around the transports and bidirectional maps."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bidirectional import BidirectionalMap
from .datasets import affine_bidirectional, fit_empirical_gaussian
from .maps import InverseMap, MonotoneTriangularMap
from .sampling import SampleBatch, as_rng
from .training import TrainConfig, fit_map


def _train_config(est) -> TrainConfig:
    return TrainConfig(
        learning_rate=est.learning_rate,
        batch_size=est.batch_size,
        epochs=est.epochs,
        seed=est.seed,
        grad_mode=est.grad_mode,
        standardize=est.standardize,
    )


class TriangularTransport(TransformerMixin, BaseEstimator):
    """Monotone triangular transport between the data law and N(0, I).

    ``transform`` maps data to the reference, ``inverse_transform`` maps
    reference points back. ``orientation="upper"`` orders the variables
    the other way round, which exposes the conditional of the leading block
    given the trailing one.
    """

    def __init__(
        self,
        order=4,
        orientation="lower",
        learning_rate=1e-2,
        batch_size=256,
        epochs=200,
        seed=0,
        grad_mode="analytic",
        standardize=True,
    ):
        self.order = order
        self.orientation = orientation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.grad_mode = grad_mode
        self.standardize = standardize

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        self.pullback_ = MonotoneTriangularMap.identity(X.shape[1], self.order, self.orientation)
        self.report_ = fit_map(self.pullback_, X, _train_config(self))
        return self

    @property
    def map_(self):
        """Generative map ``reference -> data``."""
        check_is_fitted(self, "pullback_")
        return InverseMap(self.pullback_)

    def transform(self, X):
        check_is_fitted(self, "pullback_")
        X = check_array(X)
        self._check_width(X)
        return self.pullback_.forward(X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "pullback_")
        Z = check_array(Z)
        self._check_width(Z)
        return self.pullback_.inverse(Z)

    def score_samples(self, X):
        """Log density of the fitted model at each row of ``X``."""
        check_is_fitted(self, "pullback_")
        X = check_array(X)
        self._check_width(X)
        z = self.pullback_.forward(X)
        log_det = self.pullback_.log_det_jacobian(X)
        return -0.5 * np.sum(z * z, axis=1) + log_det - 0.5 * X.shape[1] * math.log(2 * math.pi)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, seed=None):
        check_is_fitted(self, "pullback_")
        z = as_rng(self.seed if seed is None else seed, stream_id=0x534D50).normal((n_samples, self.n_features_in_))
        return self.pullback_.inverse(z)

    def _check_width(self, X):
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the transport was fitted with {self.n_features_in_}")


class _BidirectionalMixin:
    """Shared ``S``/``R`` plumbing; subclasses set ``bimap_`` in ``fit``."""

    def transform(self, X):
        """``S``: stacked ``(u, y)`` rows to ``(x, f)``."""
        check_is_fitted(self, "bimap_")
        X = check_array(X)
        return self.bimap_.forward(X)

    def inverse_transform(self, X):
        """``R = S^{-1}``: stacked ``(x, f)`` rows to ``(u, y)``."""
        check_is_fitted(self, "bimap_")
        X = check_array(X)
        return self.bimap_.inverse(X)

    def simulate(self, u, n_samples=1, seed=None) -> SampleBatch:
        """Likelihood draws ``f | u``."""
        check_is_fitted(self, "bimap_")
        return self.bimap_.simulate(u, n_samples, self.seed if seed is None else seed)

    def infer(self, f, n_samples=1, seed=None) -> SampleBatch:
        """Posterior draws ``u | f``."""
        check_is_fitted(self, "bimap_")
        return self.bimap_.infer(f, n_samples, self.seed if seed is None else seed)

    def _split_width(self, X):
        if not 0 < self.n_unknowns < X.shape[1]:
            raise ValueError(f"n_unknowns={self.n_unknowns} must split {X.shape[1]} columns into two blocks")
        return self.n_unknowns, X.shape[1] - self.n_unknowns


class AffineBidirectional(_BidirectionalMixin, TransformerMixin, BaseEstimator):
    """Affine ``S`` from the empirical Gaussian of stacked ``(u, f)`` samples.

    The first ``n_unknowns`` columns of ``X`` are ``u``, the rest ``f``.
    """

    def __init__(self, n_unknowns=1, ridge=1e-3, seed=0):
        self.n_unknowns = n_unknowns
        self.ridge = ridge
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        n, m = self._split_width(X)
        self.n_features_in_ = X.shape[1]
        self.gaussian_ = fit_empirical_gaussian(SampleBatch(X, (n, m)), self.ridge)
        self.bimap_ = affine_bidirectional(self.gaussian_)
        return self


class TransportBidirectional(_BidirectionalMixin, TransformerMixin, BaseEstimator):
    """``S`` from monotone triangular transports fitted to stacked ``(u, f)`` samples.

    If ``likelihood_map`` is given it is used as the lower transport and
    only the upper one is fitted; otherwise both are fitted with the same
    settings.
    """

    def __init__(
        self,
        n_unknowns=1,
        order=4,
        likelihood_map=None,
        learning_rate=1e-2,
        batch_size=256,
        epochs=200,
        seed=0,
        grad_mode="analytic",
        standardize=True,
    ):
        self.n_unknowns = n_unknowns
        self.order = order
        self.likelihood_map = likelihood_map
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.grad_mode = grad_mode
        self.standardize = standardize

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        n, m = self._split_width(X)
        self.n_features_in_ = X.shape[1]
        cfg = _train_config(self)
        upper = MonotoneTriangularMap.identity(X.shape[1], self.order, "upper")
        self.reports_ = {"upper": fit_map(upper, X, cfg)}
        if self.likelihood_map is None:
            lower = MonotoneTriangularMap.identity(X.shape[1], self.order, "lower")
            self.reports_["lower"] = fit_map(lower, X, cfg)
            f_check = InverseMap(lower)
        else:
            f_check = self.likelihood_map
        self.bimap_ = BidirectionalMap(n, m, f_check, InverseMap(upper))
        return self
