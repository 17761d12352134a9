"""Gaussian radial-basis dictionary that lifts the state into observables.

The first ``n`` observables are the state coordinates themselves, so the
output matrix of the lifted model is ``C = [I, 0]`` and projecting a lifted
vector back to the state is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "Dictionary",
    "make_dictionary",
    "gaussian_rbf",
    "lift",
    "project",
    "RBFLifting",
]


@dataclass(frozen=True)
class Dictionary:
    """Identity observables followed by Gaussian bumps.

    Attributes
    ----------
    n : int
        State dimension.
    centers : np.ndarray
        Gaussian centers, shape ``(n_rbf, n)``.
    seed : int or None
        Seed the centers were drawn with (metadata only).
    width : float
        Gaussian length scale; ``exp(-||x - c||^2 / (2 width^2))``.
    """

    n: int
    centers: np.ndarray
    seed: int | None = None
    width: float = 1.0
    center_low: float = field(default=-1.0, compare=False)
    center_high: float = field(default=1.0, compare=False)

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, self.n)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        if self.n < 1:
            raise ValueError("state dimension n must be positive")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if not np.all(np.isfinite(centers)):
            raise ValueError("centers must be finite")

    @property
    def n_rbf(self) -> int:
        return self.centers.shape[0]

    @property
    def n_lifted(self) -> int:
        return self.n + self.n_rbf

    def __eq__(self, other):
        if not isinstance(other, Dictionary):
            return NotImplemented
        return (
            self.n == other.n
            and self.seed == other.seed
            and self.width == other.width
            and np.array_equal(self.centers, other.centers)
        )

    __hash__ = None


def make_dictionary(
    n: int = 1,
    n_rbf: int = 4,
    center_low: float = -1.0,
    center_high: float = 1.0,
    seed: int = 0,
    width: float = 1.0,
) -> Dictionary:
    """Draw ``n_rbf`` centers i.i.d. uniform on ``[center_low, center_high]^n``."""
    if n_rbf < 0:
        raise ValueError("n_rbf must be non-negative")
    if not center_low < center_high:
        raise ValueError("center_low must be below center_high")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(center_low, center_high, size=(n_rbf, n))
    return Dictionary(n=n, centers=centers, seed=seed, width=width,
                      center_low=center_low, center_high=center_high)


def gaussian_rbf(x, center, width: float = 1.0) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if x.shape != center.shape:
        raise ValueError("x and center must have the same dimension")
    return float(np.exp(-np.sum((x - center) ** 2) / (2.0 * width**2)))


def _lift_rows(dictionary: Dictionary, X: np.ndarray) -> np.ndarray:
    # X: (L, n) -> (L, N)
    sq = ((X[:, None, :] - dictionary.centers[None, :, :]) ** 2).sum(axis=2)
    return np.hstack([X, np.exp(-sq / (2.0 * dictionary.width**2))])


def lift(dictionary: Dictionary, x) -> np.ndarray:
    """Lift one state (shape ``(n,)``) or a batch (shape ``(L, n)``).

    A scalar is accepted when ``n == 1``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot lift a non-finite state")
    if x.ndim <= 1:
        x = x.reshape(1, -1)
        if x.shape[1] != dictionary.n:
            raise ValueError(f"expected state of dimension {dictionary.n}, got {x.shape[1]}")
        return _lift_rows(dictionary, x)[0]
    if x.ndim != 2 or x.shape[1] != dictionary.n:
        raise ValueError(f"expected states of shape (L, {dictionary.n}), got {x.shape}")
    return _lift_rows(dictionary, x)


def project(z, n: int | Dictionary = 1) -> np.ndarray:
    """Apply ``C = [I, 0]``: keep the first ``n`` lifted coordinates."""
    if isinstance(n, Dictionary):
        expected, n = n.n_lifted, n.n
    else:
        expected = None
    z = np.asarray(z, dtype=float)
    if expected is not None and z.shape[-1] != expected:
        raise ValueError(f"expected lifted dimension {expected}, got {z.shape[-1]}")
    if z.shape[-1] < n:
        raise ValueError(f"lifted vector of length {z.shape[-1]} is shorter than n={n}")
    return z[..., :n].copy()


class RBFLifting(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :class:`Dictionary`.

    ``fit`` only reads the state dimension from ``X`` and draws the centers;
    the data values themselves do not influence the dictionary.

    Parameters
    ----------
    n_rbf : int
        Number of Gaussian observables appended after the state.
    center_low, center_high : float
        Sampling interval for the centers.
    width : float
        Gaussian length scale.
    random_state : int
        Seed for the centers.
    """

    def __init__(self, n_rbf=4, center_low=-1.0, center_high=1.0, width=1.0, random_state=0):
        self.n_rbf = n_rbf
        self.center_low = center_low
        self.center_high = center_high
        self.width = width
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=True)
        self.n_features_in_ = X.shape[1]
        self.dictionary_ = make_dictionary(
            n=X.shape[1],
            n_rbf=self.n_rbf,
            center_low=self.center_low,
            center_high=self.center_high,
            seed=self.random_state,
            width=self.width,
        )
        return self

    @classmethod
    def from_dictionary(cls, dictionary: Dictionary) -> "RBFLifting":
        est = cls(
            n_rbf=dictionary.n_rbf,
            center_low=dictionary.center_low,
            center_high=dictionary.center_high,
            width=dictionary.width,
            random_state=dictionary.seed,
        )
        est.n_features_in_ = dictionary.n
        est.dictionary_ = dictionary
        return est

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return _lift_rows(self.dictionary_, X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "dictionary_")
        Z = check_array(Z)
        return project(Z, self.dictionary_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "dictionary_")
        if input_features is None:
            input_features = [f"x{i}" for i in range(self.n_features_in_)]
        return np.asarray(list(input_features) + [f"rbf{i}" for i in range(self.dictionary_.n_rbf)], dtype=object)
