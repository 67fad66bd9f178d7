"""Gaussian RBF dictionary and the linear feedback control built from it.

Each dictionary atom phi_m(x) = exp(-(x - c_m)^2 / (2 r_m^2)) is a candidate
term of the value function; the control basis is its negative derivative

    psi_m(x) = -d/dx phi_m(x) = (x - c_m) / r_m^2 * phi_m(x),

and the control is u_theta(x) = sum_m theta_m psi_m(x).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


@dataclass(frozen=True)
class RbfDictionary:
    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        centers = np.atleast_1d(np.asarray(self.centers, dtype=np.float64))
        widths = np.atleast_1d(np.asarray(self.widths, dtype=np.float64))
        if widths.shape == (1,) and centers.shape[0] > 1:
            widths = np.full(centers.shape, widths[0])
        if centers.ndim != 1 or centers.shape != widths.shape:
            raise ValueError(
                f"centers and widths must be 1-D of equal length, "
                f"got {centers.shape} and {widths.shape}"
            )
        if centers.size == 0:
            raise ValueError("dictionary must contain at least one atom")
        if not (np.all(np.isfinite(centers)) and np.all(widths > 0) and np.all(np.isfinite(widths))):
            raise ValueError("centers must be finite and widths positive")
        centers.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "_inv_var", 1.0 / widths**2)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def key(self) -> str:
        h = hashlib.sha1(self.centers.tobytes() + self.widths.tobytes())
        return h.hexdigest()[:12]

    def phi(self, x) -> np.ndarray:
        """Kernel values, shape ``(len(x), J)``."""
        d = np.asarray(x, dtype=np.float64).reshape(-1, 1) - self.centers
        return np.exp(-0.5 * d * d * self._inv_var)

    def psi(self, x) -> np.ndarray:
        """Control basis values -phi_m'(x), shape ``(len(x), J)``."""
        d = np.asarray(x, dtype=np.float64).reshape(-1, 1) - self.centers
        scaled = d * self._inv_var
        out = np.exp(-0.5 * d * scaled)
        out *= scaled
        return out


def double_well_dictionary(
    n_basis: int = 17, start: float = -1.5, step: float = 0.1, width: float = 0.5
) -> RbfDictionary:
    """Centers ``start + step * m`` for m = 1..n_basis with a common width."""
    centers = start + step * np.arange(1, n_basis + 1)
    return RbfDictionary(centers, np.full(n_basis, float(width)))


def rbf_value(dictionary: RbfDictionary, m: int, x: float) -> float:
    c, r = dictionary.centers[m], dictionary.widths[m]
    return float(np.exp(-((x - c) ** 2) / (2.0 * r * r)))


def basis_psi(dictionary: RbfDictionary, m: int, x: float) -> float:
    c, r = dictionary.centers[m], dictionary.widths[m]
    return float((x - c) / (r * r) * rbf_value(dictionary, m, x))


def gradient_check(dictionary: RbfDictionary, m: int, x: float, h: float) -> float:
    """Residual between psi_m and the central difference of -phi_m."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    fd = (rbf_value(dictionary, m, x + h) - rbf_value(dictionary, m, x - h)) / (2.0 * h)
    return abs(basis_psi(dictionary, m, x) + fd)


@dataclass(frozen=True)
class ControlModel:
    dictionary: RbfDictionary
    theta: np.ndarray

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=np.float64)).copy()
        if theta.shape != (self.dictionary.size,):
            raise ValueError(
                f"theta has shape {theta.shape}, dictionary has {self.dictionary.size} atoms"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, dictionary: RbfDictionary) -> "ControlModel":
        return cls(dictionary, np.zeros(dictionary.size))

    @property
    def tag(self) -> str:
        h = hashlib.sha1(self.theta.tobytes())
        h.update(self.dictionary.key.encode())
        return f"theta-{h.hexdigest()[:12]}"

    def value(self, x) -> np.ndarray:
        # row-wise reduction: BLAS matvec results can depend on the number of rows
        return np.sum(self.dictionary.psi(x) * self.theta, axis=1)

    def __call__(self, x) -> np.ndarray:
        return self.value(x)


def control_value(model: ControlModel, x: float) -> float:
    return float(model.value(np.array([x]))[0])


class RbfControlFeatures(TransformerMixin, BaseEstimator):
    """Map states to the control basis matrix ``psi_m(x)``.

    Stateless apart from the dictionary layout, so it can sit in a pipeline in
    front of any linear model that fits control coefficients.
    """

    def __init__(self, centers=None, widths=0.5):
        self.centers = centers
        self.widths = widths

    def fit(self, X=None, y=None):
        centers = self.centers
        if centers is None:
            centers = double_well_dictionary().centers
        widths = np.broadcast_to(np.asarray(self.widths, dtype=np.float64), np.shape(centers))
        self.dictionary_ = RbfDictionary(np.asarray(centers, dtype=np.float64), widths)
        self.n_features_out_ = self.dictionary_.size
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        X = check_array(X, ensure_2d=False)
        return self.dictionary_.psi(np.ravel(X))

    def get_feature_names_out(self, input_features=None):
        return np.array([f"psi_{m}" for m in range(self.n_features_out_)], dtype=object)
