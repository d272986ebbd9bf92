"""Unbiased feature-corruption models and their first two moments."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class NoiseKind(str, enum.Enum):
    DROPOUT = "dropout"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    POISSON = "poisson"
    NONE = "none"


class NoiseParameterError(ValueError):
    """Raised for an invalid corruption parameter (e.g. dropout q >= 1)."""


class NoiseDomainError(ValueError):
    """Raised when the features are outside a model's support."""


@dataclass(frozen=True)
class NoiseModel:
    """Per-feature corrupting distribution with E[x~ | x] = x.

    ``param`` is the dropout level q, the Gaussian variance, or the Laplace
    scale; Poisson and None ignore it.
    """

    kind: NoiseKind = NoiseKind.NONE
    param: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        p = float(self.param)
        if not np.isfinite(p) or p < 0:
            raise NoiseParameterError(f"noise parameter must be finite and >= 0, got {self.param!r}")
        if self.kind is NoiseKind.DROPOUT and not p < 1.0:
            raise NoiseParameterError(f"dropout level must lie in [0, 1), got {p}")
        object.__setattr__(self, "param", p)

    @classmethod
    def dropout(cls, q: float) -> "NoiseModel":
        return cls(NoiseKind.DROPOUT, q)

    @classmethod
    def gaussian(cls, variance: float) -> "NoiseModel":
        return cls(NoiseKind.GAUSSIAN, variance)

    @classmethod
    def laplace(cls, scale: float) -> "NoiseModel":
        return cls(NoiseKind.LAPLACE, scale)

    @classmethod
    def poisson(cls) -> "NoiseModel":
        return cls(NoiseKind.POISSON, 0.0)

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(NoiseKind.NONE, 0.0)

    @property
    def is_deterministic(self) -> bool:
        if self.kind is NoiseKind.NONE:
            return True
        if self.kind in (NoiseKind.DROPOUT, NoiseKind.GAUSSIAN, NoiseKind.LAPLACE):
            return self.param == 0.0
        return False

    @property
    def constant_variance(self) -> float:
        """Variance added to every declared coordinate (Gaussian/Laplace)."""
        if self.kind is NoiseKind.GAUSSIAN:
            return self.param
        if self.kind is NoiseKind.LAPLACE:
            return 2.0 * self.param**2
        return 0.0

    def __str__(self):
        return f"{self.kind.value}:{self.param!r}"

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        """Parse ``kind[:param]``, e.g. ``dropout:0.5`` or ``poisson``."""
        kind, _, param = text.partition(":")
        try:
            kind = NoiseKind(kind.strip().lower())
        except ValueError:
            raise NoiseParameterError(f"unknown noise kind {kind!r}") from None
        return cls(kind, float(param) if param else 0.0)


@dataclass(frozen=True)
class CorruptionMoments:
    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class FeatureVariance:
    """Diagonal corruption variances for a batch of examples.

    Entry (n, d) equals ``matrix[n, d] + constant``; ``matrix`` shares the
    sparsity pattern of the data, so dropout/Poisson never densify.
    """

    matrix: sp.csr_matrix | None
    constant: float = 0.0

    def dot_squared(self, w: np.ndarray) -> np.ndarray:
        """Per-example sum_d var[n, d] * w[d]**2."""
        w2 = w * w
        out = self.matrix @ w2 if self.matrix is not None else 0.0
        if self.constant:
            out = out + self.constant * w2.sum()
        return np.asarray(out, dtype=float)

    def weighted_column_sums(self, weights: np.ndarray, dim: int) -> np.ndarray:
        """sum_n weights[n] * var[n, :], the diagonal gram contribution."""
        out = np.zeros(dim)
        if self.matrix is not None:
            out += self.matrix.T @ weights
        if self.constant:
            out += self.constant * weights.sum()
        return out

    def take(self, rows) -> "FeatureVariance":
        matrix = self.matrix[rows] if self.matrix is not None else None
        return FeatureVariance(matrix, self.constant)


def _check_support(values: np.ndarray, model: NoiseModel) -> None:
    if not np.all(np.isfinite(values)):
        raise NoiseDomainError("features must be finite")
    if model.kind is NoiseKind.POISSON and np.any(values < 0):
        raise NoiseDomainError("Poisson corruption requires nonnegative features")


def _dense_vector(x) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x.toarray()).ravel().astype(float)
    return np.asarray(x, dtype=float).ravel()


def moments(x, model: NoiseModel) -> CorruptionMoments:
    """Mean and diagonal variance of one corrupted feature vector."""
    x = _dense_vector(x)
    _check_support(x, model)
    if model.kind is NoiseKind.DROPOUT:
        var = model.param / (1.0 - model.param) * x * x
    elif model.kind is NoiseKind.POISSON:
        var = x.copy()
    else:
        var = np.full_like(x, model.constant_variance)
    return CorruptionMoments(mean=x.copy(), var=var)


def batch_variance(X: sp.csr_matrix, model: NoiseModel) -> FeatureVariance:
    """Corruption variances for every row of ``X`` without densifying."""
    X = sp.csr_matrix(X, dtype=float)
    _check_support(X.data, model)
    if model.kind is NoiseKind.DROPOUT:
        if model.param == 0.0:
            return FeatureVariance(None)
        V = X.copy()
        V.data = model.param / (1.0 - model.param) * V.data**2
        return FeatureVariance(V)
    if model.kind is NoiseKind.POISSON:
        return FeatureVariance(X.copy())
    return FeatureVariance(None, model.constant_variance)


def _corrupt_values(values: np.ndarray, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    if model.kind is NoiseKind.DROPOUT:
        q = model.param
        keep = rng.random(values.shape) >= q
        return np.where(keep, values / (1.0 - q), 0.0)
    if model.kind is NoiseKind.GAUSSIAN:
        return values + rng.normal(0.0, np.sqrt(model.param), values.shape)
    if model.kind is NoiseKind.LAPLACE:
        return values + rng.laplace(0.0, model.param, values.shape)
    if model.kind is NoiseKind.POISSON:
        return rng.poisson(values).astype(float)
    return values.copy()


def sample(x, model: NoiseModel, rng_seed) -> np.ndarray | sp.csr_matrix:
    """One draw x~ ~ p(x~ | x); the same seed always gives the same draw.

    Sparse input stays sparse for dropout/Poisson (zeros are fixed points);
    Gaussian/Laplace corrupt every declared coordinate.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if sp.issparse(x):
        X = sp.csr_matrix(x, dtype=float)
        _check_support(X.data, model)
        if model.constant_variance > 0:
            return sp.csr_matrix(_corrupt_values(X.toarray(), model, rng))
        out = X.copy()
        out.data = _corrupt_values(X.data, model, rng)
        out.eliminate_zeros()
        return out
    x = np.asarray(x, dtype=float)
    _check_support(x, model)
    return _corrupt_values(x, model, rng)
