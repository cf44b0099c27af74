"""Finite-dimensional centred Gaussian measures.

A :class:`GaussianMeasure` is stored through its covariance, its precision,
or both. Whichever side is missing is derived on first access through a
Cholesky factorization and cached, so measures built on the precision side
(reweighted path measures) never pay for an explicit covariance unless one
is requested.

All arrays held by a measure are flagged read-only; measures can be shared
between threads and processes.
"""
from __future__ import annotations

from functools import cached_property, partial
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatchError,
    NotNormalizableError,
    NotPositiveDefiniteError,
    NotSymmetricError,
)

SYMMETRY_RTOL = 1e-12
JITTER_SCALE = 1e-12
PSD_RTOL = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded through ``SeedSequence`` (splittable)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed) % 2**64))


def spawn_seeds(seed: int, count: int) -> list[int]:
    """Derive ``count`` independent 64-bit child seeds from ``seed``."""
    children = np.random.SeedSequence(int(seed) % 2**64).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _validated_cholesky(matrix: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Check symmetry and positive definiteness; return (matrix, lower factor).

    At most one additive jitter of ``1e-12 * trace/dim`` is tried before
    giving up.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"{what} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError(f"{what} has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise NotSymmetricError(f"{what} is not symmetric")
    a = 0.5 * (a + a.T)
    try:
        return a, np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    dim = a.shape[0]
    jitter = JITTER_SCALE * np.trace(a) / dim
    if jitter <= 0:
        raise NotPositiveDefiniteError(f"{what} has non-positive trace")
    a = a + jitter * np.eye(dim)
    try:
        return a, np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def _scaled_call(fn: Callable[[], np.ndarray], factor: float) -> np.ndarray:
    return factor * fn()


def _inverse_from_cholesky(lower: np.ndarray) -> np.ndarray:
    inv_lower = sla.solve_triangular(lower, np.eye(lower.shape[0]), lower=True)
    out = inv_lower.T @ inv_lower
    return 0.5 * (out + out.T)


class GaussianMeasure:
    """Centred Gaussian measure on R^dim.

    Build instances with :func:`make_gaussian` (covariance side) or
    :meth:`GaussianMeasure.from_precision`; the initializer itself trusts its
    inputs.
    """

    def __init__(
        self,
        covariance: np.ndarray | None = None,
        precision: np.ndarray | None = None,
        *,
        factor: np.ndarray | None = None,
        precision_factor: np.ndarray | None = None,
        covariance_fn: Callable[[], np.ndarray] | None = None,
    ):
        if covariance is None and precision is None and covariance_fn is None:
            raise ValueError("need a covariance or a precision")
        self._covariance = None if covariance is None else _readonly(covariance)
        self._precision = None if precision is None else _readonly(precision)
        self._covariance_fn = covariance_fn
        if self._covariance is not None:
            self.dim = self._covariance.shape[0]
        elif self._precision is not None:
            self.dim = self._precision.shape[0]
        else:
            self.dim = self.covariance.shape[0]
        if factor is not None:
            self.__dict__["factor"] = _readonly(factor)
        if precision_factor is not None:
            self.__dict__["precision_factor"] = _readonly(precision_factor)

    @classmethod
    def from_precision(cls, precision: np.ndarray) -> "GaussianMeasure":
        prec, lower = _validated_cholesky(precision, "precision")
        return cls(precision=prec, precision_factor=lower)

    @cached_property
    def covariance(self) -> np.ndarray:
        if self._covariance is not None:
            return self._covariance
        if self._covariance_fn is not None:
            return _readonly(self._covariance_fn())
        return _readonly(_inverse_from_cholesky(self.precision_factor))

    @cached_property
    def precision(self) -> np.ndarray:
        if self._precision is not None:
            return self._precision
        return _readonly(_inverse_from_cholesky(self.factor))

    @cached_property
    def factor(self) -> np.ndarray:
        """Lower-triangular square root of the covariance."""
        return _readonly(np.linalg.cholesky(self.covariance))

    @cached_property
    def precision_factor(self) -> np.ndarray:
        """Lower-triangular Cholesky factor of the precision."""
        return _readonly(np.linalg.cholesky(self.precision))

    @property
    def has_precision(self) -> bool:
        return self._precision is not None or "precision" in self.__dict__

    @property
    def has_covariance(self) -> bool:
        return (self._covariance is not None or self._covariance_fn is not None
                or "covariance" in self.__dict__)

    def __repr__(self) -> str:
        return f"GaussianMeasure(dim={self.dim})"


class QuadraticForm:
    """Symmetric positive-semidefinite form ``x -> x^T Q x``."""

    def __init__(self, matrix: np.ndarray, *, check_psd: bool = True):
        q = np.asarray(matrix, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionMismatchError(f"form must be square, got shape {q.shape}")
        scale = np.max(np.abs(q)) if q.size else 0.0
        if np.max(np.abs(q - q.T), initial=0.0) > SYMMETRY_RTOL * max(scale, 1e-300):
            raise NotSymmetricError("quadratic form is not symmetric")
        q = 0.5 * (q + q.T)
        if check_psd and scale > 0:
            lam_min = np.linalg.eigvalsh(q)[0]
            if lam_min < -PSD_RTOL * np.linalg.norm(q, 2):
                raise NotNormalizableError(
                    f"quadratic form has negative eigenvalue {lam_min:.3e}")
        self.matrix = _readonly(q)
        self.dim = q.shape[0]

    @classmethod
    def from_pair_weights(cls, weights: np.ndarray) -> "QuadraticForm":
        """Form of ``sum_{i,j} w_ij (x_i - x_j)^2`` over ordered pairs.

        ``weights`` must be symmetric and entrywise nonnegative, which makes
        the form PSD without a spectral check.
        """
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise NotNormalizableError("pair weights must be nonnegative")
        lap = np.diag(w.sum(axis=1)) - w
        return cls(2.0 * lap, check_psd=False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.matrix, x)

    def __add__(self, other: "QuadraticForm") -> "QuadraticForm":
        if other.dim != self.dim:
            raise DimensionMismatchError("cannot add forms of different dimension")
        return QuadraticForm(self.matrix + other.matrix, check_psd=False)

    def scaled(self, factor: float) -> "QuadraticForm":
        if factor < 0:
            raise NotNormalizableError("negative scaling of a PSD form")
        return QuadraticForm(factor * self.matrix, check_psd=False)


def make_gaussian(covariance: np.ndarray) -> GaussianMeasure:
    """Validate a covariance matrix and return the measure with its factor cached."""
    cov, lower = _validated_cholesky(covariance, "covariance")
    return GaussianMeasure(covariance=cov, factor=lower)


def sample(measure: GaussianMeasure, seed: int, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. vectors ``factor @ z``; rows are samples."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = make_rng(seed).standard_normal((count, measure.dim))
    return z @ measure.factor.T


def times_two(measure: GaussianMeasure) -> GaussianMeasure:
    """Law of ``2X`` for ``X ~ measure``: the doubled measure A -> mu(A/2)."""
    kw = {}
    if measure._covariance is not None or "covariance" in measure.__dict__:
        kw["covariance"] = 4.0 * measure.covariance
    elif measure._covariance_fn is not None:
        kw["covariance_fn"] = partial(_scaled_call, measure._covariance_fn, 4.0)
    if measure.has_precision:
        kw["precision"] = 0.25 * measure.precision
    if "factor" in measure.__dict__:
        kw["factor"] = 2.0 * measure.factor
    if "precision_factor" in measure.__dict__:
        kw["precision_factor"] = 0.5 * measure.precision_factor
    if not kw:
        kw["covariance"] = 4.0 * measure.covariance
    return GaussianMeasure(**kw)


def reweight_quadratic(measure: GaussianMeasure, penalty: QuadraticForm) -> GaussianMeasure:
    """Measure with density proportional to ``exp(-x^T Q x)`` against ``measure``.

    The result has precision ``Sigma^{-1} + 2Q``.
    """
    if penalty.dim != measure.dim:
        raise DimensionMismatchError(
            f"penalty dim {penalty.dim} != measure dim {measure.dim}")
    if not np.any(penalty.matrix):
        return measure
    return GaussianMeasure.from_precision(measure.precision + 2.0 * penalty.matrix)


def second_moment(measure: GaussianMeasure, functional: np.ndarray) -> float:
    """Exact ``E ||L x||^2 = trace(L Sigma L^T)``."""
    lmat = np.atleast_2d(np.asarray(functional, dtype=float))
    if lmat.shape[1] != measure.dim:
        raise DimensionMismatchError(
            f"functional has {lmat.shape[1]} columns, measure dim is {measure.dim}")
    if measure.has_precision and "factor" not in measure.__dict__:
        # L Sigma L^T = (C^{-1} L^T)^T (C^{-1} L^T) with precision = C C^T
        y = sla.solve_triangular(measure.precision_factor, lmat.T, lower=True)
    else:
        y = measure.factor.T @ lmat.T
    return float(max(np.sum(y * y), 0.0))
