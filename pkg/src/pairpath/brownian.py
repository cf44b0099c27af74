"""Discretized d-dimensional Brownian motion started at the origin.

Paths live on a uniform grid ``t_i = i * T / n``. The position at ``t_0 = 0``
is pinned to zero, so the Gaussian law of a path is a measure on
``R^(n*d)`` over the nodes ``1..n``. Vectors are laid out time-major: entry
``(i - 1) * d + a`` is coordinate ``a`` of node ``i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import AlphaTooSmallError
from .gaussian_core import GaussianMeasure, make_rng

CB_GRID = 1e-3
TAIL_EXPONENT = 10.0


@dataclass(frozen=True)
class PathGrid:
    T: float
    n: int
    d: int = 3

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt

    def scaled(self, c: float) -> "PathGrid":
        return PathGrid(self.T * c, self.n, self.d)

    def coordinate(self) -> "PathGrid":
        """Same time grid in one space dimension."""
        return PathGrid(self.T, self.n, 1)


@dataclass(frozen=True)
class DiscretePath:
    grid: PathGrid
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (self.grid.n + 1, self.grid.d):
            raise ValueError(
                f"positions must have shape {(self.grid.n + 1, self.grid.d)}, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if np.any(pos[0] != 0):
            raise ValueError("paths start at the origin")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_vector(cls, grid: PathGrid, vector: np.ndarray) -> "DiscretePath":
        pos = np.zeros((grid.n + 1, grid.d))
        pos[1:] = np.asarray(vector, dtype=float).reshape(grid.n, grid.d)
        return cls(grid, pos)

    def to_vector(self) -> np.ndarray:
        return self.positions[1:].reshape(-1)

    @property
    def displacement(self) -> np.ndarray:
        return self.positions[-1] - self.positions[0]

    def __neg__(self) -> "DiscretePath":
        return DiscretePath(self.grid, -self.positions)


@dataclass(frozen=True)
class TubeSet:
    """Paths whose sup-norm distance from the origin stays within ``R``."""

    R: float
    grid: PathGrid

    def __contains__(self, path: DiscretePath) -> bool:
        return bool(np.max(np.linalg.norm(path.positions, axis=1)) <= self.R)

    def contains_vectors(self, vectors: np.ndarray) -> np.ndarray:
        x = np.asarray(vectors).reshape(-1, self.grid.n, self.grid.d)
        return np.max(np.linalg.norm(x, axis=2), axis=1) <= self.R


def min_kernel(times: np.ndarray) -> np.ndarray:
    return np.minimum.outer(times, times)


def _brownian_covariance(times: np.ndarray, d: int) -> np.ndarray:
    k = min_kernel(times)
    return k if d == 1 else np.kron(k, np.eye(d))


def brownian_precision(grid: PathGrid) -> np.ndarray:
    """Inverse of the min(t_i, t_j) kernel on nodes 1..n (tridiagonal)."""
    n = grid.n
    p = np.zeros((n, n))
    idx = np.arange(n)
    p[idx, idx] = 2.0
    p[-1, -1] = 1.0
    p[idx[:-1], idx[:-1] + 1] = -1.0
    p[idx[:-1] + 1, idx[:-1]] = -1.0
    p /= grid.dt
    return p if grid.d == 1 else np.kron(p, np.eye(grid.d))


def brownian_measure(grid: PathGrid) -> GaussianMeasure:
    """Law of the path vector (nodes 1..n, all coordinates)."""
    times = grid.times[1:]
    return GaussianMeasure(
        precision=brownian_precision(grid),
        covariance_fn=partial(_brownian_covariance, times, grid.d),
    )


def endpoint_selector(grid: PathGrid) -> np.ndarray:
    """Linear map ``R^(n*d) -> R^d`` extracting ``x_T - x_0 = x_T``."""
    sel = np.zeros((grid.d, grid.n * grid.d))
    sel[:, -grid.d:] = np.eye(grid.d)
    return sel


def sample_paths(grid: PathGrid, rng: np.random.Generator, count: int) -> np.ndarray:
    """Exact Brownian draws as an array of shape (count, n + 1, d)."""
    steps = rng.standard_normal((count, grid.n, grid.d)) * math.sqrt(grid.dt)
    out = np.zeros((count, grid.n + 1, grid.d))
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return out


def diffusive_rescale(obj, c: float):
    """Rescale time by ``c`` and space by ``sqrt(c)``.

    Accepts a :class:`DiscretePath`, a :class:`PathGrid` or a
    :class:`GaussianMeasure` (whose covariance is multiplied by ``c``).
    """
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    if isinstance(obj, DiscretePath):
        return DiscretePath(obj.grid.scaled(c), math.sqrt(c) * obj.positions)
    if isinstance(obj, PathGrid):
        return obj.scaled(c)
    if isinstance(obj, GaussianMeasure):
        kw = {}
        if obj.has_precision:
            kw["precision"] = obj.precision / c
        if obj._covariance is not None or "covariance" in obj.__dict__ or not kw:
            kw["covariance"] = c * obj.covariance
        return GaussianMeasure(**kw)
    raise TypeError(f"cannot rescale {type(obj).__name__}")


def tube_tail_bound(R: float, T: float, d: int) -> float:
    """Union-over-coordinates reflection bound 4d exp(-R^2 / (2dT)), capped at 1."""
    return min(1.0, 4.0 * d * math.exp(-R * R / (2.0 * d * T)))


@dataclass(frozen=True)
class TailEstimate:
    estimate: float
    stderr: float
    analytic_bound: float
    n_samples: int
    seed: int


def tube_exceedance(
    grid: PathGrid, R: float, seed: int, n_samples: int, batch: int = 4096
) -> TailEstimate:
    """Monte Carlo estimate of ``P(max_i ||x_{t_i}|| >= R)``."""
    if not R > 0:
        raise ValueError("R must be positive")
    rng = make_rng(seed)
    hits = 0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        paths = sample_paths(grid, rng, m)
        sup = np.max(np.einsum("kia,kia->ki", paths, paths), axis=1)
        hits += int(np.count_nonzero(sup >= R * R))
        done += m
    p = hits / n_samples
    return TailEstimate(
        estimate=p,
        stderr=math.sqrt(p * (1 - p) / n_samples),
        analytic_bound=tube_tail_bound(R, grid.T, grid.d),
        n_samples=n_samples,
        seed=seed,
    )


def calibrate_cb(alpha: float, d: int) -> float:
    """Smallest c_b on a 1e-3 grid with 4d exp(-c_b^2 log(alpha)/(2d)) <= alpha^-10."""
    if alpha < 2:
        raise ValueError(f"alpha must be >= 2, got {alpha}")
    log_a = math.log(alpha)
    exact = math.sqrt(2.0 * d * (TAIL_EXPONENT + math.log(4.0 * d) / log_a))
    k = max(math.ceil(exact / CB_GRID) - 2, 0)
    while 4.0 * d * math.exp(-(k * CB_GRID) ** 2 * log_a / (2.0 * d)) > alpha ** -TAIL_EXPONENT:
        k += 1
    return k * CB_GRID


def block_size(alpha: float, eps: float, cb: float) -> float:
    """Block length eps^2 / (4 c_b^2 log alpha)."""
    if not math.log(alpha) > 0:
        raise AlphaTooSmallError(f"log(alpha) must be positive, got alpha={alpha}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    return eps * eps / (4.0 * cb * cb * math.log(alpha))


def kl_basis(grid: PathGrid, modes: int) -> np.ndarray:
    """Sine Karhunen-Loeve functions evaluated on nodes 1..n, shape (modes, n).

    ``h_k(t) = sqrt(2T) / ((k - 1/2) pi) * sin((k - 1/2) pi t / T)``; these are
    orthonormal in the Cameron-Martin norm ``int h'(t)^2 dt``.
    """
    k = np.arange(1, modes + 1) - 0.5
    t = grid.times[1:]
    return (math.sqrt(2.0 * grid.T) / (k * math.pi))[:, None] * np.sin(
        np.outer(k, t) * math.pi / grid.T)


def project_approximation(grid: PathGrid, modes: int) -> GaussianMeasure:
    """Law of the rank-``modes`` Cameron-Martin projection, on the grid.

    The covariance is the truncated kernel ``sum_k h_k(s) h_k(t)`` per
    coordinate; it is singular for ``modes < n`` and is stored without
    validation.
    """
    if modes < 1:
        raise ValueError("modes must be >= 1")
    h = kl_basis(grid, modes)
    k = h.T @ h
    cov = k if grid.d == 1 else np.kron(k, np.eye(grid.d))
    return GaussianMeasure(covariance=cov)
