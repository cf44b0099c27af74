"""Explicit bound computations for the perturbed path measure.

* the quadratic lower bound ``T / (1 + 2 alpha C_g)`` and the variational
  functional whose supremum it bounds from below;
* block labellings ``gamma`` and their combinatorics;
* the block-penalized Gaussian measures ``Pbar^beta`` with exact MSD;
* the assembled upper envelope for bounded potentials.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.integrate as sint
import scipy.linalg as sla

from .brownian import PathGrid, block_size, brownian_measure, brownian_precision, calibrate_cb, endpoint_selector
from .errors import AlphaTooSmallError, NonConvergenceError
from .gaussian_core import reweight_quadratic, second_moment
from .gibbs import pinned_pair_form
from .potential import Certificate, pair_time_lags

TAIL_EXPONENT = 10.0
DOUBLED_VARIANCE = 4.0
# max ratio barP_msd / (s/beta + beta^-1/2) over beta in {4,16,64,256},
# s in {4,16,64}, d = 3, 64 points per block
K_FIT_D3 = 2.2188497901666966


def frozen_K(d: int) -> float:
    """Fitted block constant in dimension d (the MSD is linear in d)."""
    return K_FIT_D3 * d / 3.0


@dataclass(frozen=True)
class BlockDecomposition:
    S: tuple[int, ...]
    M0: tuple[int, ...]
    M1: tuple[int, ...]
    good_blocks: tuple[int, ...]


def block_decompose(gamma: Sequence[int]) -> BlockDecomposition:
    """Split a 0/1 labelling into S, M_0, M_1 and the good-block lengths.

    ``S`` holds the ``i`` with ``gamma[i] = gamma[i+1] = 1``; good blocks are
    the maximal runs of ones, reported by length in order.
    """
    g = [int(b) for b in gamma]
    if not g:
        raise ValueError("gamma must be nonempty")
    if any(b not in (0, 1) for b in g):
        raise ValueError("gamma must be a 0/1 vector")
    S = tuple(i for i in range(len(g) - 1) if g[i] == 1 == g[i + 1])
    M0 = tuple(i for i, b in enumerate(g) if b == 0)
    M1 = tuple(i for i, b in enumerate(g) if b == 1)
    runs = tuple(len(list(grp)) for bit, grp in itertools.groupby(g) if bit == 1)
    return BlockDecomposition(S, M0, M1, runs)


@dataclass(frozen=True)
class BlockScheme:
    gamma: tuple[int, ...]
    c: float
    beta0: float
    beta1: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("block size c must be positive")
        if self.beta0 < 0 or self.beta1 < 0:
            raise ValueError("penalties must be nonnegative")
        object.__setattr__(self, "gamma", tuple(int(b) for b in self.gamma))

    @cached_property
    def decomposition(self) -> BlockDecomposition:
        return block_decompose(self.gamma)


@dataclass(frozen=True)
class DecayFunction:
    """Nonnegative decay ``g`` with ``C_g = int_0^inf t^2 g(t) dt``."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    label: str = "g"
    C_g: float = field(init=False)

    def __post_init__(self):
        probe = np.asarray(self.evaluator(np.linspace(0.0, 50.0, 2001)), dtype=float)
        if np.any(probe < 0) or not np.all(np.isfinite(probe)):
            raise ValueError(f"{self.label} must be finite and nonnegative")
        val, _ = sint.quad(lambda t: t * t * float(self.evaluator(np.asarray(t))), 0.0, np.inf,
                           limit=200)
        if not math.isfinite(val):
            raise ValueError(f"{self.label}: second moment diverges")
        object.__setattr__(self, "C_g", float(val))

    def __call__(self, tau):
        return self.evaluator(np.asarray(tau, dtype=float))


def exp_decay() -> DecayFunction:
    return DecayFunction(lambda t: np.exp(-t), "exp(-t)")


def lower_bound_quadratic(alpha: float, T: float, g: DecayFunction) -> float:
    """Per-coordinate lower bound ``T / (1 + 2 alpha C_g)``."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    return T / (1.0 + 2.0 * alpha * g.C_g)


def _pair_sum_matrix(grid: PathGrid, g: Callable, alpha: float) -> np.ndarray:
    """Form for ``alpha sum_{i,j<n} g(|i-j|dt)(f_i - f_j)^2 dt^2`` on knots 1..n."""
    w = np.zeros((grid.n + 1, grid.n + 1))
    w[: grid.n, : grid.n] = alpha * np.asarray(g(pair_time_lags(grid)), dtype=float) * grid.dt ** 2
    return pinned_pair_form(w).matrix


def variational_value(knots: np.ndarray, alpha: float, T: float, g: Callable) -> float:
    """Discrete functional of the piecewise-linear f through ``knots``.

    ``2 (f(T) - f(0)) / sqrt(T) - sum_i f'(t_i)^2 dt
    - alpha sum_{i,j<n} (f_i - f_j)^2 g(|t_i - t_j|) dt^2``
    with forward differences for f'.
    """
    f = np.asarray(knots, dtype=float)
    n = f.size - 1
    if n < 1:
        raise ValueError("need at least two knots")
    dt = T / n
    slope = np.diff(f) / dt
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) * dt
    diff = np.subtract.outer(f[:n], f[:n])
    penalty = alpha * float(np.sum(diff * diff * np.asarray(g(lag), dtype=float))) * dt * dt
    return float(2.0 * (f[-1] - f[0]) / math.sqrt(T) - np.sum(slope * slope) * dt - penalty)


def linear_optimum(alpha: float, T: float, g: Callable, n: int) -> tuple[float, np.ndarray]:
    """Best linear ``f(t) = L t`` on the grid: ``L = sqrt(T) / (T + alpha I)``."""
    t = np.linspace(0.0, T, n + 1)
    dt = T / n
    lag = np.abs(np.subtract.outer(t[:n], t[:n]))
    I = float(np.sum(lag * lag * np.asarray(g(lag), dtype=float))) * dt * dt
    L = math.sqrt(T) / (T + alpha * I)
    return T / (T + alpha * I), L * t


@dataclass(frozen=True)
class VariationalResult:
    value: float
    knots: np.ndarray
    iterations: int
    linear_value: float


def optimize_variational(alpha: float, T: float, g: Callable, n_knots: int = 64,
                         iters: int = 500, seed: int = 0, tol: float = 1e-12) -> VariationalResult:
    """Maximize :func:`variational_value` over knots on an ``n_knots``-step grid.

    Preconditioned gradient ascent from the best linear f, with the discrete
    Dirichlet form as preconditioner and backtracking on the step. The
    objective is a concave quadratic, so the ascent is monotone and reaches
    the global maximum. ``seed`` is recorded only: the method is
    deterministic.
    """
    if n_knots < 2:
        raise ValueError("n_knots must be >= 2")
    grid = PathGrid(T, n_knots, 1)
    A = brownian_precision(grid) + _pair_sum_matrix(grid, g, alpha)
    b = np.zeros(n_knots)
    b[-1] = 1.0 / math.sqrt(T)
    pre = sla.cho_factor(brownian_precision(grid))

    def value(x):
        return 2.0 * float(b @ x) - float(x @ A @ x)

    lin, knots = linear_optimum(alpha, T, g, n_knots)
    x = knots[1:].copy()
    v = value(x)
    step = 1.0
    for it in range(1, iters + 1):
        grad = 2.0 * (b - A @ x)
        direction = sla.cho_solve(pre, grad)
        gain = float(grad @ direction)
        if gain <= tol * max(abs(v), 1.0):
            break
        while True:
            trial = x + step * direction
            vt = value(trial)
            if vt >= v + 1e-4 * step * gain:
                break
            step *= 0.5
            if step < 1e-14:
                raise NonConvergenceError(f"ascent step underflowed at iteration {it}")
        x, v = trial, vt
        step = min(1.0, 2.0 * step)
    out = np.concatenate([[0.0], x])
    return VariationalResult(value=variational_value(out, alpha, T, g), knots=out,
                             iterations=it, linear_value=lin)


def barP_weights(c: float, s: int, points_per_block: int, beta: float) -> tuple[PathGrid, np.ndarray]:
    """Pair weights of the block penalties on ``[0, c s]``, nodes ``0..n``.

    Intra-block double integrals run over both orderings; each adjacent-block
    integral covers an unordered pair once, so its weight is split evenly
    between the two orderings.
    """
    if s < 1 or points_per_block < 1:
        raise ValueError("s and points_per_block must be positive")
    m = points_per_block
    n = s * m
    grid = PathGrid(c * s, n, 1)
    dt2 = grid.dt ** 2
    w = np.zeros((n + 1, n + 1))
    for j in range(s):
        w[j * m:(j + 1) * m, j * m:(j + 1) * m] = beta * dt2
    for j in range(s - 1):
        w[j * m:(j + 1) * m, (j + 1) * m:(j + 2) * m] = 0.5 * beta * dt2
        w[(j + 1) * m:(j + 2) * m, j * m:(j + 1) * m] = 0.5 * beta * dt2
    return grid, w


def barP_msd(beta: float, c: float, s: int, points_per_block: int = 64, d: int = 3) -> float:
    """Exact ``E ||x_{cs}||^2`` under the block-penalized Brownian measure."""
    if beta < 0 or not c > 0:
        raise ValueError("need beta >= 0 and c > 0")
    grid, w = barP_weights(c, s, points_per_block, beta)
    base = brownian_measure(grid)
    m = reweight_quadratic(base, pinned_pair_form(w)) if beta > 0 else base
    return d * second_moment(m, endpoint_selector(grid))


def lemma_rate(beta: float, s: float) -> float:
    return s / beta + beta ** -0.5


@dataclass(frozen=True)
class KFit:
    K: float
    table: tuple[tuple[float, int, float, float], ...]  # (beta, s, value, ratio)


def fit_K(betas: Sequence[float], ss: Sequence[int], points_per_block: int = 32,
          d: int = 3) -> KFit:
    """Smallest K with ``barP_msd(beta, 1, s) <= K (s/beta + beta^{-1/2})`` on the grid."""
    rows = []
    for beta in betas:
        for s in ss:
            v = barP_msd(beta, 1.0, s, points_per_block, d)
            rows.append((float(beta), int(s), v, v / lemma_rate(beta, s)))
    return KFit(max(r[3] for r in rows), tuple(rows))


def envelope_parameters(alpha: float, certificate: Certificate, d: int) -> tuple[float, float]:
    """Block size ``c(alpha)`` and penalty ``beta = alpha C_2eps``."""
    cb = calibrate_cb(alpha, d)
    c = block_size(alpha, certificate.eps, cb)
    if c >= certificate.delta:
        raise AlphaTooSmallError(
            f"block size {c:.3g} is not below delta={certificate.delta}; increase alpha")
    return c, alpha * certificate.C_2eps


def upper_bound_envelope(alpha: float, T: float, certificate: Certificate, d: int,
                         K_fit: float) -> float:
    """Upper envelope for ``E ||x_T||^2`` with the fitted block constant ``K_fit``.

    ``K (T/(c^3 beta) + (alpha^-10 T/c + 1)(beta c^3)^{-1/2}) + alpha^-10 (T/c) 4d``
    """
    if alpha <= 2:
        raise AlphaTooSmallError(f"alpha must exceed 2, got {alpha}")
    c, beta = envelope_parameters(alpha, certificate, d)
    tail = alpha ** -TAIL_EXPONENT
    bc3 = beta * c ** 3
    return (K_fit * (T / bc3 + (tail * T / c + 1.0) * bc3 ** -0.5)
            + tail * (T / c) * DOUBLED_VARIANCE * d)
