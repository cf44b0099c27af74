"""Metropolis sampling of the perturbed path measure and MSD estimation.

The target has density proportional to ``exp(energy(x))`` against the
discretized Brownian law. Moves are preconditioned Crank-Nicolson
proposals ``x' = sqrt(1 - rho^2) x + rho xi`` with ``xi`` a fresh draw from
a Gaussian reference; they leave the reference invariant, so the
acceptance ratio only involves the density.

By default the reference is Brownian motion itself. A *reference tilt*
``Q`` replaces it by Brownian motion reweighted by ``exp(-x^T Q x)``; the
density then becomes ``exp(energy(x) + x^T Q x)``. Choosing ``Q`` as the
quadratic part of the energy keeps acceptance high at large coupling.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np
import scipy.linalg as sla

from .brownian import DiscretePath, PathGrid, brownian_measure, endpoint_selector
from .errors import AdaptationFailedError
from .gaussian_core import GaussianMeasure, QuadraticForm, make_rng, reweight_quadratic, second_moment
from .potential import PairPotential, PathEnergy, pair_time_lags

MIN_RHO = 1e-4
ADAPT_WINDOW = 100
TARGET_ACCEPTANCE = (0.2, 0.5)
MIN_BATCHES = 20


@dataclass(frozen=True)
class SamplerConfig:
    grid: PathGrid
    potential: PairPotential
    alpha: float
    proposal_mix: float = 0.5
    chain_length: int = 20_000
    burn_in: int = 2_000
    thin: int = 1
    seed: int = 0
    adapt: bool = True
    reference_tilt: QuadraticForm | None = None

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if not 0 < self.proposal_mix <= 1:
            raise ValueError("proposal_mix must lie in (0, 1]")
        if self.chain_length < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValueError("chain_length and thin must be positive, burn_in nonnegative")
        if self.burn_in >= self.chain_length:
            raise ValueError("burn_in must be smaller than chain_length")
        if self.reference_tilt is not None and self.reference_tilt.dim != self.grid.n:
            raise ValueError("reference_tilt acts on one coordinate: dim must equal grid.n")


@dataclass(frozen=True)
class MsdEstimate:
    value: float
    stderr: float
    ess: float
    acceptance_rate: float
    seed: int
    n_samples: int = 0
    rho: float = float("nan")

    def __post_init__(self):
        if not math.isfinite(self.stderr):
            raise ValueError("stderr must be finite")


@dataclass
class ChainState:
    iteration: int
    positions: np.ndarray
    energy: float
    accepted: bool

    def path(self, grid: PathGrid) -> DiscretePath:
        return DiscretePath(grid, self.positions)


def pinned_pair_form(weights: np.ndarray) -> QuadraticForm:
    """Form of ``sum_{i,j} w_ij (x_i - x_j)^2`` with ``x_0 = 0`` pinned.

    ``weights`` is indexed by nodes ``0..n``; the result acts on nodes
    ``1..n`` of a single coordinate.
    """
    full = QuadraticForm.from_pair_weights(weights)
    return QuadraticForm(full.matrix[1:, 1:], check_psd=False)


def quadratic_penalty(grid: PathGrid, g: Callable, alpha: float) -> QuadraticForm:
    """One-coordinate form of ``alpha * sum_{i,j<n} g(|i-j| dt) (x_i - x_j)^2 dt^2``."""
    w = np.zeros((grid.n + 1, grid.n + 1))
    w[: grid.n, : grid.n] = alpha * np.asarray(g(pair_time_lags(grid)), dtype=float) * grid.dt ** 2
    if np.any(w < 0):
        raise ValueError("decay function must be nonnegative on the grid")
    return pinned_pair_form(w)


def quadratic_measure(grid: PathGrid, g: Callable, alpha: float) -> GaussianMeasure:
    """One-coordinate law of the path under the quadratic potential -r^2 g."""
    base = brownian_measure(grid.coordinate())
    return reweight_quadratic(base, quadratic_penalty(grid, g, alpha))


def exact_msd_quadratic(grid: PathGrid, g: Callable, alpha: float) -> float:
    """Exact ``E ||x_T||^2`` for ``W = -r^2 g(tau)`` on the grid.

    Coordinates decouple, so the one-coordinate value is multiplied by d.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    one = grid.coordinate()
    m = quadratic_measure(grid, g, alpha)
    return grid.d * second_moment(m, endpoint_selector(one))


def _reference_sampler(grid: PathGrid, tilt: QuadraticForm | None):
    """Return ``draw(rng) -> (n + 1, d)`` positions from the reference law."""
    n, d = grid.n, grid.d
    sqdt = math.sqrt(grid.dt)
    if tilt is None:
        def draw(rng):
            out = np.zeros((n + 1, d))
            np.cumsum(rng.standard_normal((n, d)) * sqdt, axis=0, out=out[1:])
            return out
        return draw
    m = reweight_quadratic(brownian_measure(grid.coordinate()), tilt)
    # precision = C C^T, so C^{-T} z has covariance precision^{-1}
    root = sla.solve_triangular(m.precision_factor, np.eye(n), lower=True).T.copy()

    def draw(rng):
        out = np.zeros((n + 1, d))
        out[1:] = root @ rng.standard_normal((n, d))
        return out
    return draw


def _log_density(config: SamplerConfig):
    e = PathEnergy(config.grid, config.potential, config.alpha)
    tilt = config.reference_tilt
    if tilt is None:
        return e
    q = tilt.matrix

    def logp(positions):
        x = positions[1:]
        return e(positions) + float(np.vdot(x, q @ x))
    return logp


def iter_chain(config: SamplerConfig) -> Iterator[ChainState]:
    """Yield the post-burn-in, thinned states of one chain.

    Every ``thin``-th iteration after burn-in is yielded; the positions array
    is a fresh copy. The final proposal mix and the acceptance rate over the
    sampling phase are stored on the generator's return value.
    """
    rng = make_rng(config.seed)
    draw = _reference_sampler(config.grid, config.reference_tilt)
    logp = _log_density(config)
    rho = config.proposal_mix
    x = draw(rng)
    lx = logp(x)
    window_acc = 0
    accepted_after = 0
    for it in range(config.chain_length):
        a, b = math.sqrt(1.0 - rho * rho), rho
        y = a * x + b * draw(rng)
        ly = logp(y)
        ok = ly >= lx or rng.random() < math.exp(ly - lx)
        if ok:
            x, lx = y, ly
        if it < config.burn_in:
            window_acc += ok
            if config.adapt and (it + 1) % ADAPT_WINDOW == 0:
                rate = window_acc / ADAPT_WINDOW
                if rate < 0.01 and rho <= MIN_RHO:
                    raise AdaptationFailedError(
                        f"acceptance {rate:.3f} at minimum proposal mix {MIN_RHO}")
                if rate < TARGET_ACCEPTANCE[0]:
                    rho = max(MIN_RHO, rho * 0.7)
                elif rate > TARGET_ACCEPTANCE[1]:
                    rho = min(1.0, rho * 1.3)
                window_acc = 0
            continue
        accepted_after += ok
        if (it - config.burn_in) % config.thin == 0:
            yield ChainState(it, x.copy(), lx, bool(ok))
    return rho, accepted_after / (config.chain_length - config.burn_in)


def integrated_autocorr_time(series: np.ndarray) -> float:
    """Geyer initial-positive-sequence estimate of the integrated autocorrelation time."""
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    var = float(np.dot(x, x) / n)
    if n < 4 or var <= 0:
        return 1.0
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n] / (n * var)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return max(tau, 1.0 / n)


def batch_means_stderr(series: np.ndarray, batches: int | None = None) -> float:
    x = np.asarray(series, dtype=float)
    n = x.size
    nb = batches or max(MIN_BATCHES, int(math.isqrt(n)))
    if n < nb:
        raise ValueError(f"need at least {nb} samples for batch means, got {n}")
    size = n // nb
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(nb))


def summarize(series: np.ndarray, acceptance: float, seed: int, rho: float = float("nan")) -> MsdEstimate:
    x = np.asarray(series, dtype=float)
    tau = integrated_autocorr_time(x)
    return MsdEstimate(
        value=float(max(x.mean(), 0.0)),
        stderr=batch_means_stderr(x),
        ess=float(x.size / tau),
        acceptance_rate=float(acceptance),
        seed=seed,
        n_samples=int(x.size),
        rho=rho,
    )


def run_chain(config: SamplerConfig, on_sample: Callable[[ChainState], None] | None = None) -> MsdEstimate:
    """Run one chain and return the MSD estimate of ``||x_T||^2``."""
    gen = iter_chain(config)
    values = []
    while True:
        try:
            state = next(gen)
        except StopIteration as stop:
            rho, acceptance = stop.value
            break
        end = state.positions[-1]
        values.append(float(end @ end))
        if on_sample is not None:
            on_sample(state)
    return summarize(np.array(values), acceptance, config.seed, rho)


def merge_estimates(estimates: Iterable[MsdEstimate]) -> MsdEstimate:
    """Inverse-variance combination of independent chains."""
    est = list(estimates)
    if not est:
        raise ValueError("nothing to merge")
    if len(est) == 1:
        return est[0]
    w = np.array([1.0 / max(e.stderr, 1e-300) ** 2 for e in est])
    vals = np.array([e.value for e in est])
    return MsdEstimate(
        value=float(np.sum(w * vals) / np.sum(w)),
        stderr=float(1.0 / math.sqrt(np.sum(w))),
        ess=float(sum(e.ess for e in est)),
        acceptance_rate=float(np.mean([e.acceptance_rate for e in est])),
        seed=est[0].seed,
        n_samples=sum(e.n_samples for e in est),
    )


@dataclass
class PathRecorder:
    """Collects chain states for a CSV dump."""

    grid: PathGrid
    chain: int = 0
    rows: list = field(default_factory=list)

    def __call__(self, state: ChainState) -> None:
        self.rows.append((self.chain, state.iteration, state.positions))

    def write(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["chain", "iteration", "t_i", "coordinate", "value"])
        times = self.grid.times
        for chain, it, pos in self.rows:
            for i, t in enumerate(times):
                for a in range(self.grid.d):
                    w.writerow([chain, it, repr(float(t)), a, repr(float(pos[i, a]))])


def auto_tilt(grid: PathGrid, W: PairPotential, alpha: float) -> QuadraticForm | None:
    """Quadratic-part tilt when the quadratic model keeps paths in the support.

    Returns the tilt for potentials with a quadratic part whose exact
    quadratic-model MSD is below ``support_radius^2``, else None.
    """
    if W.quadratic_decay is None or alpha == 0:
        return None
    if exact_msd_quadratic(grid, W.quadratic_decay, alpha) >= W.support_radius ** 2:
        return None
    return quadratic_penalty(grid, W.quadratic_decay, alpha)


def bump_tilt(grid: PathGrid, alpha: float) -> QuadraticForm:
    """Quadratic part of the bump energy: ``alpha sum e^{-tau} r^2 dt^2``."""
    return quadratic_penalty(grid, _exp_decay, alpha)


def _exp_decay(tau):
    return np.exp(-tau)
