"""Pair potentials W(r, tau) and the discretized path energy.

The energy of a path on a grid with step ``dt`` is the left-endpoint double
Riemann sum

    alpha * sum_{i,j=0}^{n-1} W(||x_i - x_j||, |i - j| dt) dt^2,

diagonal included by default. Potentials of product form ``U(r) v(tau)``
(all built-ins) expose the two factors so that the time weights can be
tabulated once per grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .brownian import DiscretePath, PathGrid
from .errors import (
    CertificationFailedError,
    NonFiniteEnergyError,
    NonFiniteValueError,
    UnboundedPotentialError,
)
from .qc import CheckReport, ScalarFunction, is_qc

Array = np.ndarray


@dataclass(frozen=True)
class Certificate:
    eps: float
    delta: float
    C_2eps: float


@dataclass(frozen=True)
class PairPotential:
    """Pair interaction W(r, tau), vectorized over equal-shape arrays.

    ``radial_sq`` (a function of r^2) and ``temporal`` are set for product
    potentials ``W = U(r) v(tau)``; ``evaluator`` is always authoritative.
    ``quadratic_decay`` is set when ``W = const - r^2 g(tau)`` for
    ``r <= support_radius``.
    """

    evaluator: Callable[[Array, Array], Array]
    upper_bound: float
    label: str
    certificate: Certificate | None = None
    radial_sq: Callable[[Array], Array] | None = None
    temporal: Callable[[Array], Array] | None = None
    params: tuple = ()
    quadratic_decay: Callable[[Array], Array] | None = None
    support_radius: float = math.inf

    def __post_init__(self):
        if not math.isfinite(self.upper_bound):
            raise UnboundedPotentialError(f"{self.label}: W must be bounded from above")

    def __call__(self, r, tau):
        return self.evaluator(np.asarray(r, dtype=float), np.asarray(tau, dtype=float))


def _exp_decay(tau):
    return np.exp(-tau)


def quadratic(decay: Callable[[Array], Array] = _exp_decay, decay_sup: float = 1.0,
              label: str = "quadratic") -> PairPotential:
    """W(r, tau) = -r^2 g(tau); ``decay_sup`` is only used for labelling."""
    return PairPotential(
        evaluator=lambda r, tau: -(r * r) * decay(tau),
        upper_bound=0.0,
        label=label,
        radial_sq=lambda r2: -r2,
        temporal=decay,
        params=(("decay_sup", decay_sup),),
        quadratic_decay=decay,
    )


def bump() -> PairPotential:
    """W(r, tau) = (1 - r^2) 1[r <= 1] e^{-tau}."""
    def radial_sq(r2):
        return np.maximum(1.0 - r2, 0.0)

    return PairPotential(
        evaluator=lambda r, tau: radial_sq(r * r) * np.exp(-tau),
        upper_bound=1.0,
        label="bump",
        radial_sq=radial_sq,
        temporal=_exp_decay,
        quadratic_decay=_exp_decay,
        support_radius=1.0,
    )


def truncated_coulomb(cap: float = 10.0, shape: str = "flat") -> PairPotential:
    """Coulomb potential truncated at height ``cap``, times e^{-tau}.

    ``shape="flat"`` gives ``min(cap, 1/r)``. ``shape="linear"`` replaces the
    plateau by the tangent line ``2 cap - cap^2 r`` of ``1/r`` at ``1/cap``;
    it is strictly decreasing at the origin and so can satisfy the
    quadratic-slack condition, at the price of sup W = 2 cap.
    """
    if not cap > 0:
        raise ValueError("cap must be positive")
    if shape == "flat":
        def radial(r):
            with np.errstate(divide="ignore"):
                return np.minimum(cap, 1.0 / np.maximum(r, 1e-300))
    elif shape == "linear":
        def radial(r):
            with np.errstate(divide="ignore"):
                far = 1.0 / np.maximum(r, 1e-300)
            return np.where(r <= 1.0 / cap, 2.0 * cap - cap * cap * r, far)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return PairPotential(
        evaluator=lambda r, tau: radial(r) * np.exp(-tau),
        upper_bound=float(cap if shape == "flat" else 2.0 * cap),
        label=f"truncated_coulomb[{shape},A={cap:g}]",
        radial_sq=lambda r2: radial(np.sqrt(r2)),
        temporal=_exp_decay,
        params=(("cap", cap), ("shape", shape)),
    )


BUILTINS = {
    "quadratic": quadratic,
    "bump": bump,
    "truncated_coulomb": truncated_coulomb,
}


# (eps, delta, C_2eps) known to pass certify_assumption
DEFAULT_CERTIFICATES = {
    "quadratic": (0.5, 0.1, math.exp(-0.2)),
    "bump": (0.25, 0.1, math.exp(-0.2)),
}


def by_name(name: str, **params) -> PairPotential:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)


def check_continuity(W: PairPotential, r_max: float, tau_max: float,
                     resolution: float = 1e-3, refine: int = 10) -> CheckReport:
    """Flag jumps of W on [0, r_max] x [0, tau_max].

    At a continuity point the largest increment over a cell shrinks when the
    cell is refined. The worst cell at ``resolution`` is refined by
    ``refine``; a jump shows up as an increment that does not shrink below
    half its coarse value.
    """
    r = np.arange(0.0, r_max + 0.5 * resolution, resolution)
    tau = np.arange(0.0, tau_max + 0.5 * resolution, resolution)
    rr, tt = np.meshgrid(r, tau, indexing="ij")
    v = W(rr, tt)
    dr = np.abs(np.diff(v, axis=0))
    dtau = np.abs(np.diff(v, axis=1))
    worst_r = np.unravel_index(np.argmax(dr), dr.shape)
    worst_t = np.unravel_index(np.argmax(dtau), dtau.shape)
    passed, worst, witness = True, 0.0, ()
    for axis, (i, j), coarse in ((0, worst_r, dr[worst_r]), (1, worst_t, dtau[worst_t])):
        if coarse <= 1e-12:
            continue
        h = resolution / refine
        if axis == 0:
            pts = r[i] + h * np.arange(refine + 1)
            fine = np.max(np.abs(np.diff(W(pts, np.full_like(pts, tau[j])))))
        else:
            pts = tau[j] + h * np.arange(refine + 1)
            fine = np.max(np.abs(np.diff(W(np.full_like(pts, r[i]), pts))))
        if fine > 0.5 * coarse:
            passed = False
            worst, witness = max(worst, float(fine)), (float(r[i]), float(tau[j]))
    return CheckReport(passed, worst, int(v.size), 0, witness, f"continuity[{W.label}]")


def certify_assumption(W: PairPotential, eps: float, delta: float, C: float,
                       grid_resolution: float = 1e-3, *, probes: int = 2000,
                       seed: int = 0) -> CheckReport:
    """Check the certificate (eps, delta, C) for W.

    Passes iff (a) r -> W(r, tau) is symmetric and quasi-concave (as a
    function of x in R through r = |x|) for sampled tau > 0, (b) W is jointly
    continuous on the probe box, and (c) r -> W(r, tau) + C r^2 is
    non-increasing on a grid of [0, 2 eps] for every tau on a grid of
    [0, 2 delta]. The witness is the (r, tau) of the worst violation.
    """
    if min(eps, delta, C, grid_resolution) <= 0:
        raise ValueError("eps, delta, C and grid_resolution must be positive")
    radius = max(4.0 * eps, 2.0)
    for k, tau in enumerate(np.linspace(0.0, max(4.0 * delta, 1.0), 9)[1:]):
        f = ScalarFunction(1, lambda x, t=tau: W(np.abs(x[:, 0]), np.full(x.shape[0], t)),
                           f"W(.,{tau:.3g})")
        rep = is_qc(f, probes, seed + 7 * k, radius)
        if not rep.passed:
            return CheckReport(False, rep.worst_violation, probes, seed, (None, float(tau)),
                               f"{W.label}: W(., tau) not (QC)")
    cont = check_continuity(W, radius, max(2.0 * delta, 1.0), grid_resolution)
    if not cont.passed:
        return CheckReport(False, cont.worst_violation, cont.probes, seed, cont.witness,
                           f"{W.label}: jump detected")
    r = np.arange(0.0, 2.0 * eps + 0.5 * grid_resolution, grid_resolution)
    r = np.minimum(r, 2.0 * eps)
    tau = np.minimum(np.arange(0.0, 2.0 * delta + 0.5 * grid_resolution, grid_resolution),
                     2.0 * delta)
    rr, tt = np.meshgrid(r, tau, indexing="xy")
    v = W(rr, tt) + C * rr * rr
    if not np.all(np.isfinite(v)):
        raise NonFiniteValueError(f"{W.label}: non-finite value on certification grid")
    rise = np.diff(v, axis=1)
    tol = 1e-9 * (1.0 + np.abs(v[:, :-1]))
    excess = rise - tol
    k = np.unravel_index(np.argmax(excess), excess.shape)
    passed = bool(excess[k] <= 0)
    return CheckReport(passed, float(max(rise[k], 0.0)), int(v.size), seed,
                       (float(r[k[1] + 1]), float(tau[k[0]])),
                       f"{W.label}: W + C r^2 non-increasing")


def certified(W: PairPotential, eps: float, delta: float, C: float, **kw) -> PairPotential:
    """Copy of W carrying the certificate, or CertificationFailedError."""
    report = certify_assumption(W, eps, delta, C, **kw)
    if not report.passed:
        raise CertificationFailedError(
            f"{report.label} failed: worst {report.worst_violation:.3e} at {report.witness}")
    return replace(W, certificate=Certificate(eps, delta, C))


def pair_time_lags(grid: PathGrid) -> Array:
    idx = np.arange(grid.n)
    return np.abs(np.subtract.outer(idx, idx)) * grid.dt


class PathEnergy:
    """Energy functional on a fixed grid with the time factors tabulated."""

    def __init__(self, grid: PathGrid, W: PairPotential, alpha: float, diagonal: bool = True):
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        self.grid, self.W, self.alpha, self.diagonal = grid, W, float(alpha), diagonal
        self.tau = pair_time_lags(grid)
        self.scale = self.alpha * grid.dt ** 2
        self.time_weight = None
        if W.temporal is not None and W.radial_sq is not None:
            self.time_weight = W.temporal(self.tau) * self.scale
            if not diagonal:
                np.fill_diagonal(self.time_weight, 0.0)

    def squared_distances(self, positions: Array) -> Array:
        x = positions[: self.grid.n]
        sq = np.einsum("ia,ia->i", x, x)
        d2 = x @ x.T
        d2 *= -2.0
        d2 += sq[:, None]
        d2 += sq[None, :]
        return np.maximum(d2, 0.0, out=d2)

    def __call__(self, positions: Array) -> float:
        if self.alpha == 0.0:
            return 0.0
        d2 = self.squared_distances(positions)
        if self.time_weight is not None:
            e = float(np.vdot(self.W.radial_sq(d2), self.time_weight))
        else:
            w = self.W(np.sqrt(d2), self.tau)
            if not self.diagonal:
                np.fill_diagonal(w, 0.0)
            e = self.scale * float(np.sum(w))
        if not math.isfinite(e):
            raise NonFiniteEnergyError(f"non-finite energy {e}")
        return e


def energy(path: DiscretePath, W: PairPotential, alpha: float, diagonal: bool = True) -> float:
    """``alpha * sum_{i,j<n} W(||x_i - x_j||, |i-j| dt) dt^2`` for one path."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return PathEnergy(path.grid, W, alpha, diagonal)(path.positions)
