"""Monte Carlo checks of the correlation and domination inequalities.

Each check returns an :class:`InequalityReport` whose ``margin`` is the
slack of the asserted inequality (positive when it holds); a check passes
when the margin is no lower than ``-3`` standard errors. Standard errors come from the
influence function of the estimator, so quantities estimated from common
samples carry their correlation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import block_diag

from .brownian import PathGrid, brownian_measure
from .errors import (
    DegenerateWeightsError,
    DominationFailedError,
    SetTooSmallError,
    UncertifiedFunctionError,
)
from .gaussian_core import (
    GaussianMeasure,
    QuadraticForm,
    make_gaussian,
    reweight_quadratic,
    sample,
    second_moment,
    spawn_seeds,
    times_two,
)
from .gibbs import pinned_pair_form, quadratic_penalty
from .qc import BlockBallProduct, ScalarFunction, check_convex, check_qc_on_set, check_symmetric, is_qc

C1 = 100.0
C_TILDE = 100.5
SIGMAS = 3.0
MIN_ESS = 100.0
MAX_SET_MASS = 0.1
CERT_PROBES = 2000


@dataclass(frozen=True)
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    margin: float
    margin_stderr: float
    passed: bool
    n_samples: int
    seed: int
    details: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        vals = (self.lhs, self.rhs, self.lhs_stderr, self.rhs_stderr, self.margin, self.margin_stderr)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"{self.name}: non-finite report entry {vals}")


def _stderr(phi, n):
    """Standard error from influence values, or from a variance given as a float."""
    if np.isscalar(phi):
        return math.sqrt(max(float(phi), 0.0))
    return float(np.std(phi) / math.sqrt(n))


def _report(name, lhs, rhs, phi_lhs, phi_rhs, phi_margin, n, seed, *, upper=False, **details):
    """``upper=False`` asserts lhs >= rhs; ``upper=True`` asserts lhs <= rhs."""
    margin = (rhs - lhs) if upper else (lhs - rhs)
    m_se = _stderr(phi_margin, n)
    return InequalityReport(name, float(lhs), float(rhs), _stderr(phi_lhs, n), _stderr(phi_rhs, n),
                            float(margin), m_se, bool(margin >= -SIGMAS * m_se), n, seed, details)


def _probe_radius(measure: GaussianMeasure) -> float:
    return 4.0 * math.sqrt(float(np.max(np.diag(measure.covariance))))


def _certify_qc(f: ScalarFunction, radius: float, seed: int, what: str) -> None:
    rep = is_qc(f, CERT_PROBES, seed, radius)
    if not rep.passed:
        raise UncertifiedFunctionError(
            f"{what} ({f.label}) failed the (QC) check: violation {rep.worst_violation:.3e}")


def _nonnegative(values: np.ndarray, f: ScalarFunction, what: str) -> None:
    if np.any(values < 0):
        raise UncertifiedFunctionError(f"{what} ({f.label}) takes negative values")


def check_gci(measure: GaussianMeasure, f: ScalarFunction, g: ScalarFunction,
              n_samples: int = 100_000, seed: int = 0, *, certify: bool = True) -> InequalityReport:
    """Estimate ``mu(fg) - mu(f) mu(g)`` from common samples."""
    if certify:
        r = _probe_radius(measure)
        _certify_qc(f, r, seed + 11, "f")
        _certify_qc(g, r, seed + 13, "g")
    x = sample(measure, seed, n_samples)
    a, b = f(x), g(x)
    _nonnegative(a, f, "f")
    _nonnegative(b, g, "g")
    ma, mb = a.mean(), b.mean()
    ab = a * b
    lhs, rhs = ab.mean(), ma * mb
    return _report("gci", lhs, rhs, ab, mb * a + ma * b, ab - mb * a - ma * b, n_samples, seed,
                   mu_f=float(ma), mu_g=float(mb))


def _snis(weights, values):
    """Self-normalized mean and its per-sample influence values."""
    wbar = weights.mean()
    est = float(np.sum(weights * values) / np.sum(weights))
    return est, weights * (values - est) / wbar


def check_domination_swap(measure: GaussianMeasure, f: ScalarFunction, nu_density: ScalarFunction,
                          n_samples: int = 100_000, seed: int = 0, *,
                          g: ScalarFunction | None = None,
                          certify: bool = True) -> tuple[InequalityReport, InequalityReport]:
    """Check ``nu(f) >= mu(f)`` for (QC) f and ``mu(g) >= nu(g)`` for symmetric convex g.

    ``nu`` has density ``nu_density`` (up to normalization) against ``mu``;
    ``g`` defaults to ``||x||^2``.
    """
    if g is None:
        g = ScalarFunction(measure.dim, lambda x: np.einsum("ki,ki->k", x, x), "|x|^2")
    if certify:
        r = _probe_radius(measure)
        _certify_qc(f, r, seed + 11, "f")
        _certify_qc(nu_density, r, seed + 13, "density")
        sym = check_symmetric(g, CERT_PROBES, seed + 17, r)
        cvx = check_convex(g, CERT_PROBES, seed + 19, r)
        if not (sym.passed and cvx.passed):
            raise UncertifiedFunctionError(f"g ({g.label}) is not symmetric convex")
    x = sample(measure, seed, n_samples)
    w = nu_density(x)
    _nonnegative(w, nu_density, "density")
    if not np.sum(w) > 0:
        raise DegenerateWeightsError("density vanishes on every sample")
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    if ess < MIN_ESS:
        raise DegenerateWeightsError(f"importance weights have ESS {ess:.1f} < {MIN_ESS:g}")
    out = []
    for name, h, nu_side_is_lhs in (("domination_qc", f, True), ("domination_convex", g, False)):
        v = h(x)
        mu_v, phi_mu = v.mean(), v - v.mean()
        nu_v, phi_nu = _snis(w, v)
        if nu_side_is_lhs:
            out.append(_report(name, nu_v, mu_v, phi_nu, phi_mu, phi_nu - phi_mu, n_samples, seed,
                               ess=ess))
        else:
            out.append(_report(name, mu_v, nu_v, phi_mu, phi_nu, phi_mu - phi_nu, n_samples, seed,
                               ess=ess))
    return out[0], out[1]


def check_integral_inequ_1(measure: GaussianMeasure, ball_radius: float, f: ScalarFunction,
                           n_samples: int = 100_000, seed: int = 0, *, c_tilde: float = C_TILDE,
                           certify: bool = True) -> InequalityReport:
    """Check ``mu(f) >= (1 - delta) mu(f 1[c~A]) + delta mu^{x2}(f)`` with A a ball.

    ``delta`` is the Monte Carlo estimate of ``mu(A^c)``; the set must satisfy
    ``mu(A^c) < 0.1`` at the upper 3-sigma value. The doubled-measure term
    uses an independent sample from the law of 2X.
    """
    if not ball_radius > 0:
        raise ValueError("ball_radius must be positive")
    if certify:
        _certify_qc(f, max(_probe_radius(measure), 1.25 * ball_radius), seed + 11, "f")
    sx, sy = spawn_seeds(seed, 2)
    x = sample(measure, sx, n_samples)
    y = sample(times_two(measure), sy, n_samples)
    r = np.linalg.norm(x, axis=1)
    out_a = (r > ball_radius).astype(float)
    delta = float(out_a.mean())
    delta_se = math.sqrt(delta * (1.0 - delta) / n_samples)
    if delta + SIGMAS * delta_se >= MAX_SET_MASS:
        raise SetTooSmallError(
            f"mu(A^c) = {delta:.4f} +- {delta_se:.4f} is not below {MAX_SET_MASS}")
    fx, fy = f(x), f(y)
    _nonnegative(fx, f, "f")
    in_big = (r <= c_tilde * ball_radius).astype(float)
    f_big = fx * in_big
    m0, m1, m2 = fx.mean(), f_big.mean(), fy.mean()
    lhs = m0
    rhs = (1.0 - delta) * m1 + delta * m2
    phi_rhs_x = (1.0 - delta) * (f_big - m1) + (m2 - m1) * (out_a - delta)
    phi_rhs_y = delta * (fy - m2)
    rhs_var = (np.var(phi_rhs_x) + np.var(phi_rhs_y)) / n_samples
    margin_var = (np.var(fx - m0 - phi_rhs_x) + np.var(phi_rhs_y)) / n_samples
    return _report("integral_inequ_1", lhs, rhs, fx, float(rhs_var), float(margin_var), n_samples,
                   seed, delta=delta, delta_stderr=delta_se, mass_big=float(in_big.mean()),
                   mu2_f=float(m2), mu_f_big=float(m1))


def shift_margin(report: InequalityReport, k: float) -> float:
    """Predicted margin of :func:`check_integral_inequ_1` after ``f -> f + k``."""
    d = report.details
    return report.margin + k * (1.0 - (1.0 - d["delta"]) * d["mass_big"] - d["delta"])


@dataclass(frozen=True)
class ProductSetup:
    """Block construction shared by the aggregate check and its oracle tests."""

    T_blocks: int
    points_per_block: int
    c: float
    joined: PathGrid
    join: np.ndarray          # block increments -> joined path nodes 1..n
    block: GaussianMeasure    # one c-block of Brownian motion
    endpoint: np.ndarray

    @classmethod
    def build(cls, T_blocks: int, points_per_block: int = 4, c: float = 1.0) -> "ProductSetup":
        m = points_per_block
        joined = PathGrid(c * T_blocks, m * T_blocks, 1)
        n = joined.n
        join = np.zeros((n, n))
        for j in range(T_blocks):
            for k in range(m):
                join[j * m + k, j * m + k] = 1.0
                # earlier block endpoints shift the block's origin
                join[j * m + k, [l * m + m - 1 for l in range(j)]] = 1.0
        block = brownian_measure(PathGrid(c, m, 1))
        endpoint = np.zeros((1, n))
        endpoint[0, -1] = 1.0
        return cls(T_blocks, m, c, joined, join, block, endpoint @ join)

    def pull_back(self, form: QuadraticForm) -> QuadraticForm:
        return QuadraticForm(self.join.T @ form.matrix @ self.join, check_psd=False)

    def product_precision(self, gamma) -> np.ndarray:
        """Block-diagonal precision of the product of mu (gamma=1) and mu^{x2} (gamma=0)."""
        p = np.asarray(self.block.precision)
        blocks = [p if b else 0.25 * p for b in gamma]
        return block_diag(*blocks)

    def penalty_form(self, gamma, beta: float) -> QuadraticForm:
        """Form of ``sum h(gamma)``: intra penalties on ones, adjacent on S(gamma)."""
        m, n = self.points_per_block, self.joined.n
        dt2 = self.joined.dt ** 2
        w = np.zeros((n + 1, n + 1))
        for j, b in enumerate(gamma):
            if b:
                w[j * m:(j + 1) * m, j * m:(j + 1) * m] = beta * dt2
        for j in range(len(gamma) - 1):
            if gamma[j] == 1 == gamma[j + 1]:
                w[j * m:(j + 1) * m, (j + 1) * m:(j + 2) * m] = 0.5 * beta * dt2
                w[(j + 1) * m:(j + 2) * m, j * m:(j + 1) * m] = 0.5 * beta * dt2
        return self.pull_back(pinned_pair_form(w))


def _exp_decay(tau):
    return np.exp(-tau)


def check_product_aggregate(T_blocks: int, alpha: float, beta: float, *, c: float = 1.0,
                            points_per_block: int = 4, radius: float | None = None,
                            decay: Callable = _exp_decay, n_samples: int = 100_000, seed: int = 0,
                            certify: bool = True) -> InequalityReport:
    """Check ``(mu^T)^{(g)}(||f||^2) <= max_gamma mu_gamma^{-<h(gamma)>}(||f||^2)``.

    ``mu`` is a Brownian block of length ``c``; blocks are joined end to end.
    The exponent ``g = -alpha sum_{i,j} decay(|i-j|dt)(x_i - x_j)^2 dt^2`` acts
    on the joined path and ``h(gamma)`` carries strength ``beta`` on good
    blocks and on adjacent good pairs. The left side is a self-normalized
    importance estimate under the product measure; each right side is exact.
    Domination of g by h on ``c_1 A`` (A a ball of ``radius`` per block) is
    certified per gamma before use.
    """
    if not 1 <= T_blocks <= 3:
        raise ValueError("T_blocks must be 1, 2 or 3")
    if points_per_block > 8:
        raise ValueError("per-block dimension is capped at 8")
    setup = ProductSetup.build(T_blocks, points_per_block, c)
    m = points_per_block
    g_form = setup.pull_back(quadratic_penalty(setup.joined, decay, alpha))
    radius = radius if radius is not None else 2.0 * math.sqrt(c)
    gammas = list(itertools.product((0, 1), repeat=T_blocks))
    rhs = {}
    for k, gamma in enumerate(gammas):
        h_form = setup.penalty_form(gamma, beta)
        if certify:
            combined = g_form.matrix - h_form.matrix
            # checked on log scale: exp(g + h) underflows on most of c_1 A
            expo = ScalarFunction(
                setup.joined.n,
                lambda x, q=combined: -np.einsum("ki,ij,kj->k", x, q, x),
                f"g+h{''.join(map(str, gamma))}")
            region = BlockBallProduct(C1 * radius, m, tuple(bool(b) for b in gamma))
            rep = check_qc_on_set(expo, region, CERT_PROBES, seed + 31 + k, log_scale=True)
            if not rep.passed:
                raise DominationFailedError(
                    f"h does not dominate g for gamma={gamma}: violation {rep.worst_violation:.3e}")
        prec = setup.product_precision(gamma) + 2.0 * h_form.matrix
        meas = GaussianMeasure.from_precision(prec)
        rhs[gamma] = second_moment(meas, setup.endpoint)
    prod = GaussianMeasure.from_precision(setup.product_precision((1,) * T_blocks))
    y = sample(prod, seed, n_samples)
    logw = -g_form(y)
    w = np.exp(logw - logw.max())
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    if ess < MIN_ESS:
        raise DegenerateWeightsError(f"importance weights have ESS {ess:.1f} < {MIN_ESS:g}")
    end = (y @ setup.endpoint.T)[:, 0]
    lhs, phi = _snis(w, end * end)
    lhs_exact = second_moment(
        GaussianMeasure.from_precision(prod.precision + 2.0 * g_form.matrix), setup.endpoint)
    best = max(rhs, key=rhs.get)
    return _report("product_aggregate", lhs, rhs[best], phi, 0.0, phi, n_samples, seed, upper=True,
                   rhs_by_gamma={"".join(map(str, k)): v for k, v in rhs.items()},
                   argmax="".join(map(str, best)), lhs_exact=lhs_exact, ess=ess)


def default_suite(n_samples: int = 100_000, seed: int = 0) -> list[InequalityReport]:
    """A fixed set of checks covering every inequality family."""
    s = spawn_seeds(seed, 6)
    ball1 = ScalarFunction(2, lambda x: (np.abs(x[:, 0]) <= 1.0).astype(float), "1[|x1|<=1]")
    ball2 = ScalarFunction(2, lambda x: (np.abs(x[:, 1]) <= 1.0).astype(float), "1[|x2|<=1]")
    corr = make_gaussian(np.array([[1.0, 0.8], [0.8, 1.0]]))
    out = [check_gci(corr, ball1, ball2, n_samples, s[0])]
    std3 = make_gaussian(np.eye(3))
    unit = ScalarFunction(3, lambda x: (np.linalg.norm(x, axis=1) <= 1.0).astype(float), "1[|x|<=1]")
    dens = ScalarFunction(3, lambda x: np.exp(-np.einsum("ki,ki->k", x, x)), "exp(-|x|^2)")
    out.extend(check_domination_swap(std3, unit, dens, n_samples, s[1]))
    decay = ScalarFunction(3, lambda x: np.exp(-np.linalg.norm(x, axis=1)), "exp(-|x|)")
    out.append(check_integral_inequ_1(std3, 2.75, decay, n_samples, s[2]))
    for T_blocks, sd in zip((1, 2, 3), s[3:]):
        out.append(check_product_aggregate(T_blocks, 0.5, 0.5 * math.exp(-2.0), n_samples=n_samples,
                                           seed=sd))
    return out
