"""Acceptance criteria, one test per criterion at the stated tolerances."""
import itertools
import math
import time

import numpy as np
import pytest
from scipy.special import erf
from scipy.stats import chi2, multivariate_normal

from pairpath.bounds import (
    K_FIT_D3,
    barP_msd,
    block_decompose,
    exp_decay,
    fit_K,
    frozen_K,
    lower_bound_quadratic,
    optimize_variational,
    upper_bound_envelope,
)
from pairpath.brownian import PathGrid, min_kernel, project_approximation
from pairpath.gaussian_core import make_gaussian
from pairpath.gibbs import SamplerConfig, auto_tilt, exact_msd_quadratic, run_chain
from pairpath.potential import DEFAULT_CERTIFICATES, bump, certified
from pairpath.qc import ScalarFunction
from pairpath.verify import check_gci, check_integral_inequ_1, check_product_aggregate


def g_exp(t):
    return np.exp(-t)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# nonnegative symmetric quasi-concave test functions
def _ball(dim, r):
    return ScalarFunction(dim, lambda x: (np.linalg.norm(x, axis=1) <= r).astype(float), f"ball{r:.2f}")


def _slab(dim, v, a):
    return ScalarFunction(dim, lambda x: (np.abs(x @ v) <= a).astype(float), f"slab{a:.2f}")


def _gauss(dim, A):
    return ScalarFunction(dim, lambda x: np.exp(-np.einsum("ki,ij,kj->k", x, A, x)), "gauss")


def _exp_norm(dim, s):
    return ScalarFunction(dim, lambda x: np.exp(-s * np.linalg.norm(x, axis=1)), f"exp{s:.2f}")


def random_qc(rng, dim):
    kind = rng.integers(4)
    if kind == 0:
        return _ball(dim, float(rng.uniform(0.5, 2.5)))
    if kind == 1:
        v = rng.standard_normal(dim)
        return _slab(dim, v / np.linalg.norm(v), float(rng.uniform(0.3, 1.5)))
    if kind == 2:
        a = rng.standard_normal((dim, dim)) * 0.5
        return _gauss(dim, a @ a.T + 0.05 * np.eye(dim))
    return _exp_norm(dim, float(rng.uniform(0.3, 2.0)))


def random_cov(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a @ a.T / dim + 0.2 * np.eye(dim)


@pytest.mark.criterion(1, "unperturbed recovery")
def test_criterion_01_unperturbed(record_property):
    with Timer() as t:
        grid = PathGrid(1.0, 64, 3)
        exact = exact_msd_quadratic(grid, g_exp, 0.0)
        est = run_chain(SamplerConfig(grid, bump(), 0.0, chain_length=20_000, burn_in=2000, seed=1))
    rel = abs(exact - 3.0) / 3.0
    z = abs(est.value - 3.0) / est.stderr
    record_property("detail", f"exact rel err {rel:.1e}; mcmc {est.value:.4f}+-{est.stderr:.4f} "
                              f"(z={z:.2f}); {t.elapsed:.1f}s")
    assert rel <= 1e-10
    assert z <= 3.0
    assert t.elapsed < 60


@pytest.mark.criterion(2, "quadratic lower bound")
def test_criterion_02_lower_bound(record_property):
    g = exp_decay()
    assert g.C_g == pytest.approx(2.0, rel=1e-10)
    ratios = {}
    with Timer() as t:
        for alpha, T in itertools.product((0, 1, 2, 5, 10), (1, 4, 8)):
            exact = exact_msd_quadratic(PathGrid(float(T), 512, 1), g_exp, float(alpha))
            bound = lower_bound_quadratic(alpha, T, g)
            assert bound == pytest.approx(T / (1 + 4 * alpha), rel=1e-10)
            ratios[(alpha, T)] = exact / bound
    worst = min(ratios, key=ratios.get)
    record_property("detail", f"min exact/bound {ratios[worst]:.4f} at alpha,T={worst}; {t.elapsed:.1f}s")
    assert all(r >= 0.95 for r in ratios.values())
    assert t.elapsed < 120


@pytest.mark.criterion(3, "variational identity")
def test_criterion_03_variational_identity(record_property):
    gaps = {}
    with Timer() as t:
        for alpha, T in itertools.product((0.5, 2.0), (1.0, 2.0)):
            n = 64
            value = optimize_variational(alpha, T, g_exp, n).value
            exact = exact_msd_quadratic(PathGrid(T, n, 1), g_exp, alpha) / T
            gaps[(alpha, T)] = abs(value - exact) / exact
    worst = max(gaps, key=gaps.get)
    record_property("detail", "rel gaps " + ", ".join(f"{k}:{v:.3f}" for k, v in gaps.items())
                    + f"; worst {gaps[worst]:.3f} > 0.02; {t.elapsed:.1f}s")
    assert t.elapsed < 60
    assert all(v <= 0.02 for v in gaps.values())


@pytest.mark.criterion(4, "rescaling identity")
def test_criterion_04_rescaling(record_property):
    notes = []
    with Timer() as t:
        for beta, c, s in ((10.0, 0.5, 8), (100.0, 0.25, 16)):
            lhs = barP_msd(beta, c, s, 200)
            rhs = c * barP_msd(beta * c ** 3, 1.0, s, 200)
            rel = abs(lhs - rhs) / lhs
            v = [barP_msd(beta, c, s, m) for m in (100, 200, 400)]
            ratio = abs(v[2] - v[1]) / abs(v[1] - v[0])
            notes.append(f"({beta:g},{c:g},{s}): rel {rel:.1e}, refine ratio {ratio:.3f}")
            assert rel <= 0.02
            assert ratio <= 0.5
    record_property("detail", "; ".join(notes) + f"; {t.elapsed:.1f}s")
    assert t.elapsed < 180


@pytest.mark.criterion(5, "block constant scaling")
def test_criterion_05_lemma_scaling(record_property):
    with Timer() as t:
        coarse = fit_K([4, 16, 64, 256], [4, 16, 64], points_per_block=64, d=3)
        fine = fit_K([4, 8, 16, 32, 64, 128, 256], [4, 8, 16, 32, 64], points_per_block=64, d=3)
    change = abs(fine.K - coarse.K) / coarse.K
    record_property("detail", f"K coarse {coarse.K:.4f}, refined {fine.K:.4f} "
                              f"(change {change:.1%}); {t.elapsed:.1f}s")
    assert coarse.K == pytest.approx(K_FIT_D3, rel=1e-9)
    for beta, s, value, _ in coarse.table:
        assert value <= coarse.K * (s / beta + beta ** -0.5) * (1 + 1e-12)
    assert change <= 0.20
    assert t.elapsed < 300


@pytest.mark.criterion(6, "GCI suite")
def test_criterion_06_gci(record_property):
    rng = np.random.default_rng(2024)
    worst = math.inf
    with Timer() as t:
        for k in range(20):
            dim = int(rng.integers(1, 6))
            m = make_gaussian(random_cov(rng, dim))
            rep = check_gci(m, random_qc(rng, dim), random_qc(rng, dim), 100_000, 1000 + k)
            worst = min(worst, rep.margin / rep.margin_stderr if rep.margin_stderr > 0 else math.inf)
            assert rep.passed, (k, rep)
        cov = np.array([[1.0, 0.8], [0.8, 1.0]])
        f = ScalarFunction(2, lambda x: (np.abs(x[:, 0]) <= 1).astype(float), "f")
        g = ScalarFunction(2, lambda x: (np.abs(x[:, 1]) <= 1).astype(float), "g")
        rep = check_gci(make_gaussian(cov), f, g, 100_000, 7)
        mvn = multivariate_normal(np.zeros(2), cov)
        both = mvn.cdf([1, 1]) - mvn.cdf([-1, 1]) - mvn.cdf([1, -1]) + mvn.cdf([-1, -1])
        oracle = both - erf(1 / math.sqrt(2)) ** 2
    z = abs(rep.margin - oracle) / rep.margin_stderr
    record_property("detail", f"min margin/stderr {worst:.2f}; oracle margin {oracle:.4f} vs MC "
                              f"{rep.margin:.4f} (z={z:.2f}); {t.elapsed:.1f}s")
    assert abs(rep.lhs - both) <= 3 * rep.lhs_stderr
    assert z <= 3
    assert t.elapsed < 120


@pytest.mark.criterion(7, "integral inequality suite")
def test_criterion_07_integral_inequ_1(record_property):
    rng = np.random.default_rng(7)
    deltas, worst = [], 0.0
    with Timer() as t:
        for k in range(10):
            dim = int(rng.integers(1, 6))
            sigma = float(rng.uniform(0.5, 2.0))
            target = float(rng.uniform(0.02, 0.08))
            radius = sigma * math.sqrt(chi2.isf(target, dim))
            oracle = chi2.sf((radius / sigma) ** 2, dim)
            assert 0.01 < oracle < 0.1
            rep = check_integral_inequ_1(make_gaussian(sigma ** 2 * np.eye(dim)), radius,
                                         random_qc(rng, dim), 100_000, 500 + k)
            # 10 simultaneous oracle comparisons: Bonferroni two-sided 0.5% family level
            z = abs(rep.details["delta"] - oracle) / rep.details["delta_stderr"]
            worst = max(worst, z)
            deltas.append(oracle)
            assert rep.passed, (k, rep)
            assert z <= 3.5
    record_property("detail", f"delta in [{min(deltas):.3f}, {max(deltas):.3f}], "
                              f"max oracle z {worst:.2f}; {t.elapsed:.1f}s")
    assert t.elapsed < 120


@pytest.mark.criterion(8, "product aggregate")
def test_criterion_08_product_aggregate(record_property):
    alpha = 0.5
    beta = alpha * math.exp(-2.0)
    notes = []
    with Timer() as t:
        for T in (1, 2, 3):
            rep = check_product_aggregate(T, alpha, beta, n_samples=100_000, seed=40 + T)
            assert rep.rhs_stderr == 0.0
            assert rep.details["lhs_exact"] <= rep.rhs
            notes.append(f"T={T}: {rep.lhs:.3f} <= {rep.rhs:.3f} ({rep.details['argmax']})")
            assert rep.passed
    record_property("detail", "; ".join(notes) + f"; {t.elapsed:.1f}s")
    assert t.elapsed < 180


@pytest.mark.criterion(9, "coupling trend and envelope")
def test_criterion_09_trend(record_property):
    T, d, n = 4.0, 3, 256
    grid = PathGrid(T, n, d)
    W = certified(bump(), *DEFAULT_CERTIFICATES["bump"])
    est, env = {}, {}
    with Timer() as t:
        for k, alpha in enumerate((5.0, 20.0, 80.0)):
            cfg = SamplerConfig(grid, W, alpha, chain_length=60_000, burn_in=6000, seed=90 + k,
                                reference_tilt=auto_tilt(grid, W, alpha))
            est[alpha] = run_chain(cfg)
            env[alpha] = upper_bound_envelope(alpha, T, W.certificate, d, frozen_K(d))
    sep = (est[5.0].value - est[80.0].value) / math.hypot(est[5.0].stderr, est[80.0].stderr)
    record_property("detail", "; ".join(f"a={a:g}: {e.value:.4f}+-{e.stderr:.4f} ess {e.ess:.0f} "
                                        f"env {env[a]:.2e}" for a, e in est.items())
                    + f"; endpoint sep {sep:.1f} sigma; {t.elapsed:.0f}s")
    v = [est[a].value for a in (5.0, 20.0, 80.0)]
    assert v[0] > v[1] > v[2]
    assert sep > 3
    assert all(est[a].value <= env[a] for a in est)
    assert t.elapsed < 1200


@pytest.mark.criterion(10, "finite-rank approximation")
def test_criterion_10_projection(record_property):
    with Timer() as t:
        grid = PathGrid(1.0, 50, 1)
        exact = min_kernel(grid.times[1:])
        errs = [float(np.max(np.abs(project_approximation(grid, m).covariance - exact)))
                for m in range(1, 201)]
    record_property("detail", f"err(1)={errs[0]:.3e}, err(200)={errs[-1]:.3e}; {t.elapsed:.2f}s")
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 2e-3
    assert t.elapsed < 10


@pytest.mark.criterion(11, "block combinatorics")
def test_criterion_11_combinatorics(record_property):
    count = 0
    with Timer() as t:
        for T in range(1, 13):
            for gamma in itertools.product((0, 1), repeat=T):
                b = block_decompose(gamma)
                assert b.S == tuple(i for i in range(T - 1) if gamma[i] == 1 == gamma[i + 1])
                assert b.M0 == tuple(i for i in range(T) if gamma[i] == 0)
                assert b.M1 == tuple(i for i in range(T) if gamma[i] == 1)
                assert len(b.M0) + len(b.M1) == T
                assert sum(b.good_blocks) == len(b.M1)
                assert len(b.good_blocks) <= len(b.M0) + 1
                # runs of ones: starts are ones preceded by a zero or the left edge
                starts = [i for i in range(T) if gamma[i] == 1 and (i == 0 or gamma[i - 1] == 0)]
                assert len(b.good_blocks) == len(starts)
                count += 1
    record_property("detail", f"{count} labellings; {t.elapsed:.2f}s")
    assert count == 2 ** 13 - 2
    assert t.elapsed < 5
