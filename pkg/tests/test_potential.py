import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from pairpath.brownian import DiscretePath, PathGrid, sample_paths
from pairpath.errors import CertificationFailedError, UnboundedPotentialError
from pairpath.gaussian_core import make_rng
from pairpath.gibbs import quadratic_penalty
from pairpath.potential import (
    DEFAULT_CERTIFICATES,
    PairPotential,
    PathEnergy,
    bump,
    by_name,
    certified,
    certify_assumption,
    check_continuity,
    energy,
    quadratic,
    truncated_coulomb,
)


def zero_path(T, n, d=3):
    return DiscretePath(PathGrid(T, n, d), np.zeros((n + 1, d)))


def brownian_path(T, n, d=3, seed=0):
    g = PathGrid(T, n, d)
    return DiscretePath(g, sample_paths(g, make_rng(seed), 1)[0])


class TestBuiltins:
    def test_values(self):
        assert quadratic()(2.0, 0.0) == pytest.approx(-4.0)
        assert bump()(0.5, 0.0) == pytest.approx(0.75)
        assert bump()(1.5, 0.0) == 0.0
        assert truncated_coulomb(10.0)(0.01, 0.0) == pytest.approx(10.0)
        assert truncated_coulomb(10.0)(0.5, math.log(2)) == pytest.approx(1.0)

    def test_linear_coulomb_continuous_at_cap(self):
        W = truncated_coulomb(10.0, "linear")
        assert W(0.1 - 1e-12, 0.0) == pytest.approx(W(0.1 + 1e-12, 0.0), abs=1e-9)
        assert W(0.0, 0.0) == pytest.approx(20.0)

    @pytest.mark.parametrize("name,kw", [("quadratic", {}), ("bump", {}),
                                         ("truncated_coulomb", {"cap": 5.0}),
                                         ("truncated_coulomb", {"cap": 5.0, "shape": "linear"})])
    def test_upper_bound_respected(self, name, kw):
        W = by_name(name, **kw)
        r, tau = np.meshgrid(np.linspace(0, 5, 401), np.linspace(0, 5, 101))
        assert np.max(W(r, tau)) <= W.upper_bound + 1e-12

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            by_name("lennard_jones")

    def test_unbounded_rejected(self):
        with pytest.raises(UnboundedPotentialError):
            PairPotential(lambda r, tau: 1.0 / r, math.inf, "coulomb")

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            truncated_coulomb(shape="round")


class TestCertification:
    def test_quadratic_fails_at_delta_one(self):
        rep = certify_assumption(quadratic(), 0.5, 1.0, 1.0)
        assert not rep.passed
        r, tau = rep.witness
        assert tau > 0

    def test_quadratic_passes_at_inf_decay(self):
        assert certify_assumption(quadratic(), 0.5, 0.1, math.exp(-0.2)).passed

    def test_quadratic_threshold_is_sharp(self):
        assert not certify_assumption(quadratic(), 0.5, 0.1, math.exp(-0.2) * 1.01).passed

    def test_bump_passes(self):
        assert certify_assumption(bump(), 0.25, 0.1, math.exp(-0.2)).passed

    def test_bump_fails_with_C_one(self):
        assert not certify_assumption(bump(), 0.25, 0.1, 1.0).passed

    def test_flat_coulomb_rejected(self):
        rep = certify_assumption(truncated_coulomb(10.0), 0.1, 0.1, 0.5)
        assert not rep.passed
        assert rep.witness[0] <= 0.1 + 1e-9

    def test_linear_coulomb_passes(self):
        assert certify_assumption(truncated_coulomb(10.0, "linear"), 0.1, 0.1, 0.5).passed

    def test_jump_is_rejected(self):
        W = PairPotential(lambda r, tau: np.where(r < 0.3, 1.0, 0.5) * np.exp(-tau), 1.0, "step")
        rep = certify_assumption(W, 0.1, 0.1, 0.1)
        assert not rep.passed and "jump" in rep.label

    def test_non_qc_rejected(self):
        W = PairPotential(lambda r, tau: np.cos(4 * r) * np.exp(-tau), 1.0, "wavy")
        assert not certify_assumption(W, 0.1, 0.1, 0.1).passed

    def test_certified_attaches(self):
        W = certified(bump(), 0.25, 0.1, math.exp(-0.2))
        assert W.certificate.eps == 0.25
        assert bump().certificate is None
        with pytest.raises(CertificationFailedError):
            certified(quadratic(), 0.5, 1.0, 1.0)

    @pytest.mark.parametrize("name", sorted(DEFAULT_CERTIFICATES))
    def test_default_certificates(self, name):
        assert certify_assumption(by_name(name), *DEFAULT_CERTIFICATES[name]).passed

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            certify_assumption(bump(), 0.0, 0.1, 0.5)

    def test_continuity_smooth(self):
        assert check_continuity(bump(), 2.0, 1.0).passed
        assert check_continuity(truncated_coulomb(10.0), 2.0, 1.0).passed


class TestEnergy:
    def test_zero_path_bump_oracle(self):
        T = 1.0
        e = energy(zero_path(T, 200), bump(), 1.0)
        assert e == pytest.approx(2 * (T - 1 + math.exp(-T)), rel=1e-2)

    def test_zero_path_quadratic(self):
        assert energy(zero_path(1.0, 50), quadratic(), 1.0) == 0.0

    def test_negation(self):
        p = brownian_path(1.0, 40)
        for W in (bump(), quadratic(), truncated_coulomb(5.0)):
            assert energy(-p, W, 2.0) == pytest.approx(energy(p, W, 2.0), rel=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_rotation_invariance(self, seed):
        p = brownian_path(1.0, 30, seed=seed)
        R = special_ortho_group.rvs(3, random_state=seed)
        q = DiscretePath(p.grid, p.positions @ R.T)
        for W in (bump(), quadratic()):
            assert energy(q, W, 1.5) == pytest.approx(energy(p, W, 1.5), rel=1e-10, abs=1e-10)

    def test_quadratic_matches_form(self):
        p = brownian_path(2.0, 25, d=3, seed=4)
        Q = quadratic_penalty(p.grid, lambda t: np.exp(-t), 3.0)
        x = p.positions[1:]
        form = sum(Q(x[:, a]) for a in range(3))
        assert energy(p, quadratic(), 3.0) == pytest.approx(-form, rel=1e-10)

    def test_direct_double_sum(self):
        p = brownian_path(1.0, 12, d=2, seed=5)
        W = truncated_coulomb(3.0)
        x, dt = p.positions, p.grid.dt
        direct = sum(W(np.linalg.norm(x[i] - x[j]), abs(i - j) * dt)
                     for i in range(12) for j in range(12)) * dt * dt
        assert energy(p, W, 1.0) == pytest.approx(direct, rel=1e-12)

    def test_diagonal_excluded(self):
        p = zero_path(1.0, 10)
        full = energy(p, bump(), 1.0)
        off = energy(p, bump(), 1.0, diagonal=False)
        assert full - off == pytest.approx(10 * 0.1 ** 2, rel=1e-12)

    def test_alpha_must_be_positive(self):
        with pytest.raises(ValueError):
            energy(zero_path(1.0, 4), bump(), 0.0)

    def test_first_order_refinement(self):
        T = 1.0

        def smooth(n):
            t = np.linspace(0, T, n + 1)
            pos = np.stack([np.sin(t), t * t, 0.5 * t], axis=1)
            return DiscretePath(PathGrid(T, n, 3), pos)

        W = bump()
        values = [energy(smooth(n), W, 1.0) for n in (25, 50, 100, 200, 400)]
        ref = energy(smooth(6400), W, 1.0)
        errs = [abs(v - ref) for v in values]
        assert all(b < a for a, b in zip(errs, errs[1:]))
        # first order: error times n roughly constant
        scaled = [e * n for e, n in zip(errs, (25, 50, 100, 200, 400))]
        assert max(scaled) / min(scaled) < 2.0

    def test_path_energy_matches_generic(self):
        p = brownian_path(1.0, 20, seed=2)
        W = bump()
        generic = PairPotential(W.evaluator, W.upper_bound, "bump-generic")
        assert PathEnergy(p.grid, generic, 2.0)(p.positions) == pytest.approx(
            PathEnergy(p.grid, W, 2.0)(p.positions), rel=1e-12)
