"""Randomized checks for symmetry and quasi-concavity.

A function is certified by falsification: seeded probe points (or triples
for the segment test) are drawn, and the worst observed violation is
reported. Passing is evidence, not proof; the same seed always gives the
same verdict.

Symmetric convex sets are described by their gauge (Minkowski functional),
``gauge(x) <= 1`` meaning membership. This gives both a membership test and
a cheap way to pull random points into the set by radial scaling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteValueError
from .gaussian_core import make_rng

RTOL = 1e-9
DEFAULT_PROBES = 10_000
_CHUNK = 2048


@dataclass(frozen=True)
class ScalarFunction:
    """Real function on R^arity, evaluated row-wise on arrays of shape (k, arity).

    ``evaluator`` must be vectorized over the leading axis. Use
    :meth:`pointwise` to wrap a plain scalar callable.
    """

    arity: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    label: str = ""
    allow_infinite: bool = False

    @classmethod
    def pointwise(cls, arity: int, fn: Callable[[np.ndarray], float], label: str = ""):
        def vectorized(x):
            return np.array([fn(row) for row in np.atleast_2d(x)], dtype=float)

        return cls(arity, vectorized, label)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.arity)
        out = np.asarray(self.evaluator(flat), dtype=float).reshape(flat.shape[0])
        bad = np.isnan(out) if self.allow_infinite else ~np.isfinite(out)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise NonFiniteValueError(
                f"{self.label or 'function'} returned {out[k]} at probe {flat[k].tolist()[:6]}")
        return out.reshape(x.shape[:-1])

    def masked(self, region: "SymmetricConvexSet", fill: float = 0.0) -> "ScalarFunction":
        """The indicator-masked function ``1_region * f``.

        ``fill=-inf`` gives the log-scale mask: for ``f = log F`` with ``F > 0``
        it is the logarithm of ``1_region * F``, with the same superlevel sets.
        """
        def ev(x):
            inside = region.contains(x)
            out = np.full(x.shape[0], fill, dtype=float)
            if np.any(inside):
                out[inside] = self.evaluator(x[inside])
            return out

        return ScalarFunction(self.arity, ev, f"1[{region}]*{self.label}",
                              self.allow_infinite or not np.isfinite(fill))

    def __mul__(self, other: "ScalarFunction") -> "ScalarFunction":
        if other.arity != self.arity:
            raise ValueError("arity mismatch")
        f, g = self.evaluator, other.evaluator
        return ScalarFunction(self.arity, lambda x: f(x) * g(x), f"({self.label})*({other.label})")

    def compose(self, outer: Callable[[np.ndarray], np.ndarray], label: str = "") -> "ScalarFunction":
        f = self.evaluator
        return ScalarFunction(self.arity, lambda x: outer(f(x)), label or f"h({self.label})")


@dataclass(frozen=True)
class CheckReport:
    passed: bool
    worst_violation: float
    probes: int
    seed: int
    witness: tuple = field(default=(), compare=False)
    label: str = ""

    def __bool__(self) -> bool:
        return self.passed


class SymmetricConvexSet:
    """Base class: subclasses implement a vectorized ``gauge``."""

    dim: int

    def gauge(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.gauge(np.atleast_2d(x)) <= 1.0 + 1e-12

    @property
    def scale(self) -> float:
        """A radius that encloses the bounded part of the set."""
        raise NotImplementedError


@dataclass(frozen=True)
class NormBall(SymmetricConvexSet):
    radius: float
    dim: int
    ord: float = 2

    def gauge(self, x):
        return np.linalg.norm(np.atleast_2d(x), ord=self.ord, axis=1) / self.radius

    @property
    def scale(self):
        return self.radius * (np.sqrt(self.dim) if self.ord == np.inf else 1.0)

    def __str__(self):
        return f"ball(r={self.radius:g})"


@dataclass(frozen=True)
class SupNormTube(SymmetricConvexSet):
    """Paths with ``max_{s in block} ||x_s - x_{block start}|| <= R`` on active blocks.

    Vectors hold nodes ``1..n`` of a path pinned at the origin, ``d`` values
    per node. With ``block_nodes=None`` the whole path is one block starting
    at the origin (the plain tube K_R).
    """

    R: float
    n: int
    d: int
    block_nodes: int | None = None
    active: tuple[bool, ...] | None = None

    @property
    def dim(self):
        return self.n * self.d

    def _blocks(self):
        m = self.block_nodes or self.n
        count = -(-self.n // m)
        act = self.active if self.active is not None else (True,) * count
        if len(act) != count:
            raise ValueError(f"need {count} activity flags, got {len(act)}")
        return m, count, act

    def gauge(self, x):
        x = np.atleast_2d(x)
        k = x.shape[0]
        full = np.zeros((k, self.n + 1, self.d))
        full[:, 1:] = x.reshape(k, self.n, self.d)
        m, count, act = self._blocks()
        g = np.zeros(k)
        for j in range(count):
            if not act[j]:
                continue
            seg = full[:, j * m: min((j + 1) * m, self.n) + 1]
            disp = np.linalg.norm(seg - seg[:, :1], axis=2)
            g = np.maximum(g, disp.max(axis=1) / self.R)
        return g

    @property
    def scale(self):
        return 2.0 * self.R * np.sqrt(self.n)

    def __str__(self):
        return f"tube(R={self.R:g})"


@dataclass(frozen=True)
class BlockBallProduct(SymmetricConvexSet):
    """Product set B_0 x ... x B_{T-1} with B_j a radius-R ball if active, else R^m."""

    radius: float
    block_dim: int
    active: tuple[bool, ...]

    @property
    def dim(self):
        return self.block_dim * len(self.active)

    def gauge(self, x):
        x = np.atleast_2d(x).reshape(-1, len(self.active), self.block_dim)
        norms = np.linalg.norm(x, axis=2) / self.radius
        mask = np.asarray(self.active, dtype=bool)
        if not mask.any():
            return np.zeros(x.shape[0])
        return norms[:, mask].max(axis=1)

    @property
    def scale(self):
        return self.radius

    def __str__(self):
        return "ballprod(" + "".join("1" if a else "0" for a in self.active) + ")"


def _uniform_ball(rng, count, dim, radius):
    z = rng.standard_normal((count, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * (radius * rng.random(count) ** (1.0 / dim))[:, None]


def _probe_points(rng, count, dim, radius, region=None, overshoot=1.0):
    pts = _uniform_ball(rng, count, dim, radius)
    if region is None:
        return pts
    g = region.gauge(pts)
    target = overshoot * rng.random(count)
    fix = g > target
    pts[fix] *= (target[fix] / g[fix])[:, None]
    return pts


def _tolerance(*values):
    tol = 1.0 + sum(np.abs(v) for v in values)
    return RTOL * np.where(np.isfinite(tol), tol, 0.0)


def check_symmetric(f: ScalarFunction, probes: int = DEFAULT_PROBES, seed: int = 0,
                    radius: float = 1.0, *, restrict_to: SymmetricConvexSet | None = None,
                    overshoot: float = 1.0) -> CheckReport:
    """Probe ``f(x) == f(-x)`` at ``probes`` points of the radius-ball."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = make_rng(seed)
    worst, witness, ok = 0.0, (), True
    for start in range(0, probes, _CHUNK):
        m = min(_CHUNK, probes - start)
        x = _probe_points(rng, m, f.arity, radius, restrict_to, overshoot)
        fx, fm = f(x), f(-x)
        with np.errstate(invalid="ignore"):
            viol = np.where(fx == fm, 0.0, np.abs(fx - fm))
        if np.any(viol > _tolerance(fx)):
            ok = False
        k = int(np.argmax(viol))
        if viol[k] > worst:
            worst, witness = float(viol[k]), (x[k],)
    return CheckReport(ok, worst, probes, seed, witness, f.label)


def check_quasiconcave(f: ScalarFunction, probes: int = DEFAULT_PROBES, seed: int = 0,
                       radius: float = 1.0, restrict_to: SymmetricConvexSet | None = None,
                       *, overshoot: float = 1.0) -> CheckReport:
    """Segment test ``f(l x + (1-l) y) >= min(f(x), f(y))`` on random triples."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = make_rng(seed)
    worst, witness, ok = 0.0, (), True
    for start in range(0, probes, _CHUNK):
        m = min(_CHUNK, probes - start)
        x = _probe_points(rng, m, f.arity, radius, restrict_to, overshoot)
        y = _probe_points(rng, m, f.arity, radius, restrict_to, overshoot)
        lam = rng.random(m)[:, None]
        z = lam * x + (1.0 - lam) * y
        fx, fy, fz = f(x), f(y), f(z)
        low = np.minimum(fx, fy)
        with np.errstate(invalid="ignore"):
            viol = np.where(fz >= low, 0.0, low - fz)
        if np.any(viol > _tolerance(fx, fy)):
            ok = False
        k = int(np.argmax(viol))
        if viol[k] > worst:
            worst, witness = float(viol[k]), (x[k], y[k], float(lam[k, 0]))
    return CheckReport(ok, worst, probes, seed, witness, f.label)


def check_qc_on_set(f: ScalarFunction, region: SymmetricConvexSet, probes: int = DEFAULT_PROBES,
                    seed: int = 0, radius: float | None = None, *, log_scale: bool = False) -> CheckReport:
    """Run both checks on the masked function ``1_region * f``.

    Probes fill the set and a margin of 25% beyond its boundary so that the
    mask itself is exercised. With ``log_scale=True``, ``f`` is read as the
    logarithm of a positive function and the mask fills with ``-inf``; this
    avoids underflow when the function is an exponential.
    """
    if region.dim != f.arity:
        raise ValueError(f"set dim {region.dim} != function arity {f.arity}")
    r = radius if radius is not None else 1.25 * region.scale
    g = f.masked(region, -np.inf if log_scale else 0.0)
    sym = check_symmetric(g, probes, seed, r, restrict_to=region, overshoot=1.25)
    qc = check_quasiconcave(g, probes, seed + 1, r, region, overshoot=1.25)
    return CheckReport(
        sym.passed and qc.passed,
        max(sym.worst_violation, qc.worst_violation),
        probes,
        seed,
        qc.witness if not qc.passed else sym.witness,
        g.label,
    )


def is_qc(f: ScalarFunction, probes: int = DEFAULT_PROBES, seed: int = 0,
          radius: float = 1.0) -> CheckReport:
    """Both checks on the whole radius-ball."""
    sym = check_symmetric(f, probes, seed, radius)
    qc = check_quasiconcave(f, probes, seed + 1, radius)
    return CheckReport(sym.passed and qc.passed,
                       max(sym.worst_violation, qc.worst_violation), probes, seed,
                       qc.witness or sym.witness, f.label)


def product(functions: Sequence[ScalarFunction]) -> ScalarFunction:
    out = functions[0]
    for g in functions[1:]:
        out = out * g
    return out


def check_convex(f: ScalarFunction, probes: int = DEFAULT_PROBES, seed: int = 0,
                 radius: float = 1.0) -> CheckReport:
    """Segment test ``f(l x + (1-l) y) <= l f(x) + (1-l) f(y)``."""
    rng = make_rng(seed)
    worst, witness, ok = 0.0, (), True
    for start in range(0, probes, _CHUNK):
        m = min(_CHUNK, probes - start)
        x = _uniform_ball(rng, m, f.arity, radius)
        y = _uniform_ball(rng, m, f.arity, radius)
        lam = rng.random(m)
        fx, fy = f(x), f(y)
        fz = f(lam[:, None] * x + (1.0 - lam[:, None]) * y)
        chord = lam * fx + (1.0 - lam) * fy
        viol = np.maximum(fz - chord, 0.0)
        if np.any(viol > _tolerance(fx, fy)):
            ok = False
        k = int(np.argmax(viol))
        if viol[k] > worst:
            worst, witness = float(viol[k]), (x[k], y[k], float(lam[k]))
    return CheckReport(ok, worst, probes, seed, witness, f.label)
