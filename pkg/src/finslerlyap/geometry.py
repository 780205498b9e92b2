"""Coordinate spaces with optional angular coordinates, and chart changes.

Points and tangent vectors are plain 1-D numpy arrays. A `CoordinateSpace`
knows which coordinates live on a circle of circumference 2*pi and provides
the wrap-aware arithmetic needed everywhere else in the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi
DEFAULT_FD_STEP = 1e-6


class DimensionError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class SingularJacobianWarning(RuntimeWarning):
    pass


def _wrap_angle(a):
    # maps into (-pi, pi]
    w = np.mod(a + np.pi, TWO_PI) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class CoordinateSpace:
    dim: int
    periodic: tuple = ()

    def __post_init__(self):
        if int(self.dim) < 1:
            raise DimensionError(f"dim must be >= 1, got {self.dim}")
        mask = tuple(bool(b) for b in self.periodic) if len(self.periodic) else (False,) * self.dim
        if len(mask) != self.dim:
            raise DimensionError(f"periodic mask has length {len(mask)}, expected {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "periodic", mask)

    @classmethod
    def euclidean(cls, dim: int) -> "CoordinateSpace":
        return cls(dim, (False,) * dim)

    @classmethod
    def torus(cls, dim: int) -> "CoordinateSpace":
        return cls(dim, (True,) * dim)

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.periodic, dtype=bool)

    @property
    def has_periodic(self) -> bool:
        return any(self.periodic)

    def check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != self.dim:
            raise DimensionError(f"expected vector of length {self.dim}, got {v.shape[0]}")
        return v

    def wrap(self, p) -> np.ndarray:
        p = self.check(p)
        if not self.has_periodic:
            return p.copy()
        out = p.copy()
        out[self.mask] = _wrap_angle(p[self.mask])
        return out

    def displacement(self, a, b) -> np.ndarray:
        """Wrap-aware ``b - a``; periodic entries give the shorter arc."""
        d = self.check(b) - self.check(a)
        if self.has_periodic:
            d[self.mask] = _wrap_angle(d[self.mask])
        return d

    def wrap_many(self, pts) -> np.ndarray:
        pts = np.array(pts, dtype=float)
        if self.has_periodic:
            pts[..., self.mask] = _wrap_angle(pts[..., self.mask])
        return pts


def wrap(space: CoordinateSpace, p) -> np.ndarray:
    return space.wrap(p)


def displacement(space: CoordinateSpace, a, b) -> np.ndarray:
    return space.displacement(a, b)


def numeric_jacobian(fun: Callable, x, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference Jacobian; entry (i, j) is d fun_i / d x_j."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fp = np.atleast_1d(np.asarray(fun(x + e), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(x - e), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteError(f"non-finite map value while differencing coordinate {j}")
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac


def numeric_gradient(fun: Callable, x, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    return numeric_jacobian(lambda y: np.array([fun(y)]), x, h)[0]


@dataclass(frozen=True)
class Diffeomorphism:
    """A chart change ``y = forward(x)`` with its inverse.

    ``jacobian`` is optional; without it the differential is obtained by
    central differences of ``forward``.
    """

    forward: Callable
    inverse: Callable
    jacobian: Optional[Callable] = None
    fd_step: float = DEFAULT_FD_STEP
    name: str = ""

    def jac(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.jacobian is not None:
            return np.atleast_2d(np.asarray(self.jacobian(x), dtype=float))
        return numeric_jacobian(lambda y: np.atleast_1d(self.forward(y)), x, self.fd_step)

    def __call__(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.forward(np.asarray(x, dtype=float)), dtype=float))

    def inv(self, y) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.inverse(np.asarray(y, dtype=float)), dtype=float))

    def validate(self, samples: Sequence, tol: float = 1e-10) -> float:
        """Largest round-trip error over ``samples``; raises if above ``tol``."""
        worst = 0.0
        for x in samples:
            x = np.atleast_1d(np.asarray(x, dtype=float))
            err = float(np.max(np.abs(self.inv(self(x)) - x)))
            worst = max(worst, err)
            if np.linalg.cond(self.jac(x)) > 1e12:
                raise ValueError(f"jacobian is singular at {x}")
        if worst > tol:
            raise ValueError(f"inverse(forward(x)) differs from x by {worst:.3e}")
        return worst

    @classmethod
    def identity(cls, dim: int) -> "Diffeomorphism":
        eye = np.eye(dim)
        return cls(lambda x: np.array(x, dtype=float), lambda y: np.array(y, dtype=float),
                   lambda x: eye, name="identity")

    @classmethod
    def linear(cls, M) -> "Diffeomorphism":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        Minv = np.linalg.inv(M)
        return cls(lambda x: M @ x, lambda y: Minv @ y, lambda x: M, name="linear")

    @classmethod
    def from_forward(cls, forward: Callable, jacobian: Optional[Callable] = None,
                     tol: float = 1e-14, max_iter: int = 100, name: str = "") -> "Diffeomorphism":
        """Build the inverse by Newton iteration on ``forward(x) = y``."""
        def jac(x):
            if jacobian is not None:
                return np.atleast_2d(np.asarray(jacobian(x), dtype=float))
            return numeric_jacobian(lambda z: np.atleast_1d(forward(z)), x)

        def inverse(y):
            y = np.atleast_1d(np.asarray(y, dtype=float))
            x = y.copy()
            for _ in range(max_iter):
                r = np.atleast_1d(forward(x)) - y
                if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(y))):
                    break
                x = x - np.linalg.solve(jac(x), r)
            return x

        return cls(forward, inverse, jacobian, name=name)


def pushforward(d: Diffeomorphism, x, v) -> np.ndarray:
    J = d.jac(x)
    cond = np.linalg.cond(J)
    if cond > 1e12:
        warnings.warn(f"chart differential nearly singular (cond={cond:.2e})", SingularJacobianWarning)
    return J @ np.asarray(v, dtype=float).reshape(-1)
