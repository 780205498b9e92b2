"""Vector fields, regions, the built-in system catalog and virtual systems."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .geometry import (
    DEFAULT_FD_STEP,
    CoordinateSpace,
    NonFiniteError,
    numeric_jacobian,
)


class CatalogError(KeyError):
    pass


class ConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class System:
    """``xdot = field(t, x)`` on ``space``.

    ``jacobian(t, x)`` is optional; without it central differences of the
    field are used. The field is assumed C^2.
    """

    space: CoordinateSpace
    field: Callable
    jacobian: Optional[Callable] = None
    name: str = "system"
    time_invariant: bool = True
    params: dict = field(default_factory=dict, compare=False)
    fd_step: float = DEFAULT_FD_STEP

    @property
    def dim(self) -> int:
        return self.space.dim

    def f(self, t, x) -> np.ndarray:
        out = np.asarray(self.field(t, x), dtype=float).reshape(-1)
        if out.shape[0] != self.dim:
            raise ValueError(f"{self.name}: field returned length {out.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{self.name}: non-finite field value at t={t}, x={x}")
        return out

    def J(self, t, x) -> np.ndarray:
        if self.jacobian is not None:
            out = np.atleast_2d(np.asarray(self.jacobian(t, x), dtype=float))
        else:
            x = np.asarray(x, dtype=float)
            out = numeric_jacobian(lambda y: self.field(t, y), x, self.fd_step)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{self.name}: non-finite jacobian at t={t}, x={x}")
        return out


def eval_field(s: System, t, x) -> np.ndarray:
    return s.f(t, s.space.check(x))


def eval_jacobian(s: System, t, x) -> np.ndarray:
    return s.J(t, s.space.check(x))


@dataclass(frozen=True)
class Region:
    """Axis-aligned box, optionally refined by a membership predicate.

    ``forward_invariant`` records the user's claim that trajectories starting
    in the region stay there; integrators only monitor it.
    """

    box: tuple
    predicate: Optional[Callable] = None
    forward_invariant: bool = True
    label: str = ""

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in np.atleast_2d(np.asarray(self.box, dtype=float)))
        if not box or any(lo > hi for lo, hi in box):
            raise ValueError(f"empty box {self.box}")
        object.__setattr__(self, "box", box)
        if self.predicate is not None and not self.predicate(self.center):
            raise ValueError("region predicate is false at the box center")

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.box])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @classmethod
    def interval(cls, lo: float, hi: float, **kw) -> "Region":
        return cls(((lo, hi),), **kw)

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float, **kw) -> "Region":
        return cls(tuple((lo, hi) for _ in range(dim)), **kw)

    @classmethod
    def ball(cls, dim: int, radius: float, center=None, **kw) -> "Region":
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        box = tuple((ci - radius, ci + radius) for ci in c)
        # small slack so grid points on the sphere are kept
        pred = lambda x: float(np.linalg.norm(np.asarray(x) - c)) <= radius * (1 + 1e-12)
        kw.setdefault("label", f"ball:{radius}")
        return cls(box, predicate=pred, **kw)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        return True if self.predicate is None else bool(self.predicate(x))

    def grid(self, per_dim: int) -> np.ndarray:
        if per_dim < 1:
            return np.empty((0, self.dim))
        axes = [np.linspace(lo, hi, per_dim) if per_dim > 1 else np.array([0.5 * (lo + hi)])
                for lo, hi in self.box]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return self._filter(pts)

    def random(self, count: int, rng: np.random.Generator, max_tries: int = 50) -> np.ndarray:
        out = []
        tries = 0
        while len(out) < count and tries < max_tries:
            pts = self._filter(rng.uniform(self.lower, self.upper, size=(count, self.dim)))
            out.extend(pts[: count - len(out)])
            tries += 1
        return np.array(out).reshape(-1, self.dim)

    def _filter(self, pts: np.ndarray) -> np.ndarray:
        if self.predicate is None:
            return pts
        keep = np.array([bool(self.predicate(p)) for p in pts], dtype=bool)
        return pts[keep]


# ---------------------------------------------------------------------------
# catalog


def sine_oscillator() -> System:
    return System(
        CoordinateSpace(1, (True,)),
        lambda t, x: -np.sin(x),
        lambda t, x: np.array([[-np.cos(x[0])]]),
        name="sine_oscillator",
    )


def linear(A) -> System:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("linear system needs a square matrix")
    return System(
        CoordinateSpace.euclidean(A.shape[0]),
        lambda t, x: A @ x,
        lambda t, x: A,
        name="linear",
        params={"A": A.tolist()},
    )


def harmonic(omega: float = 1.0) -> System:
    G = np.array([[0.0, omega], [-omega, 0.0]])
    return System(
        CoordinateSpace.euclidean(2),
        lambda t, x: G @ x,
        lambda t, x: G,
        name="harmonic",
        params={"omega": omega},
    )


def boost_converter(L=1.0, C=1.0, R=1.0, E=1.0, u=0.5) -> System:
    """Averaged single-boost converter with constant duty input ``u``.

    State is (inductor current, capacitor voltage).
    """
    if min(L, C, R) <= 0:
        raise ValueError("L, C and R must be positive")
    J = np.array([[0.0, -u / L], [u / C, -1.0 / (R * C)]])

    def f(t, x):
        return np.array([(-u * x[1] + E) / L, (u * x[0] - x[1] / R) / C])

    return System(CoordinateSpace.euclidean(2), f, lambda t, x: J, name="boost_converter",
                  params=dict(L=L, C=C, R=R, E=E, u=u))


def _check_consensus_matrix(A: np.ndarray, tol: float = 1e-9) -> None:
    off = A - np.diag(np.diag(A))
    if np.any(off < -tol):
        raise ValueError("consensus matrix must be Metzler (nonnegative off-diagonal entries)")
    rs = A.sum(axis=1)
    if np.any(np.abs(rs) > tol):
        raise ValueError(f"consensus matrix rows must sum to zero, got {rs}")


def consensus(A, check_times: Sequence[float] = tuple(np.linspace(0.0, 10.0, 11))) -> System:
    """``xdot = A(t) x`` for a Metzler ``A(t)`` with zero row sums.

    ``A`` is either a constant square matrix or a callable ``t -> matrix``;
    a callable is validated at ``check_times``.
    """
    if callable(A):
        Af = lambda t: np.atleast_2d(np.asarray(A(t), dtype=float))
        for t in check_times:
            _check_consensus_matrix(Af(t))
        n = Af(check_times[0]).shape[0]
        return System(CoordinateSpace.euclidean(n), lambda t, x: Af(t) @ x, lambda t, x: Af(t),
                      name="consensus", time_invariant=False)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    _check_consensus_matrix(A)
    return System(CoordinateSpace.euclidean(A.shape[0]), lambda t, x: A @ x, lambda t, x: A,
                  name="consensus", params={"A": A.tolist()})


def ring_laplacian(n: int) -> np.ndarray:
    L = 2.0 * np.eye(n)
    for i in range(n):
        L[i, (i + 1) % n] -= 1.0
        L[i, (i - 1) % n] -= 1.0
    return L


def rooted_connectivity(A, delta: float = 0.0) -> Optional[int]:
    """A node ``k`` from which every other node is reachable, or None.

    The delta-graph has an edge i -> j when ``a_ij >= delta``. Only constant
    matrices are handled; for time-varying ``A(t)`` check ``int A`` yourself.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    adj = (A >= delta) & ~np.eye(n, dtype=bool) if delta > 0 else (A > 0) & ~np.eye(n, dtype=bool)
    for k in range(n):
        seen = {k}
        queue = deque([k])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    queue.append(int(j))
        if len(seen) == n:
            return k
    return None


def kuramoto_matrix(theta) -> np.ndarray:
    """The displacement matrix C(theta): (1/n) cos(theta_j - theta_k) off the diagonal."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    Cm = np.cos(theta[None, :] - theta[:, None]) / n
    np.fill_diagonal(Cm, 0.0)
    Cm[np.diag_indices(n)] = -Cm.sum(axis=1)
    return Cm


def kuramoto(n: int) -> System:
    if n < 2:
        raise ValueError("kuramoto needs n >= 2")

    def f(t, th):
        return np.sin(th[None, :] - th[:, None]).sum(axis=1) / n

    return System(CoordinateSpace.torus(n), f, lambda t, th: kuramoto_matrix(th),
                  name="kuramoto", params={"n": n})


def order_parameter(theta) -> tuple[float, float]:
    """Magnitude and phase of the centroid ``mean(exp(i theta))``."""
    z = np.mean(np.exp(1j * np.asarray(theta, dtype=float)))
    return float(np.abs(z)), float(np.angle(z))


CATALOG: dict[str, Callable[..., System]] = {
    "sine_oscillator": sine_oscillator,
    "boost_converter": boost_converter,
    "consensus": consensus,
    "kuramoto": kuramoto,
    "linear": linear,
    "harmonic": harmonic,
}


def make_builtin(name: str, params: Optional[dict] = None) -> System:
    params = dict(params or {})
    if name == "consensus" and "A" not in params and "ring" in params:
        params["A"] = -ring_laplacian(int(params.pop("ring")))
    try:
        factory = CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown system {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# virtual systems


@dataclass(frozen=True)
class TrajectorySource:
    """Read-only interpolant of a precomputed trajectory.

    Uses cubic Hermite interpolation with field values as node slopes, which
    keeps the interpolation error at the order of the RK4 samples.
    """

    times: np.ndarray
    states: np.ndarray
    space: CoordinateSpace
    spline: CubicHermiteSpline

    @classmethod
    def from_trajectory(cls, traj, system: System) -> "TrajectorySource":
        t = np.asarray(traj.t, dtype=float)
        x = np.array(traj.x, dtype=float)
        if system.space.has_periodic:
            m = system.space.mask
            x[:, m] = np.unwrap(x[:, m], axis=0)
        dx = np.array([system.f(ti, xi) for ti, xi in zip(t, x)])
        return cls(t, x, system.space, CubicHermiteSpline(t, x, dx, axis=0))

    @property
    def t_range(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t) -> np.ndarray:
        lo, hi = self.t_range
        span = max(1.0, abs(hi - lo))
        if t < lo - 1e-12 * span or t > hi + 1e-12 * span:
            raise ValueError(f"time {t} outside trajectory range [{lo}, {hi}]")
        return self.space.wrap(self.spline(min(max(t, lo), hi)))


def make_virtual(fhat: Callable, src: TrajectorySource, base: Optional[System] = None,
                 fhat_jacobian: Optional[Callable] = None, check_times: int = 20,
                 tol: float = 1e-8) -> System:
    """The time-varying system ``zdot = fhat(t, z, x(t))`` closed by ``src``.

    When ``base`` is given, ``fhat(t, x, x) == f(t, x)`` is checked at
    ``check_times`` trajectory samples.
    """
    if base is not None:
        idx = np.unique(np.linspace(0, len(src.times) - 1, check_times).astype(int))
        for i in idx:
            t = src.times[i]
            x = src.space.wrap(src.states[i])
            gap = np.max(np.abs(np.asarray(fhat(t, x, x), dtype=float) - base.f(t, x)))
            if gap > tol:
                raise ConsistencyError(f"fhat(t, x, x) != f(t, x) at t={t} (gap {gap:.3e})")

    field_ = lambda t, z: fhat(t, z, src(t))
    jac = None if fhat_jacobian is None else (lambda t, z: fhat_jacobian(t, z, src(t)))
    return System(src.space, field_, jac, name="virtual", time_invariant=False)
