"""Finsler distances by discrete curve optimization and empirical decay.

Curves are polylines with fixed endpoints; the optimized length is an upper
bound on the induced distance over all piecewise-C1 curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import System
from .finsler import DomainError, FinslerLyapunov, HorizontalStructure
from .flow import DEFAULT_DT, flow_map
from .geometry import CoordinateSpace

UPPER_BOUND_LABEL = "upper bound (polyline family)"


@dataclass
class DiscreteCurve:
    nodes: np.ndarray
    s: Optional[np.ndarray] = None  # node parameters; uniform i/N when None

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        if self.nodes.shape[0] < 2:
            raise ValueError("a curve needs at least two nodes")
        if self.s is not None:
            self.s = np.asarray(self.s, dtype=float)
            if self.s.shape[0] != self.nodes.shape[0] or np.any(np.diff(self.s) <= 0):
                raise ValueError("curve parameters must be strictly increasing, one per node")

    @property
    def N(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def params(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N + 1) if self.s is None else self.s

    @classmethod
    def straight(cls, space: CoordinateSpace, x1, x2, N: int) -> "DiscreteCurve":
        if N < 1:
            raise ValueError("N must be >= 1")
        x1 = space.wrap(x1)
        d = space.displacement(x1, x2)
        s = np.linspace(0.0, 1.0, N + 1)
        return cls(x1[None, :] + s[:, None] * d[None, :])


@dataclass
class DistanceResult:
    value: float
    curve: DiscreteCurve
    iterations: int
    converged: bool
    monotone_history: list
    notes: list = field(default_factory=list)
    label: str = UPPER_BOUND_LABEL

    def to_dict(self) -> dict:
        return {"value": self.value, "iterations": self.iterations, "converged": self.converged,
                "label": self.label, "history": list(self.monotone_history), "notes": list(self.notes),
                "curve": self.curve.nodes.tolist()}


def _finsler_fn(F) -> Callable:
    return F.finsler if isinstance(F, FinslerLyapunov) else F


def _check_endpoints(F, *pts):
    if isinstance(F, FinslerLyapunov):
        for p in pts:
            F.check_domain(p)


def _segment_terms(Ffun, nodes, s, space, project):
    disp = np.diff(nodes, axis=0)
    if space is not None and space.has_periodic:
        disp = space.wrap_many(disp)
    ds = np.diff(s)
    mids = nodes[:-1] + 0.5 * disp
    if space is not None:
        mids = space.wrap_many(mids)
    out = np.empty(len(ds))
    for i in range(len(ds)):
        v = disp[i] / ds[i]
        if project is not None:
            v = project(mids[i], v)
        out[i] = Ffun(mids[i], v) * ds[i]
    return out


def curve_length(F, curve: DiscreteCurve, space: Optional[CoordinateSpace] = None,
                 horizontal: Optional[HorizontalStructure] = None, system=None) -> float:
    """Midpoint quadrature of ``int F(gamma, gamma') ds`` along a polyline.

    With ``horizontal`` the tangent is projected first, giving the
    pseudo-length.
    """
    project = None if horizontal is None else (lambda x, v: horizontal.project(x, v, system))
    return float(np.sum(_segment_terms(_finsler_fn(F), curve.nodes, curve.params, space, project)))


def _optimize(Ffun, space, x1, x2, N, max_iters, tol, project, h_rel=1e-6) -> DistanceResult:
    curve = DiscreteCurve.straight(space, x1, x2, N)
    nodes = curve.nodes.copy()
    s = curve.params
    notes = []

    def length(nd):
        try:
            return float(np.sum(_segment_terms(Ffun, nd, s, space, project)))
        except DomainError:
            return np.inf

    L = length(nodes)
    if not np.isfinite(L):
        raise DomainError("straight-line initialization leaves the metric's domain")
    history = [L]
    span = float(np.linalg.norm(space.displacement(nodes[0], nodes[-1])))
    if L == 0.0 or span == 0.0 or N == 1:
        return DistanceResult(L, DiscreteCurve(nodes), 0, True, history, notes)

    h = h_rel * span
    d = nodes.shape[1]
    seg_len = span / N
    step = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        terms = _segment_terms(Ffun, nodes, s, space, project)
        g = np.zeros_like(nodes)
        # node i only touches segments i-1 and i
        for i in range(1, N):
            for j in range(d):
                loc = []
                for sgn in (1.0, -1.0):
                    nd = nodes[i - 1:i + 2].copy()
                    nd[1, j] += sgn * h
                    try:
                        loc.append(np.sum(_segment_terms(Ffun, nd, s[i - 1:i + 2], space, project)))
                    except DomainError:
                        loc.append(np.nan)
                g[i, j] = (loc[0] - loc[1]) / (2 * h)
        if not np.all(np.isfinite(g)):
            notes.append("gradient hit the metric's domain boundary; stopped")
            converged = True
            break
        gmax = float(np.max(np.abs(g)))
        if gmax <= 1e-14 * max(L, 1e-300) / seg_len:
            converged = True
            break
        if step is None:
            step = 0.1 * seg_len / gmax
        accepted = False
        for _ in range(30):
            trial = nodes - step * g
            Lt = length(trial)
            if Lt < L:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        rel = (L - Lt) / max(L, 1e-300)
        nodes, L = trial, Lt
        history.append(L)
        step *= 2.0
        if rel < tol:
            converged = True
            break
    if not converged:
        notes.append(f"no convergence within {max_iters} iterations")
    return DistanceResult(L, DiscreteCurve(nodes), it, converged, history, notes)


def finsler_distance(F, x1, x2, N: int = 32, max_iters: int = 5000, tol: float = 1e-8,
                     space: Optional[CoordinateSpace] = None) -> DistanceResult:
    """Locally minimal polyline length between ``x1`` and ``x2``.

    Interior nodes follow finite-difference gradient steps with halving
    backtracking (at most 30 halvings); the loop stops when the relative
    length decrease falls below ``tol``.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    space = space or CoordinateSpace.euclidean(x1.size)
    _check_endpoints(F, space.wrap(x1), space.wrap(x2))
    return _optimize(_finsler_fn(F), space, x1, x2, N, max_iters, tol, None)


def pseudo_distance(F, H: HorizontalStructure, x1, x2, N: int = 32, max_iters: int = 5000,
                    tol: float = 1e-8, space: Optional[CoordinateSpace] = None, system=None) -> DistanceResult:
    """Distance blind to vertical directions: lengths use ``F(gamma, pi(gamma'))``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    space = space or CoordinateSpace.euclidean(x1.size)
    _check_endpoints(F, space.wrap(x1), space.wrap(x2))
    project = lambda x, v: H.project(x, v, system)
    res = _optimize(_finsler_fn(F), space, x1, x2, N, max_iters, tol, project)
    res.label = "pseudo-distance " + UPPER_BOUND_LABEL
    return res


@dataclass
class DecayResult:
    times: np.ndarray
    distances: np.ndarray
    rate: Optional[float]
    gain: Optional[float]
    degenerate: bool
    converged: bool
    notes: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "distance", "log_distance"])
            for t, d in zip(self.times, self.distances):
                ld = np.log(d) if d > 0 else -np.inf
                w.writerow([f"{t:.17g}", f"{d:.17g}", f"{ld:.17g}"])

    def to_dict(self) -> dict:
        return {"rate": self.rate, "gain": self.gain, "degenerate": self.degenerate,
                "converged": self.converged, "notes": list(self.notes),
                "t": self.times.tolist(), "distance": self.distances.tolist()}


def fit_decay(times, distances, floor_rel: float = 1e-12) -> tuple[Optional[float], Optional[float]]:
    """Least-squares fit of ``log d(t) = log(K d0) - lam (t - t0)`` over the tail half.

    Samples below ``floor_rel * d0`` are dropped as roundoff.
    """
    times = np.asarray(times, dtype=float)
    distances = np.asarray(distances, dtype=float)
    d0 = distances[0]
    if not d0 > 0:
        return None, None
    tail = np.arange(len(times)) >= len(times) // 2
    keep = tail & (distances > floor_rel * d0)
    if keep.sum() < 2:
        keep = (np.arange(len(times)) >= 1) & (distances > floor_rel * d0)
        keep[0] = True
    if keep.sum() < 2:
        return None, None
    slope, icpt = np.polyfit(times[keep] - times[0], np.log(distances[keep]), 1)
    return float(-slope), float(np.exp(icpt) / d0)


def empirical_decay(s: System, F, x1, x2, t_grid: Sequence[float], N: int = 32,
                    dt: float = DEFAULT_DT, tol: float = 1e-8, max_iters: int = 5000) -> DecayResult:
    """Distance between two solutions sampled on ``t_grid`` and its fitted decay.

    Metrics carrying a horizontal structure use the pseudo-distance.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    a = s.space.wrap(x1)
    b = s.space.wrap(x2)
    H = F.horizontal if isinstance(F, FinslerLyapunov) else None

    def dist(p, q):
        if H is not None:
            return pseudo_distance(F, H, p, q, N, max_iters, tol, s.space, s)
        return finsler_distance(F, p, q, N, max_iters, tol, s.space)

    dists, ok = [], True
    notes = []
    for k, t in enumerate(t_grid):
        if k > 0:
            a = flow_map(s, t_grid[k - 1], a, t, dt)
            b = flow_map(s, t_grid[k - 1], b, t, dt)
        r = dist(a, b)
        dists.append(r.value)
        if not r.converged:
            ok = False
            notes.append(f"distance optimization did not converge at t={t:.6g}")
    dists = np.array(dists)
    if dists[0] < 1e-12:
        return DecayResult(t_grid, dists, None, None, True, ok, notes + ["initial distance is zero"])
    rate, gain = fit_decay(t_grid, dists)
    return DecayResult(t_grid, dists, rate, gain, False, ok, notes)
