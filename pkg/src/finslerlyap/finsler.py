"""Candidate (horizontal) Finsler-Lyapunov functions.

A `FinslerLyapunov` bundles ``V(x, dx)``, its partial derivatives, the
exponent ``p`` and the constants of the sandwich ``c1 F^p <= V <= c2 F^p``.
``F`` defaults to ``V ** (1/p)`` with ``c1 = c2 = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import DEFAULT_FD_STEP, CoordinateSpace, numeric_gradient


class DomainError(ValueError):
    """(x, dx) lies outside the set where the metric is defined."""


class KinkError(ValueError):
    """Gradient requested on a tie set of a piecewise-smooth metric."""


class DegeneratePointError(ValueError):
    """Forward projection requested where the vector field vanishes."""


# ---------------------------------------------------------------------------
# horizontal structure


@dataclass(frozen=True)
class HorizontalStructure:
    """Splitting of each tangent space into vertical and horizontal parts.

    In ``"distribution"`` mode the horizontal space is the orthogonal
    complement of ``vertical_span(x)`` unless a custom ``projector`` is
    given. In ``"forward"`` mode the horizontal space is spanned by the
    vector field and the projector needs a system.
    """

    vertical_span: tuple = ()
    projector: Optional[Callable] = None
    mode: str = "distribution"

    def __post_init__(self):
        if self.mode not in ("distribution", "forward"):
            raise ValueError(f"unknown horizontal mode {self.mode!r}")
        object.__setattr__(self, "vertical_span", tuple(self.vertical_span))

    def vertical_basis(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.vertical_span:
            return np.zeros((x.size, 0))
        return np.column_stack([np.asarray(v(x), dtype=float) for v in self.vertical_span])

    def project(self, x, dx, system=None, t: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        if self.mode == "forward":
            if system is None:
                raise ValueError("forward-mode projection needs the system")
            f = system.f(t, x)
            ff = float(f @ f)
            if np.sqrt(ff) <= 1e-10:
                raise DegeneratePointError(f"vector field vanishes at {x}")
            return (f @ dx) / ff * f
        if self.projector is not None:
            return np.asarray(self.projector(x, dx), dtype=float)
        B = self.vertical_basis(x)
        if B.shape[1] == 0:
            return dx.copy()
        coef, *_ = np.linalg.lstsq(B, dx, rcond=None)
        return dx - B @ coef


def consensus_structure() -> HorizontalStructure:
    return HorizontalStructure((lambda x: np.ones_like(np.asarray(x, dtype=float)),))


def forward_structure() -> HorizontalStructure:
    return HorizontalStructure(mode="forward")


def horizontal_project(H: HorizontalStructure, x, dx, system=None, t: float = 0.0) -> np.ndarray:
    return H.project(x, dx, system, t)


def check_projection_invariance(H: HorizontalStructure, system, t: float, samples,
                                h: float = DEFAULT_FD_STEP) -> tuple[float, int]:
    """Largest residual of the horizontal-invariance identity.

    The residual is ``dpi/dx f + dpi/ddx J dx - J pi(dx)``, with both
    directional derivatives taken by central differences. Returns
    ``(max residual norm, number of degenerate samples skipped)``.
    """
    worst = 0.0
    skipped = 0
    for x, dx in samples:
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        try:
            f = system.f(t, x)
            J = system.J(t, x)
            Jdx = J @ dx
            d_x = (H.project(x + h * f, dx, system, t) - H.project(x - h * f, dx, system, t)) / (2 * h)
            d_dx = (H.project(x, dx + h * Jdx, system, t) - H.project(x, dx - h * Jdx, system, t)) / (2 * h)
            r = d_x + d_dx - J @ H.project(x, dx, system, t)
        except DegeneratePointError:
            skipped += 1
            continue
        worst = max(worst, float(np.linalg.norm(r)))
    return worst, skipped


# ---------------------------------------------------------------------------
# Finsler-Lyapunov functions


@dataclass(frozen=True)
class FinslerLyapunov:
    value: Callable
    p: float = 2.0
    grad_x: Optional[Callable] = None
    grad_delta: Optional[Callable] = None
    F: Optional[Callable] = None
    c1: float = 1.0
    c2: float = 1.0
    smooth: bool = True
    horizontal: Optional[HorizontalStructure] = None
    domain: Optional[Callable] = None
    kink: Optional[Callable] = None
    name: str = "custom"
    fd_step: float = DEFAULT_FD_STEP
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("exponent p must be >= 1")
        if not 0 < self.c1 <= self.c2:
            raise ValueError("need 0 < c1 <= c2")

    def check_domain(self, x) -> None:
        if self.domain is not None:
            self.domain(np.asarray(x, dtype=float))

    def __call__(self, x, dx) -> float:
        x = np.asarray(x, dtype=float)
        self.check_domain(x)
        v = float(self.value(x, np.asarray(dx, dtype=float)))
        if not np.isfinite(v):
            raise DomainError(f"{self.name}: non-finite value at x={x}")
        return max(v, 0.0)

    def finsler(self, x, dx) -> float:
        if self.F is not None:
            self.check_domain(x)
            return float(self.F(np.asarray(x, dtype=float), np.asarray(dx, dtype=float)))
        return self(x, dx) ** (1.0 / self.p)

    def on_kink(self, x, dx) -> bool:
        return bool(self.kink is not None and self.kink(np.asarray(x, dtype=float), np.asarray(dx, dtype=float)))

    def grad(self, x, dx, check_kink: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Partial derivatives ``(dV/dx, dV/ddx)``; finite differences when not analytic."""
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        self.check_domain(x)
        if check_kink and self.on_kink(x, dx):
            raise KinkError(f"{self.name}: gradient requested on a tie set at dx={dx}")
        if self.grad_x is not None:
            gx = np.asarray(self.grad_x(x, dx), dtype=float)
        else:
            gx = numeric_gradient(lambda y: self.value(y, dx), x, self.fd_step)
        if self.grad_delta is not None:
            gd = np.asarray(self.grad_delta(x, dx), dtype=float)
        else:
            gd = numeric_gradient(lambda w: self.value(x, w), dx, self.fd_step)
        return gx, gd


def eval_metric(V: FinslerLyapunov, x, dx) -> float:
    return V(x, dx)


def grad_metric(V: FinslerLyapunov, x, dx):
    return V.grad(x, dx)


def _spd(P, what="P") -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] != P.shape[1] or not np.allclose(P, P.T, atol=1e-12):
        raise ValueError(f"{what} must be symmetric")
    if np.min(np.linalg.eigvalsh(P)) <= 1e-10:
        raise ValueError(f"{what} must be positive definite")
    return P


def quadratic(P) -> FinslerLyapunov:
    P = _spd(P)
    return FinslerLyapunov(
        lambda x, d: d @ P @ d,
        p=2,
        grad_x=lambda x, d: np.zeros_like(x),
        grad_delta=lambda x, d: 2.0 * P @ d,
        name="quadratic",
        params={"P": P.tolist()},
    )


def riemannian(P: Callable, dP: Optional[Callable] = None, name: str = "riemannian") -> FinslerLyapunov:
    """``V = dx' P(x) dx``; ``dP(x)`` may return the stack of partials ``dP/dx_k``."""
    gx = None
    if dP is not None:
        gx = lambda x, d: np.array([d @ Pk @ d for Pk in dP(x)])
    return FinslerLyapunov(
        lambda x, d: d @ np.asarray(P(x)) @ d,
        p=2,
        grad_x=gx,
        grad_delta=lambda x, d: 2.0 * np.asarray(P(x)) @ d,
        name=name,
    )


def lohmiller(M: Callable, dM: Optional[Callable] = None) -> FinslerLyapunov:
    return riemannian(M, dM, name="lohmiller")


def knorm(k: float = 2) -> FinslerLyapunov:
    k = float(k)
    if k < 1:
        raise ValueError("k must be >= 1")

    if np.isinf(k):
        def gd(x, d):
            i = int(np.argmax(np.abs(d)))
            g = np.zeros_like(d)
            g[i] = np.sign(d[i])
            return g

        def kink(x, d):
            a = np.sort(np.abs(d))
            return a.size > 1 and a[-1] - a[-2] < 1e-9 * max(1.0, a[-1])
    elif k == 1:
        gd = lambda x, d: np.sign(d)
        kink = lambda x, d: bool(np.any(np.abs(d) < 1e-9 * max(1.0, np.max(np.abs(d)))))
    else:
        def gd(x, d):
            n = np.linalg.norm(d, k)
            if n == 0:
                return np.zeros_like(d)
            return np.sign(d) * (np.abs(d) / n) ** (k - 1)
        kink = None

    return FinslerLyapunov(
        lambda x, d: np.linalg.norm(d, k),
        p=1,
        grad_x=lambda x, d: np.zeros_like(x),
        grad_delta=gd,
        smooth=kink is None,
        kink=kink,
        name="knorm",
        params={"k": k},
    )


def oscillator_v1() -> FinslerLyapunov:
    """Constant metric ``dtheta^2 / 2`` on the circle."""
    return FinslerLyapunov(
        lambda x, d: 0.5 * d[0] ** 2,
        p=2,
        grad_x=lambda x, d: np.zeros(1),
        grad_delta=lambda x, d: np.array([d[0]]),
        name="oscillator_v1",
    )


def _v2_domain(x):
    th = np.mod(x[0] + np.pi, 2 * np.pi) - np.pi
    if abs(abs(th) - np.pi) < 1e-6:
        raise DomainError(f"oscillator_v2 undefined at theta={x[0]} (too close to pi)")


def oscillator_v2() -> FinslerLyapunov:
    """``dtheta^2 / (1 + cos theta)``, defined on the circle minus pi."""
    return FinslerLyapunov(
        lambda x, d: d[0] ** 2 / (1.0 + np.cos(x[0])),
        p=2,
        grad_x=lambda x, d: np.array([np.sin(x[0]) * d[0] ** 2 / (1.0 + np.cos(x[0])) ** 2]),
        grad_delta=lambda x, d: np.array([2.0 * d[0] / (1.0 + np.cos(x[0]))]),
        domain=_v2_domain,
        name="oscillator_v2",
    )


def _maxmin_kink(x, d):
    if d.size < 2:
        return False
    s = np.sort(d)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(d))))
    return bool(s[-1] - s[-2] < tol or s[1] - s[0] < tol) and s[-1] - s[0] > tol


def consensus_maxmin() -> FinslerLyapunov:
    """``max_i dx_i - min_i dx_i``; blind to the consensus direction."""
    def gd(x, d):
        g = np.zeros_like(d)
        # first-index tie breaking
        g[int(np.argmax(d))] += 1.0
        g[int(np.argmin(d))] -= 1.0
        return g

    return FinslerLyapunov(
        lambda x, d: float(np.max(d) - np.min(d)),
        p=1,
        grad_x=lambda x, d: np.zeros_like(x),
        grad_delta=gd,
        smooth=False,
        horizontal=consensus_structure(),
        kink=_maxmin_kink,
        name="consensus_maxmin",
    )


def centering(n: int) -> np.ndarray:
    return np.eye(n) - np.ones((n, n)) / n


def horizontal_quadratic(n: int) -> FinslerLyapunov:
    """``dx' (I - 11'/n) dx``, horizontal with respect to span{1}."""
    Pi = centering(n)
    return FinslerLyapunov(
        lambda x, d: d @ Pi @ d,
        p=2,
        grad_x=lambda x, d: np.zeros_like(x),
        grad_delta=lambda x, d: 2.0 * Pi @ d,
        horizontal=consensus_structure(),
        name="horizontal_quadratic",
        params={"n": n},
    )


def _centroid(theta):
    z = np.mean(np.exp(1j * theta))
    return np.abs(z), np.angle(z)


def kuramoto_centroid(q: int = 1, rho_min: float = 1e-9) -> FinslerLyapunov:
    """``rho^(-2q) dtheta' Pi dtheta`` with ``rho`` the centroid magnitude."""
    if int(q) != q or q < 0:
        raise ValueError("q must be a natural number")
    q = int(q)

    def domain(th):
        rho, _ = _centroid(th)
        if rho <= rho_min:
            raise DomainError(f"kuramoto_centroid undefined at balanced phases (rho={rho:.3e})")

    def value(th, d):
        rho, _ = _centroid(th)
        dc = d - d.mean()
        return rho ** (-2 * q) * (dc @ dc)

    def gx(th, d):
        rho, phi = _centroid(th)
        n = th.size
        dc = d - d.mean()
        # d rho / d theta_k = -sin(theta_k - phi) / n
        return (2.0 * q / n) * rho ** (-2 * q - 1) * np.sin(th - phi) * (dc @ dc)

    def gd(th, d):
        rho, _ = _centroid(th)
        return 2.0 * rho ** (-2 * q) * (d - d.mean())

    return FinslerLyapunov(value, p=2, grad_x=gx, grad_delta=gd, horizontal=consensus_structure(),
                           domain=domain, name="kuramoto_centroid", params={"q": q})


METRICS = {
    "quadratic": quadratic,
    "riemannian": riemannian,
    "knorm": knorm,
    "oscillator_v1": oscillator_v1,
    "oscillator_v2": oscillator_v2,
    "consensus_maxmin": consensus_maxmin,
    "horizontal_quadratic": horizontal_quadratic,
    "kuramoto_centroid": kuramoto_centroid,
    "lohmiller": lohmiller,
}


def make_metric(name: str, params: Optional[dict] = None) -> FinslerLyapunov:
    from .dynamics import CatalogError

    try:
        factory = METRICS[name]
    except KeyError:
        raise CatalogError(f"unknown metric {name!r}; choose from {sorted(METRICS)}") from None
    return factory(**(params or {}))


# ---------------------------------------------------------------------------
# property suite


@dataclass
class PropertyCheck:
    passed: bool
    worst: float
    required: bool = True
    checked: int = 0
    note: str = ""


@dataclass
class PropertyReport:
    metric: str
    checks: dict
    samples: int
    domain_exclusions: int = 0
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values() if c.required)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "passed": self.passed,
            "samples": self.samples,
            "domain_exclusions": self.domain_exclusions,
            "checks": {k: vars(c) for k, c in self.checks.items()},
            "notes": list(self.notes),
        }


def _default_points(space: CoordinateSpace, count: int, rng, box=None) -> np.ndarray:
    if box is not None:
        lo, hi = np.asarray(box, dtype=float).T
        return rng.uniform(lo, hi, size=(count, space.dim))
    lo = np.where(space.mask, -np.pi, -3.0)
    hi = np.where(space.mask, np.pi, 3.0)
    return rng.uniform(lo, hi, size=(count, space.dim))


def property_suite(V: FinslerLyapunov, space: CoordinateSpace, sample_count: int = 200,
                   seed: int = 0, box=None, system=None, tol: float = 1e-9,
                   scale_decades: float = 6.0) -> PropertyReport:
    """Sampled audit of the Finsler-structure axioms and the bound sandwich.

    ``x`` is drawn from ``box`` (or a default window), displacement
    magnitudes span ``10**(+-scale_decades)`` so that sandwich constants are
    exercised across scales. Strict convexity is only spot-checked and is
    reported as informational.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    H = V.horizontal
    xs = _default_points(space, sample_count, rng, box)
    pos = hom = sub = sand = vert = 0.0
    strict_margin = np.inf
    min_pos = np.inf
    counts = dict(pos=0, hom=0, sub=0, sand=0, vert=0, strict=0)
    excluded = 0
    asym = 0.0
    lambdas = (0.5, 2.0, 10.0)

    def horiz(x, d):
        return d if H is None else H.project(x, d, system)

    for x in xs:
        try:
            V.check_domain(x)
        except DomainError:
            excluded += 1
            continue
        scale = 10.0 ** rng.uniform(-scale_decades, scale_decades)
        d1 = horiz(x, rng.standard_normal(space.dim)) * scale
        d2 = horiz(x, rng.standard_normal(space.dim)) * scale * rng.uniform(0.1, 10)
        n1 = np.linalg.norm(d1)
        if n1 <= 1e-300:
            continue
        F1 = V.finsler(x, d1)
        min_pos = min(min_pos, F1 / n1)
        counts["pos"] += 1
        if not F1 > 0:
            pos = max(pos, 1.0)

        for lam in lambdas + (rng.uniform(0, 5),):
            Fl = V.finsler(x, lam * d1)
            hom = max(hom, abs(Fl - lam * F1) / max(lam * F1, 1e-300))
            counts["hom"] += 1

        F2 = V.finsler(x, d2)
        F12 = V.finsler(x, d1 + d2)
        sub = max(sub, (F12 - F1 - F2) / max(F1 + F2, 1e-300))
        counts["sub"] += 1
        cosang = abs(d1 @ d2) / max(n1 * np.linalg.norm(d2), 1e-300)
        if cosang < 1 - 1e-6:
            strict_margin = min(strict_margin, (F1 + F2 - F12) / max(F1 + F2, 1e-300))
            counts["strict"] += 1

        for d in (d1, d2):
            v = V(x, d)
            Fp = V.finsler(x, d) ** V.p
            lo, hi = V.c1 * Fp, V.c2 * Fp
            sand = max(sand, (lo - v) / max(v, lo, 1e-300), (v - hi) / max(v, hi, 1e-300))
            counts["sand"] += 1

        asym = max(asym, abs(V.finsler(x, -d1) - F1) / max(F1, 1e-300))

        if H is not None and H.mode == "distribution":
            B = H.vertical_basis(x)
            if B.shape[1]:
                w = B @ (rng.standard_normal(B.shape[1]) * scale)
                v0 = V(x, d1)
                vert = max(vert, abs(V(x, d1 + w) - v0) / max(1.0, v0))
                counts["vert"] += 1

    checks = {
        "positivity": PropertyCheck(pos == 0.0 and counts["pos"] > 0, float(min_pos), checked=counts["pos"],
                                    note="worst = min F(x, dx)/|dx|"),
        "homogeneity": PropertyCheck(hom <= tol, float(hom), checked=counts["hom"]),
        "subadditivity": PropertyCheck(sub <= tol, float(sub), checked=counts["sub"]),
        "strict_convexity": PropertyCheck(bool(strict_margin >= 1e-12), float(strict_margin), required=False,
                                          checked=counts["strict"],
                                          note="spot check on non-collinear pairs; informational"),
        "bound_sandwich": PropertyCheck(sand <= tol, float(sand), checked=counts["sand"]),
    }
    if H is not None and H.mode == "distribution":
        checks["vertical_blindness"] = PropertyCheck(vert <= tol, float(vert), checked=counts["vert"])
    notes = []
    if asym > 1e-9:
        notes.append(f"F is not symmetric: max |F(x,-dx) - F(x,dx)|/F = {asym:.3e}")
    return PropertyReport(V.name, checks, int(sample_count), excluded, notes)
