"""Sampled certification of contraction conditions.

Every engine evaluates a pointwise condition on a `SamplingPlan` over a
`Region` and returns a `CertificateReport`. Certificates are sampled-grid
certificates, never formal proofs; reports carry the resolution and the
worst margin found.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import Region, System, TrajectorySource, make_virtual
from .finsler import DegeneratePointError, DomainError, FinslerLyapunov, KinkError
from .flow import integrate, integrate_prolonged
from .geometry import DEFAULT_FD_STEP, Diffeomorphism, SingularJacobianWarning

CERTIFIED_IS = "certified_IS"
CERTIFIED_IAS = "certified_IAS"
CERTIFIED_IES = "certified_IES"
COUNTEREXAMPLE = "counterexample"
INCONCLUSIVE = "inconclusive"
VERDICTS = (CERTIFIED_IS, CERTIFIED_IAS, CERTIFIED_IES, COUNTEREXAMPLE, INCONCLUSIVE)

RATE_MIN = 1e-6
LHS_TOL = 1e-9


@dataclass(frozen=True)
class SamplingPlan:
    grid_per_dim: int = 0
    random_samples: int = 0
    seed: int = 0
    time_samples: tuple = (0.0,)
    delta_sphere_samples: int = 4
    delta_scales: tuple = (1.0,)

    def __post_init__(self):
        if self.grid_per_dim <= 0 and self.random_samples <= 0:
            raise ValueError("a sampling plan needs grid points or random samples")
        if not len(self.time_samples):
            raise ValueError("a sampling plan needs at least one time sample")
        object.__setattr__(self, "time_samples", tuple(float(t) for t in self.time_samples))
        object.__setattr__(self, "delta_scales", tuple(float(s) for s in self.delta_scales))

    def states(self, region: Region) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        parts = [region.grid(self.grid_per_dim)]
        if self.random_samples > 0:
            parts.append(region.random(self.random_samples, rng))
        return np.concatenate(parts, axis=0)

    def directions(self, dim: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 1])
        eye = np.eye(dim)
        dirs = [eye, -eye]
        if self.delta_sphere_samples > 0:
            r = rng.standard_normal((self.delta_sphere_samples, dim))
            dirs.append(r / np.linalg.norm(r, axis=1, keepdims=True))
        return np.concatenate(dirs, axis=0)


@dataclass
class CertificateReport:
    verdict: str
    engine: str
    rate_estimate: Optional[float] = None
    worst_sample: Optional[dict] = None
    samples_evaluated: int = 0
    margins: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    conclusions: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.verdict.startswith("certified")

    def to_dict(self) -> dict:
        return asdict(self)


def _summary(values: np.ndarray) -> dict:
    if values.size == 0:
        return {}
    return {"min": float(np.min(values)), "median": float(np.median(values)), "max": float(np.max(values))}


def _plan_info(plan: SamplingPlan) -> dict:
    return {
        "grid_per_dim": plan.grid_per_dim,
        "random_samples": plan.random_samples,
        "seed": plan.seed,
        "time_samples": list(plan.time_samples),
        "delta_sphere_samples": plan.delta_sphere_samples,
    }


# ---------------------------------------------------------------------------
# the contraction inequality


def contraction_lhs(s: System, V: FinslerLyapunov, t: float, x, dx, check_kink: bool = True) -> float:
    """``dV/dx f(t, x) + dV/ddx J(t, x) dx``."""
    x = np.asarray(x, dtype=float)
    dx = np.asarray(dx, dtype=float)
    gx, gd = V.grad(x, dx, check_kink=check_kink)
    return float(gx @ s.f(t, x) + gd @ (s.J(t, x) @ dx))


def _lhs_off_kink(s, V, t, x, d, rng, project):
    """LHS at ``d``, nudging ``d`` off a tie set when needed."""
    for _ in range(8):
        try:
            return contraction_lhs(s, V, t, x, d), d
        except KinkError:
            d = project(d + 1e-7 * np.linalg.norm(d) * rng.standard_normal(d.size))
            d = d / V.finsler(x, d)
    return contraction_lhs(s, V, t, x, d, check_kink=False), d


def _evaluate_chunk(s, V, tx_pairs, dirs, plan, offset, alpha_fn):
    H = V.horizontal
    recs = []
    excluded = 0
    vertical = 0
    horiz_audit = 0.0
    for k, (t, x) in enumerate(tx_pairs):
        rng = np.random.default_rng([plan.seed, 2, offset + k])
        try:
            V.check_domain(x)
        except DomainError:
            excluded += 1
            continue

        def project(d, x=x, t=t):
            return d if H is None else H.project(x, d, s, t)

        for raw in dirs:
            try:
                d = project(raw)
            except DegeneratePointError:
                excluded += 1
                continue
            if np.linalg.norm(d) <= 1e-12:
                vertical += 1
                continue
            if H is not None and H.mode == "distribution":
                v_raw, v_h = V(x, raw), V(x, d)
                horiz_audit = max(horiz_audit, abs(v_raw - v_h) / max(1.0, v_h))
            Fd = V.finsler(x, d)
            if not Fd > 0:
                excluded += 1
                continue
            d = d / Fd
            lhs, d = _lhs_off_kink(s, V, t, x, d, rng, project)
            for scale in plan.delta_scales:
                ds = scale * d
                if scale == 1.0:
                    l_s, v_s = lhs, V(x, d)
                else:
                    l_s, _ = _lhs_off_kink(s, V, t, x, ds, rng, project)
                    v_s = V(x, ds)
                a = 0.0 if alpha_fn is None else float(alpha_fn(v_s))
                recs.append((t, x, ds, l_s, v_s, a))
    return recs, excluded, vertical, horiz_audit


def _run_samples(s, V, region, plan, alpha_fn, workers):
    states = plan.states(region)
    pairs = [(t, s.space.wrap(x)) for t in plan.time_samples for x in states]
    dirs = plan.directions(s.dim)
    workers = max(1, int(workers))
    if workers == 1 or len(pairs) < 2 * workers:
        chunks = [(pairs, 0)]
    else:
        bounds = np.linspace(0, len(pairs), workers + 1).astype(int)
        chunks = [(pairs[a:b], a) for a, b in zip(bounds[:-1], bounds[1:])]
    if len(chunks) == 1:
        results = [_evaluate_chunk(s, V, chunks[0][0], dirs, plan, 0, alpha_fn)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda c: _evaluate_chunk(s, V, c[0], dirs, plan, c[1], alpha_fn), chunks))
    recs = [r for res in results for r in res[0]]
    excluded = sum(res[1] for res in results)
    vertical = sum(res[2] for res in results)
    audit = max((res[3] for res in results), default=0.0)
    return recs, excluded, vertical, audit, len(states)


def _sample_dict(rec) -> dict:
    t, x, d, lhs, v, a = rec
    return {"t": float(t), "x": [float(c) for c in x], "dx": [float(c) for c in d],
            "lhs": float(lhs), "V": float(v), "ratio": float(lhs / v) if v > 0 else None}


def certify_region(s: System, V: FinslerLyapunov, region: Region, plan: SamplingPlan,
                   alpha: str = "linear", rate_min: float = RATE_MIN,
                   alpha_fn: Optional[Callable] = None, tol: float = LHS_TOL,
                   workers: int = 1) -> CertificateReport:
    """Check the contraction inequality ``LHS <= -alpha(V)`` over the plan.

    ``alpha`` is ``"zero"`` (IS), ``"classK"`` with ``alpha_fn`` (IAS) or
    ``"linear"`` with threshold ``rate_min`` (IES). Displacements are
    normalized to ``F(x, dx) = 1``; for horizontal metrics they are projected
    first. A violated ``LHS <= tol * max(1, V)`` anywhere gives a
    counterexample; a requested stronger mode that fails degrades to IS.
    """
    if alpha not in ("zero", "classK", "linear"):
        raise ValueError(f"unknown alpha mode {alpha!r}")
    if alpha == "classK" and alpha_fn is None:
        raise ValueError("classK mode needs alpha_fn")
    recs, excluded, vertical, audit, n_states = _run_samples(
        s, V, region, plan, alpha_fn if alpha == "classK" else None, workers)

    notes = []
    if excluded:
        notes.append(f"{excluded} samples excluded (domain or degenerate points)")
    details = {"plan": _plan_info(plan), "state_samples": n_states, "domain_exclusions": excluded,
               "vertical_directions_skipped": vertical, "alpha_mode": alpha, "rate_min": rate_min,
               "region": [list(b) for b in region.box]}
    if V.horizontal is not None and V.horizontal.mode == "distribution":
        details["horizontal_audit"] = audit
    if not recs:
        return CertificateReport(INCONCLUSIVE, "finsler", None, None, 0, {}, notes + ["no samples evaluated"],
                                 details=details)

    lhs = np.array([r[3] for r in recs])
    vals = np.array([r[4] for r in recs])
    alph = np.array([r[5] for r in recs])
    pos = vals > 0
    ratio = np.where(pos, lhs / np.where(pos, vals, 1.0), -np.inf)
    excess = lhs - tol * np.maximum(1.0, vals)
    iw = int(np.argmax(ratio)) if np.any(pos) else int(np.argmax(lhs))
    rate = float(-np.max(ratio[pos])) if np.any(pos) else None

    if np.any(excess > 0):
        verdict = COUNTEREXAMPLE
        iw = int(np.argmax(excess))
    elif alpha == "linear" and rate is not None and rate >= rate_min:
        verdict = CERTIFIED_IES
    elif alpha == "classK" and np.all(lhs + alph <= tol * np.maximum(1.0, vals)):
        verdict = CERTIFIED_IAS
    else:
        verdict = CERTIFIED_IS
        if alpha != "zero":
            notes.append(f"requested {alpha} decay not met on samples; only non-expansion certified")
    details["requested_met"] = {"zero": verdict != COUNTEREXAMPLE,
                                "linear": verdict == CERTIFIED_IES,
                                "classK": verdict == CERTIFIED_IAS}[alpha]
    return CertificateReport(verdict, "finsler", rate, _sample_dict(recs[iw]), len(recs),
                             _summary(ratio[pos]), notes, details=details)


# ---------------------------------------------------------------------------
# matrix measures and LMIs


def matrix_measure(A, norm=2) -> float:
    """Logarithmic norm of ``A`` induced by the 1-, 2- or inf-norm."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix measure needs a square matrix")
    if norm == 2:
        return float(np.max(np.linalg.eigvalsh(0.5 * (A + A.T))))
    absA = np.abs(A)
    diag = np.diag(A)
    if norm == 1:
        return float(np.max(diag + absA.sum(axis=0) - np.abs(diag)))
    if norm in (np.inf, "inf", "infinity"):
        return float(np.max(diag + absA.sum(axis=1) - np.abs(diag)))
    raise ValueError(f"unsupported norm {norm!r}")


def matrix_measure_limit(A, norm=2, h: float = 1e-8) -> float:
    """``(|I + hA| - 1) / h`` for small ``h``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    ord_ = np.inf if norm in (np.inf, "inf", "infinity") else norm
    return float((np.linalg.norm(np.eye(A.shape[0]) + h * A, ord_) - 1.0) / h)


def _jac_samples(s: System, region: Region, plan: SamplingPlan):
    for t in plan.time_samples:
        for x in plan.states(region):
            x = s.space.wrap(x)
            yield t, x, s.J(t, x)


def certify_measure(s: System, region: Region, norm=2, plan: Optional[SamplingPlan] = None,
                    c_min: float = RATE_MIN) -> CertificateReport:
    """Sufficient condition ``mu(J(t, x)) <= -c`` on the plan.

    Certification corresponds to the norm metric ``V(x, dx) = |dx|``
    contracting at rate ``c``; failure is inconclusive, not a counterexample.
    """
    plan = plan or SamplingPlan(grid_per_dim=11)
    mus, where = [], []
    for t, x, J in _jac_samples(s, region, plan):
        mus.append(matrix_measure(J, norm))
        where.append((t, x))
    if not mus:
        return CertificateReport(INCONCLUSIVE, "measure", notes=["no samples evaluated"])
    mus = np.array(mus)
    i = int(np.argmax(mus))
    sup = float(mus[i])
    verdict = CERTIFIED_IES if sup <= -c_min else INCONCLUSIVE
    notes = [f"V(x, dx) = |dx|_{norm} decays at rate >= {-sup:.6g}"] if verdict == CERTIFIED_IES else \
        [f"sup mu_{norm}(J) = {sup:.6g} > -{c_min:g}; measure test inconclusive"]
    return CertificateReport(verdict, "measure", -sup,
                             {"t": float(where[i][0]), "x": [float(c) for c in where[i][1]], "mu": sup},
                             len(mus), _summary(mus), notes,
                             details={"norm": str(norm), "c_min": c_min, "plan": _plan_info(plan)})


def certify_lmi(s: System, P, Q, region: Region, plan: Optional[SamplingPlan] = None,
                tol: float = LHS_TOL) -> CertificateReport:
    """``P J + J' P + Q <= 0`` at every sample.

    ``Q`` is an SPD matrix, or a positive scalar ``lam`` meaning ``Q = lam P``.
    The rate estimate is the decay rate of ``dx' P dx`` implied by the
    worst sampled Jacobian.
    """
    from .finsler import _spd

    P = _spd(P, "P")
    Qm = float(Q) * P if np.isscalar(Q) else _spd(Q, "Q")
    if np.isscalar(Q) and not float(Q) > 0:
        raise ValueError("scalar Q must be positive")
    plan = plan or SamplingPlan(grid_per_dim=11)
    Lc = np.linalg.cholesky(P)
    Linv = np.linalg.inv(Lc)
    vals, rates, where = [], [], []
    for t, x, J in _jac_samples(s, region, plan):
        S = P @ J + J.T @ P
        vals.append(float(np.max(np.linalg.eigvalsh(S + Qm))))
        rates.append(float(np.max(np.linalg.eigvalsh(Linv @ S @ Linv.T))))
        where.append((t, x))
    if not vals:
        return CertificateReport(INCONCLUSIVE, "lmi", notes=["no samples evaluated"])
    vals = np.array(vals)
    i = int(np.argmax(vals))
    verdict = CERTIFIED_IES if vals[i] <= tol else COUNTEREXAMPLE
    return CertificateReport(verdict, "lmi", -float(np.max(rates)),
                             {"t": float(where[i][0]), "x": [float(c) for c in where[i][1]],
                              "lambda_max": float(vals[i])},
                             len(vals), _summary(vals), [], details={"plan": _plan_info(plan)})


# ---------------------------------------------------------------------------
# LaSalle, integral condition, forward contraction


def lasalle(s: System, V: FinslerLyapunov, alpha_fn: Callable, region: Region,
            plan: Optional[SamplingPlan] = None, probe_count: Optional[int] = None,
            T_horizon: float = 40.0, dt: float = 1e-2, decay_threshold: float = 1e-3,
            probe_deltas: Optional[Sequence] = None, tol: float = LHS_TOL) -> CertificateReport:
    """Pointwise audit ``LHS <= -alpha(x, dx)`` plus variational probes.

    Probes integrate the prolonged system from region samples and check
    ``|dx(T)| <= decay_threshold |dx(0)|``. The IAS verdict is empirical:
    it is only issued when every probe decays.
    """
    if not s.time_invariant:
        raise ValueError("lasalle handles time-invariant systems only")
    plan = plan or SamplingPlan(grid_per_dim=11, random_samples=50)
    states = plan.states(region)
    dirs = plan.directions(s.dim)
    worst_excess = -np.inf
    worst = None
    residual = 0.0
    n = 0
    for x in states:
        x = s.space.wrap(x)
        for d in dirs:
            try:
                d = d / V.finsler(x, d)
                lhs = contraction_lhs(s, V, 0.0, x, d)
            except (DomainError, KinkError):
                continue
            a = float(alpha_fn(x, d))
            v = V(x, d)
            excess = (lhs + a) - tol * max(1.0, v)
            residual = max(residual, abs(lhs + a))
            n += 1
            if excess > worst_excess:
                worst_excess = excess
                worst = {"t": 0.0, "x": x.tolist(), "dx": d.tolist(), "lhs": lhs, "alpha": a, "V": v}
    details = {"audit_max_abs_residual": residual, "plan": _plan_info(plan),
               "T_horizon": T_horizon, "dt": dt, "decay_threshold": decay_threshold}
    if n == 0:
        return CertificateReport(INCONCLUSIVE, "lasalle", notes=["no audit samples"], details=details)
    if worst_excess > 0:
        return CertificateReport(COUNTEREXAMPLE, "lasalle", None, worst, n,
                                 notes=["pointwise audit LHS <= -alpha failed"], details=details)

    rng = np.random.default_rng([plan.seed, 3])
    if probe_deltas is None:
        probe_deltas = list(np.eye(s.dim))
    probe_count = probe_count or len(probe_deltas)
    x0s = region.random(probe_count, rng)
    notes = []
    probes = []
    for i in range(probe_count):
        d0 = np.asarray(probe_deltas[i % len(probe_deltas)], dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = integrate_prolonged(s, 0.0, x0s[i], d0, T_horizon, dt, region=region)
        notes.extend(tr.diagnostics)
        ratio = float(np.linalg.norm(tr.final_delta[:, 0]) / np.linalg.norm(d0))
        probes.append({"x0": x0s[i].tolist(), "dx0": d0.tolist(), "ratio": ratio})
    ratios = np.array([p["ratio"] for p in probes])
    details["probes"] = probes
    ok = bool(np.all(ratios <= decay_threshold))
    rate = float(np.min(-np.log(np.maximum(ratios, 1e-300)) / T_horizon))
    verdict = CERTIFIED_IAS if ok else INCONCLUSIVE
    notes.append("IAS verdict is empirical (probe decay), not a computed invariant set"
                 if ok else "probe displacements did not decay below threshold")
    return CertificateReport(verdict, "lasalle", rate, worst, n, _summary(ratios), notes,
                             conclusions={"empirical": True}, details=details)


def integral_alpha_probe(s: System, V: Optional[FinslerLyapunov], alpha_fn: Callable, t0: float, x0, d0,
                         T: float, dt: float = 1e-3, cumulative: bool = False):
    """Trapezoid integral of ``alpha(t, x(t), dx(t))`` along a prolonged trajectory.

    With ``cumulative=True`` returns ``(times, running integral)`` so growth
    can be inspected.
    """
    tr = integrate_prolonged(s, t0, x0, np.asarray(d0, dtype=float).reshape(-1, 1), T, dt)
    a = np.array([float(alpha_fn(t, x, D[:, 0])) for t, x, D in zip(tr.t, tr.x, tr.delta)])
    h = tr.dt
    if cumulative:
        run = np.concatenate([[0.0], np.cumsum(0.5 * h * (a[1:] + a[:-1]))])
        return tr.t, run
    return float(0.5 * h * (a[1:] + a[:-1]).sum())


def bendixson(s: System, V: FinslerLyapunov, region: Region, plan: SamplingPlan,
              rate_min: float = RATE_MIN, eq_tol: float = 1e-10) -> CertificateReport:
    """Forward contraction: the contraction inequality along ``dx = +-f(x)``.

    Strict decrease (``LHS/V <= -rate_min``) at every non-equilibrium
    sample certifies forward contraction and rules out periodic orbits in
    the region; any sample without strict decrease is a counterexample.
    """
    if not s.time_invariant:
        raise ValueError("bendixson handles time-invariant systems only")
    states = plan.states(region)
    recs = []
    equilibria = 0
    excluded = 0
    for x in states:
        x = s.space.wrap(x)
        f = s.f(0.0, x)
        if np.linalg.norm(f) <= eq_tol:
            equilibria += 1
            continue
        for d in (f, -f):
            try:
                d = d / V.finsler(x, d)
                lhs = contraction_lhs(s, V, 0.0, x, d)
            except (DomainError, KinkError):
                excluded += 1
                continue
            recs.append((0.0, x, d, lhs, V(x, d), 0.0))
    details = {"equilibria_excluded": equilibria, "domain_exclusions": excluded, "plan": _plan_info(plan)}
    if not recs:
        return CertificateReport(INCONCLUSIVE, "bendixson", notes=["region contains only equilibria"],
                                 details=details)
    ratio = np.array([r[3] / r[4] for r in recs])
    i = int(np.argmax(ratio))
    rate = float(-ratio[i])
    if rate >= rate_min:
        verdict = CERTIFIED_IES
        concl = {"forward_contraction": True, "no_periodic_orbit": True}
        notes = ["no solution in the region is a periodic orbit"]
    else:
        verdict = COUNTEREXAMPLE
        concl = {"forward_contraction": False, "no_periodic_orbit": False}
        notes = ["no strict decrease along the flow direction"]
    return CertificateReport(verdict, "bendixson", rate, _sample_dict(recs[i]), len(recs),
                             _summary(ratio), notes, conclusions=concl, details=details)


# ---------------------------------------------------------------------------
# coordinate changes


def _chart_curvature(d: Diffeomorphism, x, v, h=DEFAULT_FD_STEP) -> np.ndarray:
    """Directional derivative of the chart differential along ``v``."""
    return (d.jac(x + h * v) - d.jac(x - h * v)) / (2 * h)


def transform_system(s: System, d: Diffeomorphism) -> System:
    """The system expressed in the coordinates ``y = d(x)``."""
    def f(t, y):
        x = d.inv(y)
        return d.jac(x) @ s.f(t, x)

    def J(t, y):
        x = d.inv(y)
        Jd = d.jac(x)
        return (Jd @ s.J(t, x) + _chart_curvature(d, x, s.f(t, x))) @ np.linalg.inv(Jd)

    return System(s.space, f, J, name=f"{s.name}@{d.name or 'chart'}", time_invariant=s.time_invariant)


def transform_metric(V: FinslerLyapunov, d: Diffeomorphism) -> FinslerLyapunov:
    """``V_y(y, dy) = V(x, Dd(x)^-1 dy)`` with chain-rule derivatives."""
    def pull(y, dy):
        x = d.inv(y)
        Jinv = np.linalg.inv(d.jac(x))
        return x, Jinv, Jinv @ dy

    def value(y, dy):
        x, _, dx = pull(y, dy)
        return V(x, dx)

    def gx(y, dy):
        x, Jinv, dx = pull(y, dy)
        vx, vd = V.grad(x, dx, check_kink=False)
        out = vx @ Jinv
        for k in range(y.size):
            w = Jinv[:, k]
            out[k] -= vd @ (Jinv @ (_chart_curvature(d, x, w) @ dx))
        return out

    def gd(y, dy):
        x, Jinv, dx = pull(y, dy)
        return V.grad(x, dx, check_kink=False)[1] @ Jinv

    return FinslerLyapunov(value, V.p, gx, gd, c1=V.c1, c2=V.c2, smooth=V.smooth,
                           name=f"{V.name}@{d.name or 'chart'}")


def coordinate_invariance(s: System, V: FinslerLyapunov, d: Diffeomorphism, samples,
                          t: float = 0.0, finite_differences: bool = False) -> float:
    """Largest gap between the contraction LHS before and after the chart change.

    With ``finite_differences=True`` the transformed Jacobian and metric
    gradients are obtained purely by central differences of the composed
    maps, an independent route with FD-limited accuracy.
    """
    if finite_differences:
        s_y = System(s.space, lambda tt, y: d.jac(d.inv(y)) @ s.f(tt, d.inv(y)), None,
                     time_invariant=s.time_invariant)
        V_y = FinslerLyapunov(lambda y, dy: V(d.inv(y), np.linalg.solve(d.jac(d.inv(y)), dy)), V.p)
    else:
        s_y, V_y = transform_system(s, d), transform_metric(V, d)
    worst = 0.0
    for x, dx in samples:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dx = np.atleast_1d(np.asarray(dx, dtype=float))
        Jd = d.jac(x)
        if np.linalg.cond(Jd) > 1e12:
            warnings.warn(f"near-singular chart change at {x}", SingularJacobianWarning)
        y, dy = d(x), Jd @ dx
        gap = abs(contraction_lhs(s, V, t, x, dx, check_kink=False)
                  - contraction_lhs(s_y, V_y, t, y, dy, check_kink=False))
        worst = max(worst, gap)
    return worst


# ---------------------------------------------------------------------------
# virtual systems


_STRENGTH = {COUNTEREXAMPLE: 0, INCONCLUSIVE: 1, CERTIFIED_IS: 2, CERTIFIED_IAS: 3, CERTIFIED_IES: 4}


def merge_reports(reports: Sequence[CertificateReport], engine: Optional[str] = None) -> CertificateReport:
    """Worst-case reduction: weakest verdict, smallest rate, largest worst ratio."""
    reports = list(reports)
    if not reports:
        return CertificateReport(INCONCLUSIVE, engine or "merged", notes=["nothing to merge"])
    weakest = min(reports, key=lambda r: _STRENGTH[r.verdict])
    rates = [r.rate_estimate for r in reports if r.rate_estimate is not None]
    lo = [r.margins["min"] for r in reports if r.margins]
    hi = [r.margins["max"] for r in reports if r.margins]
    worst = None
    for r in reports:
        ws = r.worst_sample
        if ws and ws.get("ratio") is not None and (worst is None or ws["ratio"] > worst["ratio"]):
            worst = ws
    margins = {"min": min(lo), "max": max(hi)} if lo else {}
    notes = [n for r in reports for n in r.notes]
    return CertificateReport(weakest.verdict, engine or weakest.engine, min(rates) if rates else None,
                             worst or weakest.worst_sample, sum(r.samples_evaluated for r in reports),
                             margins, notes, details={"parts": len(reports)})


def certify_virtual(fhat: Callable, base: System, base_x0s: Sequence, V: FinslerLyapunov,
                    region_z: Region, plan: SamplingPlan, T: float, dt: float = 1e-2,
                    fhat_jacobian: Optional[Callable] = None, alpha: str = "linear",
                    rate_min: float = RATE_MIN, alpha_fn: Optional[Callable] = None) -> CertificateReport:
    """Contraction of ``zdot = fhat(t, z, x(t))`` uniformly over sampled base trajectories.

    Each base trajectory closes a virtual system which is certified on
    ``region_z`` at the plan's time samples (which must lie in ``[0, T]``).
    """
    reports = []
    for x0 in base_x0s:
        tr = integrate(base, 0.0, x0, T, dt)
        src = TrajectorySource.from_trajectory(tr, base)
        sv = make_virtual(fhat, src, base, fhat_jacobian)
        reports.append(certify_region(sv, V, region_z, plan, alpha, rate_min, alpha_fn))
    rep = merge_reports(reports, "virtual")
    rep.details.update({"base_trajectories": len(reports), "T": T})
    if rep.verdict in (CERTIFIED_IAS, CERTIFIED_IES):
        rep.conclusions["virtual_converges_to_base"] = True
    return rep
