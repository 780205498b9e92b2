"""Acceptance criteria, one test each, with tolerances and runtime limits.

A one-line PASS/FAIL summary per criterion is printed at the end of the
pytest run; ``python tests/test_acceptance.py`` prints the same lines.
"""

import time

import numpy as np
import pytest
from scipy.linalg import solve_continuous_lyapunov

from finslerlyap import certify as C
from finslerlyap.distance import empirical_decay, finsler_distance, pseudo_distance
from finslerlyap.dynamics import (
    Region,
    boost_converter,
    consensus,
    harmonic,
    kuramoto,
    linear,
    ring_laplacian,
    sine_oscillator,
)
from finslerlyap.finsler import (
    FinslerLyapunov,
    consensus_maxmin,
    horizontal_quadratic,
    knorm,
    kuramoto_centroid,
    oscillator_v1,
    oscillator_v2,
    property_suite,
    quadratic,
    riemannian,
)
from finslerlyap.flow import fd_displacement_oracle, integrate, integrate_prolonged
from finslerlyap.geometry import CoordinateSpace, Diffeomorphism

RESULTS = {}


def oscillator_v1_regions():
    s, V = sine_oscillator(), oscillator_v1()
    plan = C.SamplingPlan(grid_per_dim=200)
    a = C.certify_region(s, V, Region.interval(-1.47, 1.47), plan)
    b = C.certify_region(s, V, Region.interval(-np.pi / 2, np.pi / 2), plan)
    target = 2 * np.cos(1.47)
    rel = abs(a.rate_estimate - target) / target
    ok = a.verdict == C.CERTIFIED_IES and rel <= 0.01 and b.verdict == C.CERTIFIED_IS and b.rate_estimate < 1e-3
    return ok, f"rate {a.rate_estimate:.6g} vs {target:.6g} (rel {rel:.1e}); half-circle {b.verdict} rate {b.rate_estimate:.1e}"


def oscillator_v2_exact():
    s, V = sine_oscillator(), oscillator_v2()
    rng = np.random.default_rng(2)
    th = rng.uniform(-3, 3, 1000)
    d = rng.uniform(-5, 5, 1000)
    gap = max(abs(C.contraction_lhs(s, V, 0.0, [a], [b]) + b * b) for a, b in zip(th, d))
    r = C.certify_region(s, V, Region.interval(-3, 3), C.SamplingPlan(grid_per_dim=200))
    target = 1 + np.cos(3)
    rel = abs(r.rate_estimate - target) / target
    return gap <= 1e-9 and rel <= 0.01, f"max |LHS + dtheta^2| {gap:.1e}; rate {r.rate_estimate:.6g} vs {target:.6g}"


def boost_lasalle():
    L = Cap = R = E = 1.0
    s = boost_converter(L, Cap, R, E, 0.5)
    V = FinslerLyapunov(lambda x, d: 0.5 * (L * d[0] ** 2 + Cap * d[1] ** 2), 2,
                        grad_x=lambda x, d: np.zeros(2), grad_delta=lambda x, d: np.array([L * d[0], Cap * d[1]]))
    region = Region(((0.0, 8.0), (0.0, 4.0)))
    r = C.lasalle(s, V, lambda x, d: d[1] ** 2 / R, region, C.SamplingPlan(grid_per_dim=21, random_samples=100),
                  T_horizon=40.0, probe_deltas=[np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    res = r.details["audit_max_abs_residual"]
    ratios = [p["ratio"] for p in r.details["probes"]]
    eig = np.linalg.eigvals(s.J(0, region.center))
    ok = res <= 1e-9 and max(ratios) <= 1e-3 and np.allclose(eig, -0.5, atol=1e-6)
    return ok, f"audit residual {res:.1e}; probe ratios {max(ratios):.2e} (<= 1e-3); {r.verdict}"


def matrix_measures():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        A = rng.standard_normal((5, 5))
        for norm in (1, 2, np.inf):
            worst = max(worst, abs(C.matrix_measure(A, norm) - C.matrix_measure_limit(A, norm, 1e-8)))
    reg = Region.cube(2, -1, 1)
    h = C.certify_measure(harmonic(1.0), reg, 2)
    m = C.certify_measure(linear(-np.eye(2)), reg, 2)
    ok = worst <= 1e-4 and h.verdict == C.INCONCLUSIVE and abs(h.rate_estimate) <= 1e-15 \
        and m.verdict == C.CERTIFIED_IES and abs(m.rate_estimate - 1) <= 1e-12
    return ok, f"closed form vs limit {worst:.1e}; harmonic {h.verdict}; -I mu = {-m.rate_estimate:g} {m.verdict}"


def lmi():
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    P = solve_continuous_lyapunov(A.T, -np.eye(2))
    reg = Region.cube(2, -1, 1)
    a = C.certify_lmi(linear(A), P, np.eye(2), reg)
    b = C.certify_lmi(harmonic(1.0), np.eye(2), np.eye(2), reg)
    return a.verdict == C.CERTIFIED_IES and b.verdict == C.COUNTEREXAMPLE, f"Lyapunov P {a.verdict}; harmonic P=I {b.verdict}"


def distance_recovery():
    rng = np.random.default_rng(6)
    tol = 1e-8
    q, k1 = quadratic(np.eye(2)), knorm(1)
    eq = e1 = 0.0
    for a, b in rng.uniform(-5, 5, (50, 2, 2)):
        eq = max(eq, abs(finsler_distance(q, a, b, tol=tol).value - np.linalg.norm(b - a)))
        e1 = max(e1, abs(finsler_distance(k1, a, b, tol=tol).value - np.abs(b - a).sum()))
    tri = 0.0
    for i, (a, b, c) in enumerate(rng.uniform(-5, 5, (100, 3, 2))):
        V = (q, k1)[i % 2]
        d = lambda u, v: finsler_distance(V, u, v, tol=tol).value
        tri = max(tri, d(a, c) - d(a, b) - d(b, c))
    ok = eq <= 1e-6 and e1 <= 1e-4 and tri <= 3 * tol
    return ok, f"euclid err {eq:.1e}; 1-norm err {e1:.1e}; worst triangle excess {tri:.1e} (<= {3 * tol:g})"


def variational_oracle():
    ratios = []
    for s, x0, d0 in ((sine_oscillator(), [0.5], [1.0]), (kuramoto(3), [0.3, -0.4, 1.0], [1.0, -0.5, 0.2])):
        ref = integrate_prolonged(s, 0.0, x0, d0, 2.0, 1e-2).final_delta[:, 0]
        e = [np.linalg.norm(fd_displacement_oracle(s, 0.0, x0, d0, h, 2.0, 1e-2) - ref) for h in (1e-3, 5e-4)]
        ratios.append(e[0] / e[1])
    return all(1.7 <= r <= 2.3 for r in ratios), "error ratios " + ", ".join(f"{r:.4f}" for r in ratios)


def coordinate_invariance():
    rng = np.random.default_rng(8)
    d = Diffeomorphism.from_forward(lambda x: x + 0.3 * np.sin(x), lambda x: np.diag(1 + 0.3 * np.cos(x)))
    samples = [(rng.uniform(-3, 3, 1), rng.standard_normal(1)) for _ in range(100)]
    gap = C.coordinate_invariance(sine_oscillator(), oscillator_v1(), d, samples)
    return gap <= 1e-5, f"max discrepancy {gap:.1e}"


def consensus_criterion():
    n, T, dt = 4, 50.0, 1e-2
    s = consensus(-ring_laplacian(n))
    V = consensus_maxmin()
    rng = np.random.default_rng(9)
    tr = integrate_prolonged(s, 0.0, rng.uniform(-1, 1, n), rng.standard_normal((n, 10)), T, dt)
    spread = tr.delta.max(axis=1) - tr.delta.min(axis=1)
    rise = float(np.max(np.diff(spread, axis=0)))
    final = float(np.max(spread[-1] / spread[0]))
    xa = rng.uniform(-1, 1, n)
    xb = xa + rng.standard_normal(n)
    dec = empirical_decay(s, V, xa, xb, [0.0, 5.0, T], dt=dt)
    rep = max(pseudo_distance(V, V.horizontal, x, x + a).value
              for x, a in zip(rng.uniform(-1, 1, (5, n)), rng.uniform(-3, 3, 5)))
    # spectral-gap oracle: max - min <= 2 |Pi dx|_2 <= 2 exp(-lam2 t) |Pi dx(0)|_2
    lam2 = np.sort(np.linalg.eigvalsh(ring_laplacian(n)))[1]
    dx = xb - xa
    oracle = 2 * np.exp(-lam2 * 5.0) * np.linalg.norm(dx - dx.mean())
    ok = rise <= 1e-9 and final <= 1e-6 and dec.distances[-1] <= 1e-6 and rep <= 1e-8 \
        and dec.distances[1] <= oracle
    return ok, (f"max step rise {rise:.1e}; final ratio {final:.1e}; pseudo-distance at t=5 "
                f"{dec.distances[1]:.2e} <= oracle {oracle:.2e}, at T {dec.distances[-1]:.1e}; "
                f"representatives {rep:.1e}")


def _expansion(theta, d, q):
    n = theta.size
    z = np.mean(np.exp(1j * theta))
    rho, phi = abs(z), np.angle(z)
    Pi = np.eye(n) - np.ones((n, n)) / n
    Cm = np.cos(theta[None, :] - theta[:, None]) / n
    Cm -= np.diag(Cm.sum(axis=1))
    return 2 / rho ** (2 * q) * d @ (-(q / n) * np.sum(np.sin(theta - phi) ** 2) * Pi + Cm) @ d


def kuramoto_criterion():
    n, T, dt = 5, 50.0, 1e-2
    s = kuramoto(n)
    rng = np.random.default_rng(10)
    th0 = rng.uniform(-np.pi / 4, np.pi / 4, n)
    tr = integrate_prolonged(s, 0.0, th0, rng.standard_normal((n, 5)), T, dt)
    rho = np.abs(np.mean(np.exp(1j * tr.x), axis=1))
    drop = float(np.min(np.diff(rho)))
    Vq = horizontal_quadratic(n)
    Vt = np.array([[Vq(x, D[:, j]) for j in range(D.shape[1])] for x, D in zip(tr.x, tr.delta)])
    vdecay = float(np.max(Vt[-1] / Vt[0]))
    vrise = float(np.max(np.diff(Vt, axis=0) / Vt[0]))
    xT = tr.final_state
    spread = float(np.max(np.abs(np.angle(np.exp(1j * (xT[:, None] - xT[None, :]))))))
    V = kuramoto_centroid(1)
    gap = 0.0
    for _ in range(200):
        th = rng.uniform(-np.pi / 2, np.pi / 2, n)
        d = rng.standard_normal(n)
        a, b = C.contraction_lhs(s, V, 0.0, th, d), _expansion(th, d, 1)
        gap = max(gap, abs(a - b) / max(1.0, abs(b)))
    ok = drop >= -1e-9 and vdecay <= 1e-6 and vrise <= 1e-9 and spread <= 1e-3 and gap <= 1e-6
    return ok, (f"min rho step {drop:.1e}; V decay {vdecay:.1e}; phase spread {spread:.1e}; "
                f"LHS vs expansion {gap:.1e}")


def bendixson_criterion():
    plan = C.SamplingPlan(grid_per_dim=21)
    V = quadratic(np.eye(2))
    a = C.bendixson(harmonic(1.0), V, Region.ball(2, 2.0), plan)
    b = C.bendixson(linear([[-1.0, 1.0], [-1.0, -1.0]]), V, Region.ball(2, 1.0), plan)
    ok = a.verdict == C.COUNTEREXAMPLE and b.certified and abs(b.rate_estimate - 2) <= 1e-6 \
        and b.conclusions.get("no_periodic_orbit")
    return ok, f"harmonic {a.verdict}; spiral {b.verdict} rate {b.rate_estimate:.9g}, no periodic orbit"


def property_suites():
    R = CoordinateSpace.euclidean
    S = CoordinateSpace(1, (True,))
    cases = [
        (quadratic([[2.0, 0.5], [0.5, 1.0]]), R(2)),
        (riemannian(lambda x: np.array([[1.0 + x[0] ** 2, 0.0], [0.0, 2.0]])), R(2)),
        (knorm(1), R(3)), (knorm(2), R(3)), (knorm(4), R(3)), (knorm(np.inf), R(3)),
        (oscillator_v1(), S), (oscillator_v2(), S),
        (consensus_maxmin(), R(4)), (horizontal_quadratic(4), R(4)),
        (kuramoto_centroid(1), CoordinateSpace.torus(4)),
    ]
    failing = [V.name for V, sp in cases if not property_suite(V, sp, 200, seed=1).passed]
    broken = FinslerLyapunov(lambda x, d: np.linalg.norm(d) + np.linalg.norm(d) ** 2, p=1, c1=0.5, c2=10.0,
                             F=lambda x, d: float(np.linalg.norm(d)))
    rep = property_suite(broken, R(2), 200, seed=1)
    ok = not failing and not rep.checks["bound_sandwich"].passed
    return ok, f"{len(cases)} catalog metrics, failing {failing or 'none'}; |dx| + |dx|^2 sandwich fails"


CRITERIA = [
    (1, "oscillator V1 regions", oscillator_v1_regions, 5),
    (2, "oscillator V2 exact LHS and rate", oscillator_v2_exact, 5),
    (3, "boost converter LaSalle", boost_lasalle, 10),
    (4, "matrix measures", matrix_measures, 2),
    (5, "LMI condition", lmi, 1),
    (6, "distance recovery", distance_recovery, 30),
    (7, "variational-flow oracle", variational_oracle, 5),
    (8, "coordinate invariance", coordinate_invariance, 2),
    (9, "consensus", consensus_criterion, 30),
    (10, "Kuramoto", kuramoto_criterion, 60),
    (11, "Bendixson", bendixson_criterion, 5),
    (12, "property suites", property_suites, 5),
]


def evaluate(num, name, fn, limit):
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # report, don't hide
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    ok = bool(ok) and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'} [{num:2d}] {name}: {detail} ({elapsed:.2f}s < {limit}s)"
    RESULTS[num] = line
    return ok, line


@pytest.mark.parametrize("num,name,fn,limit", CRITERIA, ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(num, name, fn, limit):
    ok, line = evaluate(num, name, fn, limit)
    print(line)
    assert ok, line


if __name__ == "__main__":
    for c in CRITERIA:
        print(evaluate(*c)[1])
