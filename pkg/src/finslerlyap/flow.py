"""Fixed-step RK4 integration of a system and its variational equation.

The prolonged state is ``(x, Delta)`` where the columns of ``Delta`` are
displacements obeying ``dDelta/dt = J(t, x) Delta``. Displacement columns are
tangent vectors and are never wrapped.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import Region, System

DEFAULT_DT = 1e-3
BLOWUP = 1e9


class BlowUpError(ArithmeticError):
    """Integration produced a non-finite or exploding state.

    ``trajectory`` holds the samples computed before the failure.
    """

    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class RegionExitWarning(RuntimeWarning):
    pass


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    delta: Optional[np.ndarray] = None  # shape (n, dim, m)
    dt: float = DEFAULT_DT
    system: str = ""
    diagnostics: list = field(default_factory=list)

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def tf(self) -> float:
        return float(self.t[-1])

    @property
    def m(self) -> int:
        return 0 if self.delta is None else self.delta.shape[2]

    def __len__(self):
        return len(self.t)

    @property
    def final_state(self) -> np.ndarray:
        return self.x[-1]

    @property
    def final_delta(self) -> np.ndarray:
        return self.delta[-1]

    def to_csv(self, path) -> None:
        d = self.x.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(d)]
        header += [f"d_{i + 1}_{j + 1}" for i in range(d) for j in range(self.m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.t)):
                row = [self.t[k], *self.x[k]]
                if self.m:
                    row += list(self.delta[k].reshape(-1))
                w.writerow([f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    d = sum(1 for h in header if h.startswith("x_"))
    m = (len(header) - 1 - d) // d if d else 0
    delta = data[:, 1 + d:].reshape(len(data), d, m) if m else None
    dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else DEFAULT_DT
    return Trajectory(data[:, 0], data[:, 1:1 + d], delta, dt)


def _steps(t0: float, tf: float, dt: float) -> tuple[int, float]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not tf > t0:
        raise ValueError("tf must exceed t0")
    n = max(1, int(round((tf - t0) / dt)))
    # keep the endpoint exact; the step is adjusted by at most rounding
    return n, (tf - t0) / n


def _run(s: System, t0, x0, D0, tf, dt, region: Optional[Region], record: bool):
    n, h = _steps(t0, tf, dt)
    space = s.space
    x = space.wrap(x0)
    D = None if D0 is None else np.array(D0, dtype=float)
    if D is not None and not np.all(np.isfinite(D)):
        raise ValueError("initial displacement matrix has non-finite entries")
    ts = t0 + h * np.arange(n + 1)
    xs = np.empty((n + 1, space.dim)) if record else None
    Ds = (np.empty((n + 1,) + D.shape) if (record and D is not None) else None)
    diagnostics = []
    exited = False

    def save(k):
        if record:
            xs[k] = x
            if Ds is not None:
                Ds[k] = D

    save(0)
    for k in range(n):
        t = ts[k]
        if D is None:
            k1 = s.f(t, x)
            k2 = s.f(t + h / 2, x + h / 2 * k1)
            k3 = s.f(t + h / 2, x + h / 2 * k2)
            k4 = s.f(t + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            x2 = x
            k1 = s.f(t, x2); m1 = s.J(t, x2) @ D
            x2 = x + h / 2 * k1
            k2 = s.f(t + h / 2, x2); m2 = s.J(t + h / 2, x2) @ (D + h / 2 * m1)
            x2 = x + h / 2 * k2
            k3 = s.f(t + h / 2, x2); m3 = s.J(t + h / 2, x2) @ (D + h / 2 * m2)
            x2 = x + h * k3
            k4 = s.f(t + h, x2); m4 = s.J(t + h, x2) @ (D + h * m3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            D = D + h / 6 * (m1 + 2 * m2 + 2 * m3 + m4)
        x = space.wrap(x)
        bad = not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP
        if D is not None:
            bad = bad or not np.all(np.isfinite(D))
        if bad:
            msg = f"{s.name}: state blew up at t={ts[k + 1]:.6g}"
            partial = None
            if record:
                partial = Trajectory(ts[:k + 1], xs[:k + 1], None if Ds is None else Ds[:k + 1],
                                     h, s.name, [msg])
            raise BlowUpError(msg, partial)
        save(k + 1)
        if region is not None and not exited and not region.contains(x):
            exited = True
            msg = f"{s.name}: trajectory left region at t={ts[k + 1]:.6g}"
            diagnostics.append(msg)
            warnings.warn(msg, RegionExitWarning)
    if not record:
        return x, D, ts[-1], diagnostics
    return Trajectory(ts, xs, Ds, h, s.name, diagnostics)


def integrate(s: System, t0: float, x0, tf: float, dt: float = DEFAULT_DT,
              region: Optional[Region] = None) -> Trajectory:
    """Classical RK4 on ``[t0, tf]``; angular coordinates wrapped every step."""
    return _run(s, t0, s.space.check(x0), None, tf, dt, region, True)


def integrate_prolonged(s: System, t0: float, x0, D0, tf: float, dt: float = DEFAULT_DT,
                        region: Optional[Region] = None) -> Trajectory:
    """Joint RK4 on ``(x, Delta)`` with ``dDelta/dt = J(t, x) Delta``.

    ``D0`` is ``dim x m``; a 1-D array is treated as a single column.
    """
    D0 = np.asarray(D0, dtype=float)
    if D0.ndim == 1:
        D0 = D0[:, None]
    if D0.shape[0] != s.dim:
        raise ValueError(f"displacement matrix needs {s.dim} rows, got {D0.shape[0]}")
    return _run(s, t0, s.space.check(x0), D0, tf, dt, region, True)


def flow_map(s: System, t0: float, x0, tf: float, dt: float = DEFAULT_DT) -> np.ndarray:
    """Final state only, without storing samples."""
    return _run(s, t0, s.space.check(x0), None, tf, dt, None, False)[0]


def fd_displacement_oracle(s: System, t0: float, x0, d0, h: float, tf: float,
                           dt: float = DEFAULT_DT) -> np.ndarray:
    """One-sided finite difference ``(psi(tf, x0 + h d0) - psi(tf, x0)) / h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x0 = s.space.check(x0)
    d0 = np.asarray(d0, dtype=float).reshape(-1)
    a = flow_map(s, t0, x0, tf, dt)
    b = flow_map(s, t0, x0 + h * d0, tf, dt)
    return s.space.displacement(a, b) / h
