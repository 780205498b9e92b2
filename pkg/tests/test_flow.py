import numpy as np
import pytest

from finslerlyap.dynamics import Region, harmonic, kuramoto, linear, sine_oscillator
from finslerlyap.flow import (
    BlowUpError,
    RegionExitWarning,
    fd_displacement_oracle,
    flow_map,
    integrate,
    integrate_prolonged,
    read_trajectory_csv,
)


def test_linear_decay():
    tr = integrate(linear([[-1.0]]), 0.0, [1.0], 1.0, 1e-3)
    assert tr.final_state[0] == pytest.approx(np.exp(-1), abs=1e-6)
    assert np.all(np.diff(tr.t) > 0)
    assert np.max(np.abs(np.diff(tr.t) - 1e-3)) <= 1e-12


def test_equilibrium_stays():
    tr = integrate(sine_oscillator(), 0.0, [0.0], 3.0)
    assert np.all(tr.x == 0.0)


def test_harmonic_period():
    tr = integrate(harmonic(1.0), 0.0, [1.0, 0.0], 2 * np.pi, 1e-3)
    np.testing.assert_allclose(tr.final_state, [1.0, 0.0], atol=1e-5)


def test_angles_stay_wrapped():
    s = linear([[0.0]])
    s = type(s)(sine_oscillator().space, lambda t, x: np.array([1.0]), lambda t, x: np.zeros((1, 1)))
    tr = integrate(s, 0.0, [0.0], 10.0, 1e-2)
    assert np.all(tr.x > -np.pi) and np.all(tr.x <= np.pi)
    assert tr.final_state[0] == pytest.approx(10 - 4 * np.pi)


def test_fundamental_matrix():
    tr = integrate_prolonged(linear(-np.eye(2)), 0.0, [1.0, 2.0], np.eye(2), 1.0, 1e-3)
    np.testing.assert_allclose(tr.final_delta, np.exp(-1) * np.eye(2), atol=1e-6)


def test_zero_displacement_stays_zero():
    tr = integrate_prolonged(sine_oscillator(), 0.0, [1.0], np.zeros((1, 1)), 2.0)
    assert np.all(tr.delta == 0.0)


def test_displacement_at_equilibrium():
    tr = integrate_prolonged(sine_oscillator(), 0.0, [0.0], [1.0], 1.0, 1e-3)
    assert tr.final_delta[0, 0] == pytest.approx(np.exp(-1), abs=1e-6)


def test_displacements_not_wrapped():
    tr = integrate_prolonged(linear([[1.0]]), 0.0, [0.0], [1.0], 2.0, 1e-3)
    assert tr.final_delta[0, 0] == pytest.approx(np.exp(2), rel=1e-9)


def test_linearity_in_delta0(rng):
    v = rng.standard_normal(3)
    tr = integrate_prolonged(kuramoto(3), 0.0, rng.uniform(-1, 1, 3), np.column_stack([v, 2 * v]), 3.0, 1e-2)
    np.testing.assert_allclose(tr.delta[:, :, 1], 2 * tr.delta[:, :, 0], atol=1e-12)


def test_semigroup(rng):
    s = kuramoto(3)
    x0 = rng.uniform(-1, 1, 3)
    D0 = np.eye(3)
    full = integrate_prolonged(s, 0.0, x0, D0, 2.0, 1e-2)
    half = integrate_prolonged(s, 0.0, x0, D0, 1.0, 1e-2)
    rest = integrate_prolonged(s, 1.0, half.final_state, half.final_delta, 2.0, 1e-2)
    np.testing.assert_allclose(rest.final_state, full.final_state, atol=1e-9)
    np.testing.assert_allclose(rest.final_delta, full.final_delta, atol=1e-9)


def test_rk4_order():
    s = linear([[0.0, 1.0], [-1.0, -0.2]])
    x0 = np.array([1.0, 0.0])
    from scipy.linalg import expm

    exact = expm(np.array([[0.0, 1.0], [-1.0, -0.2]]) * 5.0) @ x0
    e1 = np.linalg.norm(flow_map(s, 0.0, x0, 5.0, 0.1) - exact)
    e2 = np.linalg.norm(flow_map(s, 0.0, x0, 5.0, 0.05) - exact)
    assert 14 <= e1 / e2 <= 18


def test_fd_oracle_linear_exact():
    s = linear([[-1.0, 2.0], [0.0, -3.0]])
    d0 = np.array([0.5, -1.0])
    tr = integrate_prolonged(s, 0.0, [1.0, 1.0], d0, 1.0, 1e-2)
    fd = fd_displacement_oracle(s, 0.0, [1.0, 1.0], d0, 1e-3, 1.0, 1e-2)
    np.testing.assert_allclose(fd, tr.final_delta[:, 0], atol=1e-9)


def test_fd_oracle_sine():
    s = sine_oscillator()
    tr = integrate_prolonged(s, 0.0, [0.5], [1.0], 2.0)
    fd = fd_displacement_oracle(s, 0.0, [0.5], [1.0], 1e-4, 2.0)
    assert abs(fd[0] - tr.final_delta[0, 0]) <= 5e-4


@pytest.mark.parametrize("system,x0", [(sine_oscillator(), [0.5]), (kuramoto(3), [0.3, -0.4, 1.0])])
def test_fd_oracle_first_order(system, x0):
    # a generic direction; shifts along 1 are exact symmetries of the Kuramoto flow
    d0 = np.array([1.0, -0.5, 0.2][: len(x0)])
    ref = integrate_prolonged(system, 0.0, x0, d0, 2.0, 1e-2).final_delta[:, 0]
    e = [np.linalg.norm(fd_displacement_oracle(system, 0.0, x0, d0, h, 2.0, 1e-2) - ref) for h in (1e-3, 5e-4)]
    assert 1.7 <= e[0] / e[1] <= 2.3


def test_blowup_partial():
    s = linear([[0.0]])
    s = type(s)(s.space, lambda t, x: x ** 2, lambda t, x: np.array([[2 * x[0]]]))
    with pytest.raises(BlowUpError) as err:
        integrate(s, 0.0, [1.0], 2.0, 1e-3)
    assert err.value.trajectory is not None
    assert err.value.trajectory.tf < 1.0 + 1e-2


def test_region_monitor():
    with pytest.warns(RegionExitWarning):
        tr = integrate(linear([[1.0]]), 0.0, [0.5], 1.0, 1e-2, region=Region.interval(-1, 1))
    assert tr.diagnostics


def test_bad_arguments():
    s = linear([[-1.0]])
    with pytest.raises(ValueError):
        integrate(s, 0.0, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        integrate(s, 1.0, [1.0], 0.5)
    with pytest.raises(ValueError):
        integrate_prolonged(s, 0.0, [1.0], [[np.nan]], 1.0)
    with pytest.raises(ValueError):
        fd_displacement_oracle(s, 0.0, [1.0], [1.0], 0.0, 1.0)


def test_csv_roundtrip(tmp_path):
    tr = integrate_prolonged(kuramoto(3), 0.0, [0.1, 0.2, 0.3], np.eye(3)[:, :2], 0.5, 1e-2)
    p = tmp_path / "traj.csv"
    tr.to_csv(p)
    header = p.read_text().splitlines()[0]
    assert header == "t,x_1,x_2,x_3," + ",".join(f"d_{i}_{j}" for i in (1, 2, 3) for j in (1, 2))
    back = read_trajectory_csv(p)
    np.testing.assert_array_equal(back.x, tr.x)
    np.testing.assert_array_equal(back.delta, tr.delta)
