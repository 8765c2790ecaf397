import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sa_dyn import jacobians as jac
from sa_dyn import oscillator as osc
from sa_dyn.errors import NotOnSphere, ShapeError, ValidationError
from sa_dyn.io import read_csv
from sa_dyn.oscillator import OscSystem, OscVariant


def rot2(w):
    return osc.rotation_generator([w])


def test_generator_shape():
    m = osc.rotation_generator([1.0, 2.0], d=5)
    assert m.shape == (5, 5) and np.all(m == -m.T) and np.all(m[4] == 0)
    with pytest.raises(ShapeError):
        osc.rotation_generator([1.0, 2.0], d=3)


def test_system_validation():
    with pytest.raises(ValidationError):
        OscSystem(np.eye(2))
    with pytest.raises(ValidationError):
        OscSystem(rot2(1.0), eta=0.0)
    OscSystem(rot2(1.0), eta=0.0, variant="continuous")
    with pytest.raises(ShapeError):
        OscSystem(np.zeros((2, 3)))


def test_plain_step_example():
    sys = OscSystem(rot2(3.0), 0.5, OscVariant.PLAIN)
    np.testing.assert_array_equal(osc.osc_step(sys, np.array([1.0, 0.0])), [1.0, -1.5])


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0, 2 * np.pi))
def test_norm_growth_and_normalised_output(eta, w, theta):
    x = np.array([np.cos(theta), np.sin(theta)])
    plain = OscSystem(rot2(w), eta, OscVariant.PLAIN)
    y = osc.osc_step(plain, x)
    assert y @ y == pytest.approx(1 + eta ** 2 * w ** 2, rel=1e-13)
    norm = OscSystem(rot2(w), eta, OscVariant.NORMALIZED)
    assert np.linalg.norm(osc.osc_step(norm, x)) == pytest.approx(1.0, abs=1e-15)


@given(st.integers(2, 9), st.floats(0.01, 5), st.integers(0, 2 ** 32 - 1))
def test_norm_identity(d, eta, seed):
    rng = np.random.default_rng(seed)
    sys = OscSystem(osc.random_generator(d, rng), eta)
    x = rng.standard_normal(d)
    assert osc.norm_identity_residual(sys, x) <= 1e-12 * (1 + eta ** 2) * max(1.0, x @ x) * 10


def test_not_on_sphere():
    sys = OscSystem(rot2(1.0))
    with pytest.raises(NotOnSphere):
        osc.osc_step(sys, np.array([2.0, 0.0]))


def test_trajectory_stays_on_sphere(rng):
    sys = OscSystem(osc.random_generator(6, rng), 0.7)
    x0 = osc.random_unit_states(6, 1, rng)[0]
    traj = osc.osc_trajectory(sys, x0, 500)
    np.testing.assert_allclose(np.linalg.norm(traj, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValidationError):
        osc.osc_trajectory(OscSystem(rot2(1.0), variant="continuous"), x0[:2], 3)


def test_jacobian_closed_forms(rng):
    om = osc.random_generator(4, rng)
    x = osc.random_unit_states(4, 1, rng)[0]
    assert np.all(osc.osc_jacobian(OscSystem(om, variant="continuous"), x) == om)
    np.testing.assert_array_equal(osc.osc_jacobian(OscSystem(om, 0.3, "plain"), x), np.eye(4) + 0.3 * om)
    sys = OscSystem(om, 0.3)
    # the normalised map is evaluated off the sphere by the FD stencil
    f = lambda z: (np.eye(4) + 0.3 * om) @ z / np.linalg.norm((np.eye(4) + 0.3 * om) @ z)
    assert jac.max_rel_error(osc.osc_jacobian(sys, x), jac.fd_jacobian(f, x)) <= 1e-6


def test_zero_generator_projector():
    x = np.array([0.6, 0.8])
    j = osc.osc_jacobian(OscSystem(np.zeros((2, 2))), x)
    np.testing.assert_allclose(j, np.eye(2) - np.outer(x, x), atol=1e-15)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(j).real), [0, 1], atol=1e-15)


def test_plain_eigenvalues():
    v = osc.osc_eigen_check(OscSystem(rot2(1.0), 1.0, "plain"), np.array([1.0, 0.0]))
    eig = np.sort_complex(v.summary.eigenvalues)
    np.testing.assert_allclose(eig, [1 - 1j, 1 + 1j], atol=1e-15)
    np.testing.assert_allclose(np.abs(eig), np.sqrt(2), atol=1e-12)
    assert v.verdicts == {"outside_unit_disc": True}


def test_continuous_verdict(rng):
    v = osc.osc_eigen_check(OscSystem(osc.random_generator(5, rng), variant="continuous"), np.ones(5))
    assert v.verdicts["real_parts_zero"]


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.integers(0, 2 ** 32 - 1))
def test_normalised_degenerate_bound(eta, w, seed):
    rng = np.random.default_rng(seed)
    sys = OscSystem(osc.rotation_generator([w, w, w]), eta)
    assert sys.degenerate
    for x in osc.random_unit_states(6, 10, rng):
        v = osc.osc_eigen_check(sys, x)
        assert v.verdicts["norm_le_one"]


def test_non_degenerate_not_asserted(rng):
    sys = OscSystem(osc.rotation_generator([0.5, 3.0]), 1.0)
    assert not sys.degenerate
    v = osc.osc_eigen_check(sys, osc.random_unit_states(4, 1, rng)[0])
    assert "norm_le_one" not in v.verdicts and "norm_le_one_measured" in v.verdicts


def test_frequencies():
    sys = OscSystem(osc.rotation_generator([2.0, 0.5]))
    np.testing.assert_allclose(np.sort(sys.frequencies), [0.5, 2.0])


def test_phase_scan(tmp_path):
    etas = np.linspace(0.05, 10, 7)
    omegas = np.linspace(0.05, 10, 5)
    plain = osc.phase_scan(etas, omegas, "plain")
    normd = osc.phase_scan(etas, omegas, "normalized")
    assert len(plain) == 35 and all(r[2] >= 1 for r in plain)
    assert all(r[3] <= 1 + 1e-10 and r[4] for r in normd)
    small = osc.phase_scan([1e-9], [1.0], "plain") + osc.phase_scan([1e-9], [1.0], "normalized")
    assert all(abs(r[2] - 1) <= 1e-8 for r in small)
    header, rows, _ = read_csv(osc.phase_scan_to_csv(tmp_path / "p.csv", plain))
    assert header[:3] == ["eta", "omega", "max_abs_eig"] and len(rows) == 35
    with pytest.raises(ValidationError):
        osc.phase_scan([0.0], [1.0])
