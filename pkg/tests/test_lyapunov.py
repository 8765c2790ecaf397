import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sa_dyn import attention as att
from sa_dyn import jacobians as jac
from sa_dyn import lyapunov as ly
from sa_dyn.attention import OmegaBank, StepConfig, Variant
from sa_dyn.errors import TangentCollapse, ValidationError
from sa_dyn.io import read_csv
from sa_dyn.oscillator import rotation_generator

from conftest import hp_exponents, random_msa, unit_rows


def linear(a):
    return (lambda x: a @ x), (lambda x: a)


def test_diag_exact():
    f, j = linear(np.diag([2.0, 0.5]))
    for refine in (True, False):
        s = ly.lyapunov_spectrum(f, j, np.ones(2), horizon=16, refine=refine)
        np.testing.assert_allclose(s.exponents, [np.log(2), -np.log(2)], atol=1e-12)


@pytest.mark.parametrize("theta", [0.1, 1.0, 2.5])
def test_rotation_zero(theta):
    c, s_ = np.cos(theta), np.sin(theta)
    f, j = linear(np.array([[c, -s_], [s_, c]]))
    s = ly.lyapunov_spectrum(f, j, np.array([1.0, 0.0]), horizon=16)
    assert np.max(np.abs(s.exponents)) <= 1e-10


def test_identity_and_horizon_one(rng):
    f, j = linear(np.eye(4))
    assert np.max(np.abs(ly.lyapunov_spectrum(f, j, np.ones(4), horizon=7).exponents)) == 0.0
    a = rng.standard_normal((4, 4))
    f, j = linear(a)
    s = ly.lyapunov_spectrum(f, j, np.ones(4), horizon=1)
    sig = np.linalg.svd(a, compute_uv=False)
    np.testing.assert_allclose(s.exponents, np.log(sig), atol=1e-13)


def test_linear_map_long_horizon(rng):
    # for a constant map the exponents at large T approach log |eig|
    a = np.diag([1.5, 0.9, 0.4]) + np.triu(rng.standard_normal((3, 3)) * 0.1, 1)
    f, j = linear(a)
    s = ly.lyapunov_spectrum(f, j, np.ones(3), horizon=400)
    np.testing.assert_allclose(s.exponents, np.log([1.5, 0.9, 0.4]), atol=5e-3)


def test_contraction_negative(rng):
    g = rng.standard_normal((5, 5))
    a = 0.5 * g / np.linalg.norm(g, 2)
    f, j = linear(a)
    assert ly.lyapunov_spectrum(f, j, np.ones(5)).max_exponent < 0


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_nonlinear_matches_high_precision(seed, k):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((6, 6)) / np.sqrt(6) * 1.3
    f = lambda x: np.tanh(a @ x)
    jf = lambda x: (1 - np.tanh(a @ x) ** 2)[:, None] * a
    x0 = rng.standard_normal(6)
    s = ly.lyapunov_spectrum(f, jf, x0, horizon=16, basis_dim=k)
    ref = hp_exponents(ly._trajectory_jacobians(f, jf, x0, 16), k)
    assert np.max(np.abs(s.exponents - ref)) <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_itrsa_tangent_spectrum_matches_high_precision(seed):
    rng = np.random.default_rng(seed)
    s_, d = 3, 8
    w = random_msa(rng, d, 2)
    sm = jac.make_step_map(w, StepConfig(1.0), (s_, d))
    x0 = unit_rows(rng, s_, d).reshape(-1)
    k = s_ * d - s_
    spec = ly.lyapunov_spectrum(sm.step, sm.jacobian, x0, 16, basis_dim=k)
    ref = hp_exponents(ly._trajectory_jacobians(sm.step, sm.jacobian, x0, 16), k)
    assert np.max(np.abs(spec.exponents - ref)) <= 1e-6


def test_akorn_top_exponents(rng):
    s_, d, n = 2, 8, 4
    w = random_msa(rng, d, 2)
    cfg = StepConfig(0.5, variant=Variant.AKORN, oscillator_dim=n)
    sm = jac.make_step_map(w, cfg, (s_, d), OmegaBank.random(d, n, rng))
    x0 = att.unit_oscillators((s_, d), n, rng).reshape(-1)
    k = s_ * d - s_ * d // n
    spec = ly.lyapunov_spectrum(sm.step, sm.jacobian, x0, 16, basis_dim=k)
    ref = hp_exponents(ly._trajectory_jacobians(sm.step, sm.jacobian, x0, 16), k)
    assert np.max(np.abs(spec.exponents - ref)) <= 1e-6


def test_definitional_matches_on_well_conditioned(rng):
    a = np.eye(5) + 0.2 * rng.standard_normal((5, 5))
    f = lambda x: np.tanh(a @ x)
    jf = lambda x: (1 - np.tanh(a @ x) ** 2)[:, None] * a
    x0 = rng.standard_normal(5) * 0.3
    d = np.sort(ly.definitional_spectrum(f, jf, x0, 16))[::-1]
    np.testing.assert_allclose(d, ly.lyapunov_spectrum(f, jf, x0, 16).exponents, atol=1e-8)


def test_orthogonal_map_zero():
    # Cayley transform of a rotation generator is orthogonal
    om = rotation_generator([0.7, 1.3])
    q = np.linalg.solve(np.eye(4) - om / 2, np.eye(4) + om / 2)
    f, j = linear(q)
    s = ly.lyapunov_spectrum(f, j, np.ones(4))
    assert np.max(np.abs(s.exponents)) <= 1e-10


def test_tangent_collapse():
    f, j = linear(np.diag([1.0, 0.0]))
    with pytest.raises(TangentCollapse):
        ly.lyapunov_spectrum(f, j, np.ones(2), horizon=3)


def test_validation():
    f, j = linear(np.eye(2))
    with pytest.raises(ValidationError):
        ly.lyapunov_spectrum(f, j, np.ones(2), horizon=0)
    with pytest.raises(ValidationError):
        ly.lyapunov_spectrum(f, j, np.ones(2), basis_dim=3)


def test_criticality():
    assert ly.criticality_report(0.05) is ly.Criticality.CRITICAL
    assert ly.criticality_report(0.5) is ly.Criticality.SUPERCRITICAL
    assert ly.criticality_report(-0.5) is ly.Criticality.SUBCRITICAL
    assert ly.criticality_report(-0.1) is ly.Criticality.CRITICAL
    f, j = linear(np.diag([2.0, 0.5]))
    s = ly.lyapunov_spectrum(f, j, np.ones(2))
    assert ly.criticality_report(s, band=1.0) is ly.Criticality.CRITICAL
    with pytest.raises(ValidationError):
        ly.criticality_report(0.0, band=0.0)


def test_max_mean(rng):
    f, j = linear(np.diag([2.0, 0.5, 1.0]))
    s = ly.lyapunov_spectrum(f, j, np.ones(3))
    lmax, lmean = ly.max_mean_exponents(s)
    assert lmax == pytest.approx(np.log(2)) and lmean == pytest.approx(0.0, abs=1e-15)


def test_outputs(tmp_path):
    f, j = linear(np.diag([2.0, 0.5]))
    s = ly.lyapunov_spectrum(f, j, np.ones(2), horizon=4)
    header, rows, _ = read_csv(s.to_csv(tmp_path / "l.csv"))
    assert header == ["rank", "exponent"] and [r[0] for r in rows] == ["1", "2"]
    doc = json.loads(s.to_json(tmp_path / "l.json", criticality="x").read_text())
    assert doc["horizon_T"] == 4 and doc["basis_dim"] == 2 and doc["criticality"] == "x"
    assert doc["lambda_max"] == pytest.approx(np.log(2))


def test_trajectory_divergence(rng):
    f, _ = linear(np.diag([2.0, 0.5]))
    out = ly.trajectory_divergence(f, np.ones(2), 5, eps=1e-6)
    assert out.shape == (6,) and out[-1] > out[0]
    f, _ = linear(np.eye(2))
    out = ly.trajectory_divergence(f, np.ones(2), 3)
    assert np.all(out == out[0])
