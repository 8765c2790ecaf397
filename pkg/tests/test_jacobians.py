import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sa_dyn import attention as att
from sa_dyn import jacobians as jac
from sa_dyn.attention import HeadWeights, MSAWeights, NormParams, OmegaBank, StepConfig, Variant
from sa_dyn.errors import DegenerateRow, NoConvergence, NonFiniteMap, ShapeError

from conftest import random_msa, unit_rows

FD_TOL = 1e-5


def fd_err(analytic, f, x):
    return jac.max_rel_error(analytic, jac.fd_jacobian(f, x))


# ------------------------------------------------------------ normalisation


def test_jac_pi_examples():
    np.testing.assert_array_equal(jac.jac_pi(np.array([[1.0, 0.0]])), [[0, 0], [0, 1]])
    np.testing.assert_array_equal(jac.jac_pi(np.array([[2.0, 0.0]])), [[0, 0], [0, 0.5]])
    with pytest.raises(DegenerateRow):
        jac.jac_pi(np.zeros((1, 2)))


def test_jac_rmsnorm_examples(rng):
    y = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(jac.jac_rmsnorm(y), jac.jac_pi(y))
    j = jac.jac_rmsnorm(np.array([[1.0, 0.0]]), NormParams(np.array([2.0, 3.0])))
    np.testing.assert_array_equal(j, [[0, 0], [0, 3]])


@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_norm_jacobians_block_diagonal(s, d, seed):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((s, d)) + 0.1
    p = NormParams(rng.uniform(-2, 2, d))
    for j in (jac.jac_pi(y), jac.jac_rmsnorm(y, p)):
        j4 = j.reshape(s, d, s, d)
        for a in range(s):
            for b in range(s):
                if a != b:
                    assert np.all(j4[a, :, b, :] == 0)


def test_pi_block_spectrum_at_unit_rows(rng):
    x = unit_rows(rng, 3, 5)
    for block in jac.pi_blocks(x):
        ev = np.sort(np.linalg.eigvalsh(block))
        np.testing.assert_allclose(ev, [0, 1, 1, 1, 1], atol=1e-14)


def test_fd_pi_and_rmsnorm(rng):
    y = rng.standard_normal((4, 6))
    p = NormParams(rng.uniform(-2, 2, 6))
    assert fd_err(jac.jac_pi(y), att.pi_normalize, y) < 1e-6
    assert fd_err(jac.jac_rmsnorm(y, p), lambda z: att.rmsnorm(z, p), y) < 1e-6


# --------------------------------------------------------------- attention


def test_jac_sa_frozen_limit(rng):
    s, d = 4, 3
    x = rng.standard_normal((s, d))
    wv = rng.standard_normal((d, d))
    w = HeadWeights(np.zeros((d, d)), np.zeros((d, d)), wv)
    expected = np.kron(np.full((s, s), 1.0 / s), wv.T)
    np.testing.assert_allclose(jac.jac_sa_head(x, w, 0.9), expected, atol=1e-15)


def test_jac_sa_single_token(rng):
    w = HeadWeights(*(rng.standard_normal((4, 2)) for _ in range(3)))
    np.testing.assert_allclose(jac.jac_sa_head(rng.standard_normal((1, 4)), w, 0.5), w.wv.T, atol=1e-15)


def test_jac_msa_examples(rng):
    w = random_msa(rng, 4, 2)
    x = rng.standard_normal((3, 4))
    assert np.all(jac.jac_msa(x, MSAWeights(w.heads, np.zeros((4, 4)))) == 0)
    head = HeadWeights(*(rng.standard_normal((4, 4)) for _ in range(3)))
    one = MSAWeights((head,), np.eye(4))
    np.testing.assert_allclose(jac.jac_msa(x, one), jac.jac_sa_head(x, head, one.beta), atol=1e-15)


def test_frozen_term_exact_for_linear_msa(rng):
    d = 6
    w = random_msa(rng, d, 2)
    lin = MSAWeights(tuple(HeadWeights(np.zeros((d, 3)), np.zeros((d, 3)), h.wv) for h in w.heads), w.wo)
    x = rng.standard_normal((4, d))
    np.testing.assert_allclose(jac.jac_msa_frozen(x, lin), jac.jac_msa(x, lin), atol=1e-15)


@given(st.integers(1, 6), st.sampled_from([(4, 1), (4, 2), (6, 3), (8, 2), (16, 4)]),
       st.integers(0, 2 ** 32 - 1))
def test_fd_attention(s, dh, seed):
    d, h = dh
    rng = np.random.default_rng(seed)
    w = random_msa(rng, d, h, std=rng.uniform(0.3, 1.5) / np.sqrt(d))
    x = rng.standard_normal((s, d))
    head = w.heads[0]
    assert fd_err(jac.jac_sa_head(x, head, w.beta), lambda z: att.sa_head(z, head, w.beta), x) < FD_TOL
    assert fd_err(jac.jac_msa(x, w), lambda z: att.msa(z, w), x) < FD_TOL


# ------------------------------------------------------------------ steps


def test_step_jacobian_without_attention(rng):
    d = 4
    w = MSAWeights((HeadWeights(*(np.zeros((d, d)) for _ in range(3))),), np.zeros((d, d)))
    x = unit_rows(rng, 3, d)
    expected = np.zeros((3 * d, 3 * d))
    for i in range(3):
        expected[i * d:(i + 1) * d, i * d:(i + 1) * d] = np.eye(d) - np.outer(x[i], x[i])
    np.testing.assert_allclose(jac.jac_step(x, w, StepConfig()), expected, atol=1e-15)
    np.testing.assert_allclose(jac.jac_rmsnorm(x), expected, atol=1e-15)


@given(st.integers(1, 6), st.sampled_from([(4, 2), (8, 2), (12, 3), (16, 4)]),
       st.sampled_from([0.1, 1.0, 10.0]), st.integers(0, 2 ** 32 - 1))
def test_fd_itrsa_step(s, dh, eta, seed):
    d, h = dh
    rng = np.random.default_rng(seed)
    w = random_msa(rng, d, h)
    cfg = StepConfig(eta, NormParams(rng.uniform(-2, 2, d)), conditioning=rng.standard_normal((s, d)))
    x = rng.standard_normal((s, d))
    assert fd_err(jac.jac_step(x, w, cfg), lambda z: att.step(z, w, cfg), x) < FD_TOL


@given(st.integers(1, 5), st.sampled_from([(4, 2, 2), (8, 2, 4), (16, 4, 4), (8, 1, 8)]),
       st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_fd_akorn_step(s, dhn, with_gamma, seed):
    d, h, n = dhn
    rng = np.random.default_rng(seed)
    w = random_msa(rng, d, h)
    bank = OmegaBank.random(d, n, rng)
    norm = NormParams(rng.uniform(0.5, 2, n)) if with_gamma else NormParams()
    cfg = StepConfig(0.7, norm, Variant.AKORN, n, rng.standard_normal((s, d)))
    x = att.unit_oscillators((s, d), n, rng)
    f = lambda z: att.step(z, w, cfg, bank, check=False)
    assert fd_err(jac.jac_step(x, w, cfg, bank), f, x) < FD_TOL


def test_fd_continuous_rhs(rng):
    d = 5
    w = HeadWeights(*(rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3)))
    x = unit_rows(rng, 4, d)
    f = lambda z: att.continuous_rhs(z, w, 0.6, check=False)
    assert fd_err(jac.jac_continuous_rhs(x, w, 0.6), f, x) < FD_TOL


def test_step_map_wraps_flat_states(rng):
    w = random_msa(rng, 8, 2)
    sm = jac.make_step_map(w, StepConfig(), (3, 8))
    x = unit_rows(rng, 3, 8)
    np.testing.assert_array_equal(sm.step(x.reshape(-1)), att.itrsa_step(x, w, StepConfig()).reshape(-1))
    assert sm.jacobian(x.reshape(-1)).shape == (24, 24)


# -------------------------------------------------------------- FD oracle


def test_fd_identity_and_linear(rng):
    x = rng.standard_normal(5)
    np.testing.assert_allclose(jac.fd_jacobian(lambda z: z, x), np.eye(5), atol=1e-10)
    a = rng.standard_normal((3, 5))
    np.testing.assert_allclose(jac.fd_jacobian(lambda z: a @ z, x), a, atol=1e-10)


def test_fd_nonfinite():
    with pytest.raises(NonFiniteMap):
        jac.fd_jacobian(lambda z: np.where(z > 0, z, np.nan), np.zeros(2))


# ---------------------------------------------------------------- spectra


def test_spectral_norm_examples(rng):
    assert jac.spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-12)
    assert jac.spectral_norm(np.eye(4)) == pytest.approx(1.0, rel=1e-14)
    m = rng.standard_normal((20, 20))
    assert jac.spectral_norm(m) == pytest.approx(np.linalg.svd(m, compute_uv=False)[0], rel=1e-8)


def test_spectral_norm_deterministic(rng):
    m = rng.standard_normal((10, 7))
    assert jac.spectral_norm(m) == jac.spectral_norm(m)


def test_spectral_norm_no_convergence(rng):
    m = rng.standard_normal((30, 30))
    with pytest.raises(NoConvergence) as err:
        jac.spectral_norm(m, tol=1e-16, max_iter=2)
    assert err.value.last_estimate > 0
    with pytest.raises(ShapeError):
        jac.spectral_norm(np.ones(3))


def test_eig_spectrum_examples(rng):
    r = jac.eig_spectrum(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(np.sort(r.eigenvalues.imag), [-1, 1], atol=1e-15)
    assert r.max_abs_eig == pytest.approx(1.0) and abs(r.max_real_part) < 1e-15
    r = jac.eig_spectrum(np.diag([2.0, -1.0]))
    np.testing.assert_allclose(np.sort(r.eigenvalues.real), [-1, 2])
    g = rng.standard_normal((8, 8))
    assert np.max(np.abs(jac.eig_spectrum(g + g.T).eigenvalues.imag)) <= 1e-10


@given(st.integers(0, 2 ** 32 - 1))
def test_spectral_radius_below_norm(seed):
    rng = np.random.default_rng(seed)
    w = random_msa(rng, 8, 2)
    r = jac.eig_spectrum(jac.jac_step(unit_rows(rng, 3, 8), w, StepConfig()))
    assert r.max_abs_eig <= r.spectral_norm + 1e-8
