"""Analytic Jacobians, a finite-difference oracle and spectral utilities.

Vectorisation is row-major (token-major): ``vec(X) = X.reshape(-1)``, so
entry ``[i*D + a, j*D + b]`` of a Jacobian is ``d out[i, a] / d X[j, b]``.
Internally Jacobians are carried as 4-D arrays ``(S, Dout, S, Din)`` and
only flattened at the public boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import attention as att
from .attention import HeadWeights, MSAWeights, NormParams, OmegaBank, StepConfig, Variant
from .errors import EigFailure, NoConvergence, NonFiniteMap, ShapeError, ValidationError


def _flat(j4):
    s, a, t, b = j4.shape
    return j4.reshape(s * a, t * b)


def _blockdiag4(blocks):
    """``(S, a, b)`` per-token blocks -> ``(S, a, S, b)`` block-diagonal."""
    s, a, b = blocks.shape
    out = np.zeros((s, a, s, b))
    idx = np.arange(s)
    out[idx, :, idx, :] = blocks
    return out


def _projector_blocks(y, eps_floor=att.EPS_FLOOR):
    """Per-row ``(I - y y^T / |y|^2) / |y|`` for ``y`` of shape ``(..., D)``."""
    norms = att._row_norms(y, eps_floor)
    u = y / norms[..., None]
    d = y.shape[-1]
    eye = np.eye(d)
    return (eye - u[..., :, None] * u[..., None, :]) / norms[..., None, None]


def _osc_blocks_to_token(blocks):
    """``(S, K, N, N)`` oscillator blocks -> ``(S, D, D)`` token blocks."""
    s, k, n, _ = blocks.shape
    out = np.zeros((s, k, n, k, n))
    idx = np.arange(k)
    out[:, idx, :, idx, :] = blocks.transpose(1, 0, 2, 3)
    return out.reshape(s, k * n, k * n)


# ---------------------------------------------------------- normalisation


def pi_blocks(y, eps_floor=att.EPS_FLOOR):
    return _projector_blocks(np.asarray(y, dtype=np.float64), eps_floor)


def jac_pi(y, eps_floor=att.EPS_FLOOR):
    return _flat(_blockdiag4(pi_blocks(y, eps_floor)))


def rmsnorm_blocks(y, p: NormParams = NormParams()):
    blocks = pi_blocks(y, p.eps_floor)
    if p.gamma is not None:
        blocks = p.gamma[None, :, None] * blocks
    return blocks


def jac_rmsnorm(y, p: NormParams = NormParams()):
    return _flat(_blockdiag4(rmsnorm_blocks(y, p)))


def pi_osc_blocks(y, n, eps_floor=att.EPS_FLOOR):
    return _osc_blocks_to_token(_projector_blocks(att.to_oscillators(y, n), eps_floor))


def jac_pi_osc(y, n, eps_floor=att.EPS_FLOOR):
    return _flat(_blockdiag4(pi_osc_blocks(y, n, eps_floor)))


# -------------------------------------------------------------- attention


def _sa_head4(x, w: HeadWeights, beta):
    x = att._check_state(x, w.dim)
    p = att.attention_matrix(x, w, beta)
    v = x @ w.wv
    y = p @ v
    a = w.qk
    diff = v[None, :, :] - y[:, None, :]          # (i, k, c): V_k - Y_i
    key_side = x @ a                               # row i: (A^T x_i)^T
    query_side = x @ a.T                           # row k: (A x_k)^T
    # d/dX_j through the key position of logit (i, j)
    j4 = beta * np.einsum("ij,ijc,ib->icjb", p, diff, key_side)
    # d/dX_i through the query position of every logit (i, k)
    diag = beta * np.einsum("ik,ikc,kb->icb", p, diff, query_side)
    idx = np.arange(x.shape[0])
    j4[idx, :, idx, :] += diag
    # frozen-attention term P kron Wv^T
    j4 += np.einsum("ij,bc->icjb", p, w.wv)
    return j4


def jac_sa_head(x, w: HeadWeights, beta):
    """Jacobian of one head, shape ``(S*D_H, S*D)``."""
    return _flat(_sa_head4(x, w, beta))


def _msa4(x, w: MSAWeights):
    x = att._check_state(x, w.dim)
    s, d = x.shape
    out = np.zeros((s, d, s, d))
    for h, head in enumerate(w.heads):
        out += np.einsum("icjb,cd->idjb", _sa_head4(x, head, w.beta), w.wo_slice(h))
    return out


def jac_msa(x, w: MSAWeights):
    return _flat(_msa4(x, w))


def jac_msa_frozen(x, w: MSAWeights):
    """Attention held fixed: ``sum_h P_h kron (Wv_h Wo_h)^T``.

    Exact whenever the attention matrices do not depend on X
    (e.g. ``wq = wk = 0``).
    """
    x = att._check_state(x, w.dim)
    s, d = x.shape
    out = np.zeros((s, d, s, d))
    for h, head in enumerate(w.heads):
        p = att.attention_matrix(x, head, w.beta)
        out += np.einsum("ij,bd->idjb", p, head.wv @ w.wo_slice(h))
    return _flat(out)


# ------------------------------------------------------------- projections


def _proj4(x, z, jz4, n):
    """Jacobian of ``x -> Proj^(osc)_x(z(x))`` given ``dz/dx`` as ``jz4``.

    Oscillator size ``n = D`` gives the token-wise projection.
    """
    xo = att.to_oscillators(x, n)
    zo = att.to_oscillators(z, n)
    eye = np.eye(n)
    proj = eye - xo[..., :, None] * xo[..., None, :]
    dot = np.sum(xo * zo, axis=-1)
    own = dot[..., None, None] * eye + xo[..., :, None] * zo[..., None, :]
    proj_t = _osc_blocks_to_token(proj)
    out = np.einsum("iab,ibjc->iajc", proj_t, jz4)
    idx = np.arange(x.shape[0])
    out[idx, :, idx, :] -= _osc_blocks_to_token(own)
    return out


def jac_continuous_rhs(x, w: HeadWeights, beta):
    x = att._check_state(x, w.dim)
    z = att.sa_head(x, w, beta)
    return _flat(_proj4(x, z, _sa_head4(x, w, beta), x.shape[1]))


# ------------------------------------------------------------------- steps


def _itrsa4(x, w, cfg):
    x = att._check_state(x, w.dim)
    s, d = x.shape
    jm = _msa4(x, w)
    y = x + cfg.eta * (cfg.cond(x.shape) + att.msa(x, w))
    inner = cfg.eta * jm
    idx = np.arange(s)
    inner[idx, :, idx, :] += np.eye(d)
    return np.einsum("iab,ibjc->iajc", rmsnorm_blocks(y, cfg.norm), inner)


def _akorn4(x, w, bank, cfg):
    x = att._check_state(x, w.dim)
    s, d = x.shape
    n = cfg.oscillator_dim
    z = cfg.cond(x.shape) + att.msa(x, w)
    jd = _proj4(x, z, _msa4(x, w), n)
    omega = np.broadcast_to(np.stack(bank.omegas), (s,) + (len(bank.omegas), n, n))
    idx = np.arange(s)
    jd[idx, :, idx, :] += _osc_blocks_to_token(omega)
    inner = cfg.eta * jd
    inner[idx, :, idx, :] += np.eye(d)
    y = x + cfg.eta * att.akorn_delta(x, w, bank, cfg, check=False)
    outer = pi_osc_blocks(y, n, cfg.norm.eps_floor)
    g = att._osc_gamma(cfg, d)
    if g is not None:
        outer = g[None, :, None] * outer
    return np.einsum("iab,ibjc->iajc", outer, inner)


def jac_step(x, w: MSAWeights, cfg: StepConfig, bank: Optional[OmegaBank] = None):
    if cfg.variant is Variant.ITRSA:
        return _flat(_itrsa4(x, w, cfg))
    if cfg.variant is Variant.AKORN:
        if bank is None:
            raise ValidationError("AKOrN needs an OmegaBank")
        return _flat(_akorn4(x, w, bank, cfg))
    raise ValidationError("no discrete step for the continuous variant")


@dataclass(frozen=True)
class StepMap:
    """A discrete update on flattened states together with its Jacobian."""

    step: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    shape: tuple


def make_step_map(w: MSAWeights, cfg: StepConfig, shape, bank: Optional[OmegaBank] = None):
    shape = tuple(shape)

    def f(v):
        return att.step(v.reshape(shape), w, cfg, bank, check=False).reshape(-1)

    def jf(v):
        return jac_step(v.reshape(shape), w, cfg, bank)

    return StepMap(f, jf, shape)


# ------------------------------------------------------------ FD oracle


def fd_jacobian(f, x, h=1e-5):
    """Central-difference Jacobian of ``f`` at ``x`` (any array shape).

    Columns follow the row-major flattening of ``x``; rows follow the
    flattening of ``f(x)``.
    """
    if not h > 0:
        raise ValidationError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    cols = []
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        hi = np.asarray(f((flat + e).reshape(x.shape)), dtype=np.float64)
        lo = np.asarray(f((flat - e).reshape(x.shape)), dtype=np.float64)
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise NonFiniteMap(f"map is non-finite near coordinate {k}")
        cols.append((hi - lo).reshape(-1) / (2 * h))
    return np.stack(cols, axis=1)


def max_rel_error(analytic, reference):
    """``max|a - r| / max|r|``; falls back to absolute error for a zero reference."""
    scale = np.max(np.abs(reference))
    err = np.max(np.abs(np.asarray(analytic) - reference))
    return float(err / scale) if scale > 0 else float(err)


# ------------------------------------------------------------- spectra


def spectral_norm(m, tol=1e-12, max_iter=10_000, seed=0):
    """Largest singular value by power iteration on ``m^T m``.

    The start vector comes from a fixed RNG stream, so results are
    deterministic. Stops when the estimate changes by less than ``tol``
    relative; raises :class:`NoConvergence` after ``max_iter`` sweeps.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError("spectral_norm needs a matrix")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    if m.size == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        mv = m @ v
        new = float(np.linalg.norm(mv) / np.linalg.norm(v))
        if new == 0.0:
            return 0.0
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
        v = m.T @ mv
        v /= np.linalg.norm(v)
    raise NoConvergence(f"power iteration did not converge in {max_iter} steps", sigma, v)


def exact_spectral_norm(m):
    """Largest singular value from a dense SVD."""
    return float(np.linalg.norm(np.asarray(m, dtype=np.float64), 2))


@dataclass(frozen=True)
class SpectralSummary:
    spectral_norm: float
    eigenvalues: np.ndarray
    max_abs_eig: float
    max_real_part: float


def eig_spectrum(j):
    j = np.asarray(j, dtype=np.float64)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise ShapeError("eig_spectrum needs a square matrix")
    try:
        eigs = np.linalg.eigvals(j)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(str(exc)) from exc
    return SpectralSummary(
        spectral_norm=exact_spectral_norm(j),
        eigenvalues=eigs,
        max_abs_eig=float(np.max(np.abs(eigs))),
        max_real_part=float(np.max(eigs.real)),
    )
