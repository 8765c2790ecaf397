"""Forward operators for recurrent self-attention.

States are ``(S, D)`` float64 arrays, one row per token. Oscillator-wise
operators view each row as ``D // N`` consecutive blocks of length ``N``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateRow,
    DivisibilityError,
    NonFiniteLogits,
    NotOnSphere,
    ShapeError,
    ValidationError,
)

EPS_FLOOR = 1e-12
# Accepted deviation of a row norm from 1 for "unit" preconditions.
SPHERE_TOL = 1e-8


def _frozen(a, name, ndim=2):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HeadWeights:
    """Query/key/value projections of one head.

    ``wq`` and ``wk`` are ``D x Dqk``; ``wv`` is ``D x D_H``. The value width
    may differ from the query/key width (the energy constructions use a
    ``D x D`` value matrix).
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        for name in ("wq", "wk", "wv"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        if self.wq.shape != self.wk.shape:
            raise ShapeError(f"wq {self.wq.shape} and wk {self.wk.shape} differ")
        if self.wv.shape[0] != self.wq.shape[0]:
            raise ShapeError("wv must have the same input dimension as wq")

    @property
    def dim(self):
        return self.wq.shape[0]

    @property
    def head_dim(self):
        return self.wv.shape[1]

    @property
    def qk(self):
        """The bilinear logit matrix ``wq @ wk.T``."""
        return self.wq @ self.wk.T


@dataclass(frozen=True)
class MSAWeights:
    heads: tuple
    wo: np.ndarray
    beta: Optional[float] = None

    def __post_init__(self):
        heads = tuple(self.heads)
        if not heads:
            raise ShapeError("at least one head is required")
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "wo", _frozen(self.wo, "wo"))
        d = heads[0].dim
        dh = heads[0].head_dim
        for h in heads:
            if h.dim != d or h.head_dim != dh:
                raise ShapeError("all heads must share D and D_H")
        if len(heads) * dh != d:
            raise ShapeError(f"H*D_H = {len(heads) * dh} != D = {d}")
        if self.wo.shape != (d, d):
            raise ShapeError(f"wo must be {(d, d)}, got {self.wo.shape}")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 / np.sqrt(dh))
        elif not self.beta > 0:
            raise ValidationError("beta must be positive")
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def dim(self):
        return self.wo.shape[0]

    @property
    def head_dim(self):
        return self.heads[0].head_dim

    @property
    def n_heads(self):
        return len(self.heads)

    def wo_slice(self, h):
        """Rows of ``wo`` that multiply head ``h`` inside the concatenation."""
        dh = self.head_dim
        return self.wo[h * dh:(h + 1) * dh, :]

    @property
    def wv_concat(self):
        return np.concatenate([h.wv for h in self.heads], axis=1)


@dataclass(frozen=True)
class NormParams:
    """RMSNorm scale. ``gamma=None`` means all ones (plain Pi)."""

    gamma: Optional[np.ndarray] = None
    eps_floor: float = EPS_FLOOR

    def __post_init__(self):
        if self.gamma is not None:
            object.__setattr__(self, "gamma", _frozen(self.gamma, "gamma", ndim=1))
        if not self.eps_floor > 0:
            raise ValidationError("eps_floor must be positive")

    @property
    def gamma_max(self):
        return 1.0 if self.gamma is None else float(np.max(np.abs(self.gamma)))


@dataclass(frozen=True)
class OmegaBank:
    """One antisymmetric ``N x N`` matrix per oscillator slot."""

    omegas: tuple

    def __post_init__(self):
        mats = tuple(_frozen(o, "omega") for o in self.omegas)
        if not mats:
            raise ShapeError("empty OmegaBank")
        n = mats[0].shape[0]
        for om in mats:
            if om.shape != (n, n):
                raise ShapeError("all omegas must be N x N")
            scale = np.linalg.norm(om)
            if np.linalg.norm(om + om.T) > 1e-12 * max(scale, 1.0):
                raise ValidationError("omega matrices must be antisymmetric")
        object.__setattr__(self, "omegas", mats)

    @property
    def osc_dim(self):
        return self.omegas[0].shape[0]

    @classmethod
    def zeros(cls, d, n):
        return cls(tuple(np.zeros((n, n)) for _ in range(d // n)))

    @classmethod
    def random(cls, d, n, rng, scale=1.0):
        mats = []
        for _ in range(d // n):
            g = rng.standard_normal((n, n)) * scale
            mats.append((g - g.T) / 2)
        return cls(tuple(mats))


class Variant(str, enum.Enum):
    ITRSA = "itrsa"
    AKORN = "akorn"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class StepConfig:
    eta: float = 1.0
    norm: NormParams = field(default_factory=NormParams)
    variant: Variant = Variant.ITRSA
    oscillator_dim: int = 4
    conditioning: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.eta > 0:
            raise ValidationError("eta must be positive")
        if self.conditioning is not None:
            object.__setattr__(self, "conditioning", _frozen(self.conditioning, "C"))

    def cond(self, shape):
        if self.conditioning is None:
            return np.zeros(shape)
        if self.conditioning.shape != tuple(shape):
            raise ShapeError(f"C has shape {self.conditioning.shape}, state {shape}")
        return self.conditioning


# ---------------------------------------------------------------- basics


def softmax_rows(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLogits("softmax input has non-finite entries")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_state(x, d=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"state must be S x D, got shape {x.shape}")
    if d is not None and x.shape[1] != d:
        raise ShapeError(f"state has D={x.shape[1]}, weights expect {d}")
    return x


def attention_matrix(x, w: HeadWeights, beta):
    x = _check_state(x, w.dim)
    return softmax_rows(beta * (x @ w.wq) @ (x @ w.wk).T)


def sa_head(x, w: HeadWeights, beta):
    x = _check_state(x, w.dim)
    return attention_matrix(x, w, beta) @ (x @ w.wv)


def msa(x, w: MSAWeights):
    x = _check_state(x, w.dim)
    cat = np.concatenate([sa_head(x, h, w.beta) for h in w.heads], axis=1)
    return cat @ w.wo


def multihead_rhs(x, heads: Sequence[HeadWeights], beta):
    """Unprojected sum of head outputs, each head mapping D -> D."""
    x = _check_state(x)
    out = np.zeros_like(x)
    for h in heads:
        if h.head_dim != x.shape[1]:
            raise ShapeError("multihead_rhs needs D x D value matrices")
        out += sa_head(x, h, beta)
    return out


# -------------------------------------------------------- normalisations


def _row_norms(y, eps_floor):
    norms = np.linalg.norm(y, axis=-1)
    bad = np.argwhere(norms < eps_floor)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise DegenerateRow(idx if len(idx) > 1 else idx[0], float(norms[tuple(bad[0])]))
    return norms


def pi_normalize(y, eps_floor=EPS_FLOOR):
    y = np.asarray(y, dtype=np.float64)
    return y / _row_norms(y, eps_floor)[..., None]


def rmsnorm(y, p: NormParams = NormParams()):
    """Row-wise ``diag(gamma) y_i / ||y_i||``.

    Divides by the L2 norm, not by ``||y_i|| / sqrt(D)`` as in the
    conventional RMSNorm, so with ``gamma = 1`` rows land on the unit sphere.
    """
    out = pi_normalize(y, p.eps_floor)
    if p.gamma is not None:
        if p.gamma.shape[0] != out.shape[-1]:
            raise ShapeError(f"gamma has length {p.gamma.shape[0]}, rows {out.shape[-1]}")
        out = out * p.gamma
    return out


def _check_unit(x, tol=SPHERE_TOL):
    norms = np.linalg.norm(x, axis=-1)
    bad = np.argwhere(np.abs(norms - 1.0) > tol)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise NotOnSphere(idx if len(idx) > 1 else idx[0], float(norms[tuple(bad[0])]))


def proj_tangent(x, y, check=True):
    """Remove from each row of ``y`` its component along the matching row of ``x``.

    Implemented as ``y_i - (x_i . y_i) x_i`` which is ``(I - x_i x_i^T) y_i``
    for any ``x``; ``check`` enforces the unit-row precondition.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {y.shape}")
    if check:
        _check_unit(x)
    return y - np.sum(x * y, axis=-1, keepdims=True) * x


# ----------------------------------------------------------- oscillators


def to_oscillators(x, n):
    x = np.asarray(x, dtype=np.float64)
    s, d = x.shape
    if d % n:
        raise DivisibilityError(f"oscillator dim {n} does not divide D={d}")
    return x.reshape(s, d // n, n)


def from_oscillators(xo):
    s, k, n = xo.shape
    return xo.reshape(s, k * n)


def pi_normalize_osc(y, n, eps_floor=EPS_FLOOR):
    return from_oscillators(pi_normalize(to_oscillators(y, n), eps_floor))


def proj_tangent_osc(x, y, n, check=True):
    return from_oscillators(proj_tangent(to_oscillators(x, n), to_oscillators(y, n), check))


def omega_apply(x, bank: OmegaBank):
    n = bank.osc_dim
    xo = to_oscillators(x, n)
    if xo.shape[1] != len(bank.omegas):
        raise ShapeError(f"bank has {len(bank.omegas)} blocks, state has {xo.shape[1]}")
    om = np.stack(bank.omegas)
    return from_oscillators(np.einsum("jab,sjb->sja", om, xo))


def unit_oscillators(shape, n, rng):
    return pi_normalize_osc(rng.standard_normal(shape), n)


# ---------------------------------------------------------- update rules


def itrsa_step(x, w: MSAWeights, cfg: StepConfig):
    x = _check_state(x, w.dim)
    y = x + cfg.eta * (cfg.cond(x.shape) + msa(x, w))
    return rmsnorm(y, cfg.norm)


def _osc_gamma(cfg, d):
    g = cfg.norm.gamma
    if g is None:
        return None
    n = cfg.oscillator_dim
    if g.shape[0] == n:
        return np.tile(g, d // n)
    if g.shape[0] == d:
        return g
    raise ShapeError(f"gamma length {g.shape[0]} fits neither N={n} nor D={d}")


def akorn_delta(x, w: MSAWeights, bank: OmegaBank, cfg: StepConfig, check=True):
    n = cfg.oscillator_dim
    if bank.osc_dim != n:
        raise ShapeError(f"bank oscillator dim {bank.osc_dim} != cfg N={n}")
    drive = cfg.cond(x.shape) + msa(x, w)
    return omega_apply(x, bank) + proj_tangent_osc(x, drive, n, check)


def akorn_step(x, w: MSAWeights, bank: OmegaBank, cfg: StepConfig, check=True):
    """One Kuramoto-layer update.

    ``check=False`` skips the unit-oscillator test on ``x`` so that the map
    can be evaluated off the sphere (finite differences need that).
    An optional ``cfg.norm.gamma`` of length N or D rescales the output
    after the oscillator-wise normalisation.
    """
    x = _check_state(x, w.dim)
    y = x + cfg.eta * akorn_delta(x, w, bank, cfg, check)
    out = pi_normalize_osc(y, cfg.oscillator_dim, cfg.norm.eps_floor)
    g = _osc_gamma(cfg, x.shape[1])
    return out if g is None else out * g


def continuous_rhs(x, w: HeadWeights, beta, check=True):
    x = _check_state(x, w.dim)
    if w.head_dim != w.dim:
        raise ShapeError("continuous flow needs a D x D value matrix")
    return proj_tangent(x, sa_head(x, w, beta), check)


def step(x, w: MSAWeights, cfg: StepConfig, bank: Optional[OmegaBank] = None, check=True):
    """Dispatch on ``cfg.variant`` for the discrete update rules."""
    if cfg.variant is Variant.ITRSA:
        return itrsa_step(x, w, cfg)
    if cfg.variant is Variant.AKORN:
        if bank is None:
            raise ValidationError("AKOrN needs an OmegaBank")
        return akorn_step(x, w, bank, cfg, check)
    raise ValidationError("the continuous variant has no discrete step; use continuous_rhs")
