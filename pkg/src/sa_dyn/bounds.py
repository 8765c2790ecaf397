"""Upper bounds on Jacobian norms and their empirical checks.

Two bounds are covered:

* the normalised-step bound ``(max|gamma| / R) (1 + eta ||J_MSA(X)||)``
  where ``R`` lower-bounds the pre-normalisation row norms, and
* a Lipschitz bound for multi-head attention on inputs with row norms at
  most ``r``: ``sum_h sqrt3 ||Wo_h|| ||Wv_h|| sqrt(||beta Wq_h Wk_h^T|| r^4 (S+1) + S)``.

``Wo_h`` is the block of ``wo`` that multiplies head ``h``; with row-vector
tokens that is a row block (see ``MSAWeights.wo_slice``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import attention as att
from . import jacobians as jac
from .attention import HeadWeights, MSAWeights, NormParams, StepConfig
from .errors import DegenerateRow, ValidationError
from .io import write_csv
from .parallel import ordered_map

SLACK_TOL = 1e-8


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    slack: float
    satisfied: bool
    context: dict = field(default_factory=dict)


def check_bound(measured, bound, ctx=None, tol=SLACK_TOL):
    measured, bound = float(measured), float(bound)
    if not (np.isfinite(measured) and np.isfinite(bound)):
        raise ValidationError("bound check needs finite values")
    slack = bound - measured
    return BoundCheck(measured, bound, slack, slack >= -tol, dict(ctx or {}))


# ------------------------------------------------------------------ bounds


def castin_bound(w: MSAWeights, r, s):
    if not r > 0:
        raise ValidationError("r must be positive")
    if s < 1:
        raise ValidationError("s must be >= 1")
    total = 0.0
    for h, head in enumerate(w.heads):
        qk = jac.exact_spectral_norm(w.beta * head.qk)
        total += (np.sqrt(3.0) * jac.exact_spectral_norm(w.wo_slice(h))
                  * jac.exact_spectral_norm(head.wv)
                  * np.sqrt(qk * r ** 4 * (s + 1) + s))
    return float(total)


def prop3_value(gamma_max, r_floor, eta, msa_norm):
    """``(gamma_max / R)(1 + eta ||J_MSA||)``."""
    if not r_floor > 0:
        raise ValidationError("r_floor must be positive")
    return float(gamma_max / r_floor * (1.0 + eta * msa_norm))


def prop3_bound(w: MSAWeights, cfg: StepConfig, r_floor, x=None, msa_norm=None, castin=None):
    """Normalised-step bound.

    ``||J_MSA||`` is measured at ``x``, passed as ``msa_norm``, or replaced
    by :func:`castin_bound` when ``castin=(r, S)`` is given.
    """
    if msa_norm is None:
        if castin is not None:
            msa_norm = castin_bound(w, *castin)
        elif x is not None:
            msa_norm = jac.exact_spectral_norm(jac.jac_msa(x, w))
        else:
            raise ValidationError("need x, msa_norm or castin=(r, S)")
    return prop3_value(cfg.norm.gamma_max, r_floor, cfg.eta, msa_norm)


def pre_norm_state(x, w: MSAWeights, cfg: StepConfig):
    x = att._check_state(x, w.dim)
    return x + cfg.eta * (cfg.cond(x.shape) + att.msa(x, w))


def measured_r_floor(x, w: MSAWeights, cfg: StepConfig):
    return float(np.min(np.linalg.norm(pre_norm_state(x, w, cfg), axis=1)))


def prop3_check(x, w: MSAWeights, cfg: StepConfig, **ctx):
    x = att._check_state(x, w.dim)
    r_floor = measured_r_floor(x, w, cfg)
    msa_norm = jac.exact_spectral_norm(jac.jac_msa(x, w))
    lhs = jac.exact_spectral_norm(jac.jac_step(x, w, cfg))
    ctx.update(R=r_floor, eta=cfg.eta, gamma_max=cfg.norm.gamma_max, msa_norm=msa_norm,
               S=x.shape[0], D=x.shape[1])
    return check_bound(lhs, prop3_value(cfg.norm.gamma_max, r_floor, cfg.eta, msa_norm), ctx)


def castin_check(x, w: MSAWeights, r=None, **ctx):
    x = att._check_state(x, w.dim)
    radius = float(np.max(np.linalg.norm(x, axis=1))) if r is None else float(r)
    lhs = jac.exact_spectral_norm(jac.jac_msa(x, w))
    ctx.update(r=radius, S=x.shape[0], D=x.shape[1])
    return check_bound(lhs, castin_bound(w, radius, x.shape[0]), ctx)


# ----------------------------------------------------------- random cases


def gaussian_weights(d, h, rng, std=None, beta=None):
    std = 1.0 / np.sqrt(d) if std is None else std
    dh = d // h
    heads = tuple(HeadWeights(*(rng.standard_normal((d, dh)) * std for _ in range(3)))
                  for _ in range(h))
    return MSAWeights(heads, rng.standard_normal((d, d)) * std, beta)


def _divisors(d):
    return [k for k in range(1, d + 1) if d % k == 0]


def random_itrsa_instance(seed, max_s=8, max_d=32, etas=(0.1, 1.0, 10.0)):
    """Random weights, state, gamma and conditioning for a normalised step."""
    rng = np.random.default_rng(seed)
    d = int(rng.choice([4, 8, 12, 16, 24, 32]))
    d = min(d, max_d)
    h = int(rng.choice(_divisors(d)[:4]))
    s = int(rng.integers(1, max_s + 1))
    w = gaussian_weights(d, h, rng, std=rng.uniform(0.3, 2.0) / np.sqrt(d))
    gamma = rng.uniform(-2.0, 2.0, size=d)
    cond = rng.standard_normal((s, d)) * rng.uniform(0.0, 1.0)
    cfg = StepConfig(eta=float(rng.choice(etas)), norm=NormParams(gamma), conditioning=cond)
    x = rng.standard_normal((s, d)) * rng.uniform(0.2, 3.0)
    return x, w, cfg


def random_castin_instance(seed, max_s=8, max_d=16):
    rng = np.random.default_rng(seed)
    d = int(rng.choice([d for d in (2, 4, 6, 8, 12, 16) if d <= max_d]))
    h = int(rng.choice(_divisors(d)))
    s = int(rng.integers(1, max_s + 1))
    w = gaussian_weights(d, h, rng, std=rng.uniform(0.2, 3.0) / np.sqrt(d))
    r = float(rng.uniform(0.2, 4.0))
    dirs = att.pi_normalize(rng.standard_normal((s, d)))
    x = dirs * (r * rng.uniform(0.0, 1.0, size=(s, 1)))
    return x, w, r


def prop3_sweep(seeds: Sequence[int], threads=None):
    def one(seed):
        x, w, cfg = random_itrsa_instance(seed)
        return prop3_check(x, w, cfg, seed=seed)
    return ordered_map(one, seeds, threads)


def castin_sweep(seeds: Sequence[int], threads=None):
    def one(seed):
        x, w, r = random_castin_instance(seed)
        return castin_check(x, w, r, seed=seed)
    return ordered_map(one, seeds, threads)


def checks_to_csv(path, checks: Sequence[BoundCheck], key="seed"):
    rows = [(c.context.get(key), c.lhs, c.rhs, c.slack, c.satisfied) for c in checks]
    footer = {
        "all_satisfied": all(c.satisfied for c in checks),
        "mean_slack": float(np.mean([c.slack for c in checks])) if checks else 0.0,
    }
    return write_csv(path, [key, "measured", "bound", "slack", "satisfied"], rows, footer)


# ----------------------------------------------------------- eta probe


def eta_limit_probe(w: MSAWeights, cfg: StepConfig, eta_grid, x, min_delta=1e-8):
    """Measured ``||J_step||`` over ``eta_grid`` at a fixed state ``x``.

    ``eta = 0`` is allowed and gives the normalisation Jacobian at ``x``.
    Returns ``(rows, sup)`` with rows ``(eta, norm)``.
    """
    x = att._check_state(x, w.dim)
    grid = [float(e) for e in eta_grid]
    if any(e < 0 for e in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("eta_grid must be non-negative and strictly ascending")
    delta = cfg.cond(x.shape) + att.msa(x, w)
    norms = np.linalg.norm(delta, axis=1)
    if np.min(norms) < min_delta:
        i = int(np.argmin(norms))
        raise DegenerateRow(i, float(norms[i]))
    rows = []
    for eta in grid:
        if eta == 0.0:
            j = jac.jac_rmsnorm(x, cfg.norm)
        else:
            j = jac.jac_step(x, w, StepConfig(eta, cfg.norm, cfg.variant, cfg.oscillator_dim,
                                              cfg.conditioning))
        rows.append((eta, jac.exact_spectral_norm(j)))
    return rows, max(n for _, n in rows)


# ----------------------------------------------------------- token sweep


def anisotropic_tokens(s, d, radius, anisotropy, rng):
    """Rows of norm ``radius`` around a shared random direction.

    ``anisotropy`` is the length of the common component relative to a
    unit-scale isotropic part, so 0 gives isotropic tokens.
    """
    mu = rng.standard_normal(d)
    mu /= np.linalg.norm(mu)
    return att.pi_normalize(anisotropy * mu + rng.standard_normal((s, d)) / np.sqrt(d)) * radius


@dataclass(frozen=True)
class TokenSweepRow:
    s: int
    msa_norm: float
    step_norm: float
    castin: float


def token_sweep(w: MSAWeights, cfg: StepConfig, sizes=(8, 16, 32, 64, 128, 256), samples=8,
                radius=100.0, anisotropy=3.0, seed=0, threads=None, tol=1e-10):
    """Sample-mean ``||J_MSA||`` and ``||J_step||`` against token count.

    Each sample draws one pool of ``max(sizes)`` tokens and evaluates its
    leading ``S`` rows for every ``S``, so sizes share tokens.
    """
    sizes = sorted(int(s) for s in sizes)
    if not sizes or sizes[0] < 1:
        raise ValidationError("sizes must be positive")
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    if cfg.conditioning is not None:
        raise ValidationError("token sweep uses C = 0")
    pools = [anisotropic_tokens(sizes[-1], w.dim, radius, anisotropy, np.random.default_rng([seed, k]))
             for k in range(samples)]

    def one(job):
        k, s = job
        x = pools[k][:s]
        return (jac.spectral_norm(jac.jac_msa(x, w), tol=tol),
                jac.spectral_norm(jac.jac_step(x, w, cfg), tol=tol))

    jobs = [(k, s) for s in sizes for k in range(samples)]
    res = ordered_map(one, jobs, threads)
    rows = []
    for i, s in enumerate(sizes):
        chunk = np.array(res[i * samples:(i + 1) * samples])
        rows.append(TokenSweepRow(s, float(chunk[:, 0].mean()), float(chunk[:, 1].mean()),
                                  castin_bound(w, radius, s)))
    return rows


def token_sweep_to_csv(path, rows: Sequence[TokenSweepRow]):
    body = [(r.s, r.msa_norm, r.step_norm, r.castin) for r in rows]
    base = rows[0].step_norm
    footer = {
        "msa_strictly_increasing": all(b.msa_norm > a.msa_norm for a, b in zip(rows, rows[1:])),
        "max_step_ratio": max(r.step_norm for r in rows) / base,
    }
    return write_csv(path, ["S", "jac_msa_norm", "jac_step_norm", "castin_bound"], body, footer)
