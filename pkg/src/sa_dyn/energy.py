"""Relaxed attention energies, their gradients, constrained weight builders,
descent checks along the continuous flows, and pseudo-energy diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import attention as att
from . import jacobians as jac
from .attention import HeadWeights, MSAWeights
from .errors import DivergedAt, DivisibilityError, EigFailure, EnergyOverflow, ShapeError, ValidationError
from .io import write_csv, write_json

# exp(709.78) is the largest finite double
OVERFLOW_EXPONENT = 700.0


def _exponents(x, a, beta):
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if x.ndim != 2 or a.shape != (x.shape[1], x.shape[1]):
        raise ShapeError(f"state {x.shape} and bilinear form {a.shape} mismatch")
    return beta * x @ a @ x.T


def _logsumexp(z):
    m = np.max(z)
    return float(m + np.log(np.sum(np.exp(z - m))))


def energy_single(x, a, beta):
    """``-sum_ij exp(beta x_i^T A x_j)`` with ``A = wq wk^T`` passed directly."""
    z = _exponents(x, a, beta)
    if np.max(z) > OVERFLOW_EXPONENT:
        raise EnergyOverflow(_logsumexp(z))
    return -float(np.sum(np.exp(z)))


def grad_energy_single(x, a, beta):
    """Gradient of :func:`energy_single` with respect to the rows of ``x``.

    Row ``i`` is ``-beta * sum_j (e_ij A x_j + e_ji A^T x_j)`` with
    ``e_ij = exp(beta x_i^T A x_j)``. For symmetric ``A`` this is
    ``-beta * sum_j e_ij (A + A^T) x_j``.
    """
    z = _exponents(x, a, beta)
    if np.max(z) > OVERFLOW_EXPONENT:
        raise EnergyOverflow(_logsumexp(z))
    e = np.exp(z)
    x = np.asarray(x, dtype=np.float64)
    return -beta * (e @ x @ a.T + e.T @ x @ a)


def _qk_list(heads):
    if isinstance(heads, OrthoHeadSet):
        return heads.qk
    out = []
    for h in heads:
        out.append(h.qk if isinstance(h, HeadWeights) else np.asarray(h, dtype=np.float64))
    return out


def energy_multi(x, heads, beta):
    """Sum of per-head single energies; ``heads`` is an :class:`OrthoHeadSet`,
    a list of :class:`HeadWeights`, or a list of ``D x D`` logit matrices."""
    return sum(energy_single(x, a, beta) for a in _qk_list(heads))


def grad_energy_multi(x, heads, beta):
    return sum(grad_energy_single(x, a, beta) for a in _qk_list(heads))


# ------------------------------------------------------ constrained weights


def make_symmetric_value(wq, wk):
    """``(wk wq^T + wq wk^T) / 2``, symmetric to the last bit."""
    wq = np.asarray(wq, dtype=np.float64)
    wk = np.asarray(wk, dtype=np.float64)
    if wq.shape != wk.shape:
        raise ShapeError(f"wq {wq.shape} and wk {wk.shape} differ")
    b = wq @ wk.T
    return (b + b.T) / 2


def symmetric_head(wq, wk):
    return HeadWeights(wq, wk, make_symmetric_value(wq, wk))


@dataclass(frozen=True)
class OrthoHeadSet:
    """Heads whose logit matrices are ``U1_h U2_h^T`` with all ``2H``
    blocks ``U_{k,h}`` mutually orthonormal."""

    u1: tuple
    u2: tuple

    @property
    def n_heads(self):
        return len(self.u1)

    @property
    def dim(self):
        return self.u1[0].shape[0]

    @property
    def qk(self):
        return [a @ b.T for a, b in zip(self.u1, self.u2)]

    @property
    def values(self):
        return [make_symmetric_value(a, b) for a, b in zip(self.u1, self.u2)]

    def head_weights(self):
        """One ``HeadWeights`` per head with a ``D x D`` symmetric value."""
        return [symmetric_head(a, b) for a, b in zip(self.u1, self.u2)]

    def msa_weights(self, beta=None):
        """Equivalent :class:`MSAWeights` with ``D_H = D / H``.

        The symmetric value ``(U1 U2^T + U2 U1^T) / 2`` has rank ``D / H``
        and factors as ``[U1, U2] / sqrt2`` times ``[U2, U1]^T / sqrt2``, so
        ``MSA(X)`` equals the sum of the symmetric-value heads.
        """
        s = np.sqrt(0.5)
        heads, wo_rows = [], []
        for a, b in zip(self.u1, self.u2):
            heads.append(HeadWeights(a, b, np.concatenate([a, b], axis=1) * s))
            wo_rows.append(np.concatenate([b, a], axis=1).T * s)
        if beta is None:
            beta = 1.0 / np.sqrt(self.dim // self.n_heads)
        return MSAWeights(tuple(heads), np.concatenate(wo_rows, axis=0), beta)

    def identity_residuals(self):
        """Largest Frobenius norms of the products that must vanish.

        ``cross_*`` cover ``h != h'``; ``square`` is ``A_h A_h``, zero because
        ``U2_h^T U1_h = 0``. ``A_h A_h^T = U1_h U1_h^T`` is a projector and is
        not among them.
        """
        a = self.qk
        res = {"cross_at_a": 0.0, "cross_a_a": 0.0, "cross_a_at": 0.0, "square": 0.0}
        for h, ah in enumerate(a):
            res["square"] = max(res["square"], np.linalg.norm(ah @ ah))
            for g, ag in enumerate(a):
                if g == h:
                    continue
                res["cross_at_a"] = max(res["cross_at_a"], np.linalg.norm(ah.T @ ag))
                res["cross_a_a"] = max(res["cross_a_a"], np.linalg.norm(ah @ ag))
                res["cross_a_at"] = max(res["cross_a_at"], np.linalg.norm(ah @ ag.T))
        return {k: float(v) for k, v in res.items()}

    def block_gram_error(self):
        blocks = [m for pair in zip(self.u1, self.u2) for m in pair]
        u = np.concatenate(blocks, axis=1)
        return float(np.max(np.abs(u.T @ u - np.eye(u.shape[1]))))


def make_orthogonal_heads(d, h_count, seed=0):
    if h_count < 1 or d % (2 * h_count):
        raise DivisibilityError(f"2H = {2 * h_count} must divide D = {d}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    width = d // (2 * h_count)
    blocks = [q[:, k * width:(k + 1) * width] for k in range(2 * h_count)]
    return OrthoHeadSet(tuple(blocks[0::2]), tuple(blocks[1::2]))


# --------------------------------------------------------- descent checks


@dataclass
class EnergyReport:
    times: np.ndarray
    values: np.ndarray
    integrator: str
    dt: float
    system: str
    tol: float = 0.0

    @property
    def deltas(self):
        return np.diff(self.values)

    @property
    def max_delta(self):
        d = self.deltas
        return float(d.max()) if d.size else 0.0

    @property
    def monotone_fraction(self):
        d = self.deltas
        return float(np.mean(d <= self.tol)) if d.size else 1.0

    def rows(self):
        deltas = np.concatenate([[0.0], self.deltas])
        return list(zip(self.times.tolist(), self.values.tolist(), deltas.tolist()))

    def to_csv(self, path):
        footer = {"monotone_fraction": self.monotone_fraction, "max_delta": self.max_delta}
        return write_csv(path, ["t", "energy", "delta"], self.rows(), footer)

    def summary(self):
        return {
            "system": self.system,
            "integrator": self.integrator,
            "dt": self.dt,
            "steps": int(self.values.size - 1),
            "monotone_fraction": self.monotone_fraction,
            "max_delta": self.max_delta,
            "initial_energy": float(self.values[0]),
            "final_energy": float(self.values[-1]),
        }

    def to_json(self, path):
        doc = self.summary()
        doc["values"] = self.values
        return write_json(path, doc)


def _euler(f, x, dt):
    return x + dt * f(x)


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


INTEGRATORS = {"euler": _euler, "rk4": _rk4}


def verify_descent(x0, system, weights, beta, dt=1e-3, steps=2000, integrator="rk4", tol=0.0):
    """Integrate an energy-admitting flow and record the energy.

    ``system="single"``: projected single-head flow, ``weights`` a
    :class:`HeadWeights` with ``D x D`` value; rows are renormalised after
    every step. ``system="multi"``: unprojected ``sum_h SA_h``, ``weights``
    an :class:`OrthoHeadSet` or list of ``HeadWeights``; no renormalisation.
    """
    try:
        advance = INTEGRATORS[integrator.lower()]
    except KeyError:
        raise ValidationError(f"unknown integrator {integrator!r}") from None
    x = np.asarray(x0, dtype=np.float64)
    if system == "single":
        if not isinstance(weights, HeadWeights):
            raise ValidationError("single system needs HeadWeights")

        def rhs(z):
            return att.continuous_rhs(z, weights, beta, check=False)

        def energy(z):
            return energy_single(z, weights.qk, beta)

        renorm = True
        att._check_unit(x)
    elif system == "multi":
        heads = weights.head_weights() if isinstance(weights, OrthoHeadSet) else list(weights)

        def rhs(z):
            return att.multihead_rhs(z, heads, beta)

        def energy(z):
            return energy_multi(z, heads, beta)

        renorm = False
    else:
        raise ValidationError(f"unknown system {system!r}")

    values = [energy(x)]
    for k in range(steps):
        x = advance(rhs, x, dt)
        if renorm:
            x = att.pi_normalize(x)
        if not np.all(np.isfinite(x)):
            raise DivergedAt((k + 1) * dt)
        values.append(energy(x))
    times = dt * np.arange(steps + 1)
    return EnergyReport(times, np.array(values), integrator.lower(), dt, system, tol)


# ----------------------------------------------------------- pseudo-energy


def pseudo_energy(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {y.shape}")
    return -float(np.sum(x * y))


class QuadraticForm(NamedTuple):
    value: float
    symmetrized: float


def quadratic_pseudo_energy(x_vec, j_frozen):
    """``-x^T J x`` and ``-x^T (J + J^T) x / 2`` (equal up to rounding)."""
    x = np.asarray(x_vec, dtype=np.float64).reshape(-1)
    j = np.asarray(j_frozen, dtype=np.float64)
    if j.shape != (x.size, x.size):
        raise ShapeError(f"J {j.shape} does not match vector of length {x.size}")
    sym = j + j.T
    return QuadraticForm(-float(x @ j @ x), -float(x @ sym @ x) / 2)


def contribution_index(x_vec, j, top_fraction=0.02):
    """Share of ``|x|^2`` in the top eigen-directions of ``J + J^T``.

    The count is ``max(1, floor(top_fraction * n))`` eigenvectors, taken in
    descending eigenvalue order.
    """
    if not 0 < top_fraction <= 1:
        raise ValidationError("top_fraction must lie in (0, 1]")
    x = np.asarray(x_vec, dtype=np.float64).reshape(-1)
    j = np.asarray(j, dtype=np.float64)
    if j.shape != (x.size, x.size):
        raise ShapeError(f"J {j.shape} does not match vector of length {x.size}")
    try:
        evals, evecs = np.linalg.eigh(j + j.T)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(str(exc)) from exc
    coeffs = evecs[:, ::-1].T @ x
    k = max(1, int(np.floor(top_fraction * x.size)))
    total = float(coeffs @ coeffs)
    return float(coeffs[:k] @ coeffs[:k]) / total if total > 0 else 0.0


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0


def pseudo_energy_trace(x0, w: MSAWeights, cfg, steps, bank=None, top_fraction=0.02):
    """Run the discrete dynamics and log pseudo-energy diagnostics per step.

    Each record holds the pseudo-energy ``-Tr(X^T (C + MSA(X)))``, its
    quadratic surrogate with attention frozen at ``x0``, the contribution
    index under the current MSA Jacobian and the cosine between
    ``vec(MSA(X))`` and ``J_t x``.
    """
    x = np.asarray(x0, dtype=np.float64)
    frozen = jac.jac_msa_frozen(x, w)
    records = []
    for t in range(steps + 1):
        m = att.msa(x, w)
        jt = jac.jac_msa(x, w)
        xv = x.reshape(-1)
        records.append({
            "t": t,
            "pseudo_energy": pseudo_energy(x, cfg.cond(x.shape) + m),
            "quadratic_frozen": quadratic_pseudo_energy(xv, frozen).value,
            "contribution_index": contribution_index(xv, jt, top_fraction),
            "cosine_msa_jx": cosine_similarity(m, jt @ xv),
        })
        if t < steps:
            x = att.step(x, w, cfg, bank)
    return records
