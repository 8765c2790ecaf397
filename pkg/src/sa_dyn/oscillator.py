"""Isolated rotational systems ``x' = Omega x`` and their discretisations.

Three variants share an antisymmetric generator ``Omega``:

* continuous: right-hand side ``Omega x``, Jacobian ``Omega``;
* plain discrete: ``y = (I + eta Omega) x``, Jacobian ``I + eta Omega`` with
  eigenvalues ``1 +- i eta omega_j`` (never inside the unit disc);
* normalised discrete: ``x <- y / |y|``, Jacobian
  ``(I - y y^T / |y|^2)(I + eta Omega) / |y|``.

Because ``x^T Omega x = 0``, ``|y|^2 = |x|^2 + eta^2 |Omega x|^2`` exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
import numpy as np

from .errors import DegenerateRow, EigFailure, NotOnSphere, ShapeError, ValidationError
from .io import write_csv
from .jacobians import SpectralSummary, eig_spectrum
from .parallel import ordered_map

ANTISYM_TOL = 1e-12
DEGENERACY_RTOL = 1e-9
UNIT_TOL = 1e-8


class OscVariant(str, enum.Enum):
    CONTINUOUS = "continuous"
    PLAIN = "plain"
    NORMALIZED = "normalized"


def rotation_generator(omegas, d=None):
    """Block-diagonal generator with ``[[0, w], [-w, 0]]`` blocks.

    ``d`` may exceed ``2 * len(omegas)``; trailing coordinates are left fixed.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=np.float64))
    d = 2 * omegas.size if d is None else int(d)
    if d < 2 * omegas.size:
        raise ShapeError(f"{omegas.size} rotation blocks need D >= {2 * omegas.size}")
    m = np.zeros((d, d))
    for k, w in enumerate(omegas):
        m[2 * k, 2 * k + 1] = w
        m[2 * k + 1, 2 * k] = -w
    return m


def random_generator(d, rng, scale=1.0):
    g = rng.standard_normal((d, d)) * scale
    return (g - g.T) / 2


@dataclass(frozen=True)
class OscSystem:
    omega: np.ndarray
    eta: float = 1.0
    variant: OscVariant = OscVariant.NORMALIZED

    def __post_init__(self):
        om = np.array(self.omega, dtype=np.float64)
        if om.ndim != 2 or om.shape[0] != om.shape[1]:
            raise ShapeError("omega must be square")
        if np.max(np.abs(om + om.T), initial=0.0) > ANTISYM_TOL * max(1.0, np.max(np.abs(om))):
            raise ValidationError("omega must be antisymmetric")
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "variant", OscVariant(self.variant))
        if self.variant is not OscVariant.CONTINUOUS and not self.eta > 0:
            raise ValidationError("eta must be positive for discrete variants")
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def dim(self):
        return self.omega.shape[0]

    @property
    def frequencies(self):
        """``|omega_j|``: singular values of the generator, one per pair."""
        sv = np.linalg.svd(self.omega, compute_uv=False)
        return sv[::2][: self.dim // 2]

    @property
    def degenerate(self):
        """All rotation frequencies equal (a zero mode in odd D breaks this)."""
        sv = np.linalg.svd(self.omega, compute_uv=False)
        top = sv[0]
        if top == 0.0:
            return True
        return bool(np.all(np.abs(sv - top) <= DEGENERACY_RTOL * top))

    def propagator(self):
        return np.eye(self.dim) + self.eta * self.omega


def _vec(sys: OscSystem, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (sys.dim,):
        raise ShapeError(f"state must have shape ({sys.dim},), got {x.shape}")
    return x


def osc_step(sys: OscSystem, x):
    """One update, or the right-hand side for the continuous variant."""
    x = _vec(sys, x)
    if sys.variant is OscVariant.CONTINUOUS:
        return sys.omega @ x
    y = sys.propagator() @ x
    if sys.variant is OscVariant.PLAIN:
        return y
    nx = np.linalg.norm(x)
    if abs(nx - 1.0) > UNIT_TOL:
        raise NotOnSphere(0, float(nx))
    ny = np.linalg.norm(y)
    # |y| >= |x| = 1 for antisymmetric omega
    if not ny >= 1.0 - UNIT_TOL:
        raise DegenerateRow(0, float(ny))
    return y / ny


def osc_jacobian(sys: OscSystem, x):
    x = _vec(sys, x)
    if sys.variant is OscVariant.CONTINUOUS:
        return sys.omega.copy()
    a = sys.propagator()
    if sys.variant is OscVariant.PLAIN:
        return a
    y = a @ x
    ny = np.linalg.norm(y)
    if ny == 0.0:
        raise DegenerateRow(0, 0.0)
    u = y / ny
    return (np.eye(sys.dim) - np.outer(u, u)) @ a / ny


def osc_trajectory(sys: OscSystem, x0, steps):
    x = _vec(sys, x0)
    if sys.variant is OscVariant.CONTINUOUS:
        raise ValidationError("integrate the continuous right-hand side externally")
    out = [x]
    for _ in range(steps):
        x = osc_step(sys, x)
        out.append(x)
    return np.stack(out)


@dataclass(frozen=True)
class EigenVerdict:
    summary: SpectralSummary
    degenerate: bool
    verdicts: dict


def osc_eigen_check(sys: OscSystem, x, tol=1e-10):
    """Spectrum of the Jacobian at ``x`` plus the variant's stability verdicts.

    continuous: ``max |Re lambda| <= tol``; plain: ``min |lambda| >= 1 - tol``;
    normalised: ``||J||_2 <= 1 + tol``, asserted only for degenerate
    frequencies (otherwise reported under ``norm_le_one_measured``).
    """
    try:
        summ = eig_spectrum(osc_jacobian(sys, x))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eig_spectrum wraps this
        raise EigFailure(str(exc)) from exc
    eigs = summ.eigenvalues
    deg = sys.degenerate
    v = {}
    if sys.variant is OscVariant.CONTINUOUS:
        v["real_parts_zero"] = bool(np.max(np.abs(eigs.real)) <= tol)
    elif sys.variant is OscVariant.PLAIN:
        v["outside_unit_disc"] = bool(np.min(np.abs(eigs)) >= 1.0 - tol)
    else:
        measured = bool(summ.spectral_norm <= 1.0 + tol)
        v["norm_le_one_measured"] = measured
        if deg:
            v["norm_le_one"] = measured
    return EigenVerdict(summ, deg, v)


def phase_scan(eta_grid, omega_grid, variant=OscVariant.NORMALIZED, x=None, threads=None):
    """Max ``|lambda|`` and ``||J||_2`` of the 2-D system over an ``(eta, omega)`` grid.

    The normalised variant is evaluated at the fixed unit state ``x``
    (default ``e_1``). Rows: ``(eta, omega, max_abs_eig, spectral_norm, degenerate)``.
    """
    variant = OscVariant(variant)
    etas = [float(e) for e in eta_grid]
    omegas = [float(w) for w in omega_grid]
    if any(e <= 0 for e in etas) or any(w <= 0 for w in omegas):
        raise ValidationError("grids must be positive")
    x = np.array([1.0, 0.0]) if x is None else np.asarray(x, dtype=np.float64)

    def cell(job):
        eta, w = job
        sys = OscSystem(rotation_generator([w]), eta, variant)
        summ = eig_spectrum(osc_jacobian(sys, x))
        return (eta, w, summ.max_abs_eig, summ.spectral_norm, sys.degenerate)

    return ordered_map(cell, [(e, w) for e in etas for w in omegas], threads)


def phase_scan_to_csv(path, rows):
    return write_csv(path, ["eta", "omega", "max_abs_eig", "spectral_norm", "degenerate"], rows)


def random_unit_states(d, count, rng):
    x = rng.standard_normal((count, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def norm_identity_residual(sys: OscSystem, x):
    """``| |(I + eta Omega) x|^2 - |x|^2 - eta^2 |Omega x|^2 |``."""
    x = _vec(sys, x)
    y = sys.propagator() @ x
    return float(abs(y @ y - x @ x - sys.eta ** 2 * np.sum((sys.omega @ x) ** 2)))
