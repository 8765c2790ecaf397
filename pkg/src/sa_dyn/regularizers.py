"""Scalar regularizer values on an attention weight set.

Only values and finite-difference gradients are provided; nothing here
trains anything.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .attention import MSAWeights
from .errors import HeadCountError, ShapeError
from .io import write_json
from .jacobians import spectral_norm


def value_output_product(w: MSAWeights):
    """``W^V W^O`` with ``W^V`` the column concatenation of the head values."""
    wv = w.wv_concat
    if wv.shape[1] != w.wo.shape[0]:
        raise ShapeError(f"concatenated value width {wv.shape[1]} != wo rows {w.wo.shape[0]}")
    return wv @ w.wo


def asymmetry_penalty(b):
    """``||B - B^T||_F^2``."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ShapeError("need a square matrix")
    diff = b - b.T
    return float(np.sum(diff * diff))


def r_e_multi(w: MSAWeights):
    return asymmetry_penalty(value_output_product(w))


def r_e_single(w: MSAWeights):
    if w.n_heads != 1:
        raise HeadCountError(f"single-head penalty needs H = 1, got H = {w.n_heads}")
    return asymmetry_penalty(w.heads[0].wv @ w.wo)


def named_matrices(w: MSAWeights):
    out = {}
    for h, head in enumerate(w.heads):
        out[f"wq[{h}]"] = head.wq
        out[f"wk[{h}]"] = head.wk
        out[f"wv[{h}]"] = head.wv
    out["wo"] = w.wo
    return out


def spectral_penalty(mats: dict, biases: Sequence = ()):
    """``sum (sigma^2 - 1)^2 + sum ||b||^4``; returns ``(value, sigmas)``."""
    sigmas = {name: spectral_norm(m) for name, m in mats.items()}
    total = sum((s * s - 1.0) ** 2 for s in sigmas.values())
    for b in biases:
        nb = float(np.linalg.norm(np.asarray(b, dtype=np.float64)))
        total += nb ** 4
    return float(total), sigmas


def r_spec(w: MSAWeights, biases: Sequence = ()):
    return spectral_penalty(named_matrices(w), biases)[0]


def orthogonality_deviation(m):
    """``max |M^T M - I|`` over the smaller Gram matrix."""
    m = np.asarray(m, dtype=np.float64)
    g = m.T @ m if m.shape[0] >= m.shape[1] else m @ m.T
    return float(np.max(np.abs(g - np.eye(g.shape[0]))))


@dataclass(frozen=True)
class RegularizerReport:
    r_e_multi: float
    r_e_single: Optional[float]
    r_spec: float
    per_matrix_sigmas: dict = field(default_factory=dict)
    orthogonality: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "r_e_multi": self.r_e_multi,
            "r_e_single": self.r_e_single,
            "r_spec": self.r_spec,
            "per_matrix_sigmas": self.per_matrix_sigmas,
            "orthogonality_deviation": self.orthogonality,
        }

    def to_json(self, path):
        return write_json(path, self.to_dict())


def regularizer_report(w: MSAWeights, biases: Sequence = ()):
    spec, sigmas = spectral_penalty(named_matrices(w), biases)
    single = r_e_single(w) if w.n_heads == 1 else None
    ortho = {"wv_concat": orthogonality_deviation(w.wv_concat), "wo": orthogonality_deviation(w.wo)}
    return RegularizerReport(r_e_multi(w), single, spec, sigmas, ortho)


def fd_gradient(f: Callable[[np.ndarray], float], m, h=1e-6):
    """Central-difference gradient of a scalar function of a matrix."""
    m = np.asarray(m, dtype=np.float64)
    g = np.zeros_like(m)
    flat = m.reshape(-1)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        g.reshape(-1)[k] = (f((flat + e).reshape(m.shape)) - f((flat - e).reshape(m.shape))) / (2 * h)
    return g
