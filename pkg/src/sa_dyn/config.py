"""Run configuration, presets and deterministic weight initialisation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import attention as att
from .attention import HeadWeights, MSAWeights, NormParams, OmegaBank, StepConfig, Variant
from .energy import make_orthogonal_heads, make_symmetric_value
from .errors import ConfigError, DivisibilityError

INIT_MODES = ("gaussian", "orthogonal", "constrained-single", "constrained-multi")
MAX_SEED = 2 ** 64 - 1

# independent RNG streams derived from one seed
WEIGHT_STREAM, STATE_STREAM, OMEGA_STREAM, AUX_STREAM = 0, 1, 2, 3


@dataclass(frozen=True)
class InitSpec:
    mode: str = "gaussian"
    std: Optional[float] = None        # None -> 1/sqrt(D)
    symmetric_vo: bool = False         # orthogonal mode: make W^V W^O symmetric
    omega_scale: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    s: int = 8
    d: int = 32
    h: int = 4
    n: int = 4
    variant: str = "itrsa"
    eta: float = 1.0
    gamma: Optional[object] = None     # None, a scalar or a length-D list
    beta: Optional[float] = None
    horizon: int = 16
    basis_dim: Optional[int] = None
    init: InitSpec = field(default_factory=InitSpec)
    out: str = "out"

    @property
    def head_dim(self):
        return self.d // self.h

    def validate(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("s", "d", "h", "n", "horizon"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.d % self.h:
            raise ConfigError(f"H = {self.h} must divide D = {self.d}")
        try:
            variant = Variant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown variant {self.variant!r}") from None
        if variant is Variant.AKORN and self.d % self.n:
            raise ConfigError(f"oscillator dim N = {self.n} must divide D = {self.d}")
        if not (isinstance(self.eta, (int, float)) and np.isfinite(self.eta) and self.eta > 0):
            raise ConfigError("eta must be positive and finite")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError("beta must be positive")
        if self.basis_dim is not None and not 1 <= self.basis_dim <= self.s * self.d:
            raise ConfigError(f"basis_dim must be in [1, {self.s * self.d}]")
        if self.gamma is not None:
            g = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
            if not np.all(np.isfinite(g)) or g.size not in (1, self.gamma_len):
                raise ConfigError(f"gamma must be a finite scalar or have length {self.gamma_len}")
        ini = self.init
        if ini.mode not in INIT_MODES:
            raise ConfigError(f"init mode must be one of {INIT_MODES}")
        if ini.std is not None and not ini.std > 0:
            raise ConfigError("init std must be positive")
        if ini.mode == "constrained-single" and self.h != 1:
            raise ConfigError("constrained-single needs H = 1")
        if ini.mode == "constrained-multi" and self.d % (2 * self.h):
            raise DivisibilityError(f"2H = {2 * self.h} must divide D = {self.d}")
        return self

    @property
    def gamma_len(self):
        return self.n if Variant(self.variant) is Variant.AKORN else self.d

    def norm_params(self):
        if self.gamma is None:
            return NormParams()
        g = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        return NormParams(np.full(self.gamma_len, g[0]) if g.size == 1 else g)

    def step_config(self, conditioning=None):
        return StepConfig(self.eta, self.norm_params(), Variant(self.variant), self.n, conditioning)

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "desk": RunConfig(),
    # hidden size, heads and step size of the large-scale setting
    "paper": RunConfig(s=81, d=512, h=8, n=4),
}


def _from_dict(base: RunConfig, doc: dict):
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    doc = dict(doc)
    if "init" in doc:
        ini = doc["init"]
        if not isinstance(ini, dict):
            raise ConfigError("init must be an object")
        bad = set(ini) - {f.name for f in fields(InitSpec)}
        if bad:
            raise ConfigError(f"unknown init keys: {sorted(bad)}")
        doc["init"] = replace(base.init, **ini)
    return replace(base, **doc)


def load_config(path=None, preset="desk", **overrides):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = PRESETS[preset]
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _from_dict(cfg, doc)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = _from_dict(cfg, overrides)
    return cfg.validate()


# ------------------------------------------------------------------ init


def rng_for(cfg: RunConfig, stream):
    return np.random.default_rng([cfg.seed, stream])


def haar_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _orthogonal_weights(cfg: RunConfig, rng):
    d, dh, h = cfg.d, cfg.head_dim, cfg.h
    wq = haar_orthogonal(d, rng)
    wk = haar_orthogonal(d, rng)
    wv = haar_orthogonal(d, rng)
    if cfg.init.symmetric_vo:
        # W^O = W^V^T R with R a symmetric orthogonal reflection, so that
        # W^V W^O = R up to rounding
        signs = rng.choice([-1.0, 1.0], size=d)
        v = haar_orthogonal(d, rng)
        refl = (v * signs) @ v.T
        wo = wv.T @ ((refl + refl.T) / 2)
    else:
        wo = haar_orthogonal(d, rng)
    heads = tuple(HeadWeights(wq[:, k * dh:(k + 1) * dh], wk[:, k * dh:(k + 1) * dh],
                              wv[:, k * dh:(k + 1) * dh]) for k in range(h))
    return MSAWeights(heads, wo, cfg.beta)


def init_weights(cfg: RunConfig):
    """Deterministic ``(MSAWeights, OmegaBank or None)`` for ``cfg``."""
    cfg.validate()
    rng = rng_for(cfg, WEIGHT_STREAM)
    mode = cfg.init.mode
    d, dh = cfg.d, cfg.head_dim
    if mode == "gaussian":
        std = cfg.init.std if cfg.init.std is not None else 1.0 / np.sqrt(d)
        heads = tuple(HeadWeights(*(rng.standard_normal((d, dh)) * std for _ in range(3)))
                      for _ in range(cfg.h))
        w = MSAWeights(heads, rng.standard_normal((d, d)) * std, cfg.beta)
    elif mode == "orthogonal":
        w = _orthogonal_weights(cfg, rng)
    elif mode == "constrained-single":
        std = cfg.init.std if cfg.init.std is not None else 1.0 / np.sqrt(d)
        wq = rng.standard_normal((d, d)) * std
        wk = rng.standard_normal((d, d)) * std
        w = MSAWeights((HeadWeights(wq, wk, make_symmetric_value(wq, wk)),), np.eye(d), cfg.beta)
    else:
        seed = int(rng.integers(0, 2 ** 63))
        w = make_orthogonal_heads(d, cfg.h, seed).msa_weights(cfg.beta)
    bank = None
    if Variant(cfg.variant) is Variant.AKORN:
        bank = OmegaBank.random(d, cfg.n, rng_for(cfg, OMEGA_STREAM), cfg.init.omega_scale)
    return w, bank


def init_state(cfg: RunConfig):
    """Random start on the sphere (per token, or per oscillator for AKOrN)."""
    rng = rng_for(cfg, STATE_STREAM)
    if Variant(cfg.variant) is Variant.AKORN:
        return att.unit_oscillators((cfg.s, cfg.d), cfg.n, rng)
    return att.pi_normalize(rng.standard_normal((cfg.s, cfg.d)))
