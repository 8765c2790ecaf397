"""Command-line driver.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure, 64 usage error (unknown subcommand or bad flags).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import attention as att
from . import bounds, energy, lyapunov, oscillator, regularizers
from . import jacobians as jac
from .attention import Variant
from .config import AUX_STREAM, init_state, init_weights, load_config, rng_for
from .errors import NumericalError, SADynError, ValidationError
from .io import load_weights, save_weights, write_csv, write_json

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    return p


def _range_spec(text):
    """``a:b`` -> powers of two from a to b inclusive."""
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError("need 1 <= LO <= HI")
    sizes, s = [], lo
    while s <= hi:
        sizes.append(s)
        s *= 2
    return sizes


def _grid_spec(text):
    """``a:b:n`` -> n evenly spaced values."""
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI:N") from None
    if n < 1:
        raise argparse.ArgumentTypeError("N must be >= 1")
    return np.linspace(lo, hi, n).tolist()


def build_parser():
    common = _common()
    p = _Parser(prog="sa-dyn", description="Self-attention dynamics toolkit", allow_abbrev=False)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    kw = {"parents": [common], "allow_abbrev": False}

    s = sub.add_parser("simulate", **kw, help="run the discrete dynamics")
    s.add_argument("--steps", type=int, help="number of steps (default: horizon)")

    s = sub.add_parser("jacobian-check", **kw, help="analytic vs finite-difference Jacobians")
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--h", type=float, default=1e-5, help="finite-difference step")

    s = sub.add_parser("lyapunov", **kw, help="finite-horizon Lyapunov spectrum")
    s.add_argument("--band", type=float, default=0.1)
    s.add_argument("--no-refine", action="store_true", help="single forward QR pass")

    s = sub.add_parser("energy", **kw, help="energy descent along a continuous flow")
    s.add_argument("--system", choices=("single", "multi"), default="single")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--integrator", choices=("rk4", "euler"), default="rk4")
    s.add_argument("--tol", type=float, default=1e-9)

    s = sub.add_parser("bounds", **kw, help="bound checks and token sweeps")
    s.add_argument("--sweep-tokens", type=_range_spec, metavar="LO:HI")
    s.add_argument("--instances", type=int, default=100)
    s.add_argument("--samples", type=int, default=8)
    s.add_argument("--radius", type=float, default=100.0)
    s.add_argument("--anisotropy", type=float, default=3.0)

    s = sub.add_parser("oscillator", **kw, help="oscillator phase scan")
    s.add_argument("--eta-grid", type=_grid_spec, default=_grid_spec("0.05:10:20"), metavar="LO:HI:N")
    s.add_argument("--omega-grid", type=_grid_spec, default=_grid_spec("0.05:10:20"), metavar="LO:HI:N")

    s = sub.add_parser("regularize", **kw, help="regularizer values")
    s.add_argument("--weights", help="weight archive (default: initialise from config)")
    return p


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(v):
    return f"{v:.6g}"


# ----------------------------------------------------------- subcommands


def cmd_simulate(cfg, args):
    w, bank = init_weights(cfg)
    step_cfg = cfg.step_config()
    x = init_state(cfg)
    steps = cfg.horizon if args.steps is None else args.steps
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    rows = [(0, 0.0, energy.pseudo_energy(x, att.msa(x, w)))]
    for t in range(1, steps + 1):
        nxt = att.step(x, w, step_cfg, bank)
        if not np.all(np.isfinite(nxt)):
            raise NumericalError(f"non-finite state at step {t}")
        rows.append((t, float(np.linalg.norm(nxt - x)), energy.pseudo_energy(nxt, att.msa(nxt, w))))
        x = nxt
    out = _out_dir(cfg)
    write_csv(out / "trajectory.csv", ["t", "step_change", "pseudo_energy"], rows)
    write_json(out / "final_state.json", {"shape": list(x.shape), "state": x})
    save_weights(out / "weights.archive", w, bank, cfg.seed)
    print(f"steps={steps} final_change={_fmt(rows[-1][1])}")
    return EXIT_OK


def _fd_cases(cfg, w, bank, step_cfg, x):
    p = cfg.norm_params()
    yield "pi", jac.jac_pi(x), att.pi_normalize
    if Variant(cfg.variant) is not Variant.AKORN:
        yield "rmsnorm", jac.jac_rmsnorm(x, p), lambda z: att.rmsnorm(z, p)
    head = w.heads[0]
    yield "sa_head", jac.jac_sa_head(x, head, w.beta), lambda z: att.sa_head(z, head, w.beta)
    yield "msa", jac.jac_msa(x, w), lambda z: att.msa(z, w)
    if Variant(cfg.variant) is Variant.CONTINUOUS:
        hw = att.HeadWeights(head.wq, head.wk, head.wv @ w.wo_slice(0))
        yield "continuous_rhs", jac.jac_continuous_rhs(x, hw, w.beta), \
            lambda z: att.continuous_rhs(z, hw, w.beta, check=False)
    else:
        yield "step", jac.jac_step(x, w, step_cfg, bank), \
            lambda z: att.step(z, w, step_cfg, bank, check=False)


def cmd_jacobian_check(cfg, args):
    w, bank = init_weights(cfg)
    step_cfg = cfg.step_config()
    x = init_state(cfg)
    errors = {}
    for name, analytic, f in _fd_cases(cfg, w, bank, step_cfg, x):
        errors[name] = jac.max_rel_error(analytic, jac.fd_jacobian(f, x, args.h))
        print(f"{name}: max_rel_error={errors[name]:.3e}")
    ok = all(e <= args.tol for e in errors.values())
    write_json(_out_dir(cfg) / "jacobian_check.json",
               {"tol": args.tol, "fd_step": args.h, "max_rel_error": errors, "passed": ok})
    if not ok:
        print("jacobian check FAILED", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _tangent_dim(cfg):
    if Variant(cfg.variant) is Variant.AKORN:
        return cfg.s * cfg.d - cfg.s * (cfg.d // cfg.n)
    return cfg.s * cfg.d - cfg.s


def cmd_lyapunov(cfg, args):
    if Variant(cfg.variant) is Variant.CONTINUOUS:
        raise ValidationError("Lyapunov spectra are computed for discrete variants")
    w, bank = init_weights(cfg)
    sm = jac.make_step_map(w, cfg.step_config(), (cfg.s, cfg.d), bank)
    x0 = init_state(cfg).reshape(-1)
    # normalisation makes the remaining directions exactly null (exponent -inf)
    basis = cfg.basis_dim if cfg.basis_dim is not None else _tangent_dim(cfg)
    spec = lyapunov.lyapunov_spectrum(sm.step, sm.jacobian, x0, cfg.horizon, basis,
                                      refine=not args.no_refine, seed=cfg.seed)
    lam_max, lam_mean = lyapunov.max_mean_exponents(spec)
    verdict = lyapunov.criticality_report(spec, args.band)
    out = _out_dir(cfg)
    spec.to_csv(out / "lyapunov.csv")
    spec.to_json(out / "lyapunov.json", criticality=verdict, band=args.band,
                 tangent_dim=_tangent_dim(cfg), seed=cfg.seed)
    save_weights(out / "weights.archive", w, bank, cfg.seed)
    print(f"lambda_max={_fmt(lam_max)} lambda_mean={_fmt(lam_mean)} criticality={verdict.value}")
    return EXIT_OK


def cmd_energy(cfg, args):
    rng = rng_for(cfg, AUX_STREAM)
    d = cfg.d
    x0 = att.pi_normalize(rng.standard_normal((cfg.s, d)))
    if args.system == "single":
        std = cfg.init.std if cfg.init.std is not None else 1.0 / np.sqrt(d)
        weights = energy.symmetric_head(rng.standard_normal((d, d)) * std,
                                        rng.standard_normal((d, d)) * std)
        beta = cfg.beta if cfg.beta is not None else 1.0 / np.sqrt(d)
    else:
        weights = energy.make_orthogonal_heads(d, cfg.h, int(rng.integers(0, 2 ** 63)))
        beta = cfg.beta if cfg.beta is not None else 1.0 / np.sqrt(d // cfg.h)
    rep = energy.verify_descent(x0, args.system, weights, beta, args.dt, args.steps,
                                args.integrator, args.tol)
    out = _out_dir(cfg)
    rep.to_csv(out / "energy.csv")
    write_json(out / "energy.json", rep.summary())
    print(f"monotone_fraction={_fmt(rep.monotone_fraction)} max_delta={rep.max_delta:.3e}")
    return EXIT_OK


def cmd_bounds(cfg, args):
    out = _out_dir(cfg)
    if args.sweep_tokens:
        w, _ = init_weights(cfg)
        rows = bounds.token_sweep(w, cfg.step_config(), args.sweep_tokens, args.samples,
                                  args.radius, args.anisotropy, cfg.seed)
        bounds.token_sweep_to_csv(out / "token_sweep.csv", rows)
        for r in rows:
            print(f"S={r.s} jac_msa={_fmt(r.msa_norm)} jac_step={_fmt(r.step_norm)}")
        return EXIT_OK
    if args.instances < 1:
        raise ValidationError("instances must be >= 1")
    seeds = range(cfg.seed, cfg.seed + args.instances)
    p3 = bounds.prop3_sweep(seeds)
    cb = bounds.castin_sweep(seeds)
    bounds.checks_to_csv(out / "normalized_step_bound.csv", p3)
    bounds.checks_to_csv(out / "msa_lipschitz_bound.csv", cb)
    for name, checks in (("normalized_step", p3), ("msa_lipschitz", cb)):
        print(f"{name}: satisfied={sum(c.satisfied for c in checks)}/{len(checks)} "
              f"mean_slack={_fmt(np.mean([c.slack for c in checks]))}")
    return EXIT_OK


def cmd_oscillator(cfg, args):
    out = _out_dir(cfg)
    for variant in (oscillator.OscVariant.PLAIN, oscillator.OscVariant.NORMALIZED):
        rows = oscillator.phase_scan(args.eta_grid, args.omega_grid, variant)
        oscillator.phase_scan_to_csv(out / f"phase_scan_{variant.value}.csv", rows)
        print(f"{variant.value}: max_abs_eig in [{_fmt(min(r[2] for r in rows))}, "
              f"{_fmt(max(r[2] for r in rows))}]")
    return EXIT_OK


def cmd_regularize(cfg, args):
    if args.weights:
        w, _, _ = load_weights(args.weights)
    else:
        w, _ = init_weights(cfg)
    rep = regularizers.regularizer_report(w)
    rep.to_json(_out_dir(cfg) / "regularizers.json")
    single = "n/a" if rep.r_e_single is None else _fmt(rep.r_e_single)
    print(f"r_e_multi={_fmt(rep.r_e_multi)} r_e_single={single} r_spec={_fmt(rep.r_spec)}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "jacobian-check": cmd_jacobian_check,
    "lyapunov": cmd_lyapunov,
    "energy": cmd_energy,
    "bounds": cmd_bounds,
    "oscillator": cmd_oscillator,
    "regularize": cmd_regularize,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.preset, seed=args.seed, out=args.out)
        return COMMANDS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SADynError as exc:  # pragma: no cover - every subclass is handled above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
