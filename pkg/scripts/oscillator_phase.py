"""Eigenvalue magnitudes of the plain and normalised rotation updates."""
import argparse
from pathlib import Path

import numpy as np

from sa_dyn import oscillator as osc


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--states", type=int, default=200)
    p.add_argument("--out", default="out/oscillator")
    args = p.parse_args()
    grid = np.linspace(0.05, 10, args.n)
    out = Path(args.out)

    for variant in ("plain", "normalized"):
        rows = osc.phase_scan(grid, grid, variant)
        osc.phase_scan_to_csv(out / f"phase_scan_{variant}.csv", rows)
        mags = np.array([r[2] for r in rows])
        print(f"{variant:>10}: max|lambda| in [{mags.min():.4f}, {mags.max():.4f}]")

    # degenerate versus spread frequencies, over random unit states
    rng = np.random.default_rng(0)
    states = osc.random_unit_states(4, args.states, rng)
    for freqs in ([1.0, 1.0], [0.2, 3.0]):
        sys_ = osc.OscSystem(osc.rotation_generator(freqs), 1.0)
        norms = [np.linalg.norm(osc.osc_jacobian(sys_, x), 2) for x in states]
        print(f"omega {freqs}: degenerate={sys_.degenerate} max ||J|| {max(norms):.6f}")


if __name__ == "__main__":
    main()
