"""Measure the frozen-family ratio bounds committed in presets.py.

Run from the repository root:

    python3 tools/calibrate.py

Prints the worst a-priori and stability ratios over the frozen calibration
family on the reference ensemble (seed 424242, 4000 paths, 40 steps).
The printed values go into APRIORI_RATIO_BOUND and STABILITY_RATIO_BOUND.
"""

import numpy as np

from fkbsde.bsde import RegressionBasis, apriori_check, stability_check, solve_backward
from fkbsde.forward import RngPolicy, TimeGrid, coefficient_preset, sample_increments, simulate_ensemble
from fkbsde.presets import calibration_family
from fkbsde.spectral import NoiseModel, SpectralVector, generator_preset

SEED = 424242
N_PATHS = 4000
N_STEPS = 40


def main():
    gen = generator_preset("identity_decay", 1, rate=1.0)
    coeffs = coefficient_preset("constant_sigma", 1, 1)
    grid = TimeGrid(0.0, 1.0, N_STEPS)
    noise = NoiseModel(1)
    incs = sample_increments(grid, N_PATHS, noise, RngPolicy(SEED))
    ens = simulate_ensemble(gen, coeffs, grid, SpectralVector(np.array([1.0])),
                            incs, seed=SEED)
    basis = RegressionBasis(degree=2, n_modes=1)
    family = calibration_family(1)

    worst_apriori = 0.0
    for k, (driver, terminal) in enumerate(family):
        sol = solve_backward(driver, terminal, ens, basis)
        rep = apriori_check(driver, terminal, ens, sol)
        print(f"apriori draw {k}: lhs={rep['lhs']:.6g} rhs={rep['rhs']:.6g} "
              f"ratio={rep['ratio']:.6g}")
        worst_apriori = max(worst_apriori, rep["ratio"])

    worst_stability = 0.0
    for k in range(len(family) - 1):
        d1, t1 = family[k]
        d2, t2 = family[k + 1]
        rep = stability_check(d1, t1, d2, t2, ens, basis)
        print(f"stability pair {k}: lhs={rep['lhs']:.6g} rhs={rep['rhs']:.6g} "
              f"ratio={rep['ratio']:.6g}")
        worst_stability = max(worst_stability, rep["ratio"])

    print(f"\nAPRIORI_RATIO_BOUND = {worst_apriori:.4f}")
    print(f"STABILITY_RATIO_BOUND = {worst_stability:.4f}")


if __name__ == "__main__":
    main()
