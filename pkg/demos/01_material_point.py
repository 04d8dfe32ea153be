"""Material point walkthrough: uniaxial and biaxial plane-stress ramps.

Run with ``python3 demos/01_material_point.py``. It prints the stress-strain
response of the Hosford-Voce model at the reference parameters and shows how
the Hosford exponent changes the pure-shear yield point.
"""
from __future__ import annotations

import numpy as np

from iccflow.material import MaterialParams, MaterialState, plane_stress_update

THETA = dict(sigma_y=293.1, A=94.0, n=14.35, a=11.19)


def ramp(params: MaterialParams, direction, final: float, steps: int = 40) -> np.ndarray:
    """Drive the in-plane strain along ``direction`` and return (strain, stress_xx, kappa) rows."""
    state = MaterialState.virgin()
    d = np.asarray(direction, float) * final / steps
    rows = []
    for k in range(1, steps + 1):
        r = plane_stress_update(d, state, params)
        state = r.state
        rows.append((k * final / steps, r.stress[0], state.kappa))
    return np.array(rows)


def main():
    params = MaterialParams(E=68300.0, nu=0.33, **THETA)
    # free lateral contraction is approximated by the elastic Poisson ratio here
    uni = ramp(params, (1.0, -0.5, 0.0), 0.03)
    print("uniaxial ramp: strain, sigma_xx [MPa], kappa")
    for row in uni[::8]:
        print("  %.4f  %8.2f  %.5f" % tuple(row))
    print(f"saturation stress sigma_y + A = {THETA['sigma_y'] + THETA['A']:.1f} MPa")

    # equibiaxial yield equals sigma_y for every exponent; pure shear does not
    print("\npure-shear first-yield stress against the Hosford exponent")
    for a in (2.0, 6.0, 11.19, 16.0):
        p = MaterialParams(E=68300.0, nu=0.33, **{**THETA, "a": a})
        sh = ramp(p, (1.0, -1.0, 0.0), 0.006, steps=600)
        first = sh[np.argmax(sh[:, 2] > 0), 1]
        exact = THETA["sigma_y"] * (2.0 / (2.0**a + 2.0)) ** (1.0 / a)
        print(f"  a = {a:5.2f}: sigma_xx at first yield = {first:7.2f} MPa (closed form {exact:7.2f})")


if __name__ == "__main__":
    main()
