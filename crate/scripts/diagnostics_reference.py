"""Freeze ArviZ rank-normalized split R-hat and bulk ESS values for fixed arrays."""
import json
import sys

import arviz as az
import numpy as np

rng = np.random.default_rng(20240611)


def ar1(phi, chains, n):
    out = np.zeros((chains, n))
    for c in range(chains):
        x = rng.normal()
        for t in range(n):
            x = phi * x + np.sqrt(1 - phi**2) * rng.normal()
            out[c, t] = x
    return out


cases = {
    "iid_4x200": rng.normal(size=(4, 200)),
    "ar1_4x300": ar1(0.9, 4, 300),
    "offset_4x100": rng.normal(size=(4, 100)) + np.array([[0.0], [0.0], [0.0], [3.0]]),
    "ties_3x50": rng.integers(0, 4, size=(3, 50)).astype(float),
    "cauchy_2x101": rng.standard_cauchy(size=(2, 101)),
    "small_2x7": rng.normal(size=(2, 7)),
    "single_1x64": rng.normal(size=(1, 64)),
}

out = []
for name, draws in cases.items():
    rhat = float(az.rhat(draws, method="z_scale")) if draws.shape[0] > 1 else None
    ess = float(az.ess(draws, method="bulk"))
    classic = float(az.rhat(draws, method="split")) if draws.shape[0] > 1 else None
    out.append({"name": name, "draws": draws.tolist(), "rhat": rhat, "rhat_classic": classic, "ess": ess})

json.dump({"arviz": az.__version__, "cases": out}, sys.stdout, indent=1)
