"""Recompute the frozen forcing constants used by the contraction checks.

Each constant is the smallest C_N for which every update of a calibration
ensemble satisfies |n_{k+1}| <= (1 - lambda) |n_k| + eta C_N.  The
calibration references are drawn with seed 1000, disjoint from the seeds
the checks use.

    python demos/calibrate_constants.py
"""

from sgpp_lab.verification import CALIBRATION_DEPTH, FROZEN_C_N, calibrate_forcing_constant_for

for (name, sigma_p), depth in CALIBRATION_DEPTH.items():
    c = calibrate_forcing_constant_for(name, sigma_p, depth)
    frozen = FROZEN_C_N[(name, sigma_p)]
    flag = "ok" if c == frozen else "CHANGED"
    print(f"{name:16s} sigma_p={sigma_p:<5g} depth={depth:<4g} C_N={c!r:24s} frozen={frozen!r} {flag}")
