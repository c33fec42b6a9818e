"""Gaussian proximal likelihood versus the exact one on two atoms.

With atoms at (0, 0) and (1, 0), equal prior weights and a reference at
the origin with sigma_p = 0.5, Bayes gives weight 0.8808 to the first
atom.  The SDE with the Gaussian surrogate for p(x_ref | x_t) lands on it
less often; with the exact conditional likelihood it matches.

    python demos/posterior_bias.py [--count 2000] [--jobs 4]
"""

import argparse

from sgpp_lab.verification import check_posterior_frequencies

ap = argparse.ArgumentParser()
ap.add_argument("--count", type=int, default=2000)
ap.add_argument("--jobs", type=int, default=1)
args = ap.parse_args()

for lik in ("gaussian", "exact"):
    res = check_posterior_frequencies(lik, count=args.count, jobs=args.jobs)
    f, o = res.detail["frequencies"], res.detail["oracle"]
    print(f"{lik:8s} freq={f[0]:.4f} oracle={o[0]:.4f} +/-{res.threshold:.4f}  {res.line()}")
