"""Adaptive-solver cost of each control scheme on irregular data.

Smoother controls let dopri5 take longer steps; controls with derivative
jumps force a step boundary at every knot.
"""

import numpy as np

from cdepaths import SCHEMES, CdeModel, nfe_benchmark, normalize, random_dataset, split


def main(samples=60, seed=0):
    rng = np.random.default_rng(seed)
    ds = normalize(split(random_dataset(rng, samples, 30, 2, 0.3), seed=seed))
    model = CdeModel.init(ds.samples[0].out_dim, 16, 1, 16, 1, seed=seed)
    for row in nfe_benchmark(ds.samples, ds.labels, SCHEMES, model):
        print(f"{row.scheme:17s} mean NFE {row.mean_nfe:7.1f}")


if __name__ == "__main__":
    main()
