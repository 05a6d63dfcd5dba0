#!/usr/bin/env python3
"""Exact end-to-end DP verification on a tiny finite universe.

Enumerates every dataset over a 3-value record alphabet (n = 4), computes the
full mechanism law (noisy test + gridded release, abort included) with exact
margins, and maximizes the hockey-stick divergence over all neighbor pairs.
Prints the verifier report as JSON.
"""

import itertools
import json
import time

import numpy as np

from hptr import datagen, engine, mechanisms as mech, scores

ALPHABET = [-1.0, 0.0, 1.0]
N = 4
EPS, DELTA = 1.0, 0.05


def main():
    net = scores.vector_net(1, seed=0)
    grid = engine.GridSpec(center=np.array([0.0]), half_widths=np.array([2.0]), points_per_axis=7)
    cfg = engine.MechanismConfig(task="mean", eps=EPS, delta=DELTA, zeta=0.05, alpha=0.45,
                                 Delta=0.5, tau=3.0, grid=grid, net=net, seed=0)
    cache = {}

    def mechanism(tup):
        key = tuple(sorted(tup))
        if key not in cache:
            ds = datagen.Dataset(rows=np.array(key)[:, None], labels=None,
                                 provenance="universe", seed=0)
            cache[key] = engine.output_law(ds, cfg, margin_mode="exact", alphabet=ALPHABET)
        return cache[key]

    universe = list(itertools.product(ALPHABET, repeat=N))
    pairs = [mech.NeighborPair(i, j) for i, a in enumerate(universe)
             for j, b in enumerate(universe)
             if i != j and sum(x != y for x, y in zip(a, b)) == 1]
    t0 = time.time()
    rep = mech.verify_dp(mechanism, universe, EPS, DELTA, pairs=pairs)
    out = json.loads(rep.to_json())
    out["elapsed_s"] = round(time.time() - t0, 2)
    out["universe_size"] = len(universe)
    out["neighbor_pairs"] = len(pairs)
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
