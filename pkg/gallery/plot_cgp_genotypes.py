"""
Graph genotypes
===============

A genotype is a fixed-length list of nodes; only nodes reachable from the
outputs are active. Decoding turns the active part into a program, and
encoding goes the other way for programs built from graph operations.
"""

import numpy as np

from evofilter import cgp, kalman
from evofilter.dsl import generic_signature, to_text

rng = np.random.default_rng(0)
cfg = cgp.CgpConfig()
g = cgp.random_genotype(cfg, (4, 2), rng, max_nodes=7)
print("nodes:", g.nodes)
print("active:", sorted(g.active))
print(to_text(cgp.decode(g, generic_signature(4, 2))))

# a mutation changes at least one active gene
child = cgp.mutate(g, cfg, rng)
print(to_text(cgp.decode(child, generic_signature(4, 2))))

# the full filter needs 13 nodes
k = cgp.encode(kalman.kalman_program(), max_nodes=15)
print("filter genotype: %d nodes, %d active" % (k.max_nodes, len(k.active)))
print(k.to_json()[:120], "...")
