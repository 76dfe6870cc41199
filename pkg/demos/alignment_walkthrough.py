"""Where does a Transducer expect each target token to be emitted?

Builds a random lattice, prints its posterior alignment next to the two
priors, and shows what chunk synchronisation does to it.

    python demos/alignment_walkthrough.py
"""

import numpy as np

from monoattn import chunk_synchronize, diagonal_prior, posterior_alignment, uniform_prior
from monoattn.lattice import brute_force_total_prob, random_lattice, total_log_prob

np.set_printoptions(precision=3, suppress=True)

rng = np.random.default_rng(7)
T, U = 6, 4
lat = random_lattice(rng, T, U, V=5, scale=2.0)

print(f"lattice: {T} frames, {U} targets")
print(f"  forward-backward p(y|x) = {np.exp(total_log_prob(lat)):.6e}")
print(f"  brute force      p(y|x) = {brute_force_total_prob(lat):.6e}")

post = posterior_alignment(lat)
print("\nposterior p(emit y_u at frame t); row 0 is the BOS state")
print(post.probs)
print("\ndiagonal prior")
print(diagonal_prior(T, U).probs)
print("\nuniform prior")
print(uniform_prior(T, U).probs)

for C in (2, 4):
    synced = chunk_synchronize(post, C)
    print(f"\nposterior after chunk sync, C={C} (mass moves to chunk-final frames)")
    print(synced.probs)
    print("  row sums:", synced.probs.sum(axis=1))
