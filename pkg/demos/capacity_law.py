"""How many independent transforms can a stack of diffractive surfaces reach?

Walks through the rank experiment at a size that runs in seconds: build a
random network, linearise vec(A) around a random transmittance point, and
count singular values of the Jacobian.
"""
import numpy as np

from diffractive import capacity
from diffractive.network import assemble_operator

n_fov = 4                        # 4 input and 4 output cells, so A has 16 entries
rng = np.random.default_rng(0)

print("one surface: rank grows with the neuron count until it saturates at n_fov^2")
for n in (4, 9, 16, 25):
    rep, _, _ = capacity.rank_case(n_fov, [n], seed=[0, n])
    print(f"  N_L={n:3d}  predicted {rep.predicted_rank:2d}  estimated {rep.estimated_rank:2d}"
          f"  gap {rep.gap_ratio:.1e}")

print("\nsplitting the same budget over surfaces costs one dimension per extra surface")
for sizes in ([12], [6, 6], [4, 4, 4]):
    rep, _, _ = capacity.rank_case(n_fov, sizes, seed=[1, len(sizes)])
    print(f"  layers {sizes!s:12}  predicted {rep.predicted_rank:2d}"
          f"  estimated {rep.estimated_rank:2d}")

print("\nwith equal distances before and after one surface, A is symmetric and caps out")
for n in (9, 12, 16):
    rep, _, _ = capacity.rank_case(n_fov, [n], seed=[2, n], equal_distances=True)
    print(f"  N_L={n:3d}  predicted {rep.predicted_rank:2d}  estimated {rep.estimated_rank:2d}")

print("\nthe same count by construction: greedy basis generation for two surfaces")
net = capacity.random_capacity_network(n_fov, [3, 4], rng)
base = capacity.random_base_point(net, rng)
rep = capacity.generate_basis(base[0], base[1], capacity.h_vectors(net), rng)
a = capacity.vectorize(assemble_operator(net, base))
print(f"  {len(rep.steps)} basis vectors (3 + 4 - 1), {rep.consumed_h_count} h-vectors consumed")
print(f"  reconstruction error {np.linalg.norm(rep.reconstruct() - a) / np.linalg.norm(a):.1e}")
