"""Three ways to propagate a field between two planes, and how far apart they land.

The dense Rayleigh-Sommerfeld matrix is the reference. The convolution form is
the same sum evaluated with FFTs; the angular-spectrum form is a different
discretisation and carries its own error at half-wavelength sampling.
"""
import numpy as np

from diffractive.field import ComplexGrid, GridSpec, PropagationOperator, build_rs_kernel, propagate

g = GridSpec(8, 8)
eye = np.eye(g.size, dtype=complex)

for d in (2.0, 5.0):
    dense = build_rs_kernel(g, g, d).matrix
    norm = np.linalg.norm(dense)
    conv = PropagationOperator(g, g, d, "convolution").apply(eye)
    print(f"d = {d} wavelengths")
    print(f"  convolution vs dense   {np.linalg.norm(conv - dense) / norm:.1e}")
    for pad in (2, 4, 8, 16):
        spec = PropagationOperator(g, g, d, "spectral", pad_factor=pad).apply(eye)
        print(f"  spectral, pad x{pad:<2d}     {np.linalg.norm(spec - dense) / norm:.4f}")

# a point source spreads out and more of it falls past the grid edge as the planes separate;
# the kernel has no cell-area factor, so the totals are relative
big = GridSpec(33, 33)
src = np.zeros(big.size, complex)
src[big.size // 2] = 1.0
for d in (1.0, 4.0, 16.0):
    out = propagate(ComplexGrid(big, src), build_rs_kernel(big, big, d))
    inten = np.abs(out.vector()) ** 2
    print(f"point source at d={d:4.1f}: peak {inten.max():.3f}, total on grid {inten.sum():.3f}")
