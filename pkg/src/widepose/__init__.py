"""Geometric and numerical core for wide-depth-range 6D object pose estimation.

Modules
-------
geometry    pose algebra, pinhole camera, perspective projection
grid        multi-level prediction grids and offset encoding
sampling    ensemble-aware distribution of the sample budget over levels
losses      3D-space regression loss, 2D baseline, focal objectness loss
pnp         DLT + Gauss-Newton + RANSAC pose solvers
fusion      inference-time multi-scale correspondence fusion
metrics     ADD/ADI distances, threshold accuracy, depth bands, pose score
simulator   synthetic wide-depth-range scenario generator and benchmark
cli         the `widepose` command-line interface

Hot kernels are JIT-compiled with numba unless WIDEPOSE_NUMBA=0 (see
widepose.backend).
"""

__version__ = "0.1.0"
