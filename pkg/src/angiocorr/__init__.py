"""Multi-view coronary angiogram simulation and learned correspondence.

Subpackages and modules:

- ``geometry``: angulation-parameterized C-arm camera model and epipolar utilities
- ``phantom``: procedural coronary trees, X-ray style rendering, projected labels
- ``curves``: cubic Bezier primitives, fitting, Chamfer curve distance
- ``tensornet``: minimal float64 tensor autodiff engine with NN building blocks
- ``corrmodel``: point-to-point and curve-to-curve correspondence transformers
- ``tracing``: vesselness cost maps and one/two-view shortest-path tracing
- ``harness``: dataset I/O, evaluation tables, report emission
- ``service``: HTTP facade for interactive querying
"""

__version__ = "0.1.0"
