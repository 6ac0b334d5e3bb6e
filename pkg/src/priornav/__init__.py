"""Language-conditioned prior factor graphs for 2D landmark SLAM and
waypoint navigation, plus a synthetic benchmark harness.

Submodules are imported explicitly (``from priornav import geometry``);
nothing heavy runs at package import time.
"""

__version__ = "0.1.0"
