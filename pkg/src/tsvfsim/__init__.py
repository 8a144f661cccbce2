"""Simulator of pre- and post-selected quantum dynamics.

Subpackages
-----------
hilbert       dense states, operators, density matrices
tsvf          two-state-vector probabilities and boundary updates
branching     witnessed decision trees and bang/crunch border matching
boseeinstein  symmetrized pair emission and C(Q_inv) with event mixing
pilotwave     guiding-equation trajectories and HBT comparisons
cli           scenario registry and batch runner
"""

__version__ = "0.1.0"
