"""Quantum-trajectory cluster-Gutzwiller simulation of the driven-dissipative Bose-Hubbard lattice."""
