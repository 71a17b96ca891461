"""Cavity field coupled to a vibrating wall: spectra, perturbation theory and open dynamics."""

__version__ = "0.1.0"

from .fock import HilbertSpace, ModeSpec, OperatorMatrix, build_space, mechanical, optical
from .hamiltonian import HamiltonianModel, build_hamiltonian, effective_scattering_coupling, make_space
from .spectrum import EigenDecomposition, diagonalize, sweep_spectrum, avoided_crossing_gap
from .opensys import BathParameters, BathSpec, FilterSpec, open_system, evolve, steady_state

__all__ = [
    "HilbertSpace", "ModeSpec", "OperatorMatrix", "build_space", "mechanical", "optical",
    "HamiltonianModel", "build_hamiltonian", "effective_scattering_coupling", "make_space",
    "EigenDecomposition", "diagonalize", "sweep_spectrum", "avoided_crossing_gap",
    "BathParameters", "BathSpec", "FilterSpec", "open_system", "evolve", "steady_state",
]
