"""Cold atoms in twisted bilayer optical lattices: geometry, bands and emitters."""

from .errors import TwistBilayerError
from .geometry import (
    CommensurateAngle,
    LatticeKind,
    MoireCell,
    TiledLattice,
    build_moire_cell,
    commensurate_angle,
    enumerate_angles,
    tile_lattice,
)
from .model import BlochHamiltonian, HoppingModel, bloch_matrix, neighbor_table, real_space_hamiltonian
from .spectrum import KPath, band_metrics, bands, critical_ratio, dos
from .emission import EmitterSpec, bound_state, effective_couplings, evolve, markov_rate, snapshot

__version__ = "0.1.0"

__all__ = [
    "TwistBilayerError",
    "CommensurateAngle",
    "LatticeKind",
    "MoireCell",
    "TiledLattice",
    "build_moire_cell",
    "commensurate_angle",
    "enumerate_angles",
    "tile_lattice",
    "BlochHamiltonian",
    "HoppingModel",
    "bloch_matrix",
    "neighbor_table",
    "real_space_hamiltonian",
    "KPath",
    "band_metrics",
    "bands",
    "critical_ratio",
    "dos",
    "EmitterSpec",
    "bound_state",
    "effective_couplings",
    "evolve",
    "markov_rate",
    "snapshot",
]
