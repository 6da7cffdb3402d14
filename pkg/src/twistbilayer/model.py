"""Tight-binding Hamiltonians on the twisted bilayer.

Sign convention: ``H = -sum J c_i^dag c_j`` so a monolayer square lattice has
dispersion ``-2J (cos kx + cos ky)``.  On-site energies are zero (the trap
frequency is the energy reference).  Wavevectors are Cartesian, units 1/d.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, NumericalError
from .geometry import LAYER_A, LatticeKind, MoireCell, TiledLattice, nearest_neighbor_vectors

MAX_DIMENSION = 1 << 24
AMPLITUDE_FLOOR = 1e-14


@dataclass(frozen=True)
class HoppingModel:
    J: float = 1.0
    J_perp: float = 0.0
    range_mode: str = "minimal"  # or "gaussian"
    L0_over_d: float = 0.179
    cutoff_over_d: float = 1.5

    def __post_init__(self):
        if not self.J >= 0:
            raise ValueError(f"J must be >= 0, got {self.J}")
        if not self.J_perp >= 0:
            raise ValueError(f"J_perp must be >= 0, got {self.J_perp}")
        if self.range_mode not in ("minimal", "gaussian"):
            raise ValueError(f"unknown range mode {self.range_mode!r}")
        if self.range_mode == "gaussian":
            if not self.L0_over_d > 0:
                raise ValueError("L0_over_d must be positive")
            if not self.cutoff_over_d >= 1:
                raise ValueError("gaussian cutoff must be >= 1 d")

    @property
    def energy_scale(self) -> float:
        return self.J if self.J > 0 else 1.0

    @property
    def gershgorin_bound(self) -> float:
        """Upper bound on |omega| for the minimal model."""
        return 4 * self.J + self.J_perp


@dataclass(frozen=True, eq=False)
class BondTable:
    """Directed hoppings ``site_i -> site_j`` in the cell at ``shift``.

    Every bond appears together with its Hermitian partner
    ``(j, i, -shift)``.  The Hamiltonian element is ``-amplitude``.
    """

    i: np.ndarray
    j: np.ndarray
    shift: np.ndarray
    amplitude: np.ndarray
    interlayer: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    @property
    def n_undirected(self) -> int:
        return len(self) // 2

    def rows(self):
        for a, b, s, t in zip(self.i, self.j, self.shift, self.amplitude):
            yield int(a), int(b), (int(s[0]), int(s[1])), float(t)

    def to_csv(self, path, J: float = 1.0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "shift1", "shift2", "amplitude_over_J"])
            for a, b, s, t in self.rows():
                w.writerow([a, b, s[0], s[1], f"{t / J:.9g}"])


def _bonds_from_lists(rows) -> BondTable:
    if not rows:
        return BondTable(np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2), int), np.zeros(0), np.zeros(0, bool))
    i, j, s, t, inter = zip(*rows)
    return BondTable(
        np.array(i, dtype=int),
        np.array(j, dtype=int),
        np.array(s, dtype=int).reshape(-1, 2),
        np.array(t, dtype=float),
        np.array(inter, dtype=bool),
    )


def _minimal_bonds(cell: MoireCell, model: HoppingModel):
    rows = []
    if model.J > 0:
        for s in range(cell.n_sites):
            layer = int(cell.layers[s])
            Rot = cell.layer_rotation(layer)
            deltas, targets = nearest_neighbor_vectors(cell.kind, int(cell.basis_indices[s]))
            for dv in deltas:
                t, shift = cell.locate(cell.positions[s] + Rot @ dv, layer)
                if cell.layers[t] != layer:
                    raise NumericalError("nearest neighbour landed on the other layer")
                rows.append((s, t, shift, model.J, False))
    if model.J_perp > 0:
        if not cell.coincidences:
            warnings.warn("no coincidence pairs: layers are decoupled", stacklevel=3)
        for a, b in cell.coincidences:
            rows.append((a, b, (0, 0), model.J_perp, True))
            rows.append((b, a, (0, 0), model.J_perp, True))
    return rows


def _nn_distance(kind: LatticeKind) -> float:
    return 1.0 if kind is LatticeKind.SQUARE else 1 / math.sqrt(3)


def _gaussian_bonds(cell: MoireCell, model: HoppingModel):
    L0, cut = model.L0_over_d, model.cutoff_over_d
    d_nn = _nn_distance(cell.kind)
    heights = cell.area / np.linalg.norm(cell.T, axis=0)
    reach = int(np.ceil(cut / heights.min())) + 1
    shifts = np.array([(a, b) for a in range(-reach, reach + 1) for b in range(-reach, reach + 1)])
    images = shifts @ cell.T.T
    floor = AMPLITUDE_FLOOR * max(model.J, model.J_perp, 1e-300)
    rows = []
    pos = cell.positions
    for s in range(cell.n_sites):
        d = pos[None, :, :] + images[:, None, :] - pos[s]
        r = np.linalg.norm(d, axis=-1)
        for si, t in zip(*np.nonzero(r <= cut + 1e-12)):
            rr = r[si, t]
            inter = bool(cell.layers[s] != cell.layers[t])
            if inter:
                amp = model.J_perp * math.exp(-rr * rr / (4 * L0 * L0))
            else:
                if rr < 1e-9:
                    continue
                amp = model.J * math.exp(-(rr * rr - d_nn * d_nn) / (4 * L0 * L0))
            if amp > floor:
                rows.append((s, int(t), tuple(int(v) for v in shifts[si]), amp, inter))
    return rows


def neighbor_table(cell: MoireCell, model: HoppingModel) -> BondTable:
    """Hopping table of the Moire cell.

    Minimal mode: nearest-neighbour intralayer bonds with amplitude J and
    interlayer bonds of amplitude J_perp between coincident sites only.
    Gaussian mode: every pair within the cutoff, with amplitudes decaying as
    exp(-r^2 / 4 L0^2) and anchored so the intralayer nearest-neighbour bond
    equals J and the zero-distance interlayer bond equals J_perp.
    """
    if model.range_mode == "minimal":
        rows = _minimal_bonds(cell, model)
    else:
        rows = _gaussian_bonds(cell, model)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return _bonds_from_lists(rows)


class BlochHamiltonian:
    """``H(k) = -sum_L h_L exp(i k . (L1 T1 + L2 T2))`` for a fixed bond table."""

    def __init__(self, cell: MoireCell, bonds: BondTable):
        self.cell = cell
        self.bonds = bonds
        n = cell.n_sites
        blocks: Dict[Tuple[int, int], np.ndarray] = {}
        for a, b, s, t in bonds.rows():
            blocks.setdefault(s, np.zeros((n, n)))[a, b] -= t
        keys = sorted(blocks)
        self.shifts = np.array(keys, dtype=int).reshape(-1, 2)
        self.blocks = np.array([blocks[k] for k in keys]).reshape(-1, n, n)
        self.vectors = self.shifts @ cell.T.T

    @classmethod
    def from_model(cls, cell: MoireCell, model: HoppingModel) -> "BlochHamiltonian":
        return cls(cell, neighbor_table(cell, model))

    @property
    def size(self) -> int:
        return self.cell.n_sites

    def __call__(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if k.shape != (2,):
            raise ValueError("k must be a 2-vector")
        return self.batch(k[None, :])[0]

    def batch(self, ks) -> np.ndarray:
        ks = np.asarray(ks, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(ks)):
            raise NumericalError("non-finite wavevector")
        n = self.size
        if len(self.blocks) == 0:
            return np.zeros((len(ks), n, n), dtype=complex)
        phases = np.exp(1j * ks @ self.vectors.T)
        H = np.einsum("kl,lab->kab", phases, self.blocks)
        # partner bonds carry conjugate phases up to rounding; make it exact
        return 0.5 * (H + np.conj(np.swapaxes(H, 1, 2)))

    def eigvalsh(self, ks) -> np.ndarray:
        try:
            return np.linalg.eigvalsh(self.batch(ks))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from exc

    def eigh(self, ks):
        try:
            return np.linalg.eigh(self.batch(ks))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from exc


def bloch_matrix(cell: MoireCell, model: HoppingModel, k) -> np.ndarray:
    """Hermitian ``N_M x N_M`` Bloch matrix at Cartesian wavevector ``k``."""
    k = np.asarray(k, dtype=float)
    if not np.all(np.isfinite(k)):
        raise NumericalError("non-finite wavevector")
    return BlochHamiltonian.from_model(cell, model)(k)


@dataclass(frozen=True, eq=False)
class RealSpaceOperator:
    """Sparse Hermitian operator on a tiled lattice, optionally with an emitter.

    When an emitter is attached it occupies the last basis index.
    """

    matrix: sp.csr_matrix = field(repr=False)
    emitter_index: Optional[int] = None

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def row(self, index: int) -> List[Tuple[int, float]]:
        m = self.matrix
        lo, hi = m.indptr[index], m.indptr[index + 1]
        return list(zip(m.indices[lo:hi].tolist(), m.data[lo:hi].tolist()))

    def is_hermitian(self, tol: float = 0.0) -> bool:
        diff = self.matrix - self.matrix.conj().T
        return diff.count_nonzero() == 0 if tol == 0 else abs(diff).max() <= tol

    def bound(self) -> float:
        """Gershgorin bound on the spectral radius."""
        return float(abs(self.matrix).sum(axis=1).max()) if self.matrix.nnz else 0.0

    def with_emitter(self, site: int, g: float, Delta: float) -> "RealSpaceOperator":
        n = self.dimension
        coupling = sp.csr_matrix(([g, g, Delta], ([n, site, n], [site, n, n])), shape=(n + 1, n + 1))
        full = sp.block_diag([self.matrix, sp.csr_matrix((1, 1))], format="csr") + coupling
        full.sort_indices()
        return RealSpaceOperator(full.tocsr(), emitter_index=n)


def real_space_hamiltonian(lattice: TiledLattice, model: HoppingModel, max_dimension: int = MAX_DIMENSION) -> RealSpaceOperator:
    """Sparse single-particle Hamiltonian of the periodic tiling."""
    dim = lattice.n_sites
    if dim > max_dimension:
        raise CapacityError(f"dimension {dim} exceeds the budget of {max_dimension}")
    bonds = neighbor_table(lattice.cell, model)
    Nc, NM = lattice.Nc, lattice.cell.n_sites
    c1, c2 = np.meshgrid(np.arange(Nc), np.arange(Nc), indexing="ij")
    c1, c2 = c1.ravel(), c2.ravel()
    base = (c1 * Nc + c2) * NM
    if len(bonds) == 0:
        return RealSpaceOperator(sp.csr_matrix((dim, dim)))
    t1 = (c1[:, None] + bonds.shift[None, :, 0]) % Nc
    t2 = (c2[:, None] + bonds.shift[None, :, 1]) % Nc
    rows = (base[:, None] + bonds.i[None, :]).ravel()
    cols = ((t1 * Nc + t2) * NM + bonds.j[None, :]).ravel()
    vals = np.broadcast_to(-bonds.amplitude, (len(base), len(bonds))).ravel()
    H = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    H.sum_duplicates()
    H.sort_indices()
    return RealSpaceOperator(H)


def emitter_site(lattice: TiledLattice) -> int:
    """Default attachment: layer-a coincidence site of the central supercell."""
    cell = lattice.cell
    if cell.coincidences:
        s = cell.coincidences[0][0]
    else:
        s = int(np.nonzero(cell.layers == LAYER_A)[0][0])
    c = lattice.Nc // 2
    return lattice.index(c, c, s)
