"""Commensurate twisted-bilayer geometry for square and honeycomb lattices.

All lengths are in units of the monolayer lattice constant d (d = lambda/2 for
the square optical lattice).  Layer ``a`` is unrotated; layer ``b`` is rotated
counter-clockwise by ``theta`` about a lattice site shared by both layers,
which sits at the origin.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .errors import CapacityError, ConsistencyError, InvalidIndexError

COINCIDENCE_TOL = 1e-9
MAX_SITES = 1 << 26

LAYER_A = 0
LAYER_B = 1
LAYER_NAMES = ("a", "b")


class LatticeKind(enum.Enum):
    SQUARE = "square"
    HONEYCOMB = "honeycomb"

    @classmethod
    def parse(cls, value) -> "LatticeKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidIndexError(f"unknown lattice kind {value!r}") from None


@dataclass(frozen=True)
class CommensurateAngle:
    kind: LatticeKind
    m: int
    n: int
    theta: float

    @property
    def degrees(self) -> float:
        return math.degrees(self.theta)

    def __str__(self) -> str:
        return f"{self.kind.value} theta({self.m},{self.n}) = {self.degrees:.4f} deg"


def _angle_formula(kind: LatticeKind, m: int, n: int) -> float:
    if kind is LatticeKind.SQUARE:
        c = 2 * m * n / (m * m + n * n)
    else:
        c = (n * n + 4 * n * m + m * m) / (2 * (m * m + n * n + n * m))
    return math.acos(min(1.0, c))


def commensurate_angle(kind, m: int, n: int) -> CommensurateAngle:
    """Validated commensurate twist angle for the index pair (m, n).

    Parameters
    ----------
    kind : LatticeKind or str
        ``square`` or ``honeycomb``.
    m, n : int
        Positive integers with ``m >= n``.  Pairs sharing a common factor are
        reduced (with a warning) since they describe the same angle.

    Raises
    ------
    InvalidIndexError
        For non-positive indices, ``n > m``, or a square angle outside the
        fundamental domain ``theta < pi/4``.
    """
    kind = LatticeKind.parse(kind)
    m, n = int(m), int(n)
    if m <= 0 or n <= 0:
        raise InvalidIndexError(f"indices must be positive, got (m, n) = ({m}, {n})")
    if n > m:
        raise InvalidIndexError(f"require m >= n, got (m, n) = ({m}, {n})")
    g = math.gcd(m, n)
    if g != 1:
        warnings.warn(f"(m, n) = ({m}, {n}) reduced by common factor {g}", stacklevel=2)
        m, n = m // g, n // g
    theta = _angle_formula(kind, m, n)
    if kind is LatticeKind.SQUARE and theta >= math.pi / 4:
        raise InvalidIndexError(
            f"square theta({m},{n}) = {math.degrees(theta):.3f} deg is not below 45 deg; "
            "it is equivalent to a smaller angle by the four-fold symmetry"
        )
    return CommensurateAngle(kind, m, n, theta)


def enumerate_angles(kind, max_index: int) -> List[CommensurateAngle]:
    """All admissible coprime angles with ``m <= max_index``, largest first."""
    kind = LatticeKind.parse(kind)
    if max_index < 1:
        raise InvalidIndexError(f"max_index must be >= 1, got {max_index}")
    out: List[CommensurateAngle] = []
    for m in range(1, max_index + 1):
        for n in range(1, m + 1):
            if math.gcd(m, n) != 1:
                continue
            theta = _angle_formula(kind, m, n)
            if kind is LatticeKind.SQUARE and theta >= math.pi / 4:
                continue
            if any(abs(theta - a.theta) < 1e-12 for a in out):
                continue
            out.append(CommensurateAngle(kind, m, n, theta))
    out.sort(key=lambda a: -a.theta)
    return out


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def monolayer(kind: LatticeKind) -> Tuple[np.ndarray, np.ndarray]:
    """Primitive vectors (as columns) and basis positions of one layer."""
    if kind is LatticeKind.SQUARE:
        return np.eye(2), np.zeros((1, 2))
    a1 = np.array([1.0, 0.0])
    a2 = np.array([0.5, math.sqrt(3) / 2])
    return np.column_stack([a1, a2]), np.array([[0.0, 0.0], (a1 + a2) / 3])


def nearest_neighbor_vectors(kind: LatticeKind, basis_index: int) -> Tuple[np.ndarray, List[int]]:
    """Unrotated nearest-neighbour displacements and the target basis index."""
    if kind is LatticeKind.SQUARE:
        return np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]), [0, 0, 0, 0]
    A, basis = monolayer(kind)
    d1 = basis[1] - basis[0]
    deltas = np.array([d1, d1 - A[:, 0], d1 - A[:, 1]])
    if basis_index == 0:
        return deltas, [1, 1, 1]
    return -deltas, [0, 0, 0]


def closed_form_site_count(kind: LatticeKind, m: int, n: int) -> int:
    if kind is LatticeKind.SQUARE:
        return 2 * (m * m + n * n)
    return 4 * (m * m + n * n + m * n)


@dataclass(frozen=True)
class Site:
    layer: str
    cell_index: Tuple[int, int]
    basis_index: int
    position: Tuple[float, float]


@dataclass(frozen=True, eq=False)
class MoireCell:
    """Moire supercell with per-site arrays.

    ``positions[s]`` lies inside the cell, ``frac[s]`` in [0, 1)^2.
    ``coincidences`` holds (a-site, b-site) index pairs at identical positions.
    """

    angle: CommensurateAngle
    T: np.ndarray  # columns T1, T2
    positions: np.ndarray
    frac: np.ndarray
    layers: np.ndarray
    basis_indices: np.ndarray
    lattice_indices: np.ndarray
    coincidences: Tuple[Tuple[int, int], ...]

    @property
    def kind(self) -> LatticeKind:
        return self.angle.kind

    @property
    def T1(self) -> np.ndarray:
        return self.T[:, 0]

    @property
    def T2(self) -> np.ndarray:
        return self.T[:, 1]

    @property
    def B(self) -> np.ndarray:
        """Reciprocal vectors as columns, ``B[:, i] . T[:, j] = 2 pi delta_ij``."""
        return 2 * np.pi * np.linalg.inv(self.T).T

    @property
    def B1(self) -> np.ndarray:
        return self.B[:, 0]

    @property
    def B2(self) -> np.ndarray:
        return self.B[:, 1]

    @property
    def n_sites(self) -> int:
        return len(self.layers)

    @property
    def area(self) -> float:
        return abs(float(np.linalg.det(self.T)))

    @property
    def sites(self) -> List[Site]:
        return [
            Site(
                LAYER_NAMES[int(self.layers[s])],
                (int(self.lattice_indices[s, 0]), int(self.lattice_indices[s, 1])),
                int(self.basis_indices[s]),
                (float(self.positions[s, 0]), float(self.positions[s, 1])),
            )
            for s in range(self.n_sites)
        ]

    def layer_rotation(self, layer: int) -> np.ndarray:
        return np.eye(2) if layer == LAYER_A else rotation(self.angle.theta)

    def to_fractional(self, r) -> np.ndarray:
        return np.linalg.solve(self.T, np.asarray(r, dtype=float).T).T

    def k_cartesian(self, kfrac) -> np.ndarray:
        """Fractional reciprocal coordinates -> Cartesian wavevector (1/d)."""
        return np.asarray(kfrac, dtype=float) @ self.B.T

    def k_fractional(self, k) -> np.ndarray:
        return np.asarray(k, dtype=float) @ self.T / (2 * np.pi)

    def locate(self, r, layer: Optional[int] = None) -> Tuple[int, Tuple[int, int]]:
        """Site index and supercell shift of the lattice point at ``r``.

        Coincident points are ambiguous, so ``layer`` restricts the search.
        """
        f = self.to_fractional(r)
        shift = np.floor(f + COINCIDENCE_TOL)
        resid = f - shift
        d = resid[None, :] - self.frac
        d -= np.round(d)
        dist = np.linalg.norm(d @ self.T.T, axis=1)
        if layer is not None:
            dist = np.where(self.layers == layer, dist, np.inf)
        s = int(np.argmin(dist))
        if dist[s] > 1e-7:
            raise ConsistencyError(f"no site found at {r}")
        shift = shift + np.round(resid - self.frac[s])
        return s, (int(shift[0]), int(shift[1]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "basis_index", "x", "y", "frac1", "frac2"])
            for s in range(self.n_sites):
                w.writerow([
                    LAYER_NAMES[int(self.layers[s])],
                    int(self.basis_indices[s]),
                    f"{self.positions[s, 0]:.12g}",
                    f"{self.positions[s, 1]:.12g}",
                    f"{self.frac[s, 0]:.12g}",
                    f"{self.frac[s, 1]:.12g}",
                ])


def supercell_vectors(angle: CommensurateAngle) -> np.ndarray:
    m, n = angle.m, angle.n
    if angle.kind is LatticeKind.SQUARE:
        return np.array([[n, -m], [m, n]], dtype=float)
    A, _ = monolayer(angle.kind)
    a1, a2 = A[:, 0], A[:, 1]
    return np.column_stack([n * a1 + m * a2, -m * a1 + (n + m) * a2])


def _layer_points(angle, T, Tinv, layer):
    A, basis = monolayer(angle.kind)
    Rot = np.eye(2) if layer == LAYER_A else rotation(angle.theta)
    corners = T @ np.array([[0, 1, 0, 1], [0, 0, 1, 1]], dtype=float)
    lat = np.linalg.solve(Rot @ A, corners)
    lo = np.floor(lat.min(axis=1)) - 2
    hi = np.ceil(lat.max(axis=1)) + 2
    ii, jj = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    ij = np.column_stack([ii.ravel(), jj.ravel()])
    out = []
    for b, bv in enumerate(basis):
        r = (ij @ A.T + bv) @ Rot.T
        f = r @ Tinv.T
        near = np.abs(f - np.round(f)) < COINCIDENCE_TOL
        f = np.where(near, np.round(f), f)
        keep = np.all((f >= 0) & (f < 1), axis=1)
        for idx in np.nonzero(keep)[0]:
            out.append((ij[idx], b, f[idx]))
    # deterministic order: basis, then fractional coordinates
    out.sort(key=lambda t: (t[1], round(t[2][0], 9), round(t[2][1], 9)))
    return out


def build_moire_cell(angle: CommensurateAngle) -> MoireCell:
    """Supercell, per-layer sites and coincidence pairs for a commensurate angle.

    The site count is checked against the closed form 2(m^2+n^2) (square) or
    4(m^2+nm+n^2) (honeycomb).
    """
    T = supercell_vectors(angle)
    Tinv = np.linalg.inv(T)
    frac, layers, basis, lat = [], [], [], []
    for layer in (LAYER_A, LAYER_B):
        for ij, b, f in _layer_points(angle, T, Tinv, layer):
            frac.append(f)
            layers.append(layer)
            basis.append(b)
            lat.append(ij)
    frac = np.array(frac)
    layers = np.array(layers, dtype=int)
    expected = closed_form_site_count(angle.kind, angle.m, angle.n)
    if len(layers) != expected:
        raise ConsistencyError(f"{angle}: found {len(layers)} sites, expected {expected}")
    positions = frac @ T.T

    ia = np.nonzero(layers == LAYER_A)[0]
    ib = np.nonzero(layers == LAYER_B)[0]
    d = frac[ia][:, None, :] - frac[ib][None, :, :]
    d -= np.round(d)
    dist = np.linalg.norm(d @ T.T, axis=-1)
    pairs = tuple((int(ia[i]), int(ib[j])) for i, j in zip(*np.nonzero(dist < COINCIDENCE_TOL)))

    return MoireCell(
        angle=angle,
        T=T,
        positions=positions,
        frac=frac,
        layers=layers,
        basis_indices=np.array(basis, dtype=int),
        lattice_indices=np.array(lat, dtype=int),
        coincidences=pairs,
    )


@dataclass(frozen=True, eq=False)
class TiledLattice:
    """``Nc x Nc`` periodic tiling of a Moire cell.

    Site index convention: ``index = (c1 * Nc + c2) * n_cell_sites + s`` where
    (c1, c2) labels the supercell at ``c1*T1 + c2*T2`` and ``s`` the site within
    the cell.  Supercell labels wrap modulo ``Nc``.
    """

    cell: MoireCell
    Nc: int
    positions: np.ndarray = field(repr=False)
    layers: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.layers)

    def index(self, c1: int, c2: int, s: int) -> int:
        Nc = self.Nc
        return ((c1 % Nc) * Nc + (c2 % Nc)) * self.cell.n_sites + s

    def unravel(self, index: int) -> Tuple[int, int, int]:
        c, s = divmod(int(index), self.cell.n_sites)
        c1, c2 = divmod(c, self.Nc)
        return c1, c2, s

    def site(self, index: int) -> Site:
        c1, c2, s = self.unravel(index)
        base = self.cell.sites[s]
        return Site(base.layer, base.cell_index, base.basis_index, tuple(self.positions[index]))

    def __iter__(self) -> Iterator[Site]:
        for i in range(self.n_sites):
            yield self.site(i)

    def displacements(self, origin: int) -> np.ndarray:
        """Minimal-image displacement of every site from site ``origin``."""
        d = self.positions - self.positions[origin]
        f = self.cell.to_fractional(d) / self.Nc
        f -= np.round(f)
        return (f * self.Nc) @ self.cell.T.T


def tile_lattice(cell: MoireCell, Nc: int, max_sites: int = MAX_SITES) -> TiledLattice:
    if Nc < 1:
        raise ValueError(f"Nc must be >= 1, got {Nc}")
    total = Nc * Nc * cell.n_sites
    if total > max_sites:
        raise CapacityError(f"{total} sites exceed the budget of {max_sites}")
    c1, c2 = np.meshgrid(np.arange(Nc), np.arange(Nc), indexing="ij")
    shifts = np.column_stack([c1.ravel(), c2.ravel()]) @ cell.T.T
    positions = (shifts[:, None, :] + cell.positions[None, :, :]).reshape(-1, 2)
    layers = np.tile(cell.layers, Nc * Nc)
    return TiledLattice(cell, Nc, positions, layers)
