"""A two-level emitter coupled to the bilayer bath, single-excitation sector.

The state is ``|psi> = C_e |e> + sum_n C_n |n>`` with the emitter stored as the
last basis vector.  The emitter couples with strength ``g`` to one layer-a site
and has energy ``Delta`` relative to the bath on-site reference.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import IntegratorAccuracyError, NotInGapError, NumericalError
from .geometry import LAYER_A, LAYER_NAMES, MoireCell, TiledLattice
from .model import BlochHamiltonian, HoppingModel, RealSpaceOperator, real_space_hamiltonian
from .propagation import ChebyshevPropagator
from .spectrum import grid_bands, k_grid

NORM_TOL = 1e-6
SECTOR_HALF_ANGLE = math.radians(15.0)


def default_attach_site(cell: MoireCell) -> int:
    if cell.coincidences:
        return cell.coincidences[0][0]
    return int(np.nonzero(cell.layers == LAYER_A)[0][0])


@dataclass(frozen=True)
class EmitterSpec:
    """Emitter parameters in units of the bath energy scale.

    ``attach_site`` is a site index inside the Moire cell (layer a).  For
    real-space runs the emitter sits on that site of the central supercell.
    ``U_c`` is recorded only; it has no effect with a single excitation.
    """

    g: float
    Delta: float
    attach_site: Optional[int] = None
    U_c: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.g) and math.isfinite(self.Delta)):
            raise ValueError("g and Delta must be finite")

    def site_in(self, cell: MoireCell) -> int:
        s = default_attach_site(cell) if self.attach_site is None else int(self.attach_site)
        if not 0 <= s < cell.n_sites:
            raise ValueError(f"attach site {s} outside the cell")
        if cell.layers[s] != LAYER_A:
            raise ValueError(f"attach site {s} is not on layer a")
        return s

    def lattice_index(self, lattice: TiledLattice) -> int:
        c = lattice.Nc // 2
        return lattice.index(c, c, self.site_in(lattice.cell))


def emitter_operator(lattice: TiledLattice, model: HoppingModel, emitter: EmitterSpec) -> RealSpaceOperator:
    bath = real_space_hamiltonian(lattice, model)
    return bath.with_emitter(emitter.lattice_index(lattice), emitter.g, emitter.Delta)


@dataclass(frozen=True, eq=False)
class EmissionResult:
    times: np.ndarray
    C_e: np.ndarray
    final_field: np.ndarray = field(repr=False)
    norm_drift: float
    energy_drift: float
    lattice: TiledLattice = field(repr=False)
    emitter_index: int = 0

    @property
    def population(self) -> np.ndarray:
        return np.abs(self.C_e) ** 2

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tJ", "re_Ce", "im_Ce", "pop"])
            for t, c, p in zip(self.times, self.C_e, self.population):
                w.writerow([f"{t:.9g}", f"{c.real:.9g}", f"{c.imag:.9g}", f"{p:.9g}"])


def evolve(
    lattice: TiledLattice,
    model: HoppingModel,
    emitter: EmitterSpec,
    dt: float,
    tmax: float,
    norm_tol: float = NORM_TOL,
) -> EmissionResult:
    """Propagate ``|e>`` for ``tmax`` and sample ``C_e`` every ``dt``."""
    if not (dt > 0 and tmax >= 0):
        raise ValueError("need dt > 0 and tmax >= 0")
    op = emitter_operator(lattice, model, emitter)
    H = op.matrix
    n = op.dimension
    psi = np.zeros(n, dtype=complex)
    psi[-1] = 1.0
    steps = int(round(tmax / dt))
    times = dt * np.arange(steps + 1)
    C_e = np.empty(steps + 1, dtype=complex)
    C_e[0] = 1.0
    E0 = float(np.real(np.vdot(psi, H @ psi)))
    drift = 0.0
    if steps:
        prop = ChebyshevPropagator(H, dt)
        for i, psi in enumerate(prop.run(psi, steps), start=1):
            C_e[i] = psi[-1]
            drift = max(drift, abs(1.0 - float(np.vdot(psi, psi).real)))
    if drift > norm_tol:
        raise IntegratorAccuracyError(f"norm drift {drift:.2e} exceeds {norm_tol:.0e}; reduce dt")
    E1 = float(np.real(np.vdot(psi, H @ psi)))
    e_drift = abs(E1 - E0) / max(abs(E0), 1e-300) if E0 else abs(E1 - E0)
    return EmissionResult(times, C_e, psi[:-1].copy(), drift, e_drift, lattice, emitter.lattice_index(lattice))


def fit_decay_rate(times: np.ndarray, population: np.ndarray, lifetimes: float = 2.0) -> Tuple[float, float]:
    """Exponential rate from a log-linear fit while ``pop >= exp(-lifetimes)``.

    Returns ``(rate, r_squared)``; the window ends at the first sample below
    the threshold.
    """
    p = np.asarray(population, dtype=float)
    below = np.nonzero(p < math.exp(-lifetimes))[0]
    stop = int(below[0]) if len(below) else len(p)
    if stop < 3:
        raise NumericalError("too few samples to fit a decay")
    t, y = np.asarray(times[:stop]), np.log(np.maximum(p[:stop], 1e-300))
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0
    return -float(slope), r2


def _default_eta(N: int, model: HoppingModel) -> float:
    return 2 * (2 * math.pi / N) * model.energy_scale


def _gaussian(x: np.ndarray, eta: float) -> np.ndarray:
    return np.exp(-0.5 * (x / eta) ** 2) / (eta * math.sqrt(2 * math.pi))


def _grid_modes(cell: MoireCell, model: HoppingModel, N: int):
    ks = k_grid(cell, N)
    w, v = BlochHamiltonian.from_model(cell, model).eigh(ks)
    return ks, w, v


def markov_rate(
    cell: MoireCell,
    model: HoppingModel,
    emitter: EmitterSpec,
    eta: Optional[float] = None,
    N: int = 128,
) -> float:
    """Golden-rule decay rate ``2 pi g^2 rho_s(Delta)`` with Gaussian broadening."""
    if eta is None:
        eta = _default_eta(N, model)
    if not eta > 0:
        raise ValueError("eta must be positive")
    if emitter.g == 0:
        return 0.0
    s = emitter.site_in(cell)
    _, w, v = _grid_modes(cell, model, N)
    weight = np.abs(v[:, s, :]) ** 2
    rho = float((weight * _gaussian(emitter.Delta - w, eta)).sum()) / len(w)
    return 2 * math.pi * emitter.g ** 2 * rho


def sector_anisotropy(prob: np.ndarray, disp: np.ndarray, cell: MoireCell, half_angle: float = SECTOR_HALF_ANGLE) -> Tuple[float, float, float]:
    """Probability in wedges around the cell diagonals over wedges around its axes.

    Returns ``(ratio, diagonal_weight, axis_weight)``; the origin is excluded.
    """
    r = np.linalg.norm(disp, axis=1)
    ok = r > 1e-9
    ang = np.arctan2(disp[:, 1], disp[:, 0])
    T1, T2 = cell.T1, cell.T2

    def weight(dirs):
        mask = np.zeros(len(prob), dtype=bool)
        for d in dirs:
            diff = np.abs((ang - math.atan2(d[1], d[0]) + math.pi) % (2 * math.pi) - math.pi)
            mask |= diff <= half_angle
        return float(prob[ok & mask].sum())

    diag = weight([T1 + T2, -(T1 + T2), T1 - T2, T2 - T1])
    axis = weight([T1, -T1, T2, -T2])
    ratio = diag / axis if axis > 0 else (math.inf if diag > 0 else float("nan"))
    return ratio, diag, axis


@dataclass(frozen=True, eq=False)
class RadialFit:
    xi: float  # units of |T1|
    r_squared: float
    radii: np.ndarray
    rms: np.ndarray


def radial_fit(amplitude: np.ndarray, disp: np.ndarray, cell: MoireCell, r_min: float = 2.0, r_max: float = 10.0) -> RadialFit:
    """Log-linear fit of shell-RMS ``|amplitude|`` against radius in Moire cells."""
    a0 = float(np.linalg.norm(cell.T1))
    r = np.linalg.norm(disp, axis=1) / a0
    edges = np.arange(r_min, r_max + 1e-9, 1.0)
    radii, rms = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi)
        if sel.any():
            radii.append(r[sel].mean())
            rms.append(math.sqrt(float(np.mean(np.abs(amplitude[sel]) ** 2))))
    radii, rms = np.array(radii), np.array(rms)
    if len(radii) < 3 or np.any(rms <= 0):
        raise NumericalError("not enough shells for a radial fit; enlarge the lattice")
    y = np.log(rms)
    slope, icpt = np.polyfit(radii, y, 1)
    resid = y - (slope * radii + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0
    xi = -1.0 / slope if slope < 0 else math.inf
    return RadialFit(xi, r2, radii, rms)


@dataclass(frozen=True, eq=False)
class BoundState:
    energy: float
    emitter_weight: float
    field: np.ndarray = field(repr=False)
    xi: float  # units of the Moire cell diagonal |T1 + T2|
    xi_r_squared: float
    anisotropy: float


def band_edges(cell: MoireCell, model: HoppingModel, N: int = 64) -> np.ndarray:
    """(min, max) of every band over an N x N grid, units of J."""
    w = grid_bands(cell, model, N) * model.energy_scale
    w = w.reshape(-1, cell.n_sites)
    return np.stack([w.min(axis=0), w.max(axis=0)], axis=1)


def in_band(Delta: float, edges: np.ndarray) -> bool:
    return bool(np.any((edges[:, 0] <= Delta) & (Delta <= edges[:, 1])))


def bound_state(
    lattice: TiledLattice,
    model: HoppingModel,
    emitter: EmitterSpec,
    n_eigs: int = 6,
    N_check: int = 64,
) -> BoundState:
    """Emitter-weighted eigenstate nearest ``Delta`` via shift-invert Lanczos."""
    cell = lattice.cell
    if in_band(emitter.Delta, band_edges(cell, model, N_check)):
        raise NotInGapError(f"Delta = {emitter.Delta} lies inside a bath band")
    op = emitter_operator(lattice, model, emitter)
    H = op.matrix.tocsc()
    k = min(n_eigs, op.dimension - 2)
    try:
        vals, vecs = eigsh(H, k=k, sigma=emitter.Delta, which="LM")
    except Exception as exc:  # ARPACK / factorization failures
        raise NumericalError(f"bound-state eigensolver failed: {exc}") from exc
    weights = np.abs(vecs[-1, :]) ** 2
    best = int(np.argmax(weights))
    vec = vecs[:, best] / np.linalg.norm(vecs[:, best])
    bath = vec[:-1]
    origin = emitter.lattice_index(lattice)
    disp = lattice.displacements(origin)
    diag_len = float(np.linalg.norm(cell.T1 + cell.T2)) / float(np.linalg.norm(cell.T1))
    try:
        fit = radial_fit(bath, disp, cell)
        xi, r2 = fit.xi / diag_len, fit.r_squared
    except NumericalError:  # lattice too small or field below machine precision
        xi = r2 = float("nan")
    ratio, _, _ = sector_anisotropy(np.abs(bath) ** 2, disp, cell)
    return BoundState(
        energy=float(vals[best]),
        emitter_weight=float(weights[best]),
        field=bath,
        xi=xi,
        xi_r_squared=r2,
        anisotropy=ratio,
    )


@dataclass(frozen=True, eq=False)
class Snapshot:
    positions: np.ndarray
    layers: np.ndarray
    prob: np.ndarray
    anisotropy: float
    diagonal_weight: float
    axis_weight: float
    time: float

    @property
    def bath_probability(self) -> float:
        return float(self.prob.sum())

    def layer(self, layer: int) -> Tuple[np.ndarray, np.ndarray]:
        sel = self.layers == layer
        return self.positions[sel], self.prob[sel]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "layer", "prob"])
            for (x, y), lay, p in zip(self.positions, self.layers, self.prob):
                w.writerow([f"{x:.9g}", f"{y:.9g}", LAYER_NAMES[int(lay)], f"{p:.9g}"])


def snapshot(result: EmissionResult) -> Snapshot:
    """Bath probabilities at the final time, centred on the emitter site."""
    lat = result.lattice
    disp = lat.displacements(result.emitter_index)
    prob = np.abs(result.final_field) ** 2
    ratio, dg, ax = sector_anisotropy(prob, disp, lat.cell)
    return Snapshot(disp, lat.layers.copy(), prob, ratio, dg, ax, result.final_time)


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    positions: Tuple[Tuple[int, int, int], ...]
    displacements: np.ndarray  # (n, n, 2): R_i - R_j
    Jij: np.ndarray
    gammaij: np.ndarray

    def to_csv(self, path, J: float = 1.0) -> None:
        n = len(self.positions)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "dx", "dy", "Jij_over_J", "gammaij_over_J"])
            for i in range(n):
                for j in range(n):
                    dx, dy = self.displacements[i, j]
                    w.writerow([i, j, f"{dx:.9g}", f"{dy:.9g}", f"{self.Jij[i, j] / J:.9g}", f"{self.gammaij[i, j] / J:.9g}"])


def effective_couplings(
    cell: MoireCell,
    model: HoppingModel,
    g: float,
    Delta: float,
    positions: Sequence[Tuple[int, int, int]],
    eta: Optional[float] = None,
    N: int = 64,
) -> CouplingMatrix:
    """Bath-mediated couplings between emitters at ``(shift1, shift2, site)``.

    ``J_ij = g^2 Re G_ij(Delta)`` and ``gamma_ij = 2 pi g^2 Re rho_ij(Delta)``,
    both from Bloch sums in the periodic gauge.
    """
    if eta is None:
        eta = _default_eta(N, model)
    if not eta > 0:
        raise ValueError("eta must be positive")
    pos = [(int(a), int(b), int(s)) for a, b, s in positions]
    if not pos:
        raise ValueError("need at least one position")
    for _, _, s in pos:
        if not 0 <= s < cell.n_sites:
            raise ValueError(f"site {s} outside the cell")
    ks, w, v = _grid_modes(cell, model, N)
    gap = np.min(np.abs(Delta - w))
    if gap < eta:
        warnings.warn(f"Delta is within eta of the bath spectrum (distance {gap:.3g}); couplings are ill-conditioned", stacklevel=2)
    shifts = np.array([p[:2] for p in pos], dtype=float)
    sites = [p[2] for p in pos]
    R = shifts @ cell.T.T + cell.positions[sites]
    phase = np.exp(1j * ks @ (shifts @ cell.T.T).T)  # (k, n)
    amp = v[:, sites, :] * phase[:, :, None]  # (k, n, band)
    with np.errstate(divide="ignore"):  # already reported as ill-conditioned
        resolvent = 1.0 / (Delta - w)
    spectral = _gaussian(Delta - w, eta)
    Nk = len(ks)
    G = np.einsum("kib,kjb,kb->ij", amp, amp.conj(), resolvent) / Nk
    rho = np.einsum("kib,kjb,kb->ij", amp, amp.conj(), spectral) / Nk
    Jij = g * g * G.real
    gam = 2 * math.pi * g * g * rho.real
    Jij = 0.5 * (Jij + Jij.T)
    gam = 0.5 * (gam + gam.T)
    disp = R[:, None, :] - R[None, :, :]
    return CouplingMatrix(tuple(pos), disp, Jij, gam)
