"""Band structures, densities of states and band metrics."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BracketError, NumericalError
from .geometry import LatticeKind, MoireCell
from .model import BlochHamiltonian, HoppingModel

TOUCH_TOL = 1e-6
_CHUNK_ELEMENTS = 1 << 21


def symmetry_points(kind: LatticeKind) -> Dict[str, Tuple[float, float]]:
    """High-symmetry points in fractional reciprocal coordinates."""
    if kind is LatticeKind.SQUARE:
        return {"G": (0.0, 0.0), "X": (0.5, 0.0), "M": (0.5, 0.5)}
    return {"G": (0.0, 0.0), "M": (0.5, 0.0), "K": (2 / 3, 1 / 3)}


@dataclass(frozen=True)
class KPath:
    waypoints: Tuple[Tuple[str, Tuple[float, float]], ...]
    samples_per_segment: int = 50

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a path needs at least two waypoints")
        if self.samples_per_segment < 1:
            raise ValueError("samples_per_segment must be >= 1")

    @classmethod
    def default(cls, kind: LatticeKind, samples_per_segment: int = 50) -> "KPath":
        p = symmetry_points(kind)
        order = ("G", "X", "M", "G") if kind is LatticeKind.SQUARE else ("G", "M", "K", "G")
        return cls(tuple((lab, p[lab]) for lab in order), samples_per_segment)

    def sample(self, cell: MoireCell):
        """Return (s, k_cartesian, tick positions)."""
        corners = np.array([cell.k_cartesian(np.array(f)) for _, f in self.waypoints])
        ks = [corners[:1]]
        for a, b in zip(corners[:-1], corners[1:]):
            t = np.arange(1, self.samples_per_segment + 1)[:, None] / self.samples_per_segment
            ks.append(a + t * (b - a))
        k = np.vstack(ks)
        steps = np.linalg.norm(np.diff(k, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(steps)])
        ticks = s[:: self.samples_per_segment]
        return s, k, ticks


@dataclass(frozen=True, eq=False)
class BandStructure:
    s: np.ndarray
    k: np.ndarray
    omega: np.ndarray  # (sample, band), units of J
    labels: Tuple[str, ...] = ()
    ticks: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_bands(self) -> int:
        return self.omega.shape[1]

    def to_csv(self, path) -> None:
        nb = self.n_bands
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "kx", "ky"] + [f"band_{j + 1}" for j in range(nb)])
            for s, k, row in zip(self.s, self.k, self.omega):
                w.writerow([f"{s:.9g}", f"{k[0]:.9g}", f"{k[1]:.9g}"] + [f"{x:.9g}" for x in row])


def _workers(threads: Optional[int]) -> int:
    return max(1, threads if threads else (os.cpu_count() or 1))


def eigenvalues(ham: BlochHamiltonian, ks: np.ndarray, threads: Optional[int] = None) -> np.ndarray:
    """Sorted eigenvalues for every row of ``ks``; chunks run in a thread pool."""
    ks = np.asarray(ks, dtype=float).reshape(-1, 2)
    n = ham.size
    step = max(1, _CHUNK_ELEMENTS // (n * n))
    chunks = [ks[i:i + step] for i in range(0, len(ks), step)]

    def work(chunk):
        try:
            return ham.eigvalsh(chunk)
        except NumericalError as exc:
            raise NumericalError(f"{exc} near k = {chunk[0].tolist()}") from exc

    nw = min(_workers(threads), len(chunks))
    if nw <= 1:
        parts = [work(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(work, chunks))
    return np.concatenate(parts) if parts else np.zeros((0, n))


def bands(cell: MoireCell, model: HoppingModel, path: Optional[KPath] = None, threads: Optional[int] = None) -> BandStructure:
    path = path or KPath.default(cell.kind)
    s, k, ticks = path.sample(cell)
    ham = BlochHamiltonian.from_model(cell, model)
    omega = eigenvalues(ham, k, threads) / model.energy_scale
    return BandStructure(s, k, omega, tuple(lab for lab, _ in path.waypoints), ticks)


def k_grid(cell: MoireCell, N: int, offset: float = 0.0) -> np.ndarray:
    """Uniform N x N grid of the Moire zone, Cartesian, row-major in (i1, i2)."""
    f = (np.arange(N) + offset) / N
    f1, f2 = np.meshgrid(f, f, indexing="ij")
    frac = np.stack([f1.ravel(), f2.ravel()], axis=1)
    return frac @ cell.B.T


def grid_bands(cell: MoireCell, model: HoppingModel, N: int, offset: float = 0.0, threads: Optional[int] = None) -> np.ndarray:
    """Eigenvalues on the grid, shape (N, N, N_M), units of J."""
    if N < 1:
        raise ValueError("N must be positive")
    ham = BlochHamiltonian.from_model(cell, model)
    w = eigenvalues(ham, k_grid(cell, N, offset), threads) / model.energy_scale
    return w.reshape(N, N, cell.n_sites)


@dataclass(frozen=True, eq=False)
class DOSResult:
    N: int
    bin_width: float
    bin_centers: np.ndarray
    counts: np.ndarray
    normalized_density: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def integral(self) -> float:
        return float(np.trapezoid(self.normalized_density, self.bin_centers))

    def peaks(self) -> np.ndarray:
        """Bin centres of strict local maxima of the counts."""
        c = self.counts
        idx = [i for i in range(1, len(c) - 1) if c[i] > c[i - 1] and c[i] >= c[i + 1] and c[i] > 0]
        return self.bin_centers[idx]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega_over_J", "count", "density"])
            for x, c, d in zip(self.bin_centers, self.counts, self.normalized_density):
                w.writerow([f"{x:.9g}", int(c), f"{d:.9g}"])


def histogram(omega: np.ndarray, N: int) -> DOSResult:
    """Bin eigenvalues (units of J) with width 2pi/N, one bin centred on 0.

    An empty bin is padded at each end so the trapezoidal integral of the
    density equals its Riemann sum.
    """
    w = np.asarray(omega, dtype=float).ravel()
    width = 2 * np.pi / N
    idx = np.floor(w / width + 0.5).astype(np.int64)
    lo, hi = int(idx.min()) - 1, int(idx.max()) + 1
    counts = np.bincount(idx - lo, minlength=hi - lo + 1).astype(np.int64)
    centers = np.arange(lo, hi + 1) * width
    density = counts / (counts.sum() * width)
    return DOSResult(N, width, centers, counts, density)


def dos(cell: MoireCell, model: HoppingModel, N: int, offset: float = 0.0, threads: Optional[int] = None) -> DOSResult:
    if N < 16:
        raise ValueError(f"DOS grid needs N >= 16, got {N}")
    return histogram(grid_bands(cell, model, N, offset, threads), N)


@dataclass(frozen=True)
class Touching:
    omega: float
    label: str
    multiplicity: int


@dataclass(frozen=True, eq=False)
class BandMetrics:
    bandwidths: np.ndarray
    gaps: np.ndarray
    isolated_top: bool
    top_group: Tuple[int, ...]
    top_group_width: float
    touchings: Tuple[Touching, ...]

    @property
    def top_gap(self) -> float:
        return float(self.gaps[-1]) if len(self.gaps) else float("nan")

    def touching(self, label: str, multiplicity: int) -> List[Touching]:
        return [t for t in self.touchings if t.label == label and t.multiplicity == multiplicity]

    def to_dict(self) -> dict:
        return {
            "bandwidths": self.bandwidths.tolist(),
            "gaps": self.gaps.tolist(),
            "isolated_top": self.isolated_top,
            "top_gap": self.top_gap,
            "top_group": list(self.top_group),
            "top_group_width": self.top_group_width,
            "touchings": [{"omega": t.omega, "label": t.label, "multiplicity": t.multiplicity} for t in self.touchings],
        }


def find_touchings(eigs: Sequence[float], label: str, tol: float = TOUCH_TOL) -> List[Touching]:
    e = np.sort(np.asarray(eigs, dtype=float))
    out, start = [], 0
    for i in range(1, len(e) + 1):
        if i == len(e) or e[i] - e[i - 1] > tol:
            if i - start >= 2:
                out.append(Touching(float(e[start:i].mean()), label, i - start))
            start = i
    return out


def metrics_from_grid(omega: np.ndarray, symmetry: Optional[Dict[str, np.ndarray]] = None) -> BandMetrics:
    """Metrics from eigenvalues of shape (..., n_bands)."""
    w = np.asarray(omega).reshape(-1, omega.shape[-1])
    top, bottom = w.max(axis=0), w.min(axis=0)
    widths = top - bottom
    gaps = bottom[1:] - top[:-1]
    nb = w.shape[1]
    start = 0
    for j in range(nb - 1, 0, -1):
        if gaps[j - 1] > 0:
            start = j
            break
    group = tuple(range(start, nb))
    touch: List[Touching] = []
    for label, eigs in (symmetry or {}).items():
        touch.extend(find_touchings(eigs, label))
    return BandMetrics(
        bandwidths=widths,
        gaps=gaps,
        isolated_top=bool(nb > 1 and gaps[-1] > 0),
        top_group=group,
        top_group_width=float(top[-1] - bottom[start]),
        touchings=tuple(touch),
    )


def band_metrics(cell: MoireCell, model: HoppingModel, N: int = 64, threads: Optional[int] = None) -> BandMetrics:
    """Metrics on an N x N grid (Gamma included); touchings at the symmetry points."""
    if N < 2:
        raise ValueError("N must be >= 2")
    omega = grid_bands(cell, model, N, 0.0, threads)
    ham = BlochHamiltonian.from_model(cell, model)
    sym = {}
    for label, f in symmetry_points(cell.kind).items():
        sym[label] = ham.eigvalsh(cell.k_cartesian(np.array(f))[None, :])[0] / model.energy_scale
    return metrics_from_grid(omega, sym)


def top_gap(cell: MoireCell, model: HoppingModel, N: int = 128, threads: Optional[int] = None) -> float:
    w = grid_bands(cell, model, N, 0.0, threads)
    return float(w[..., -1].min() - w[..., -2].max())


def critical_ratio(
    cell: MoireCell,
    lo: float = 0.0,
    hi: float = 4.0,
    tol: float = 0.01,
    N: int = 128,
    model: Optional[HoppingModel] = None,
    threads: Optional[int] = None,
) -> float:
    """Smallest J_perp/J at which the top band detaches, by bisection."""
    if not (hi > lo and tol > 0):
        raise ValueError("need hi > lo and tol > 0")
    base = model or HoppingModel()
    J = base.J if base.J > 0 else 1.0

    def f(ratio):
        return top_gap(cell, replace(base, J=J, J_perp=ratio * J), N, threads)

    flo, fhi = f(lo), f(hi)
    if not (flo <= 0 < fhi):
        raise BracketError(f"top gap does not change sign on [{lo}, {hi}]: {flo:.4g}, {fhi:.4g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
