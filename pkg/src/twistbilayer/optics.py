"""Twisted standing-wave intensities, state-dependent potentials and feasibility.

Frequencies are angular (rad/s, or any consistent angular unit) and hbar = 1,
so energies and frequencies are interchangeable.  Clebsch-Gordan factors are
folded into the Rabi amplitudes.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ShallowTrapError, SingularParameterError

HBAR = 1.054571817e-34
AMU = 1.66053906660e-27

# thresholds used for the feasibility flags
LEAKAGE_MAX = 1e-2
COHERENCE_MAX = 1e-2
PERTURBATIVE_MAX = 0.5


@dataclass(frozen=True)
class IntensityProfile:
    kind: str  # "sigma" or "pi"
    theta: float = 0.0
    k: float = math.pi  # 2 pi / lambda with lambda = 2 d, d = 1

    def __post_init__(self):
        if self.kind not in ("sigma", "pi"):
            raise ValueError(f"profile kind must be 'sigma' or 'pi', got {self.kind!r}")


def intensity(profile: IntensityProfile, R) -> np.ndarray:
    """Dimensionless intensity at ``R`` (array ``(..., 2)``); values in [0, 2]."""
    R = np.asarray(R, dtype=float)
    x, y = R[..., 0], R[..., 1]
    k = profile.k
    if profile.kind == "sigma":
        return np.sin(k * x) ** 2 + np.sin(k * y) ** 2
    s, c = math.sin(profile.theta), math.cos(profile.theta)
    return np.sin(k * (x * s - y * c)) ** 2 + np.sin(k * (x * c + y * s)) ** 2


@dataclass(frozen=True)
class IdealScheme:
    omega_a: float
    omega_b: float
    Delta_a: float
    Delta_b: float
    delta: float
    Gamma_g: float = 0.0
    E_R: Optional[float] = None
    theta: float = 0.0


@dataclass(frozen=True)
class HyperfineScheme:
    omega_a: float
    omega_b: float
    Delta_a: float
    Delta_b: float
    delta_g: float
    E_R: Optional[float] = None


@dataclass(frozen=True)
class FineStructureScheme:
    omega_p: float
    Delta_p: float
    omega_a: float
    omega_b: float
    Delta_a: float
    Delta_b: float
    Gamma_g: float
    delta: Optional[float] = None
    E_R: Optional[float] = None


@dataclass(frozen=True)
class TurnoutScheme:
    lambda1: float
    lambda2: float
    Gamma_e: float
    Delta: float
    omega: float
    lambda_m: Optional[float] = None  # vertical magic-wavelength trap; informational
    E_R: Optional[float] = None
    mass_amu: float = 87.9056


SchemeParams = Union[IdealScheme, HyperfineScheme, FineStructureScheme, TurnoutScheme]


def recoil_frequency(mass_amu: float, wavelength: float) -> float:
    """Recoil energy hbar k^2 / 2m expressed as an angular frequency (rad/s)."""
    k = 2 * math.pi / wavelength
    return HBAR * k * k / (2 * mass_amu * AMU)


def _check_detuning(*values):
    for v in values:
        if v == 0 or not math.isfinite(v):
            raise SingularParameterError("detunings must be finite and nonzero")


def potential_ideal(params: IdealScheme, R) -> Tuple[np.ndarray, np.ndarray]:
    """V_a, V_b of the ideal level scheme at ``R`` (units of ``R``: d)."""
    p = params
    _check_detuning(p.Delta_a, p.Delta_b)
    for om, De in ((p.omega_a, p.Delta_a), (p.omega_b, p.Delta_b)):
        if abs(om / De) > PERTURBATIVE_MAX:
            warnings.warn(f"|Omega/Delta| = {abs(om / De):.3g} is outside the dressed-state regime")
    Ia = intensity(IntensityProfile("sigma"), R)
    Ib = intensity(IntensityProfile("pi", p.theta), R)
    Va = -abs(p.omega_a) ** 2 / p.Delta_a * Ia
    Vb = -abs(p.omega_b) ** 2 / p.Delta_b * Ib
    return Va, Vb


def balance_depths(params: IdealScheme) -> IdealScheme:
    """Rescale ``omega_b`` so both states see the same depth as state a."""
    _check_detuning(params.Delta_a, params.Delta_b)
    VD = abs(params.omega_a) ** 2 / params.Delta_a
    if VD * params.Delta_b < 0:
        raise SingularParameterError("depth balance requires detunings of equal sign")
    return replace(params, omega_b=math.sqrt(VD * params.Delta_b))


def hyperfine_residuals(params: HyperfineScheme) -> Tuple[float, float]:
    p = params
    if p.Delta_a + p.delta_g == 0 or p.Delta_b + p.delta_g == 0:
        raise SingularParameterError("Delta + delta_g vanishes")
    return p.Delta_b / (p.Delta_a + p.delta_g), p.Delta_a / (p.Delta_b + p.delta_g)


def potential_hyperfine(params: HyperfineScheme, R, theta: float):
    """Potentials of the hyperfine scheme with the depths balanced to V_D.

    State a sits in the pi lattice (twisted by ``theta``) and state b in the
    sigma lattice.  Returns ``(V_a, V_b, residual_a, residual_b)``; the
    residuals are the prefactors of the unwanted intensity terms.
    """
    _check_detuning(params.Delta_a, params.Delta_b)
    ra, rb = hyperfine_residuals(params)
    VD = abs(params.omega_a) ** 2 / params.Delta_a
    Ipi = intensity(IntensityProfile("pi", theta), R)
    Isig = intensity(IntensityProfile("sigma"), R)
    Va = -VD * (Ipi + ra * Isig)
    Vb = -VD * (Isig + rb * Ipi)
    return Va, Vb, ra, rb


@dataclass
class FeasibilityReport:
    scheme: str
    V_D: float
    E_R: float
    eps_2ph: float
    Gamma_star: float
    omega_t: Optional[float]
    L0_over_d: Optional[float]
    J_ratio_diag: Optional[float]
    U_estimate: Optional[float] = None
    tilt_angle: Optional[float] = None
    residual_a: Optional[float] = None
    residual_b: Optional[float] = None
    depth_ok: bool = False
    leakage_ok: bool = False
    coherence_ok: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self, hz: bool = True) -> dict:
        d = asdict(self)
        if hz:
            for key in ("V_D", "E_R", "Gamma_star", "omega_t", "U_estimate"):
                if d[key] is not None:
                    d[key + "_hz"] = d[key] / (2 * math.pi)
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def trap_parameters(V_D: float, E_R: float, a_s: Optional[float] = None, Lz: Optional[float] = None):
    """Harmonic-trap quantities of a ``-V_D sin^2`` lattice site (hbar = 1).

    Returns ``(omega_t, L0_over_d, J_ratio_diag, U_estimate)``.  ``a_s`` and
    ``Lz`` are lengths in units of d; ``U_estimate`` is ``None`` unless both
    are given.
    """
    if not V_D > E_R:
        raise ShallowTrapError(f"V_D = {V_D:g} does not exceed E_R = {E_R:g}")
    omega_t = 2 * math.sqrt(V_D * E_R)
    L0 = (E_R / V_D) ** 0.25 / math.pi
    J_ratio = math.exp(-1.0 / (4 * L0 * L0))
    U = None
    if a_s is not None and Lz is not None:
        # hbar/m = 2 E_R / k^2 with k = pi / d
        hbar_over_m = 2 * E_R / math.pi**2
        U = 4 * math.pi * hbar_over_m * a_s * (2 * math.pi) ** -1.5 / (L0 * L0 * Lz)
    return omega_t, L0, J_ratio, U


def feasibility(params: SchemeParams, E_R: Optional[float] = None, a_s=None, Lz=None) -> FeasibilityReport:
    """Depth, leakage, decoherence and trap estimates for one level scheme.

    ``E_R`` defaults to the scheme's own ``E_R``; turnout schemes compute it
    from ``lambda1`` and the atomic mass when neither is given.  Violated
    preconditions clear the flags instead of raising.
    """
    notes = []
    tilt = res_a = res_b = None
    if isinstance(params, IdealScheme):
        p = params
        _check_detuning(p.Delta_a, p.Delta_b)
        VD = abs(p.omega_a) ** 2 / p.Delta_a
        VDb = abs(p.omega_b) ** 2 / p.Delta_b
        if not math.isclose(VD, VDb, rel_tol=1e-9):
            notes.append(f"unbalanced depths: V_a = {VD:g}, V_b = {VDb:g}")
        delta = p.delta
        Delta = min(abs(p.Delta_a), abs(p.Delta_b))
        gamma_star = abs(VD) / Delta * p.Gamma_g
        name = "ideal"
    elif isinstance(params, HyperfineScheme):
        p = params
        _check_detuning(p.Delta_a, p.Delta_b)
        VD = abs(p.omega_a) ** 2 / p.Delta_a
        res_a, res_b = hyperfine_residuals(p)
        delta = p.Delta_a - p.Delta_b
        gamma_star = 0.0  # dressing state is the stable ground state
        name = "hyperfine"
    elif isinstance(params, FineStructureScheme):
        p = params
        _check_detuning(p.Delta_p, p.Delta_a, p.Delta_b)
        frac = abs(p.omega_p / p.Delta_p) ** 2
        VD = frac * abs(p.omega_a) ** 2 / p.Delta_a
        delta = p.delta if p.delta is not None else p.Delta_a - p.Delta_b
        gamma_star = frac * p.Gamma_g
        name = "fine_structure"
    elif isinstance(params, TurnoutScheme):
        p = params
        _check_detuning(p.Delta)
        if not (0 < p.lambda2 < p.lambda1):
            raise ValueError("turnout scheme requires 0 < lambda2 < lambda1")
        VD = abs(p.omega) ** 2 / p.Delta
        tilt = math.acos(p.lambda2 / p.lambda1)
        delta = None  # independent wavelengths: no shared two-photon path
        gamma_star = abs(p.omega / p.Delta) ** 2 * p.Gamma_e
        if E_R is None and p.E_R is None:
            E_R = recoil_frequency(p.mass_amu, p.lambda1)
        name = "turnout"
    else:
        raise TypeError(f"unknown scheme {type(params).__name__}")

    if E_R is None:
        E_R = params.E_R
    if E_R is None:
        raise ValueError("recoil energy E_R is required for this scheme")

    if delta is None:
        eps = 0.0
    elif delta == 0:
        eps = math.inf
        notes.append("a/b splitting vanishes: two-photon transition is resonant")
    else:
        eps = (VD / delta) ** 2

    depth_ok = abs(VD) > E_R
    omega_t = L0 = Jr = U = None
    if depth_ok:
        omega_t, L0, Jr, U = trap_parameters(abs(VD), E_R, a_s, Lz)
    else:
        notes.append("trap shallower than the recoil energy")

    leakage_ok = eps < LEAKAGE_MAX
    if res_a is not None:
        leakage_ok = leakage_ok and max(abs(res_a), abs(res_b)) < PERTURBATIVE_MAX
    coherence_ok = gamma_star < COHERENCE_MAX * E_R

    return FeasibilityReport(
        scheme=name,
        V_D=VD,
        E_R=E_R,
        eps_2ph=eps,
        Gamma_star=gamma_star,
        omega_t=omega_t,
        L0_over_d=L0,
        J_ratio_diag=Jr,
        U_estimate=U,
        tilt_angle=tilt,
        residual_a=res_a,
        residual_b=res_b,
        depth_ok=depth_ok,
        leakage_ok=leakage_ok,
        coherence_ok=coherence_ok,
        notes=notes,
    )


def potential_map(params, n: int = 64, extent: float = 4.0, theta: Optional[float] = None):
    """Grid of (x, y, V_a, V_b) over ``[0, extent]^2`` (units of d, V_D)."""
    xs = np.linspace(0.0, extent, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    R = np.stack([X, Y], axis=-1)
    if isinstance(params, HyperfineScheme):
        Va, Vb, _, _ = potential_hyperfine(params, R, theta or 0.0)
        VD = abs(params.omega_a) ** 2 / params.Delta_a
        return X, Y, Va / VD, Vb / VD
    if theta is not None:
        params = replace(params, theta=theta)
    Va, Vb = potential_ideal(params, R)
    VD = abs(params.omega_a) ** 2 / params.Delta_a
    return X, Y, Va / VD, Vb / VD


def write_potential_csv(path, X, Y, Va, Vb) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "V_a", "V_b"])
        for row in zip(X.ravel(), Y.ravel(), Va.ravel(), Vb.ravel()):
            w.writerow([f"{v:.9g}" for v in row])
