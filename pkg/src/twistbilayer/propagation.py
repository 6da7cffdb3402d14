"""Chebyshev propagator for ``exp(-i H t)`` acting on a vector.

For a Hermitian ``H`` with spectrum inside ``[c - a, c + a]``::

    exp(-i H t) = exp(-i c t) * sum_k (2 - delta_k0) (-i)^k J_k(a t) T_k((H - c) / a)

The Bessel coefficients decay super-exponentially once ``k > a t``, so the
series is truncated where they drop below ``tol``.  The error is uniform over
the spectrum, so norm and energy are conserved to roughly ``tol`` per step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import jv

from .errors import NumericalError


def spectral_bounds(H) -> Tuple[float, float]:
    """Gershgorin interval containing the spectrum of ``H``."""
    H = sp.csr_matrix(H)
    diag = H.diagonal().real
    radius = np.asarray(abs(H).sum(axis=1)).ravel() - np.abs(diag)
    return float((diag - radius).min()), float((diag + radius).max())


def chebyshev_coefficients(a: float, c: float, dt: float, tol: float = 1e-15, max_terms: int = 100000) -> np.ndarray:
    x = a * dt
    n = int(np.ceil(x)) + 20
    while True:
        k = np.arange(n)
        b = jv(k, x)
        tail = np.abs(b[-8:])
        if tail.max() < tol or n >= max_terms:
            break
        n = min(2 * n, max_terms)
    if np.abs(b[-8:]).max() >= tol:
        raise NumericalError("Chebyshev series did not converge; reduce dt")
    keep = np.nonzero(np.abs(b) >= tol)[0]
    n = int(keep.max()) + 1 if len(keep) else 1
    coef = (2.0 * (-1j) ** np.arange(n)) * b[:n]
    coef[0] /= 2
    return coef * np.exp(-1j * c * dt)


@dataclass
class ChebyshevPropagator:
    """Fixed-step propagator ``psi(t + dt) = exp(-i H dt) psi(t)``."""

    H: sp.csr_matrix
    dt: float
    tol: float = 1e-15

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.H = sp.csr_matrix(self.H)
        lo, hi = spectral_bounds(self.H)
        pad = 1e-8 * max(1.0, hi - lo)
        lo, hi = lo - pad, hi + pad
        self.center = 0.5 * (hi + lo)
        self.half_width = max(0.5 * (hi - lo), 1e-12)
        self.coef = chebyshev_coefficients(self.half_width, self.center, self.dt, self.tol)
        n = self.H.shape[0]
        self._Hs = ((self.H - self.center * sp.identity(n, format="csr")) / self.half_width).tocsr()

    @property
    def n_terms(self) -> int:
        return len(self.coef)

    def step(self, psi: np.ndarray) -> np.ndarray:
        Hs, coef = self._Hs, self.coef
        t_prev = psi
        out = coef[0] * t_prev
        if len(coef) == 1:
            return out
        t_cur = Hs @ psi
        out = out + coef[1] * t_cur
        for ck in coef[2:]:
            t_prev, t_cur = t_cur, 2.0 * (Hs @ t_cur) - t_prev
            out += ck * t_cur
        return out

    def run(self, psi0: np.ndarray, n_steps: int) -> Iterator[np.ndarray]:
        """Yield the state after each of ``n_steps`` steps."""
        psi = np.asarray(psi0, dtype=complex)
        for _ in range(n_steps):
            psi = self.step(psi)
            yield psi


def propagate(H, psi0: np.ndarray, t: float, dt: float = 1.0, tol: float = 1e-15) -> np.ndarray:
    """``exp(-i H t) psi0`` using ``ceil(t/dt)`` equal Chebyshev steps."""
    if t == 0:
        return np.asarray(psi0, dtype=complex).copy()
    sign = 1.0 if t > 0 else -1.0
    n = max(1, int(np.ceil(abs(t) / dt)))
    prop = ChebyshevPropagator(sign * sp.csr_matrix(H), abs(t) / n, tol)
    psi = np.asarray(psi0, dtype=complex)
    for psi in prop.run(psi, n):
        pass
    return psi
