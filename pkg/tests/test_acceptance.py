"""Acceptance suite: one PASS/FAIL line per criterion, printed and summarized at the end of the run."""
import math
from itertools import product

import numpy as np
import pytest

from twistbilayer.emission import (
    EmitterSpec,
    bound_state,
    evolve,
    fit_decay_rate,
    markov_rate,
    snapshot,
)
from twistbilayer.geometry import (
    build_moire_cell,
    commensurate_angle,
    monolayer,
    rotation,
    tile_lattice,
)
from twistbilayer.model import BlochHamiltonian, HoppingModel, bloch_matrix, real_space_hamiltonian
from twistbilayer.optics import IdealScheme, feasibility, recoil_frequency
from twistbilayer.spectrum import band_metrics, critical_ratio, dos

MHZ = 2 * math.pi * 1e6
BATH = HoppingModel(J_perp=4.0)


def square(m, n):
    return build_moire_cell(commensurate_angle("square", m, n))


def first_local_minimum(p):
    for i in range(1, len(p) - 1):
        if p[i] < p[i - 1] and p[i] <= p[i + 1]:
            return i
    return None


@pytest.mark.criterion(1)
def test_c1_angles(verdict):
    sq = commensurate_angle("square", 2, 1).degrees
    hc = commensurate_angle("honeycomb", 2, 1).degrees
    ok = abs(sq - 36.87) <= 0.01 and abs(hc - 21.79) <= 0.01
    assert verdict(ok, f"theta(2,1)={sq:.4f} deg, theta_hc(2,1)={hc:.4f} deg")


@pytest.mark.criterion(2)
def test_c2_cell_census(verdict):
    cell = square(2, 1)
    Tinv = np.linalg.inv(cell.T)
    lat, basis = monolayer(cell.kind)
    found = {0: [], 1: []}
    for layer in found:
        R = rotation(cell.angle.theta if layer else 0.0)
        for i, j in product(range(-6, 7), repeat=2):
            for b in basis:
                r = R @ (lat @ np.array([i, j]) + b)
                f = Tinv @ r
                if np.all(f > -1e-9) and np.all(f < 1 - 1e-9):
                    found[layer].append(r)
    brute_sites = len(found[0]) + len(found[1])
    brute_pairs = sum(np.allclose(a, b, atol=1e-9) for a in found[0] for b in found[1])
    ok = cell.n_sites == brute_sites == 10 and len(cell.coincidences) == brute_pairs == 1
    assert verdict(ok, f"sites={cell.n_sites} (brute {brute_sites}), "
                       f"coincidences={len(cell.coincidences)} (brute {brute_pairs})")


@pytest.mark.criterion(3)
def test_c3_real_space_vs_bloch(verdict):
    cell = square(2, 1)
    dense = np.linalg.eigvalsh(real_space_hamiltonian(tile_lattice(cell, 4), BATH).matrix.toarray())
    f = np.arange(4) / 4
    ks = np.array([a * cell.B1 + b * cell.B2 for a in f for b in f])
    union = np.sort(BlochHamiltonian.from_model(cell, BATH).eigvalsh(ks).ravel())
    dev = np.abs(dense - union).max()
    assert verdict(dev < 1e-9, f"max deviation {dev:.2e} J")


@pytest.mark.criterion(4)
def test_c4_folding(verdict):
    cell = square(2, 1)
    w = np.linalg.eigvalsh(bloch_matrix(cell, HoppingModel(), np.zeros(2)))
    # monolayer energies at every momentum that folds onto the supercell zone centre
    G = np.array([a * cell.B1 + b * cell.B2 for a, b in product(range(-4, 5), repeat=2)])
    folded = np.mod(G + np.pi, 2 * np.pi) - np.pi
    q = folded[np.unique(np.round(folded, 9), axis=0, return_index=True)[1]]
    eps = lambda k: -2 * (np.cos(k[:, 0]) + np.cos(k[:, 1]))
    qb = q @ rotation(cell.angle.theta)
    analytic = np.sort(np.concatenate([eps(q), eps(qb)]))
    expected = np.array([-4.0] * 2 + [1.0] * 8)
    dev = max(np.abs(w - analytic).max(), np.abs(w - expected).max())
    assert verdict(dev < 1e-10, f"Gamma eigenvalues {np.round(w, 10).tolist()}, max deviation {dev:.1e}")


@pytest.mark.criterion(5)
def test_c5_critical_ratio(verdict):
    r = critical_ratio(square(2, 1), 0.0, 4.0, 0.01, N=128)
    assert verdict(abs(r - 1.7) <= 0.15, f"critical J_perp/J = {r:.4f} (target 1.7 +/- 0.15)")


@pytest.mark.criterion(6)
def test_c6_touchings(verdict):
    m = band_metrics(square(2, 1), BATH, 64)
    at_m = [t for t in m.touching("M", 6) if 0.9 <= t.omega <= 1.1]
    at_x = [t for t in m.touching("X", 2) if 2.1 <= t.omega <= 2.3]
    seen = "; ".join(f"{t.label} x{t.multiplicity} at {t.omega:+.4f}" for t in m.touchings if t.multiplicity >= 2)
    assert verdict(bool(at_m and at_x), f"M six-fold in [0.9,1.1]: {bool(at_m)}, "
                                        f"X two-fold in [2.1,2.3]: {bool(at_x)} ({seen})")


@pytest.mark.criterion(7)
def test_c7_flat_band_trend(verdict):
    widths = []
    for m, n in [(2, 1), (3, 2), (4, 3), (5, 4)]:
        met = band_metrics(square(m, n), BATH, 32)
        widths.append(met.bandwidths[-1] if met.isolated_top else math.inf)
    ok = all(math.isfinite(w) for w in widths) and all(a > b for a, b in zip(widths, widths[1:]))
    assert verdict(ok, "top-band widths " + ", ".join(f"{w:.4g}" for w in widths))


@pytest.mark.criterion(8)
def test_c8_dos_split(verdict):
    cell = square(2, 1)
    base = dos(cell, HoppingModel(), 256)
    ok = abs(base.bin_centers[np.argmax(base.counts)]) < 1e-12
    parts = [f"J_perp=0 peak at {base.bin_centers[np.argmax(base.counts)]:+.3f}"]
    for jp in (1.0, 2.0, 4.0):
        d = dos(cell, HoppingModel(J_perp=jp), 256)
        c, w = d.counts, d.bin_centers
        interior = np.nonzero((c[1:-1] > c[:-2]) & (c[1:-1] >= c[2:]))[0] + 1
        lo, hi = sorted(w[interior[np.argsort(c[interior])[-2:]]])
        zero = int(np.argmin(np.abs(w)))
        split = (abs(lo + hi) <= d.bin_width + 1e-12 and min(-lo, hi) >= d.bin_width
                 and c[zero] < c[interior].max())
        ok &= split
        parts.append(f"J_perp={jp:g} peaks at {lo:+.3f}/{hi:+.3f}")
    assert verdict(ok, ", ".join(parts))


@pytest.mark.criterion(9)
def test_c9_markovian_decay(verdict):
    cell = square(2, 1)
    em = EmitterSpec(0.1, 4.8)
    res = evolve(tile_lattice(cell, 64), BATH, em, dt=0.5, tmax=200)
    fitted, r2 = fit_decay_rate(res.times, res.population, lifetimes=2)
    gm = markov_rate(cell, BATH, em, N=128)
    ratio = fitted / gm
    ok = 0.5 <= ratio <= 2.0 and res.norm_drift < 1e-6
    assert verdict(ok, f"fitted {fitted:.4f} (R2 {r2:.4f}) vs golden rule {gm:.4f}, ratio {ratio:.3f}, "
                       f"norm drift {res.norm_drift:.1e}")


@pytest.mark.criterion(10)
def test_c10_revival(verdict):
    em = EmitterSpec(0.1, 5.0)
    res = evolve(tile_lattice(square(5, 4), 16), BATH, em, dt=1.0, tmax=200)
    p = res.population
    i = first_local_minimum(p)
    revival = p[i:].max() if i is not None else 0.0
    control = evolve(tile_lattice(square(2, 1), 64), BATH, em, dt=1.0, tmax=200).population
    ok = i is not None and revival > 0.5 and res.norm_drift < 1e-6
    assert verdict(ok, f"theta(5,4): first minimum {p[i] if i else float('nan'):.3f} at tJ={res.times[i] if i else float('nan'):g}, "
                       f"later max {revival:.3f}; theta(2,1) control has "
                       f"{'no' if first_local_minimum(control) is None else 'a'} local minimum")


@pytest.mark.criterion(11)
def test_c11_bound_state(verdict):
    cell = square(2, 1)
    em = EmitterSpec(0.1, 4.3)
    res = evolve(tile_lattice(cell, 64), BATH, em, dt=0.5, tmax=400)
    late = res.population[res.times >= 200]
    bs = bound_state(tile_lattice(cell, 32), BATH, em)
    ok = late.mean() > 0.1 and np.ptp(late) < 0.1 and bs.xi_r_squared > 0.95 and bs.anisotropy > 1
    assert verdict(ok, f"late average {late.mean():.3f} (peak-to-peak {np.ptp(late):.1e}), "
                       f"bound energy {bs.energy:.4f}, radial R2 {bs.xi_r_squared:.4f}, "
                       f"xi {bs.xi:.3f}, diagonal/axis anisotropy {bs.anisotropy:.3f}")


@pytest.mark.criterion(12)
def test_c12_radiation_pattern(verdict):
    Nc = 64
    res = evolve(tile_lattice(square(2, 1), Nc), BATH, EmitterSpec(0.1, 4.8), dt=0.5, tmax=Nc / 2)
    snap = snapshot(res)
    assert verdict(snap.anisotropy >= 2.0, f"tJ={res.final_time:g}: diagonal/axis = {snap.anisotropy:.3f}")


@pytest.mark.criterion(13)
def test_c13_honeycomb_dirac(verdict):
    cell = build_moire_cell(commensurate_angle("honeycomb", 2, 1))
    d = dos(cell, HoppingModel(), 256)
    sel = np.abs(d.bin_centers) <= 0.1 + 1e-12
    x, y = np.abs(d.bin_centers[sel]), d.normalized_density[sel]
    resid = y - np.polyval(np.polyfit(x, y, 1), x)
    r2 = 1 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))
    n = cell.n_sites // 2
    widths = []
    for jp in (0.0, 2.0, 5.0, 10.0):
        bw = band_metrics(cell, HoppingModel(J_perp=jp), 32).bandwidths
        widths.append(bw[n - 1] + bw[n])
    ok = r2 > 0.95 and all(a > b for a, b in zip(widths, widths[1:]))
    assert verdict(ok, f"linear DOS R2 {r2:.4f} over |w|<=0.1J; Dirac-band widths "
                       + ", ".join(f"{w:.3f}" for w in widths))


@pytest.mark.criterion(14)
def test_c14_feasibility(verdict):
    Delta = 0.2 * MHZ
    s = IdealScheme(0.25 * Delta, 0.25 * Delta, Delta, Delta, 2.0 * MHZ,
                    E_R=recoil_frequency(87.9056, 689e-9))
    rep = feasibility(s)
    vd_khz = rep.V_D / (2 * math.pi) / 1e3
    exact = rep.eps_2ph == pytest.approx((rep.V_D / s.delta) ** 2, rel=1e-12)
    ok = abs(vd_khz - 12.5) < 1e-9 and exact
    assert verdict(ok, f"V_D/2pi = {vd_khz:.6f} kHz, eps_2ph = {rep.eps_2ph:.6e} "
                       f"({'equals' if exact else 'differs from'} (V_D/delta)^2)")
