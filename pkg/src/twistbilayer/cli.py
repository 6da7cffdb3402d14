"""Command-line interface.

Units: J = hbar = d = 1 for every subcommand except ``feasibility`` and
``potential``, whose frequencies are given in MHz/2pi (recoil in kHz/2pi).

Exit codes: 0 success, 2 usage, 3 invalid parameters, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .emission import (
    EmitterSpec,
    bound_state,
    effective_couplings,
    evolve,
    fit_decay_rate,
    markov_rate,
    snapshot,
)
from .errors import TwistBilayerError
from .geometry import LAYER_NAMES, build_moire_cell, closed_form_site_count, commensurate_angle, enumerate_angles, tile_lattice
from .model import HoppingModel, neighbor_table
from .optics import (
    FineStructureScheme,
    HyperfineScheme,
    IdealScheme,
    TurnoutScheme,
    feasibility,
    potential_map,
    recoil_frequency,
    write_potential_csv,
)
from .spectrum import KPath, band_metrics, bands, critical_ratio, dos

EXIT_OK, EXIT_USAGE, EXIT_PARAM, EXIT_RUNTIME = 0, 2, 3, 4
MHZ = 2 * math.pi * 1e6
KHZ = 2 * math.pi * 1e3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


@dataclass
class Job:
    """A validated subcommand ready to run; ``work`` returns result metadata."""

    command: str
    params: Dict[str, object]
    work: Callable[["Outputs"], Dict[str, object]]


@dataclass
class Outputs:
    directory: str
    files: List[str] = field(default_factory=list)

    def path(self, name: str) -> str:
        p = os.path.join(self.directory, name)
        self.files.append(p)
        return p

    def discard(self) -> None:
        for p in self.files:
            if os.path.exists(p):
                os.remove(p)


# ---------------------------------------------------------------- parsing


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--out-dir", default=d if suppress else ".", help="output directory")
    parser.add_argument("--threads", type=int, default=d, help="worker threads for k-grids")
    parser.add_argument("--config", default=d, help="file of 'key = value' lines")
    parser.add_argument("--dry-run", action="store_true", default=d if suppress else False, help="validate and print parameters only")


def _lattice_flags(p: argparse.ArgumentParser, jperp: float = 0.0) -> None:
    p.add_argument("--lattice", choices=["square", "honeycomb"], default="square")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--j", type=float, default=1.0, help="intralayer hopping J")
    p.add_argument("--jperp", type=float, default=jperp, help="interlayer hopping in units of J")
    p.add_argument("--range-mode", choices=["minimal", "gaussian"], default="minimal")
    p.add_argument("--l0", type=float, default=0.179, help="Wannier width L0/d (gaussian mode)")
    p.add_argument("--cutoff", type=float, default=1.5, help="hopping cutoff in d (gaussian mode)")


def _emitter_flags(p: argparse.ArgumentParser, delta: float, cells: int) -> None:
    p.add_argument("--g", type=float, default=0.1, help="emitter coupling in units of J")
    p.add_argument("--delta", type=float, default=delta, help="emitter detuning in units of J")
    p.add_argument("--site", type=int, default=None, help="layer-a site in the cell (default: coincidence site)")
    p.add_argument("--cells", type=int, default=cells, help="supercells per side of the bath")


def _optics_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheme", choices=["ideal", "hyperfine", "fine-structure", "turnout"], default="ideal")
    p.add_argument("--omega", type=float, default=0.05, help="Rabi frequency, MHz/2pi")
    p.add_argument("--omega-b", type=float, default=None, help="state-b Rabi frequency (default: --omega)")
    p.add_argument("--delta-detuning", type=float, default=0.2, help="detuning Delta, MHz/2pi")
    p.add_argument("--delta-detuning-b", type=float, default=None, help="state-b detuning (default: same)")
    p.add_argument("--splitting", type=float, default=2.0, help="a/b splitting delta, MHz/2pi")
    p.add_argument("--gamma-g", type=float, default=0.0, help="dressing-state linewidth, MHz/2pi")
    p.add_argument("--omega-p", type=float, default=None, help="fine-structure pump Rabi frequency, MHz/2pi")
    p.add_argument("--delta-p", type=float, default=None, help="fine-structure pump detuning, MHz/2pi")
    p.add_argument("--delta-g", type=float, default=None, help="hyperfine ground splitting, MHz/2pi")
    p.add_argument("--lambda1", type=float, default=689.0, help="turnout lattice wavelength, nm")
    p.add_argument("--lambda2", type=float, default=627.0, help="turnout second wavelength, nm")
    p.add_argument("--lambda-m", type=float, default=None, help="vertical magic wavelength, nm")
    p.add_argument("--gamma-e", type=float, default=0.0, help="turnout excited-state linewidth, MHz/2pi")
    p.add_argument("--recoil", type=float, default=None, help="recoil energy, kHz/2pi (default from mass and wavelength)")
    p.add_argument("--mass-amu", type=float, default=87.9056)
    p.add_argument("--wavelength", type=float, default=689.0, help="lattice wavelength for the recoil, nm")
    p.add_argument("--a-s", type=float, default=None, help="scattering length in units of d")
    p.add_argument("--lz", type=float, default=None, help="vertical Wannier length in units of d")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twistbilayer", description="Twisted bilayer optical-lattice toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("angles", "list commensurate angles")
    p.add_argument("--lattice", choices=["square", "honeycomb"], default="square")
    p.add_argument("--max-index", type=int, default=5)

    p = add("cell", "write the Moire cell sites and bond table")
    _lattice_flags(p)

    p = add("potential", "state-dependent potential map")
    _optics_flags(p)
    p.add_argument("--lattice", choices=["square", "honeycomb"], default="square")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--extent", type=float, default=4.0, help="map side length in d")

    p = add("feasibility", "feasibility report of a level scheme (MHz/2pi units)")
    _optics_flags(p)

    p = add("bands", "band structure along the symmetry path")
    _lattice_flags(p, jperp=4.0)
    p.add_argument("--kpoints", type=int, default=100, help="samples per path segment")
    p.add_argument("--out", default="bands.csv")

    p = add("dos", "density of states")
    _lattice_flags(p)
    p.add_argument("--nk", type=int, default=256)
    p.add_argument("--out", default="dos.csv")

    p = add("metrics", "bandwidths, gaps and touchings")
    _lattice_flags(p, jperp=4.0)
    p.add_argument("--nk", type=int, default=64)

    p = add("critical", "critical J_perp/J for an isolated top band")
    _lattice_flags(p)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=4.0)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--nk", type=int, default=128)

    p = add("emit", "emitter dynamics in the bilayer bath")
    _lattice_flags(p, jperp=4.0)
    _emitter_flags(p, delta=4.8, cells=64)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--tmax", type=float, default=200.0)
    p.add_argument("--nk", type=int, default=128, help="k-grid for the golden-rule rate")

    p = add("bound", "emitter-bath bound state")
    _lattice_flags(p, jperp=4.0)
    _emitter_flags(p, delta=4.3, cells=32)

    p = add("couplings", "bath-mediated emitter couplings")
    _lattice_flags(p, jperp=4.0)
    p.add_argument("--g", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=4.3)
    p.add_argument("--positions", default=None, help="'c1,c2,site;...' (default: steps along the cell diagonal)")
    p.add_argument("--count", type=int, default=5, help="number of default diagonal positions")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--nk", type=int, default=64)
    return parser


def read_config(path: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("_", "-")] = value
    return out


def _config_argv(sub: argparse.ArgumentParser, config: Dict[str, str]) -> List[str]:
    actions = {a.option_strings[0]: a for a in sub._actions if a.option_strings}
    argv: List[str] = []
    for key, value in config.items():
        flag = "--" + key
        if flag in ("--config",):
            continue
        action = actions.get(flag)
        if action is None:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(flag)
        else:
            argv += [flag, value]
    return argv


def parse(argv: List[str]) -> argparse.Namespace:
    """Parse arguments, merging a config file underneath explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        idx = argv.index(args.command)
        merged = argv[: idx + 1] + _config_argv(sub, config) + argv[idx + 1:]
        args = parser.parse_args(merged)
    return args


# ---------------------------------------------------------------- jobs


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _cell(args):
    angle = commensurate_angle(args.lattice, args.m, args.n)
    return build_moire_cell(angle)


def _model(args) -> HoppingModel:
    _require(args.j > 0, "--j must be positive")
    return HoppingModel(
        J=args.j, J_perp=args.jperp * args.j, range_mode=args.range_mode,
        L0_over_d=args.l0, cutoff_over_d=args.cutoff,
    )


def _scheme(args):
    ob = args.omega if args.omega_b is None else args.omega_b
    Db = args.delta_detuning if args.delta_detuning_b is None else args.delta_detuning_b
    if args.recoil is not None:
        E_R = args.recoil * KHZ
    else:
        E_R = recoil_frequency(args.mass_amu, args.wavelength * 1e-9)
    if args.scheme == "ideal":
        return IdealScheme(args.omega * MHZ, ob * MHZ, args.delta_detuning * MHZ, Db * MHZ,
                           args.splitting * MHZ, args.gamma_g * MHZ, E_R)
    if args.scheme == "hyperfine":
        _require(args.delta_g is not None, "--delta-g is required for the hyperfine scheme")
        return HyperfineScheme(args.omega * MHZ, ob * MHZ, args.delta_detuning * MHZ, Db * MHZ,
                               args.delta_g * MHZ, E_R)
    if args.scheme == "fine-structure":
        _require(args.omega_p is not None and args.delta_p is not None,
                 "--omega-p and --delta-p are required for the fine-structure scheme")
        return FineStructureScheme(args.omega_p * MHZ, args.delta_p * MHZ, args.omega * MHZ, ob * MHZ,
                                   args.delta_detuning * MHZ, Db * MHZ, args.gamma_g * MHZ,
                                   args.splitting * MHZ, E_R)
    recoil = None if args.recoil is None else E_R
    return TurnoutScheme(args.lambda1 * 1e-9, args.lambda2 * 1e-9, args.gamma_e * MHZ,
                         args.delta_detuning * MHZ, args.omega * MHZ,
                         None if args.lambda_m is None else args.lambda_m * 1e-9, recoil, args.mass_amu)


def _prepare(args) -> Job:
    cmd = args.command
    threads = args.threads
    _require(threads is None or threads >= 1, "--threads must be >= 1")

    if cmd == "angles":
        _require(args.max_index >= 1, "--max-index must be >= 1")
        angles = enumerate_angles(args.lattice, args.max_index)

        def work(out):
            with open(out.path("angles.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["m", "n", "theta_deg", "n_sites"])
                for a in angles:
                    w.writerow([a.m, a.n, f"{a.degrees:.9g}", closed_form_site_count(a.kind, a.m, a.n)])
            return {"count": len(angles)}
        return Job(cmd, {}, work)

    if cmd == "cell":
        cell, model = _cell(args), _model(args)

        def work(out):
            cell.to_csv(out.path("cell.csv"))
            table = neighbor_table(cell, model)
            table.to_csv(out.path("bonds.csv"), model.J)
            return {"n_sites": cell.n_sites, "coincidences": len(cell.coincidences), "bonds": len(table),
                    "theta_deg": cell.angle.degrees}
        return Job(cmd, {}, work)

    if cmd in ("potential", "feasibility"):
        scheme = _scheme(args)
        a_s, lz = args.a_s, args.lz
        if cmd == "feasibility":
            def work(out):
                report = feasibility(scheme, a_s=a_s, Lz=lz)
                report.to_json(out.path("feasibility.json"))
                d = report.to_dict()
                return {k: d[k] for k in ("V_D_hz", "eps_2ph", "Gamma_star_hz", "depth_ok", "leakage_ok", "coherence_ok") if k in d}
            return Job(cmd, {}, work)
        _require(args.scheme in ("ideal", "hyperfine"), "potential maps support the ideal and hyperfine schemes")
        _require(args.grid >= 2 and args.extent > 0, "--grid >= 2 and --extent > 0 required")
        theta = commensurate_angle(args.lattice, args.m, args.n).theta

        def work(out):
            X, Y, Va, Vb = potential_map(scheme, args.grid, args.extent, theta)
            write_potential_csv(out.path("potential.csv"), X, Y, Va, Vb)
            return {"theta_deg": math.degrees(theta)}
        return Job(cmd, {}, work)

    cell, model = _cell(args), _model(args)

    if cmd == "bands":
        _require(args.kpoints >= 1, "--kpoints must be >= 1")
        path = KPath.default(cell.kind, args.kpoints)

        def work(out):
            bs = bands(cell, model, path, threads)
            bs.to_csv(out.path(args.out))
            return {"samples": len(bs.s), "bands": bs.n_bands}
        return Job(cmd, {}, work)

    if cmd == "dos":
        _require(args.nk >= 16, "--nk must be >= 16")

        def work(out):
            d = dos(cell, model, args.nk, threads=threads)
            d.to_csv(out.path(args.out))
            return {"total_count": d.total, "bin_width": d.bin_width}
        return Job(cmd, {}, work)

    if cmd == "metrics":
        _require(args.nk >= 2, "--nk must be >= 2")

        def work(out):
            m = band_metrics(cell, model, args.nk, threads)
            with open(out.path("metrics.json"), "w") as fh:
                json.dump(m.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            return {"isolated_top": m.isolated_top, "top_gap": m.top_gap}
        return Job(cmd, {}, work)

    if cmd == "critical":
        _require(args.hi > args.lo and args.tol > 0, "need --hi > --lo and --tol > 0")
        _require(args.nk >= 2, "--nk must be >= 2")

        def work(out):
            r = critical_ratio(cell, args.lo, args.hi, args.tol, args.nk, model, threads)
            return {"critical_ratio": r}
        return Job(cmd, {}, work)

    if cmd in ("emit", "bound"):
        _require(args.cells >= 1, "--cells must be >= 1")
        emitter = EmitterSpec(args.g * model.J, args.delta * model.J, args.site)
        emitter.site_in(cell)
        lattice = tile_lattice(cell, args.cells)
        if cmd == "emit":
            _require(args.dt > 0 and args.tmax > 0, "--dt and --tmax must be positive")

            def work(out):
                res = evolve(lattice, model, emitter, args.dt, args.tmax)
                res.to_csv(out.path("emit.csv"))
                snap = snapshot(res)
                snap.to_csv(out.path("snapshot.csv"))
                meta = {"norm_drift": res.norm_drift, "final_population": float(res.population[-1]),
                        "snapshot_anisotropy": snap.anisotropy,
                        "markov_rate": markov_rate(cell, model, emitter, N=args.nk)}
                try:
                    meta["fitted_rate"] = fit_decay_rate(res.times, res.population)[0]
                except TwistBilayerError:
                    meta["fitted_rate"] = None
                return meta
            return Job(cmd, {}, work)

        def work(out):
            bs = bound_state(lattice, model, emitter)
            disp = lattice.displacements(emitter.lattice_index(lattice))
            with open(out.path("bound.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y", "layer", "prob"])
                for (x, y), lay, a in zip(disp, lattice.layers, bs.field):
                    w.writerow([f"{x:.9g}", f"{y:.9g}", LAYER_NAMES[int(lay)], f"{abs(a) ** 2:.9g}"])
            return {"energy": bs.energy, "emitter_weight": bs.emitter_weight, "xi": bs.xi,
                    "xi_r_squared": bs.xi_r_squared, "anisotropy": bs.anisotropy}
        return Job(cmd, {}, work)

    if cmd == "couplings":
        _require(args.nk >= 2, "--nk must be >= 2")
        if args.positions:
            try:
                positions = [tuple(int(v) for v in item.split(",")) for item in args.positions.split(";") if item.strip()]
            except ValueError as exc:
                raise ValueError(f"bad --positions: {exc}") from exc
            _require(all(len(p) == 3 for p in positions), "each position needs c1,c2,site")
        else:
            _require(args.count >= 1, "--count must be >= 1")
            s = EmitterSpec(args.g, args.delta).site_in(cell)
            positions = [(i, i, s) for i in range(args.count)]

        def work(out):
            cm = effective_couplings(cell, model, args.g * model.J, args.delta * model.J, positions,
                                     None if args.eta is None else args.eta * model.J, args.nk)
            cm.to_csv(out.path("couplings.csv"), model.J)
            return {"n_positions": len(positions)}
        return Job(cmd, {}, work)

    raise UsageError(f"unknown command {cmd}")


# ---------------------------------------------------------------- running


def _write_manifest_atomic(directory: str, manifest: dict) -> str:
    target = os.path.join(directory, MANIFEST)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return target


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _params(args) -> Dict[str, object]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("dry_run",)}


def run(args, job: Optional[Job] = None) -> dict:
    """Execute a parsed invocation and return its manifest."""
    job = job or _prepare(args)
    params = _params(args)
    if args.dry_run:
        return {"subcommand": job.command, "parameters": params, "dry_run": True}
    os.makedirs(args.out_dir, exist_ok=True)
    out = Outputs(args.out_dir)
    start = time.perf_counter()
    try:
        results = job.work(out)
    except BaseException:
        out.discard()
        raise
    manifest = {
        "subcommand": job.command,
        "parameters": params,
        "files": [os.path.basename(f) for f in out.files],
        "results": results,
        "version": __version__,
        "duration_s": time.perf_counter() - start,
    }
    _write_manifest_atomic(args.out_dir, manifest)
    return manifest


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"usage error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        job = _prepare(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TwistBilayerError) as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return EXIT_PARAM
    try:
        manifest = run(args, job)
    except (TwistBilayerError, ValueError, ArithmeticError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.dry_run:
        print(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    else:
        print(json.dumps(manifest["results"], sort_keys=True, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
