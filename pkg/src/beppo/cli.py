"""Batch experiment runner.

Usage: beppo <experiment> [--config FILE] [--out DIR] [--seed U64]
             [--threads N] [--shift X] [--set key=value ...]

Each run writes a manifest (config echo, library version, seed, wall
clock), one or more CSV result files, and a gnuplot script.  Exit codes:
0 ok, 1 config error, 2 ellipticity failure, 3 inadmissible right-hand
side, 4 nonconvergence.

The --shift flag adds a constant to every field entering as a class
representative; results are byte-identical because class inputs are
snapped to a power-of-two lattice coarse enough that mean subtraction in
canonicalize() is exact.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ellipticity import (
    EllipticityError,
    Tensor4,
    isotropic_tensor,
    laplacian_tensor,
    lh_constant,
    perturbation_coercivity,
    perturbed_laplacian_tensor,
    read_tensor,
    scalar_pd_constant,
    tensor_sup_norm,
)
from .fields import (
    gaussian,
    gaussian_dipole,
    gradient_of_gaussian,
    radial_envelope_field,
    stack_fields,
)
from .functionals import AdmissibilityError, admissibility_report, density_functional, riesz_flux
from .grid import Field, Grid, gradient, lp_norm, magnitude_lp, write_field
from .growth import (
    build_cube_chain,
    chain_oscillation,
    check_envelope,
    envelope_values,
    farfield_ratio,
    fit_growth_exponent,
    radial_sup_profile,
)
from .quotient import canonicalize, density_sequence, deny_lions_example, mollifier, seminorm
from .solver import (
    ConvergenceError,
    manufactured_rhs,
    regularity_check,
    solve_constant,
    solve_variable,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ELLIPTICITY = 2
EXIT_RHS = 3
EXIT_NONCONVERGENCE = 4


class ConfigError(Exception):
    pass


DEFAULTS: dict[str, dict] = {
    "deny-lions": {"n_values": [1, 10, 100], "p": 2.0},
    "density-demo": {"d": 2, "L": 16.0, "N": 128, "sigma": 3.0, "p": 2.0, "n_values": [3, 5, 7]},
    "growth-study": {
        "d": 2,
        "p": 2.0,
        "L": 32.0,
        "N": 256,
        "mollifier_radius": 1.0,
        "radii": None,
        "chain_targets": [4.0, 8.0],
    },
    "ellipticity-check": {"tensor": "isotropic", "lam": 1.0, "mu": 1.0, "d": 3, "m": None,
                          "L": 8.0, "N": 32, "amplitude": 0.3, "refinement": 64},
    "rhs-check": {"rhs": "gradient-of-gaussian", "d": 2, "L": 10.0, "N": 128, "sigma": 1.0,
                  "separation": 2.0},
    "solve": {"tensor": "laplacian", "d": 2, "L": 10.0, "N": 128, "lam": 1.0, "mu": 1.0,
              "amplitude": 0.3, "tol": 1e-10, "maxiter": None},
    "regularity-study": {"tensor": "perturbed-laplacian", "amplitude": 0.2, "d": 2,
                         "L": 10.0, "N": 64, "tol": 1e-10},
    "convergence-study": {"d": 2, "L": 10.0, "N_values": [32, 64], "tensor": "laplacian",
                          "lam": 1.0, "mu": 1.0, "amplitude": 0.3, "tol": 1e-10},
}

QUANT_ENVELOPE = 32.0  # bound on |class input values| + |shift|


def _quantum(grid: Grid) -> float:
    # Lattice spacing such that every partial sum of N^d values bounded by
    # the envelope stays exactly representable: box means are then computed
    # exactly and constant shifts cancel bitwise in canonicalize().
    return 2.0 ** (int(math.ceil(math.log2(grid.npoints * QUANT_ENVELOPE))) - 51)


def class_input(field: Field, shift: float) -> Field:
    """Snap a class-representative input to the exact-mean lattice and shift it."""
    q = _quantum(field.grid)
    vals = np.round(field.values / q) * q
    if float(np.max(np.abs(vals))) > QUANT_ENVELOPE - 8.0:
        raise ConfigError("class input exceeds the quantization envelope")
    if abs(shift) > 8.0 or round(shift / q) * q != shift:
        raise ConfigError(f"shift {shift} is not representable on the input lattice")
    return Field(field.grid, vals + shift)


def data_input(field: Field) -> Field:
    """Snap a data field (rhs density) to the lattice; no shift applies."""
    q = _quantum(field.grid)
    return Field(field.grid, np.round(field.values / q) * q)


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return None


def load_config(path: str, experiment: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{path}: config file does not exist")
    text = p.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    known = DEFAULTS[experiment]
    for key in cfg:
        if key not in known:
            line = _line_of(text, key)
            where = f"{path}:{line}" if line else path
            raise ConfigError(f"{where}: unknown key '{key}' for experiment '{experiment}'")
    return cfg


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    """RFC-4180 CSV; floats as shortest round-trip decimals via repr."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


PLOT_KINDS = ("growth", "convergence")


def emit_plot_script(csv_path, kind: str) -> Path:
    """Standalone gnuplot script for a result CSV.

    growth: log-log shell sups with the fitted envelope overlay; requires
    columns r, sup, envelope.  convergence: semilog curves against the
    first column, which must be named n or N.
    """
    csv_path = Path(csv_path)
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind '{kind}' (expected one of {PLOT_KINDS})")
    if not csv_path.is_file():
        raise ConfigError(f"{csv_path}: CSV does not exist")
    with csv_path.open(newline="") as fh:
        header = next(csv.reader(fh))
    if kind == "growth":
        for col in ("r", "sup", "envelope"):
            if col not in header:
                raise ConfigError(f"{csv_path}: missing column '{col}' required for kind 'growth'")
        ic = {c: header.index(c) + 1 for c in header}
        lines = [
            "set datafile separator ','",
            "set logscale xy",
            "set xlabel 'r'",
            "set key top left",
            f"plot '{csv_path.name}' skip 1 using {ic['r']}:{ic['sup']} "
            "with points title 'shell sup', \\",
            f"     '' skip 1 using {ic['r']}:{ic['envelope']} with lines title 'envelope'",
        ]
    else:
        if not header or header[0] not in ("n", "N"):
            raise ConfigError(
                f"{csv_path}: missing column 'n' or 'N' required for kind 'convergence'"
            )
        if len(header) < 2:
            raise ConfigError(f"{csv_path}: convergence CSV needs a value column")
        lines = [
            "set datafile separator ','",
            "set logscale y",
            f"set xlabel '{header[0]}'",
            "set key top right",
            "plot " + ", \\\n     ".join(
                f"'{csv_path.name}' skip 1 using 1:{j + 2} with linespoints title '{name}'"
                for j, name in enumerate(header[1:])
            ),
        ]
    out = csv_path.with_suffix(".gp")
    out.write_text("\n".join(lines) + "\n")
    return out


def _build_tensor(cfg: dict, grid: Grid | None):
    src = cfg["tensor"]
    if isinstance(src, str) and Path(src).suffix and Path(src).is_file():
        return read_tensor(src)[0]
    if src == "laplacian":
        d = cfg["d"] if grid is None else grid.d
        m = grid.m if grid is not None else (cfg.get("m") or 1)
        return laplacian_tensor(d, m)
    if src == "isotropic":
        d = cfg["d"] if grid is None else grid.d
        return isotropic_tensor(cfg["lam"], cfg["mu"], d)
    if src == "perturbed-laplacian":
        if grid is None:
            raise ConfigError("perturbed-laplacian needs grid parameters")
        return perturbed_laplacian_tensor(grid, cfg["amplitude"])
    raise ConfigError(f"unknown tensor source '{src}'")


def _manufactured_class(grid: Grid, shift: float):
    parts = [
        gaussian(grid, sigma=1.0 + 0.25 * i, center=[0.5 * i] + [0.0] * (grid.d - 1))
        for i in range(grid.m)
    ]
    u = stack_fields(parts) if grid.m > 1 else parts[0]
    return canonicalize(class_input(u, shift))


# --- experiments ------------------------------------------------------------


def _exp_deny_lions(cfg, out, seed, shift):
    rows = []
    for n in cfg["n_values"]:
        r = deny_lions_example(int(n), cfg["p"])
        rows.append((int(n), r.sup_value, r.grad_norm))
    path = out / "deny_lions.csv"
    write_csv(path, ["n", "sup", "grad_norm"], rows)
    plot = emit_plot_script(path, "convergence")
    return [path.name, plot.name], {}


def _exp_density_demo(cfg, out, seed, shift):
    grid = Grid(cfg["d"], 1, cfg["L"], cfg["N"])
    cls = canonicalize(class_input(gaussian(grid, cfg["sigma"]), shift), cfg["p"])
    G = gradient(cls.rep)
    rows = []
    for n in cfg["n_values"]:
        un = density_sequence(cls, int(n))
        diff = G - gradient(un)
        err = magnitude_lp(np.sqrt(np.einsum("ia...,ia...->...", diff, diff)), grid, cls.p)
        magG = np.sqrt(np.einsum("ia...,ia...->...", G, G))
        tail = magnitude_lp(np.where(grid.radius > n, magG, 0.0), grid, cls.p)
        ratio = err / tail if tail > 0 else 0.0
        rows.append((int(n), err, tail, ratio))
    path = out / "density.csv"
    write_csv(path, ["n", "gradient_error", "tail_norm", "ratio"], rows)
    plot = emit_plot_script(path, "convergence")
    return [path.name, plot.name], {"max_ratio": max(r[3] for r in rows)}


def _exp_growth_study(cfg, out, seed, shift):
    grid = Grid(cfg["d"], 1, cfg["L"], cfg["N"])
    p, d = float(cfg["p"]), grid.d
    if p > d:
        base = radial_envelope_field(grid, 1.0 / p)
    elif p == d:
        base = radial_envelope_field(grid, 1.0)
    else:
        base = gaussian(grid, sigma=grid.L / 6.0)
    cls = canonicalize(class_input(base, shift), p)
    eta = mollifier(grid, cfg["mollifier_radius"])
    radii = cfg["radii"] or [float(x) for x in np.geomspace(max(4 * grid.h, 2.0), grid.L / 2.0, 12)]
    env = check_envelope(cls, eta, radii)
    from .quotient import decompose

    smooth = decompose(cls, eta).smooth_part
    prof = radial_sup_profile(smooth, radii)
    ratios = dict(farfield_ratio(cls, eta, radii))
    bound = env.constant * envelope_values(env.regime, env.exponent, np.array(radii))
    rows = [
        (r, s, float(b), float(ratios[r]))
        for (r, s), b in zip(prof, bound)
    ]
    path = out / "growth.csv"
    write_csv(path, ["r", "sup", "envelope", "ratio"], rows)
    plot = emit_plot_script(path, "growth")
    files = [path.name, plot.name]

    sem = seminorm(cls)
    chain_rows = []
    for t in cfg["chain_targets"]:
        target = np.zeros(grid.d)
        target[0] = float(t)
        chain = build_cube_chain(target)
        osc = chain_oscillation(cls, chain)
        chain_rows.append(
            (float(t), len(chain.cubes), osc.max_step, osc.total,
             sem * math.log(2.0 + abs(float(t))))
        )
    cpath = out / "chains.csv"
    write_csv(cpath, ["distance", "length", "max_step", "total", "log_scale"], chain_rows)
    files.append(cpath.name)

    info = {"regime": env.regime, "fitted_constant": env.constant, "seminorm": sem}
    if env.exponent is not None:
        info["envelope_exponent"] = env.exponent
        info["fitted_exponent"] = fit_growth_exponent(prof)
    if env.gns_ratio is not None:
        info["gns_ratio"] = env.gns_ratio
    return files, info


def _exp_ellipticity_check(cfg, out, seed, shift):
    grid = None
    if cfg["tensor"] == "perturbed-laplacian":
        grid = Grid(cfg["d"], cfg.get("m") or 1, cfg["L"], cfg["N"])
    C = _build_tensor(cfg, grid)
    rows = []
    info: dict = {"variant": C.variant}
    if C.variant == "constant":
        n = max(int(cfg["refinement"]), 8)
        from .ellipticity import _lattice_min, _sphere_lattice

        for _ in range(6):
            val, _best = _lattice_min(C, _sphere_lattice(C.d, n)) if C.d > 1 else (
                lh_constant(C), None)
            rows.append((n, val))
            n *= 2
        c0 = lh_constant(C, cfg["refinement"])
        info["c0"] = c0
    else:
        Cbar = C.mean()
        c0 = perturbation_coercivity(Cbar, C)
        info["c0"] = c0
        info["c0_paper_form"] = lh_constant(Cbar) - tensor_sup_norm(C) * (
            lh_constant(Cbar) - c0
        )  # deviation reweighted by the boundedness constant, for comparison
        if C.m == 1:
            info["c0_scalar"] = scalar_pd_constant(C)
            c0 = max(c0, info["c0_scalar"])
        rows.append((1, c0))
    print(f"c0 = {c0}")
    path = out / "ellipticity.csv"
    write_csv(path, ["n", "c0_estimate"], rows)
    plot = emit_plot_script(path, "convergence")
    if c0 <= 0.0:
        write_json(out / "report.json", info)
        raise EllipticityError(f"Legendre-Hadamard/coercivity check failed: c0 = {c0}")
    return [path.name, plot.name], info


def _exp_rhs_check(cfg, out, seed, shift):
    grid = Grid(cfg["d"], 1, cfg["L"], cfg["N"])
    kind = cfg["rhs"]
    if kind == "gradient-of-gaussian":
        f = gradient_of_gaussian(grid, cfg["sigma"])
    elif kind == "gaussian-dipole":
        f = gaussian_dipole(grid, cfg["sigma"], cfg["separation"])
    elif kind == "gaussian":
        f = gaussian(grid, cfg["sigma"])
    else:
        raise ConfigError(f"unknown rhs source '{kind}'")
    f = data_input(f)
    rep = admissibility_report(f)
    write_json(out / "rhs_report.json", rep.as_dict())

    kk = np.sqrt(np.sum(grid.wavevectors**2, axis=0))
    sp = tuple(range(1, 1 + grid.d))
    fc = np.fft.fftn(f.values, axes=sp) * grid.h**grid.d
    magk = np.sqrt(np.einsum("i...,i...->...", np.abs(fc), np.abs(fc)))
    kmax = float(kk.max())
    edges = np.geomspace(np.pi / grid.L, kmax, 17)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (kk >= lo) & (kk < hi)
        if not sel.any():
            continue
        rows.append((float(0.5 * (lo + hi)), float(np.max(magk[sel] / kk[sel])), rep.fourier_slope))
    path = out / "rhs_spectrum.csv"
    write_csv(path, ["r", "sup", "envelope"], rows)
    plot = emit_plot_script(path, "growth")
    files = ["rhs_report.json", path.name, plot.name]

    if rep.zero_mean > 1e-10:
        raise AdmissibilityError(
            f"density '{kind}' has nonzero mean (relative {rep.zero_mean:.3e})"
        )
    flux, fnorm = riesz_flux(f)
    from .grid import divergence as div_op

    F = flux.values.reshape(1, grid.d, *grid.shape)
    recon = -div_op(grid, F)
    err = float(np.sqrt(np.sum((recon - f.values) ** 2) / max(np.sum(f.values**2), 1e-300)))
    info = {"flux_norm": fnorm, "reconstruction_error": err, "moment": rep.moment}
    return files, info


def _solve_for(cfg, grid, shift):
    C = _build_tensor(cfg, grid)
    ustar = _manufactured_class(grid, shift)
    rhs = manufactured_rhs(C, ustar)
    if C.variant == "constant":
        report = solve_constant(C, rhs)
    else:
        report = solve_variable(C, rhs, cfg["tol"], cfg.get("maxiter"))
    diff = canonicalize(Field(grid, report.solution.rep.values - ustar.rep.values))
    rel = seminorm(diff) / seminorm(ustar)
    return C, ustar, rhs, report, rel


def _exp_solve(cfg, out, seed, shift):
    m = cfg["d"] if cfg["tensor"] == "isotropic" else 1
    grid = Grid(cfg["d"], m, cfg["L"], cfg["N"])
    C, ustar, rhs, report, rel = _solve_for(cfg, grid, shift)
    write_field(report.solution.rep, out / "solution.field")
    hist = report.residual_history or (report.residual,)
    rows = [(i, float(r)) for i, r in enumerate(hist)]
    path = out / "iterations.csv"
    write_csv(path, ["n", "residual"], rows)
    plot = emit_plot_script(path, "convergence")
    epath = out / "energies.csv"
    write_csv(epath, ["n", "energy"], [(i, float(e)) for i, e in enumerate(report.energy_history)])
    info = {
        "method": report.method,
        "iterations": report.iterations,
        "residual": report.residual,
        "relative_error": rel,
        "energy": report.energy,
        "constants": report.constants,
    }
    return [path.name, plot.name, epath.name, "solution.field"], info


def _exp_regularity_study(cfg, out, seed, shift):
    grid = Grid(cfg["d"], 1, cfg["L"], cfg["N"])
    C = _build_tensor(cfg, grid)
    f = data_input(gradient_of_gaussian(grid, 1.0))
    rhs = density_functional(f)
    if C.variant == "constant":
        report = solve_constant(C, rhs)
    else:
        report = solve_variable(C, rhs, cfg["tol"])
    reg = regularity_check(C, f, report.solution)
    mn = reg.measured_norms
    rows = [(1, mn["norm_grad_u"]), (2, mn["norm_grad2_u"]), (3, mn["norm_grad3_u"])]
    path = out / "derivative_norms.csv"
    write_csv(path, ["n", "norm"], rows)
    plot = emit_plot_script(path, "convergence")
    write_json(out / "regularity.json",
               {"h2_bound_ok": reg.h2_bound_ok, "h3_bound_ok": reg.h3_bound_ok, **mn})
    info = {"h2_bound_ok": reg.h2_bound_ok, "h3_bound_ok": reg.h3_bound_ok}
    return [path.name, plot.name, "regularity.json"], info


def _exp_convergence_study(cfg, out, seed, shift):
    rows = []
    for n in cfg["N_values"]:
        sub = dict(cfg)
        sub["N"] = int(n)
        m = cfg["d"] if cfg["tensor"] == "isotropic" else 1
        grid = Grid(cfg["d"], m, cfg["L"], int(n))
        _, _, _, _, rel = _solve_for(sub, grid, shift)
        rows.append((int(n), rel))
    path = out / "convergence.csv"
    write_csv(path, ["N", "error"], rows)
    plot = emit_plot_script(path, "convergence")
    info = {"errors": {str(n): e for n, e in rows}}
    if len(rows) >= 2 and rows[-1][1] > 0:
        info["error_drop"] = rows[0][1] / rows[-1][1]
    return [path.name, plot.name], info


EXPERIMENTS = {
    "deny-lions": _exp_deny_lions,
    "density-demo": _exp_density_demo,
    "growth-study": _exp_growth_study,
    "ellipticity-check": _exp_ellipticity_check,
    "rhs-check": _exp_rhs_check,
    "solve": _exp_solve,
    "regularity-study": _exp_regularity_study,
    "convergence-study": _exp_convergence_study,
}


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; config errors are 1
        raise ConfigError(message)


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got '{text}'")
    key, raw = text.split("=", 1)
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def main(argv=None) -> int:
    parser = _Parser(prog="beppo", description="periodic-box elliptic experiment runner")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--shift", type=float, default=0.0)
        sp.add_argument("--set", action="append", default=[], dest="overrides")

    try:
        args = parser.parse_args(argv)
        name = args.experiment
        cfg = dict(DEFAULTS[name])
        if args.config:
            cfg.update(load_config(args.config, name))
        for item in args.overrides:
            key, value = _parse_override(item)
            if key not in cfg:
                raise ConfigError(f"unknown key '{key}' for experiment '{name}'")
            cfg[key] = value
        out = Path(args.out) if args.out else Path("beppo-out") / name
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        files, info = EXPERIMENTS[name](cfg, out, args.seed, args.shift)
        manifest = {
            "experiment": name,
            "config": cfg,
            "seed": args.seed,
            "threads": args.threads,
            "shift": args.shift,
            "library": {"name": "beppo", "version": __version__},
            "wallclock_s": time.perf_counter() - t0,
            "outputs": files,
            "results": info,
        }
        write_json(out / "manifest.json", manifest)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EllipticityError as exc:
        print(f"ellipticity failure: {exc}", file=sys.stderr)
        return EXIT_ELLIPTICITY
    except AdmissibilityError as exc:
        print(f"inadmissible right-hand side: {exc}", file=sys.stderr)
        return EXIT_RHS
    except ConvergenceError as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
