"""Command-line entry point driving experiments from TOML config files.

A config names one command and its parameters in nested sections (the
grammar is documented in the README and enforced strictly: any
unrecognized key is an error). Outputs are CSV tables plus a JSON
manifest carrying the fully resolved config, written atomically.

Exit codes: 0 success, 2 config problem, 3 numerical divergence or
blow-up, 4 failed conservation/condition check.
"""

import argparse
import csv
import hashlib
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from . import __version__, geometry, mc, qwiener, rbf, systems, tableau
from ._kernels import BACKEND
from .errors import BlowUpError, ConfigError, ConservationError, DivergenceError
from .integrators import GridState, LRBFMidpointStepper, SolverPolicy
from .integrators.cells import solve_cell

COMMANDS = ("convergence", "energy", "verify-mscl", "check-tableau",
            "build-diffop", "sample-noise")

# Allowed keys per section; values are (type, required) or nested dicts.
_SCHEMA = {
    "command": str,
    "system": {"name": str, "f": str, "g": str, "beta": float, "lambda": float},
    "grid": {"domain": list, "dx": float},
    "time": {"T": float, "dt": float, "ladder": list, "ref_dt": float},
    "noise": {"basis": str, "decay": float, "truncation": int},
    "scheme": {"name": str, "kernel": str, "shape": float, "stencil": int},
    "solver": {"method": str, "tol": float, "max_iter": int, "damping": float},
    "mc": {"paths": int, "seed": int, "threads": int},
    "tableau": {"family": str, "names": dict, "inline": dict, "tol": float},
    "verify": {"tolerance": float, "dt": float, "dx": float, "seed": int},
    "output": {"directory": str, "snapshots": bool},
}


def _check_keys(table, schema, path=""):
    for key, value in table.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"{where}: unrecognized key")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a section")
            if expected and all(isinstance(v, (type, tuple)) for v in expected.values()):
                _check_keys(value, expected, where)
        elif expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{where}: expected a number")
        elif not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ConfigError(f"{where}: expected {expected.__name__}")


class ExperimentConfig:
    """Parsed and validated experiment description."""

    def __init__(self, raw):
        _check_keys(raw, _SCHEMA)
        self.raw = raw
        self.command = raw.get("command")
        if self.command not in COMMANDS:
            raise ConfigError(f"command: expected one of {COMMANDS}, got {self.command!r}")

    def section(self, name, default=None):
        return dict(self.raw.get(name, default if default is not None else {}))

    def need(self, section, key, where=None):
        sec = self.raw.get(section, {})
        if key not in sec:
            raise ConfigError(f"{where or f'{section}.{key}'}: missing required key")
        return sec[key]

    def positive(self, section, key, default=None):
        sec = self.raw.get(section, {})
        value = sec.get(key, default)
        if value is None:
            raise ConfigError(f"{section}.{key}: missing required key")
        if not value > 0:
            raise ConfigError(f"{section}.{key}: must be positive, got {value}")
        return value

    def solver_policy(self):
        sec = self.section("solver")
        return SolverPolicy(method=sec.get("method", "fixed-point"),
                            tol=sec.get("tol", 1e-12),
                            max_iter=sec.get("max_iter", 100),
                            damping=sec.get("damping", 1.0))

    def domain(self):
        dom = self.need("grid", "domain")
        if (not isinstance(dom, list) or len(dom) != 2
                or not all(isinstance(v, (int, float)) for v in dom)):
            raise ConfigError("grid.domain: expected [x_left, x_right]")
        if not dom[1] > dom[0]:
            raise ConfigError("grid.domain: interval must have positive length")
        return float(dom[0]), float(dom[1])


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file does not parse: {exc}")
    return ExperimentConfig(raw)


def _atomic_write(path, writer):
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    def do(fh):
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    _atomic_write(path, do)


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return f"mspde-{__version__}"


def write_manifest(out_dir, config, started, extra=None):
    resolved = dict(config.raw)
    payload = {
        "config": resolved,
        "config_sha256": hashlib.sha256(
            json.dumps(resolved, sort_keys=True).encode()).hexdigest(),
        "build": _git_describe(),
        "kernel_backend": BACKEND,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    if extra:
        payload.update(extra)
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  lambda fh: json.dump(payload, fh, indent=2, default=str))


_SCHEME_NAMES = {"lrbf-midpoint": "lrbf-midpoint",
                 "splitting-msrk": "splitting-msrk",
                 "prk": "prk"}


def _ladder_spec(config):
    sysname = config.need("system", "name")
    if sysname != "wave":
        raise ConfigError("system.name: convergence ladders are implemented for the "
                          "wave system (the reference experiments)")
    scheme = config.need("scheme", "name")
    if scheme not in _SCHEME_NAMES:
        raise ConfigError(f"scheme.name: expected one of {sorted(_SCHEME_NAMES)}")
    ladder = config.need("time", "ladder")
    if not isinstance(ladder, list) or not all(
            isinstance(v, (int, float)) and v > 0 for v in ladder):
        raise ConfigError("time.ladder: expected a list of positive steps")
    domain = config.domain()
    profile = "sech-velocity" if abs(domain[0] + 8.0) < 1e-9 else "sine-velocity"
    noise = config.section("noise")
    solver = config.section("solver")
    return mc.LadderSpec(
        scheme=scheme,
        f=config.section("system").get("f", "sin"),
        g=config.section("system").get("g", "sin"),
        domain=domain,
        dx=config.positive("grid", "dx"),
        T=config.positive("time", "T"),
        dt_levels=tuple(float(v) for v in ladder),
        ref_dt=config.positive("time", "ref_dt"),
        profile=profile,
        basis_kind=noise.get("basis", "sine-quarter"),
        decay=noise.get("decay", 6.0),
        truncation=noise.get("truncation", 100),
        kernel_kind=config.section("scheme").get("kernel", "inverse-multiquadric"),
        kernel_shape=config.section("scheme").get("shape", 1.0),
        stencil=config.section("scheme").get("stencil", 5),
        tol=solver.get("tol", 1e-12),
        max_iter=solver.get("max_iter", 100),
    )


def cmd_convergence(config, out_dir, started, threads):
    spec = _ladder_spec(config)
    paths = int(config.positive("mc", "paths", 200))
    seed = int(config.section("mc").get("seed", 0))
    ladder = mc.run_ladder(spec, paths=paths, seed=seed, n_workers=threads)
    rows = []
    for dt, err, se in zip(ladder.dt_levels, ladder.errors, ladder.stderrs):
        rows.append([len(rows), dt, np.log2(dt), err,
                     np.log2(err) if err > 0 else "", se])
        print(f"dt={dt:<12g} error={err:.6e} stderr={se:.2e}")
    write_csv(os.path.join(out_dir, "ladder.csv"),
              ["level", "dt", "log2_dt", "error", "log2_error", "stderr"], rows)
    slope = ladder.slope
    print(f"fitted order: {slope if slope is None else round(slope, 4)}"
          f" (scheme={spec.scheme}, case {ladder.case}, {paths} paths)")
    write_manifest(out_dir, config, started,
                   {"slope": slope, "errors": ladder.errors, "paths": paths})
    return 0


def cmd_energy(config, out_dir, started, threads):
    sysname = config.need("system", "name")
    if sysname != "wave":
        raise ConfigError("system.name: the energy experiment runs the wave system")
    noise = config.section("noise")
    trace = mc.run_energy(
        f=config.section("system").get("f", "zero"),
        g=config.section("system").get("g", "one"),
        domain=config.domain(),
        dx=config.positive("grid", "dx"),
        T=config.positive("time", "T"),
        dt=config.positive("time", "dt"),
        profile="sine-velocity",
        basis_kind=noise.get("basis", "sine-over-sqrt-pi"),
        decay=noise.get("decay", 6.0),
        truncation=noise.get("truncation", 100),
        paths=int(config.positive("mc", "paths", 1000)),
        seed=int(config.section("mc").get("seed", 0)),
        policy=config.solver_policy(),
    )
    rows = [[n, t, e] for n, (t, e) in enumerate(zip(trace.times, trace.mean_energy))]
    write_csv(os.path.join(out_dir, "energy.csv"), ["step", "t", "energy"], rows)
    coef = np.polyfit(trace.times, trace.mean_energy, 1)
    print(f"energy: {len(rows)} levels, fitted slope {coef[0]:.5f}, "
          f"oracle {trace.slope_oracle:.5f}")
    write_manifest(out_dir, config, started,
                   {"fitted_slope": float(coef[0]), "slope_oracle": trace.slope_oracle,
                    "paths": trace.n_paths})
    return 0


def _tableau_from_config(config, role, names, inline, default="midpoint"):
    if role in inline:
        spec = inline[role]
        if not isinstance(spec, dict) or "a" not in spec or "b" not in spec:
            raise ConfigError(f"tableau.inline.{role}: expected arrays 'a' and 'b'")
        return tableau.ButcherTableau(spec["a"], spec["b"], name=f"inline-{role}")
    name = names.get(role, default)
    try:
        return tableau.get_tableau(name)
    except ValueError as exc:
        raise ConfigError(f"tableau.names.{role}: {exc}")


def cmd_check_tableau(config, out_dir, started, threads):
    sec = config.section("tableau")
    family = sec.get("family", "wave")
    names = sec.get("names", {})
    inline = sec.get("inline", {})
    tol = sec.get("tol", 1e-12)
    roles = {"wave": tableau.PartitionedTableau.WAVE_ROLES,
             "nls": tableau.PartitionedTableau.NLS_ROLES,
             "kdv": tableau.PartitionedTableau.KDV_ROLES,
             "symplectic": ("temporal-1",)}.get(family)
    if roles is None:
        raise ConfigError("tableau.family: expected wave, nls, kdv, or symplectic")
    entries = {role: _tableau_from_config(config, role, names, inline) for role in roles}
    if family == "symplectic":
        report = tableau.is_symplectic(entries["temporal-1"], tol)
    else:
        report = tableau.PartitionedTableau(entries).check(family, tol)
    rows = [[name, res, tol, "pass" if res <= tol else "FAIL"]
            for name, res in sorted(report.residuals.items())]
    write_csv(os.path.join(out_dir, "residuals.csv"),
              ["condition", "residual", "tol", "status"], rows)
    for name, res, _, status in rows:
        print(f"{name:<24} residual={res:.3e}  {status}")
    write_manifest(out_dir, config, started, {"max_residual": report.max_residual})
    if not report.passed(tol):
        raise ConservationError(
            f"tableau conditions failed at tol {tol}: {report.failing(tol)}")
    return 0


def _verify_cases(config):
    """Conservation checks for all three schemes on random data and tangents."""
    sec = config.section("verify")
    tol = sec.get("tolerance", 1e-9)
    dt = sec.get("dt", 0.05)
    dx = sec.get("dx", 0.125)
    rng = np.random.default_rng(int(sec.get("seed", 2024)))
    results = []

    wave = systems.make_system("wave", f="sin", g="sin")
    kern = rbf.Kernel("inverse-multiquadric", 1.0)
    grid = np.linspace(-2.0, 2.0, 34)
    D = rbf.assemble(kern, grid, n_i=5)
    n = D.n
    names = wave.component_names
    state = GridState(wave, D.nodes,
                      {nm: rng.normal(size=n) * 0.4 for nm in names})
    state.components["p"][:] = 0.0
    xi = {nm: rng.normal(size=n) for nm in names}
    eta = {nm: rng.normal(size=n) for nm in names}
    dW = rng.normal(size=n) * np.sqrt(dt) * 0.3
    stepper = LRBFMidpointStepper(wave, D, dt, SolverPolicy())
    ens0 = geometry.TangentEnsemble(state, xi, eta)
    ens1 = ens0.advance(stepper, dW)
    res = geometry.mscl_residual_lrbf(wave, D, ens0, ens1, dt)
    results.append(("lrbf-midpoint-wave", res.value))

    mp = tableau.get_tableau("midpoint")
    g2 = tableau.get_tableau("gauss2")
    for tabs, label in (({"spatial": mp, "temporal": mp}, "midpoint"),
                        ({"spatial": g2, "temporal": g2}, "gauss2")):
        s, r = tabs["spatial"].s, tabs["temporal"].s
        edges = {"u0m": rng.normal(size=r), "w0m": rng.normal(size=r),
                 "ui0": rng.normal(size=s), "vi0": rng.normal(size=s)}
        cell = solve_cell(wave, "splitting", tabs, edges, dx=dx, dt=dt,
                          dW=rng.normal(size=s) * 0.2)
        res = geometry.mscl_residual_cell(
            cell, {k: rng.normal(size=v.size) for k, v in edges.items()},
            {k: rng.normal(size=v.size) for k, v in edges.items()})
        results.append((f"splitting-wave-cell-{label}", res.value))
    prk_tabs = {"temporal-1": mp, "temporal-2": mp, "temporal-noise": mp,
                "spatial-1": mp, "spatial-2": mp}
    edges = {"u0m": rng.normal(size=1), "w0m": rng.normal(size=1),
             "ui0": rng.normal(size=1), "vi0": rng.normal(size=1)}
    cell = solve_cell(wave, "prk", prk_tabs, edges, dx=dx, dt=dt,
                      dW=rng.normal(size=1) * 0.2)
    res = geometry.mscl_residual_cell(
        cell, {k: rng.normal(size=1) for k in edges},
        {k: rng.normal(size=1) for k in edges})
    results.append(("prk-wave-cell-midpoint", res.value))
    return tol, results


def cmd_verify_mscl(config, out_dir, started, threads):
    tol, results = _verify_cases(config)
    rows = [[name, value, tol, "pass" if value <= tol else "FAIL"]
            for name, value in results]
    write_csv(os.path.join(out_dir, "residuals.csv"),
              ["check", "residual", "tol", "status"], rows)
    for name, value, _, status in rows:
        print(f"{name:<32} residual={value:.3e}  {status}")
    worst = max(v for _, v in results)
    write_manifest(out_dir, config, started, {"max_residual": worst})
    if worst > tol:
        raise ConservationError(f"conservation residual {worst:.3e} exceeds {tol}")
    return 0


def cmd_build_diffop(config, out_dir, started, threads):
    scheme = config.section("scheme")
    kern = rbf.Kernel(scheme.get("kernel", "inverse-multiquadric"),
                      scheme.get("shape", 1.0))
    x_left, x_right = config.domain()
    dx = config.positive("grid", "dx")
    n_cells = int(round((x_right - x_left) / dx))
    if abs(n_cells * dx - (x_right - x_left)) > 1e-9:
        raise ConfigError("grid.dx: dx does not divide the domain length")
    grid = x_left + dx * np.arange(n_cells + 1)
    D = rbf.assemble(kern, grid, n_i=scheme.get("stencil", 5))
    D.export_csv(os.path.join(out_dir, "diffop.csv"))
    print(f"derivative operator: {D.n} interior nodes, {D.matrix.nnz} nonzeros")
    write_manifest(out_dir, config, started, {"nodes": D.n, "nnz": int(D.matrix.nnz)})
    return 0


def cmd_sample_noise(config, out_dir, started, threads):
    noise = config.section("noise")
    x_left, x_right = config.domain()
    dx = config.positive("grid", "dx")
    n_cells = int(round((x_right - x_left) / dx))
    basis = qwiener.SpectralBasis(noise.get("basis", "sine-quarter"),
                                  (x_left, x_right),
                                  noise.get("decay", 6.0),
                                  noise.get("truncation", 100))
    nodes = x_left + dx * np.arange(1, n_cells)
    field = qwiener.sample_field(basis, nodes, config.positive("time", "T"),
                                 config.positive("time", "dt"),
                                 int(config.section("mc").get("seed", 0)))
    field.export_csv(os.path.join(out_dir, "noise.csv"))
    print(f"noise field: {field.n_steps} steps x {nodes.size} nodes")
    write_manifest(out_dir, config, started,
                   {"steps": field.n_steps, "nodes": int(nodes.size)})
    return 0


_DISPATCH = {
    "convergence": cmd_convergence,
    "energy": cmd_energy,
    "verify-mscl": cmd_verify_mscl,
    "check-tableau": cmd_check_tableau,
    "build-diffop": cmd_build_diffop,
    "sample-noise": cmd_sample_noise,
}


def run(argv):
    parser = argparse.ArgumentParser(
        prog="mspde",
        description="structure-preserving stochastic-PDE experiments")
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override mc.seed")
    parser.add_argument("--paths", type=int, default=None, help="override mc.paths")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes for Monte Carlo paths")
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.raw.setdefault("mc", {})["seed"] = args.seed
        if args.paths is not None:
            config.raw.setdefault("mc", {})["paths"] = args.paths
        out_dir = args.out or config.section("output").get("directory", "out")
        os.makedirs(out_dir, exist_ok=True)
        threads = args.threads or config.section("mc").get("threads")
        return _DISPATCH[config.command](config, out_dir, started, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, BlowUpError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ConservationError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 4


def main():
    raise SystemExit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
