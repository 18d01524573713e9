"""Monte Carlo harness: coupled-path error ladders and energy ensembles.

A ladder run generates, per path, one noise family at the coarsest step
and refines it to every finer level including the fine reference, so
all resolutions see the same underlying paths. The reference solution
is the same scheme on the reference step. Mean-square errors are
root-mean over paths of the dx-weighted squared node differences of the
displacement component at the final time, and the convergence order is
the least-squares slope in log2-log2 coordinates.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import qwiener, rbf
from ._kernels import WaveBoxMarch, WaveLRBFMarch
from .errors import BlowUpError, ConfigError, DivergenceError
from .integrators import SolverPolicy
from .systems import initial_data, make_system

LADDER_SCHEMES = ("lrbf-midpoint", "splitting-msrk", "prk")


def fit_order(dts, errors):
    """Least-squares slope of log2(error) against log2(dt), with standard error.

    Levels with zero error are excluded; returns (None, None) if all
    are zero, raises if fewer than two finite points remain otherwise.
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if not keep.any():
        return None, None
    if keep.sum() < 2:
        raise ValueError("need at least two nonzero levels to fit an order")
    x = np.log2(dts[keep])
    y = np.log2(errors[keep])
    design = np.column_stack([x, np.ones_like(x)])
    coef, res, _, _ = np.linalg.lstsq(design, y, rcond=None)
    slope = float(coef[0])
    if x.size > 2 and res.size:
        sigma2 = float(res[0]) / (x.size - 2)
        stderr = math.sqrt(sigma2 / float(((x - x.mean()) ** 2).sum()))
    else:
        stderr = 0.0
    return slope, stderr


@dataclass
class ErrorLadder:
    scheme: str
    case: str
    dt_levels: list
    errors: list
    stderrs: list
    n_paths: int
    slope: float
    slope_stderr: float
    per_path_sq: np.ndarray = field(repr=False, default=None)

    @property
    def degenerate(self):
        return self.slope is None


@dataclass
class EnergyTrace:
    times: np.ndarray
    mean_energy: np.ndarray
    n_paths: int
    slope_oracle: float


@dataclass(frozen=True)
class LadderSpec:
    """Everything a ladder run needs; hashable so workers can cache setup."""

    scheme: str
    f: str
    g: str
    domain: tuple
    dx: float
    T: float
    dt_levels: tuple
    ref_dt: float
    profile: str
    basis_kind: str
    decay: float = 6.0
    truncation: int = 100
    kernel_kind: str = "inverse-multiquadric"
    kernel_shape: float = 1.0
    stencil: int = 5
    tol: float = 1e-12
    max_iter: int = 100

    def __post_init__(self):
        if self.scheme not in LADDER_SCHEMES:
            raise ConfigError(f"scheme.name: unknown scheme {self.scheme!r}; "
                              f"ladders exist for {LADDER_SCHEMES}")
        lv = self.dt_levels
        if len(lv) < 1 or any(b >= a for a, b in zip(lv, lv[1:])):
            raise ConfigError("time.ladder: levels must be strictly decreasing")
        for dt in (*lv, self.ref_dt):
            if dt <= 0:
                raise ConfigError("time.ladder: steps must be positive")
            n = self.T / dt
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(f"time.ladder: dt={dt} does not divide T={self.T}")
        for dt in (*lv[1:], self.ref_dt):
            factor = lv[0] / dt
            if abs(factor - round(factor)) > 1e-9 or (int(round(factor)) & (int(round(factor)) - 1)):
                raise ConfigError("time.ladder: levels must refine the coarsest step "
                                  "by powers of two")
        if self.ref_dt >= lv[-1]:
            raise ConfigError("time.ref_dt: reference step must be finer than every level")


class _LadderSetup:
    """Grids, operators, and per-level marches for one LadderSpec."""

    def __init__(self, spec):
        self.spec = spec
        x_left, x_right = spec.domain
        n_cells = int(round((x_right - x_left) / spec.dx))
        if abs(n_cells * spec.dx - (x_right - x_left)) > 1e-9:
            raise ConfigError("grid.dx: dx does not divide the domain length")
        self.n_cells = n_cells
        self.system = make_system("wave", f=spec.f, g=spec.g)
        self.basis = qwiener.SpectralBasis(spec.basis_kind, spec.domain,
                                           spec.decay, spec.truncation)
        policy = SolverPolicy(tol=spec.tol, max_iter=spec.max_iter)
        self.all_dts = (*spec.dt_levels, spec.ref_dt)
        if spec.scheme == "lrbf-midpoint":
            full_grid = x_left + spec.dx * np.arange(n_cells + 1)
            kernel = rbf.Kernel(spec.kernel_kind, spec.kernel_shape)
            self.D = rbf.assemble(kernel, full_grid, n_i=spec.stencil)
            self.nodes = self.D.nodes
            self.marches = {dt: WaveLRBFMarch(self.D, dt, spec.f, spec.g, policy)
                            for dt in self.all_dts}
        else:
            box_scheme = "splitting" if spec.scheme == "splitting-msrk" else "prk"
            self.nodes = x_left + (np.arange(n_cells) + 0.5) * spec.dx
            self.marches = {dt: WaveBoxMarch(n_cells, spec.dx, dt, spec.f, spec.g,
                                             policy, box_scheme)
                            for dt in self.all_dts}
        data = initial_data(self.system, spec.profile, self.nodes)
        self.u0, self.v0 = data["u"], data["v"]
        self.w0 = data["w"] if spec.scheme == "lrbf-midpoint" else None

    def final_u(self, dt, field):
        march = self.marches[dt]
        if self.spec.scheme == "lrbf-midpoint":
            u, _, _ = march.run(self.u0, self.v0, self.w0, field.increments)
        else:
            u, _ = march.run(self.u0, self.v0, field.increments)
        return u

    def path_squared_errors(self, seed, path):
        """dx-weighted squared final-time displacement errors, one per level."""
        spec = self.spec
        base = qwiener.sample_field(self.basis, self.nodes, spec.T, spec.dt_levels[0],
                                    seed, stream=path)
        ref_field = qwiener.refine(base, int(round(spec.dt_levels[0] / spec.ref_dt)))
        # the coarse increments must be exact group sums of the reference ones
        group = ref_field.increments.reshape(base.n_steps, -1, self.nodes.size).sum(axis=1)
        if not np.allclose(group, base.increments, rtol=0.0, atol=1e-12):
            raise AssertionError("refinement coupling lost between coarse and reference noise")
        u_ref = self.final_u(spec.ref_dt, ref_field)
        out = np.empty(len(spec.dt_levels))
        for k, dt in enumerate(spec.dt_levels):
            fld = base if dt == spec.dt_levels[0] else qwiener.refine(
                base, int(round(spec.dt_levels[0] / dt)))
            try:
                u = self.final_u(dt, fld)
            except (BlowUpError, DivergenceError) as exc:
                raise type(exc)(f"path {path}, level dt={dt}: {exc}") from exc
            diff = u_ref - u
            out[k] = spec.dx * float(diff @ diff)
        return out


_SETUP_CACHE = {}


def _setup_for(spec):
    setup = _SETUP_CACHE.get(spec)
    if setup is None:
        setup = _SETUP_CACHE[spec] = _LadderSetup(spec)
    return setup


def _ladder_worker(args):
    spec, seed, paths = args
    setup = _setup_for(spec)
    return np.stack([setup.path_squared_errors(seed, p) for p in paths])


def run_ladder(spec, paths, seed, n_workers=None):
    """Coupled-path convergence ladder; see LadderSpec for the parameters.

    Identical (spec, paths, seed) produce identical ladders bit for bit
    regardless of worker count: each path's noise is addressed by
    (seed, path) and the reduction is ordered by path index.
    """
    if paths < 1:
        raise ConfigError("mc.paths: need at least one path")
    path_ids = list(range(paths))
    if n_workers and n_workers > 1 and paths > 1:
        chunks = [path_ids[i::n_workers] for i in range(n_workers)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(_ladder_worker,
                                    [(spec, seed, chunk) for chunk in chunks]))
        sq = np.empty((paths, len(spec.dt_levels)))
        for chunk, block in zip(chunks, results):
            sq[chunk] = block
    else:
        setup = _setup_for(spec)
        sq = np.stack([setup.path_squared_errors(seed, p) for p in path_ids])
    mean_sq = sq.mean(axis=0)
    errors = np.sqrt(mean_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        stderr_sq = sq.std(axis=0, ddof=1) / math.sqrt(paths) if paths > 1 else 0.0 * mean_sq
        stderrs = np.where(errors > 0, stderr_sq / (2.0 * np.where(errors > 0, errors, 1.0)), 0.0)
    slope, slope_stderr = fit_order(spec.dt_levels, errors)
    return ErrorLadder(
        scheme=spec.scheme, case=f"f={spec.f}, g={spec.g}",
        dt_levels=list(spec.dt_levels), errors=errors.tolist(),
        stderrs=np.asarray(stderrs).tolist(), n_paths=paths,
        slope=slope, slope_stderr=slope_stderr, per_path_sq=sq)


def energy_slope_oracle(basis, nodes, dx):
    """Expected energy growth rate under unit additive noise.

    One noise kick adds dW to the velocity only, so the expected energy
    increment per unit time is (dx/2) sum_i sum_k q_k e_k(x_i)^2.
    """
    e = basis.evaluate(nodes)
    diag = (e * e) @ basis.eigenvalues()
    return 0.5 * dx * float(diag.sum())


def run_energy(f, g, domain, dx, T, dt, profile, basis_kind,
               decay=6.0, truncation=100, paths=1000, seed=0, policy=None):
    """Averaged discrete energy of the splitting scheme over an ensemble."""
    policy = policy or SolverPolicy()
    x_left, x_right = domain
    n_cells = int(round((x_right - x_left) / dx))
    if abs(n_cells * dx - (x_right - x_left)) > 1e-9:
        raise ConfigError("grid.dx: dx does not divide the domain length")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9:
        raise ConfigError(f"time.dt: dt={dt} does not divide T={T}")
    system = make_system("wave", f=f, g=g)
    nodes = x_left + (np.arange(n_cells) + 0.5) * dx
    basis = qwiener.SpectralBasis(basis_kind, domain, decay, truncation)
    march = WaveBoxMarch(n_cells, dx, dt, f, g, policy, "splitting")
    data = initial_data(system, profile, nodes)
    total = np.zeros(n_steps + 1)
    energies = np.empty(n_steps)
    for p in range(paths):
        fld = qwiener.sample_field(basis, nodes, T, dt, seed, stream=p)
        u, v = march.run(data["u"], data["v"], fld.increments, energies)
        total[:n_steps] += energies
        total[n_steps] += march.final_energy(u, v)
    times = dt * np.arange(n_steps + 1)
    return EnergyTrace(times=times, mean_energy=total / paths, n_paths=paths,
                       slope_oracle=energy_slope_oracle(basis, nodes, dx))
