"""Sampling of Q-Wiener increments on a spatial grid.

The noise is the truncated spectral expansion

    W(t, x) = sum_k sqrt(q_k) e_k(x) beta_k(t),      q_k = k**(-decay),

with independent scalar Brownian motions beta_k. A field holds the
per-step increments dW at every grid node, reproducible from a seed via
a counter-based stream, so the same path family can be re-generated at
any dyadic time resolution: ``refine`` splits every increment with a
conditional (bridge) draw, and the fine increments sum back to the
coarse ones exactly up to one floating-point addition.
"""

import csv
import math
import os
import tempfile

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .errors import ConfigError

_MASK64 = (1 << 64) - 1

BASIS_KINDS = ("sine-quarter", "sine-quarter-raw", "sine-over-sqrt-pi")


def _stream_normals(seed, stream, count):
    """`count` standard normals from the (seed, stream) counter stream.

    One uniform consumes exactly one Philox word, so the mapping
    (seed, stream, position) -> value does not depend on how the stream
    is consumed elsewhere.
    """
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    u = Generator(Philox(key=key)).random(count)
    return ndtri(np.maximum(u, 2.0 ** -54))


def _stream_id(path, k, level):
    # path < 2**31, k < 2**23, level < 256: disjoint bit fields
    return (path << 32) | (k << 9) | (level + 1)


class SpectralBasis:
    """Eigenpairs (q_k, e_k) of the noise covariance on an interval.

    kinds:
      * ``sine-quarter``: e_k(x) = (sqrt(2)/4) sin(k pi (x - xL)/(xR - xL)),
        which vanishes on the interval boundary;
      * ``sine-quarter-raw``: e_k(x) = (sqrt(2)/4) sin(k pi x), the same
        amplitude with an unnormalized argument (does not vanish at the
        boundary for a general interval; kept for comparison);
      * ``sine-over-sqrt-pi``: e_k(x) = sin(k x)/sqrt(pi).

    q_k = k**(-decay_exponent), strictly decreasing.
    """

    def __init__(self, kind, domain, decay_exponent=6.0, truncation=100):
        if kind not in BASIS_KINDS:
            raise ConfigError(f"noise.basis: unknown basis kind {kind!r}")
        x_left, x_right = float(domain[0]), float(domain[1])
        if not x_right > x_left:
            raise ConfigError("noise.domain: interval must have positive length")
        if decay_exponent <= 0:
            raise ConfigError("noise.decay: decay exponent must be positive")
        if int(truncation) < 1:
            raise ConfigError("noise.truncation: need at least one mode")
        self.kind = kind
        self.domain = (x_left, x_right)
        self.decay_exponent = float(decay_exponent)
        self.truncation = int(truncation)

    def eigenvalues(self):
        k = np.arange(1, self.truncation + 1, dtype=float)
        return k ** (-self.decay_exponent)

    def evaluate(self, nodes):
        """Matrix e_k(x_i), shape (len(nodes), truncation)."""
        x = np.asarray(nodes, dtype=float)
        k = np.arange(1, self.truncation + 1, dtype=float)
        if self.kind == "sine-quarter":
            x_left, x_right = self.domain
            arg = np.pi * np.outer((x - x_left) / (x_right - x_left), k)
            return (math.sqrt(2.0) / 4.0) * np.sin(arg)
        if self.kind == "sine-quarter-raw":
            return (math.sqrt(2.0) / 4.0) * np.sin(np.pi * np.outer(x, k))
        return np.sin(np.outer(x, k)) / math.sqrt(math.pi)

    def covariance(self, nodes):
        """Truncated covariance C(x_i, x_j) = sum_k q_k e_k(x_i) e_k(x_j)."""
        e = self.evaluate(nodes)
        return (e * self.eigenvalues()) @ e.T

    def __repr__(self):
        return (f"SpectralBasis(kind={self.kind!r}, domain={self.domain}, "
                f"decay_exponent={self.decay_exponent}, truncation={self.truncation})")


class QWienerField:
    """Increment table of a Q-Wiener process on fixed spatial nodes.

    ``increments[n, i]`` is W(x_i, t_{n+1}) - W(x_i, t_n) on the uniform
    grid with step ``dt``. The table is a deterministic function of
    (seed, stream) through the mode increments ``dbeta`` (modes x steps),
    which are kept so the field can be refined consistently.
    """

    def __init__(self, basis, nodes, dt, dbeta, seed, stream=0, level=0):
        self.basis = basis
        self.nodes = np.asarray(nodes, dtype=float)
        self.dt = float(dt)
        self.dbeta = dbeta
        self.seed = seed
        self.stream = stream
        self.level = level
        scaled = basis.evaluate(self.nodes) * np.sqrt(basis.eigenvalues())
        self.increments = (scaled @ dbeta).T.copy()

    @property
    def n_steps(self):
        return self.dbeta.shape[1]

    @property
    def T(self):
        return self.n_steps * self.dt

    def export_csv(self, path):
        """Write the increment table as rows (step, node_index, increment)."""
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["step", "node_index", "increment"])
                for n in range(self.n_steps):
                    for i in range(self.nodes.size):
                        writer.writerow([n, i, repr(self.increments[n, i])])
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def sample_field(basis, nodes, T, dt, seed, stream=0):
    """Sample a Q-Wiener field with N = T/dt steps on the given nodes.

    T/dt must be an integer to machine precision. ``stream`` separates
    independent realizations (Monte Carlo paths) under one seed.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.size == 0:
        raise ValueError("empty node set")
    x_left, x_right = basis.domain
    tol = 1e-12 * (x_right - x_left)
    if nodes.min() < x_left - tol or nodes.max() > x_right + tol:
        raise ValueError("nodes lie outside the basis domain")
    if dt <= 0 or T <= 0:
        raise ConfigError("time.dt: T and dt must be positive")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"time.dt: dt={dt} does not divide T={T}")
    kmax = basis.truncation
    dbeta = np.empty((kmax, n_steps))
    root_dt = math.sqrt(dt)
    for k in range(kmax):
        dbeta[k] = root_dt * _stream_normals(seed, _stream_id(stream, k, 0), n_steps)
    return QWienerField(basis, nodes, dt, dbeta, seed, stream=stream, level=0)


def refine(field, factor):
    """Field on step dt/factor whose groups of `factor` increments sum to `field`'s.

    ``factor`` must be a power of two. Each halving draws the bridge
    midpoint conditionally on the coarse increment, from a stream
    addressed by (seed, stream, mode, refinement depth), so refining in
    one call or in stages yields the same fine path family.
    """
    factor = int(factor)
    if factor < 2 or factor & (factor - 1):
        raise ValueError(f"refinement factor must be a power of two >= 2, got {factor}")
    dbeta = field.dbeta
    dt = field.dt
    level = field.level
    kmax = dbeta.shape[0]
    while factor > 1:
        level += 1
        n = dbeta.shape[1]
        fine = np.empty((kmax, 2 * n))
        half_sd = math.sqrt(dt / 4.0)
        for k in range(kmax):
            xi = half_sd * _stream_normals(field.seed, _stream_id(field.stream, k, level), n)
            half = 0.5 * dbeta[k]
            fine[k, 0::2] = half + xi
            fine[k, 1::2] = half - xi
        dbeta = fine
        dt /= 2.0
        factor //= 2
    return QWienerField(field.basis, field.nodes, dt, dbeta, field.seed,
                        stream=field.stream, level=level)
