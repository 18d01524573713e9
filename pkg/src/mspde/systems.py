"""The three stochastic Hamiltonian PDE systems in first-order form.

Every system is written as  M dz + K z_x dt = grad S1(z) dt + grad S2(z) o dW
with constant skew-symmetric M, K and smooth potentials S1, S2:

  wave:  z = (u, p, v, w) with v = u_t, w = u_x; p is a structural
         placeholder (zero rows in M and K) that stays constant;
         S1 = (w^2 - v^2)/2 - F(u), S2 = G(u) for a drift nonlinearity
         f = F' and a diffusion nonlinearity g = G'.
  nls:   z = (p, q, v, w) from u = p + i q, v = p_x, w = q_x;
         S1 = -(p^2+q^2)^2/4 - (v^2+w^2)/2, S2 = (p^2+q^2)/2.
  kdv:   z = (u, v, rho, w) with rho_x = u, w = u_x;
         S1 = u^3/6 - u v + beta w^2/2, S2 = lambda rho.

Gradients and Hessians are analytic; state arrays have shape (4,) or
(4, N) with components along the first axis.
"""

import numpy as np

from .errors import ConfigError


class Nonlinearity:
    """Scalar nonlinearity with derivative and antiderivative (F' = f)."""

    def __init__(self, name, f, df, antiderivative):
        self.name = name
        self.f = f
        self.df = df
        self.antiderivative = antiderivative

    def __call__(self, u):
        return self.f(u)

    def __repr__(self):
        return f"Nonlinearity({self.name!r})"


NONLINEARITIES = {
    "zero": Nonlinearity("zero", lambda u: np.zeros_like(u), lambda u: np.zeros_like(u),
                         lambda u: np.zeros_like(u)),
    "one": Nonlinearity("one", lambda u: np.ones_like(u), lambda u: np.zeros_like(u),
                        lambda u: np.asarray(u, dtype=float)),
    "identity": Nonlinearity("identity", lambda u: np.asarray(u, dtype=float),
                             lambda u: np.ones_like(u), lambda u: 0.5 * u * u),
    "cubic": Nonlinearity("cubic", lambda u: u ** 3, lambda u: 3.0 * u * u,
                          lambda u: 0.25 * u ** 4),
    "sin": Nonlinearity("sin", np.sin, np.cos, lambda u: 1.0 - np.cos(u)),
}

# integer ids shared with the compiled kernels
NONLINEARITY_IDS = {"zero": 0, "one": 1, "identity": 2, "cubic": 3, "sin": 4}


def _hess_from_diag_blocks(z, fill):
    """Allocate an (N, 4, 4) (or (4, 4)) Hessian array and let `fill` populate it."""
    single = z.ndim == 1
    n = 1 if single else z.shape[1]
    h = np.zeros((n, 4, 4))
    fill(z[:, None] if single else z, h)
    return h[0] if single else h


class HamiltonianSystem:
    """Constant M, K plus analytic potential gradients and Hessians."""

    dim = 4

    def __init__(self, label, M, K, component_names):
        self.label = label
        self.M = np.asarray(M, dtype=float)
        self.K = np.asarray(K, dtype=float)
        self.component_names = tuple(component_names)

    # subclasses implement grad_S1, grad_S2, hess_S1, hess_S2, S1, S2

    def linear_part(self):
        """Constant matrix A1 with grad S1(z) = A1 z + nonlinear remainder."""
        return self.hess_S1(np.zeros(4))

    def __repr__(self):
        return f"<{type(self).__name__} {self.label}>"


class WaveSystem(HamiltonianSystem):
    def __init__(self, f="sin", g="sin"):
        if f not in NONLINEARITIES:
            raise ConfigError(f"system.f: unknown nonlinearity {f!r}")
        if g not in NONLINEARITIES:
            raise ConfigError(f"system.g: unknown nonlinearity {g!r}")
        self.f = NONLINEARITIES[f]
        self.g = NONLINEARITIES[g]
        M = [[0, 0, 1, 0], [0, 0, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 0]]
        K = [[0, 0, 0, -1], [0, 0, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0]]
        super().__init__(f"wave(f={f}, g={g})", M, K, ("u", "p", "v", "w"))

    def S1(self, z):
        u, _, v, w = z
        return 0.5 * (w * w - v * v) - self.f.antiderivative(u)

    def S2(self, z):
        return self.g.antiderivative(z[0])

    def grad_S1(self, z):
        u, p, v, w = z
        return np.stack([-self.f(u), np.zeros_like(p), -v, w])

    def grad_S2(self, z):
        u, p, v, w = z
        zero = np.zeros_like(p)
        return np.stack([self.g(u), zero, zero, zero])

    def hess_S1(self, z):
        def fill(zz, h):
            h[:, 0, 0] = -self.f.df(zz[0])
            h[:, 2, 2] = -1.0
            h[:, 3, 3] = 1.0
        return _hess_from_diag_blocks(np.asarray(z, dtype=float), fill)

    def hess_S2(self, z):
        def fill(zz, h):
            h[:, 0, 0] = self.g.df(zz[0])
        return _hess_from_diag_blocks(np.asarray(z, dtype=float), fill)


class NLSSystem(HamiltonianSystem):
    def __init__(self):
        M = [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]
        K = [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]]
        super().__init__("nls", M, K, ("p", "q", "v", "w"))

    def S1(self, z):
        p, q, v, w = z
        return -0.25 * (p * p + q * q) ** 2 - 0.5 * (v * v + w * w)

    def S2(self, z):
        p, q = z[0], z[1]
        return 0.5 * (p * p + q * q)

    def grad_S1(self, z):
        p, q, v, w = z
        amp = p * p + q * q
        return np.stack([-amp * p, -amp * q, -v, -w])

    def grad_S2(self, z):
        p, q, v, w = z
        zero = np.zeros_like(v)
        return np.stack([p, q, zero, zero])

    def hess_S1(self, z):
        def fill(zz, h):
            p, q = zz[0], zz[1]
            h[:, 0, 0] = -(3.0 * p * p + q * q)
            h[:, 0, 1] = h[:, 1, 0] = -2.0 * p * q
            h[:, 1, 1] = -(p * p + 3.0 * q * q)
            h[:, 2, 2] = -1.0
            h[:, 3, 3] = -1.0
        return _hess_from_diag_blocks(np.asarray(z, dtype=float), fill)

    def hess_S2(self, z):
        def fill(zz, h):
            h[:, 0, 0] = 1.0
            h[:, 1, 1] = 1.0
        return _hess_from_diag_blocks(np.asarray(z, dtype=float), fill)


class KdVSystem(HamiltonianSystem):
    def __init__(self, beta=1.0, lam=1.0):
        if beta <= 0:
            raise ConfigError("system.beta: dispersion coefficient must be positive")
        if lam <= 0:
            raise ConfigError("system.lambda: noise amplitude must be positive")
        self.beta = float(beta)
        self.lam = float(lam)
        M = [[0, 0, -0.5, 0], [0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0, 0, 0]]
        K = [[0, 0, 0, -beta], [0, 0, -1, 0], [0, 1, 0, 0], [beta, 0, 0, 0]]
        super().__init__(f"kdv(beta={beta}, lambda={lam})", M, K, ("u", "v", "rho", "w"))

    def S1(self, z):
        u, v, rho, w = z
        return u ** 3 / 6.0 - u * v + 0.5 * self.beta * w * w

    def S2(self, z):
        return self.lam * z[2]

    def grad_S1(self, z):
        u, v, rho, w = z
        return np.stack([0.5 * u * u - v, -u, np.zeros_like(rho), self.beta * w])

    def grad_S2(self, z):
        u, v, rho, w = z
        zero = np.zeros_like(u)
        return np.stack([zero, zero, np.full_like(rho, self.lam), zero])

    def hess_S1(self, z):
        def fill(zz, h):
            h[:, 0, 0] = zz[0]
            h[:, 0, 1] = h[:, 1, 0] = -1.0
            h[:, 3, 3] = self.beta
        return _hess_from_diag_blocks(np.asarray(z, dtype=float), fill)

    def hess_S2(self, z):
        def fill(zz, h):
            pass
        return _hess_from_diag_blocks(np.asarray(z, dtype=float), fill)


def make_system(name, **params):
    """Build a system from its name: wave (f=..., g=...), nls, kdv (beta=, lam=)."""
    if name == "wave":
        return WaveSystem(**params)
    if name == "nls":
        if params:
            raise ConfigError(f"system: nls takes no parameters, got {sorted(params)}")
        return NLSSystem()
    if name == "kdv":
        return KdVSystem(**params)
    raise ConfigError(f"system.name: unknown system {name!r}")


INITIAL_PROFILES = ("zero", "sech-velocity", "sine-velocity")


def initial_data(system, profile, nodes):
    """Component arrays at t = 0 on the given nodes.

    Wave profiles set (u, u_t, u_x)(0): ``sech-velocity`` is
    (0, sech(x), 0) and ``sine-velocity`` is (0, sin(x), 0); ``zero``
    works for every system.
    """
    nodes = np.asarray(nodes, dtype=float)
    zeros = np.zeros_like(nodes)
    if profile == "zero":
        return {name: zeros.copy() for name in system.component_names}
    if not isinstance(system, WaveSystem):
        raise ConfigError(f"system: profile {profile!r} is only defined for the wave system")
    if profile == "sech-velocity":
        v0 = 1.0 / np.cosh(nodes)
    elif profile == "sine-velocity":
        v0 = np.sin(nodes)
    else:
        raise ConfigError(f"initial data: unknown profile {profile!r}")
    return {"u": zeros.copy(), "p": zeros.copy(), "v": v0, "w": zeros.copy()}
