"""Butcher tableaux and the algebraic conditions behind multi-symplecticity.

A single Runge-Kutta tableau is symplectic when

    b_m b_n - b_m a_mn - b_n a_nm = 0   for all m, n.

The partitioned schemes couple several tableaux; each system has its own
family of residual conditions (checked entrywise below). Checkers return
a ConditionReport carrying the max residual per condition family, so
callers choose the tolerance.
"""

import math

import numpy as np


class ButcherTableau:
    """Coefficients (A, b) of an s-stage Runge-Kutta method; c = row sums of A."""

    def __init__(self, A, b, name=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).ravel()
        s = self.b.size
        if s == 0:
            raise ValueError("tableau needs at least one stage")
        if self.A.shape != (s, s):
            raise ValueError(f"A must be {s}x{s}, got {self.A.shape}")
        self.c = self.A.sum(axis=1)
        self.name = name

    @property
    def s(self):
        return self.b.size

    def __repr__(self):
        return f"ButcherTableau({self.name or self.A.tolist()})"


def _sqrt3_over_6():
    return math.sqrt(3.0) / 6.0


LIBRARY = {
    "midpoint": lambda: ButcherTableau([[0.5]], [1.0], "midpoint"),
    "euler-a": lambda: ButcherTableau([[0.0]], [1.0], "euler-a"),
    "euler-b": lambda: ButcherTableau([[1.0]], [1.0], "euler-b"),
    "gauss2": lambda: ButcherTableau(
        [[0.25, 0.25 - _sqrt3_over_6()], [0.25 + _sqrt3_over_6(), 0.25]],
        [0.5, 0.5], "gauss2"),
}


def get_tableau(name):
    try:
        return LIBRARY[name]()
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; known: {sorted(LIBRARY)}") from None


class ConditionReport:
    """Max residuals of a set of algebraic conditions, judged at a tolerance."""

    def __init__(self, label, residuals, tol=None):
        self.label = label
        self.residuals = dict(residuals)
        self.tol = tol

    @property
    def max_residual(self):
        return max(self.residuals.values())

    def passed(self, tol=None):
        tol = self.tol if tol is None else tol
        if tol is None:
            raise ValueError("no tolerance given")
        return self.max_residual <= tol

    def failing(self, tol=None):
        tol = self.tol if tol is None else tol
        return sorted(name for name, r in self.residuals.items() if r > tol)

    def __repr__(self):
        body = ", ".join(f"{k}={v:.3e}" for k, v in self.residuals.items())
        return f"ConditionReport({self.label}: {body})"


def symplectic_defect(t):
    """Matrix of residuals b_m b_n - b_m a_mn - b_n a_nm."""
    scaled = t.b[:, None] * t.A
    return np.outer(t.b, t.b) - scaled - scaled.T


def is_symplectic(t, tol=None):
    return ConditionReport(
        f"symplectic[{t.name or t.s}-stage]",
        {"symplectic": float(np.abs(symplectic_defect(t)).max())},
        tol)


def _pair_defect(a_left, b_left, a_right, b_right):
    """Residuals of a_right[n,m] b_left[m] + a_left[m,n] b_right[n] - b_left[m] b_right[n].

    Index convention: entry (m, n) of the returned matrix.
    """
    return (a_right.T * b_left[:, None]
            + a_left * b_right[None, :]
            - np.outer(b_left, b_right))


def _check_stages(named, group_s=None, group_r=None):
    for name, t, which in named:
        count = group_s if which == "s" else group_r
        if t.s != count:
            raise ValueError(f"tableau {name} has {t.s} stages, expected {count}")


def check_prk_wave(temporal, noise, spatial, tol=None):
    """Conditions for the partitioned wave scheme.

    ``temporal`` is the pair (t1, t2) of temporal tableaux, ``noise`` the
    temporal noise tableau, ``spatial`` the pair (s1, s2). Three
    families are reported:

      noise:     abar_nm bt1_m + at1_mn bbar_n - bt1_m bbar_n
      temporal:  at2_nm  bt1_m + at1_mn bt2_n  - bt1_m bt2_n
      spatial:   a2_ij   b1_i  + a1_ji  b2_j   - b1_i  b2_j
    """
    t1, t2 = temporal
    s1, s2 = spatial
    r, s = t1.s, s1.s
    _check_stages([("temporal-1", t1, "r"), ("temporal-2", t2, "r"),
                   ("temporal-noise", noise, "r"),
                   ("spatial-1", s1, "s"), ("spatial-2", s2, "s")],
                  group_s=s, group_r=r)
    res = {
        "noise": float(np.abs(_pair_defect(t1.A, t1.b, noise.A, noise.b)).max()),
        "temporal": float(np.abs(_pair_defect(t1.A, t1.b, t2.A, t2.b)).max()),
        "spatial": float(np.abs(_pair_defect(s1.A, s1.b, s2.A, s2.b).T).max()),
    }
    return ConditionReport("prk-wave", res, tol)


def check_prk_nls(temporal, noise, spatial, tol=None):
    """Conditions for the partitioned NLS scheme.

    ``temporal`` = (t1, t2), ``noise`` = (n1, n2), ``spatial`` =
    (s1, s2, s3, s4). Seven families, including the weight equalities
    b1 = b2 and bt1 = bt2.
    """
    t1, t2 = temporal
    n1, n2 = noise
    s1, s2, s3, s4 = spatial
    r, s = t1.s, s1.s
    _check_stages([("temporal-1", t1, "r"), ("temporal-2", t2, "r"),
                   ("temporal-noise-1", n1, "r"), ("temporal-noise-2", n2, "r"),
                   ("spatial-1", s1, "s"), ("spatial-2", s2, "s"),
                   ("spatial-3", s3, "s"), ("spatial-4", s4, "s")],
                  group_s=s, group_r=r)
    res = {
        "temporal": float(np.abs(_pair_defect(t1.A, t1.b, t2.A, t2.b)).max()),
        "noise-1-temporal-2": float(np.abs(_pair_defect(n1.A, n1.b, t2.A, t2.b)).max()),
        "temporal-1-noise-2": float(np.abs(_pair_defect(t1.A, t1.b, n2.A, n2.b)).max()),
        "noise": float(np.abs(_pair_defect(n1.A, n1.b, n2.A, n2.b)).max()),
        "spatial-31": float(np.abs(_nls_spatial_defect(s3, s1)).max()),
        "spatial-24": float(np.abs(_nls_spatial_defect_24(s2, s4)).max()),
        "weights": max(float(np.abs(s1.b - s2.b).max()), float(np.abs(t1.b - t2.b).max())),
    }
    return ConditionReport("prk-nls", res, tol)


def _nls_spatial_defect(s3, s1):
    # a3_ij b1_j + b3_i a1_ji - b3_i b1_j, entry (i, j)
    return s3.A * s1.b[None, :] + s1.A.T * s3.b[:, None] - np.outer(s3.b, s1.b)


def _nls_spatial_defect_24(s2, s4):
    # a2_ij b4_i + b2_j a4_ji - b4_i b2_j, entry (i, j)
    return s2.A * s4.b[:, None] + s4.A.T * s2.b[None, :] - np.outer(s4.b, s2.b)


def check_prk_kdv(temporal, noise, spatial, tol=None):
    """Conditions for the partitioned KdV scheme.

    ``temporal`` = (t1, t2), ``noise`` a single tableau, ``spatial`` =
    (s1, s2, s3, s4). Includes the weight equalities b2 = b3, b2 = b4
    and bt1 = bt2.
    """
    t1, t2 = temporal
    s1, s2, s3, s4 = spatial
    r, s = t1.s, s1.s
    _check_stages([("temporal-1", t1, "r"), ("temporal-2", t2, "r"),
                   ("temporal-noise", noise, "r"),
                   ("spatial-1", s1, "s"), ("spatial-2", s2, "s"),
                   ("spatial-3", s3, "s"), ("spatial-4", s4, "s")],
                  group_s=s, group_r=r)
    # a3_ij b2_i + b3_j a2_ji - b2_i b3_j, entry (i, j)
    spatial_32 = (s3.A * s2.b[:, None] + s2.A.T * s3.b[None, :] - np.outer(s2.b, s3.b))
    # a1_ij b4_i + b1_j a4_ji - b4_i b1_j, entry (i, j)
    spatial_14 = (s1.A * s4.b[:, None] + s4.A.T * s1.b[None, :] - np.outer(s4.b, s1.b))
    res = {
        "temporal": float(np.abs(_pair_defect(t1.A, t1.b, t2.A, t2.b)).max()),
        "noise-temporal-2": float(np.abs(_pair_defect(noise.A, noise.b, t2.A, t2.b)).max()),
        "spatial-32": float(np.abs(spatial_32).max()),
        "spatial-14": float(np.abs(spatial_14).max()),
        "weights": max(float(np.abs(s2.b - s3.b).max()),
                       float(np.abs(s2.b - s4.b).max()),
                       float(np.abs(t1.b - t2.b).max())),
    }
    return ConditionReport("prk-kdv", res, tol)


class PartitionedTableau:
    """Named collection of tableaux keyed by role (temporal-1, spatial-2, ...)."""

    WAVE_ROLES = ("temporal-1", "temporal-2", "temporal-noise", "spatial-1", "spatial-2")
    NLS_ROLES = ("temporal-1", "temporal-2", "temporal-noise-1", "temporal-noise-2",
                 "spatial-1", "spatial-2", "spatial-3", "spatial-4")
    KDV_ROLES = ("temporal-1", "temporal-2", "temporal-noise",
                 "spatial-1", "spatial-2", "spatial-3", "spatial-4")

    def __init__(self, entries):
        self.entries = dict(entries)
        spatial = [t.s for role, t in self.entries.items() if role.startswith("spatial")]
        temporal = [t.s for role, t in self.entries.items() if role.startswith("temporal")]
        if spatial and len(set(spatial)) != 1:
            raise ValueError("spatial tableaux must share one stage count")
        if temporal and len(set(temporal)) != 1:
            raise ValueError("temporal tableaux must share one stage count")

    def __getitem__(self, role):
        return self.entries[role]

    @classmethod
    def all_of(cls, tableau, roles):
        return cls({role: tableau for role in roles})

    def check(self, system_name, tol=None):
        e = self.entries
        if system_name == "wave":
            return check_prk_wave((e["temporal-1"], e["temporal-2"]), e["temporal-noise"],
                                  (e["spatial-1"], e["spatial-2"]), tol)
        if system_name == "nls":
            return check_prk_nls((e["temporal-1"], e["temporal-2"]),
                                 (e["temporal-noise-1"], e["temporal-noise-2"]),
                                 (e["spatial-1"], e["spatial-2"], e["spatial-3"], e["spatial-4"]),
                                 tol)
        if system_name == "kdv":
            return check_prk_kdv((e["temporal-1"], e["temporal-2"]), e["temporal-noise"],
                                 (e["spatial-1"], e["spatial-2"], e["spatial-3"], e["spatial-4"]),
                                 tol)
        raise ValueError(f"unknown system {system_name!r}")
