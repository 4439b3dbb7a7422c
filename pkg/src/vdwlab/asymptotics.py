"""Separation sweeps of the interaction energy and power-law fits.

Grid boxes cannot reach the true long-range regime of Coulomb tails, so
the sweep harness drives the harmonic-pair surrogate, whose coupling plays
the role of the inverse separation cubed; the inverse-sixth law is then an
exact statement about the coupling squared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import AtomSpec, Decomposition, GridSpec, SystemConfig
from .errors import BudgetError, PreconditionError, VdwlabError
from .operators import build_cluster_hamiltonian, build_full_hamiltonian
from .spectral import DENSE_CUTOFF, ResolventSettings, ground_state, low_spectrum

METHOD_TAGS = ("dense", "feshbach", "variational")


def coupling_from_separation(r: float) -> float:
    """The sweep recast: a separation R maps to the coupling 1/R^3."""
    return r ** -3


def drude_pair_config(lam: float, strength: float = 1.0) -> SystemConfig:
    """Two unit harmonic-well atoms with displacement coupling lam."""
    a = AtomSpec(1, "well1d", (0.0,), parameter=strength)
    b = AtomSpec(1, "well1d", (0.0,), parameter=strength)
    return SystemConfig(atoms=(a, b), electron_count=2, dipole_coupling=lam)


@dataclass
class SweepResult:
    abscissae: np.ndarray
    energies: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    failures: list[tuple[float, str, str]] = field(default_factory=list)
    residuals: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.abscissae = np.asarray(self.abscissae, dtype=float)
        if np.any(np.diff(self.abscissae) <= 0):
            raise PreconditionError("abscissae must be strictly increasing")

    def values(self, method: str) -> np.ndarray:
        if method not in self.energies:
            raise PreconditionError(f"no values recorded for method {method!r}")
        return self.energies[method]


def _isolated_energy_sum(cfg: SystemConfig, grid: GridSpec,
                         settings: ResolventSettings, seed: int) -> float:
    from .core import canonical_decomposition

    a = canonical_decomposition(cfg)
    total = 0.0
    for i in range(cfg.atom_count):
        op = build_cluster_hamiltonian(cfg, a, i, grid)
        total += ground_state(op, settings, seed=seed + i).ground_energy
    return total


def _point_dense(cfg, grid, settings, e_inf, seed):
    op = build_full_hamiltonian(cfg, grid)
    if op.size > DENSE_CUTOFF:
        raise BudgetError(f"dense oracle infeasible at size {op.size}")
    res = ground_state(op, settings, seed=seed)
    return res.ground_energy - e_inf, float(res.residual_norms[0])


def _point_feshbach(cfg, grid, settings, e_inf, seed):
    from .feshbach import build_projection, solve_fixed_point

    op = build_full_hamiltonian(cfg, grid)
    antisym = cfg.kind not in ("well1d", "well3d")
    pi = build_projection(cfg, grid, settings, antisymmetrized=antisym, seed=seed)
    if antisym:
        from .operators import symmetrized_operator

        op = symmetrized_operator(op)
    res = solve_fixed_point(op, pi, settings, e_infinity=e_inf, compute_gap=False,
                            seed=seed)
    return res.interaction_energy, res.residual


def _point_variational(cfg, grid, settings, e_inf, seed):
    from .variational import rayleigh_upper_bound

    res = rayleigh_upper_bound(cfg, grid, settings, seed=seed)
    return res.rayleigh_quotient, res.decomposition_defect


_POINT_EVALUATORS = {
    "dense": _point_dense,
    "feshbach": _point_feshbach,
    "variational": _point_variational,
}


def run_sweep(make_config, abscissae, methods, grid: GridSpec,
              settings: ResolventSettings, seed: int = 0) -> SweepResult:
    """Interaction energy at each abscissa for every requested method.

    ``make_config`` maps an abscissa to a system configuration (the Drude
    harness maps a separation R to the coupling 1/R^3).  Per-point failures
    are recorded and the sweep continues.
    """
    for m in methods:
        if m not in _POINT_EVALUATORS:
            raise PreconditionError(f"unknown sweep method {m!r}")
    abscissae = np.asarray(sorted(float(a) for a in abscissae))
    out = {m: np.full(abscissae.size, np.nan) for m in methods}
    res_out = {m: np.full(abscissae.size, np.nan) for m in methods}
    failures: list[tuple[float, str, str]] = []
    for idx, ab in enumerate(abscissae):
        cfg = make_config(float(ab))
        e_inf = _isolated_energy_sum(cfg, grid, settings, seed + 97 * idx)
        for m in methods:
            try:
                val, resid = _POINT_EVALUATORS[m](cfg, grid, settings, e_inf,
                                                  seed + 97 * idx)
                out[m][idx] = val
                res_out[m][idx] = resid
            except VdwlabError as err:
                failures.append((float(ab), m, str(err)))
    meta = {
        "grid": (grid.dim_per_particle, grid.points_per_axis, grid.half_width,
                 grid.geometry),
        "tolerance": settings.tolerance,
        "methods": tuple(methods),
    }
    return SweepResult(abscissae, out, meta, failures, res_out)


@dataclass
class PowerLawFit:
    exponent: float
    coefficient: float
    remainder_exponent: float
    fit_residual: float
    window: tuple[float, float]
    points_used: int


def fit_power_law(sweep: SweepResult, method: str,
                  drop_strongest: int = 2) -> PowerLawFit:
    """Log-log least squares of W ~ -c / R^p, then of the remainder.

    The ``drop_strongest`` largest-|W| points are excluded (strong-coupling
    contamination).  A sign change inside the window means the repulsive
    regime was reached and is an error.
    """
    r = sweep.abscissae
    w = sweep.values(method)
    usable = np.isfinite(w)
    r, w = r[usable], w[usable]
    if r.size < 4 + drop_strongest:
        raise PreconditionError("power-law fits need at least 4 usable points")
    order = np.argsort(np.abs(w))[::-1]
    keep = np.sort(order[drop_strongest:]) if drop_strongest else np.arange(r.size)
    r_fit, w_fit = r[keep], w[keep]
    if np.any(w_fit >= 0):
        raise PreconditionError(
            "nonnegative interaction energy in the fit window: repulsive regime"
        )
    logs_r = np.log(r_fit)
    logs_w = np.log(-w_fit)
    slope, intercept = np.polyfit(logs_r, logs_w, 1)
    exponent = -slope
    coefficient = math.exp(intercept)
    resid = logs_w - (slope * logs_r + intercept)
    rms = float(np.sqrt(np.mean(resid ** 2)))

    # Remainder stage: snap the leading power to its integer, absorb the next
    # power while re-estimating the coefficient, then read off the slope of
    # what is left.  A free-fit coefficient would leak leading-order misfit
    # into the remainder.
    p_int = int(round(exponent))
    design = np.column_stack([r_fit ** -p_int, r_fit ** -(p_int + 1)])
    c_lead = np.linalg.lstsq(design, -w_fit, rcond=None)[0][0]
    remainder = w_fit + c_lead / r_fit ** p_int
    floor = 1e-11 * np.max(np.abs(w_fit))
    good = np.abs(remainder) > floor
    if good.sum() >= 3:
        q_slope = np.polyfit(np.log(r_fit[good]), np.log(np.abs(remainder[good])), 1)[0]
        remainder_exponent = -float(q_slope)
    else:
        remainder_exponent = math.nan
    return PowerLawFit(float(exponent), float(coefficient), remainder_exponent,
                       rms, (float(r_fit.min()), float(r_fit.max())), int(r_fit.size))
