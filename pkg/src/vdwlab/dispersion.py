"""Dispersion coefficients, dipole couplings, and Coulomb-expansion checks.

The coefficient computed here is the projected-resolvent quadratic form of
the dipole-dipole coupling against the product of atomic ground states; it
is the 1/R^6 prefactor of the long-range pair attraction.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate

from .core import (
    COULOMB_3D,
    WELL_1D,
    WELL_3D,
    AtomSpec,
    Decomposition,
    GridSpec,
    SystemConfig,
    WaveFunction,
)
from .errors import (
    ConfigurationError,
    DegenerateGroundStateError,
    PreconditionError,
)
from .operators import (
    LinearOperator,
    antisymmetrizer_matvec,
    build_decomposition_hamiltonian,
    coordinate_views,
    multiplication_operator,
    product_state,
)
from .spectral import ResolventSettings, low_spectrum, projected_resolvent_apply

CONDITION_D_GAP = 1e-6


@dataclass(frozen=True)
class DipoleCoupling:
    """Dipole-dipole coupling function for one atom pair.

    In 3d, multiplies by sum_{l<=Z_i < m} (z_l . z_m - 3 (z_l . v)(z_m . v));
    the 1d surrogate drops the directional term and uses the plain product.
    """

    direction_v: tuple[float, float, float] | None
    cluster_sizes: tuple[int, int]

    def __post_init__(self):
        if self.direction_v is not None:
            v = np.asarray(self.direction_v, dtype=float)
            if v.shape != (3,):
                raise ConfigurationError("direction_v must be a 3-vector")
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ConfigurationError("direction_v must be a unit vector")
            object.__setattr__(self, "direction_v", tuple(v))


def dipole_values(coupling: DipoleCoupling, grid: GridSpec) -> np.ndarray:
    """The coupling as a multiplication array on the pair tensor grid.

    Coordinates are displacements from the respective nucleus, so the two
    atoms are both referred to the origin of their own factor.
    """
    zi, zj = coupling.cluster_sizes
    n = zi + zj
    d = grid.axes_per_particle()
    views = coordinate_views(grid, n)
    if d == 3:
        if coupling.direction_v is None:
            raise ConfigurationError("3d dipole coupling needs a direction")
        v = np.asarray(coupling.direction_v)
        total = 0.0
        for l in range(zi):
            for m in range(zi, n):
                dot = sum(views[l * 3 + c] * views[m * 3 + c] for c in range(3))
                lv = sum(views[l * 3 + c] * v[c] for c in range(3))
                mv = sum(views[m * 3 + c] * v[c] for c in range(3))
                total = total + dot - 3.0 * lv * mv
    else:
        total = 0.0
        for l in range(zi):
            for m in range(zi, n):
                total = total + views[l] * views[m]
    return total + np.zeros((grid.points_per_axis,) * (n * d))


def dipole_coupling_apply(coupling: DipoleCoupling, psi: WaveFunction) -> WaveFunction:
    """Multiply a pair wavefunction by the dipole-dipole coupling."""
    n = sum(coupling.cluster_sizes)
    if psi.particle_count != n:
        raise ConfigurationError(
            f"wavefunction has {psi.particle_count} particles, coupling expects {n}"
        )
    vals = dipole_values(coupling, psi.grid)
    return WaveFunction(psi.tensor() * vals, psi.grid, n)


@dataclass
class DispersionResult:
    sigma: float
    resolvent_residual: float
    direction_spread: float = 0.0
    condition_gap: float = math.inf
    direction_invariant: bool | None = None
    sigma_by_direction: dict | None = None


def _atom_at_origin(atom: AtomSpec, dim: int) -> AtomSpec:
    return dataclasses.replace(atom, position=(0.0,) * dim)


def _atom_ground(atom: AtomSpec, grid: GridSpec, settings: ResolventSettings,
                 seed: int = 0):
    """Ground energy, state, and gap of one atom centered at the origin.

    Multi-electron atoms are solved in the antisymmetric (spinless fermion)
    sector.
    """
    dim = 3 if atom.potential_kind in (COULOMB_3D, WELL_3D) else 1
    if grid.geometry == "radial":
        dim = 3
    atom0 = _atom_at_origin(atom, dim if grid.geometry != "radial" else 3)
    cfg = SystemConfig(atoms=(atom0,), electron_count=atom.charge_Z)
    a = Decomposition((tuple(range(atom.charge_Z)),))
    from .operators import build_cluster_hamiltonian

    op = build_cluster_hamiltonian(cfg, a, 0, grid)
    project = None
    if atom.charge_Z >= 2:
        project = antisymmetrizer_matvec(grid, atom.charge_Z)
    force_it = project is not None and op.size > 0  # sector solve is iterative
    res = low_spectrum(op, 2, settings, seed=seed, force_iterative=force_it,
                       project=project)
    gap = float(res.eigenvalues[1] - res.eigenvalues[0])
    return res.eigenvalues[0], res.eigenvectors[0], gap, op


def _pair_operator(atom_i: AtomSpec, atom_j: AtomSpec, grid: GridSpec) -> LinearOperator:
    """Non-interacting pair Hamiltonian, both atoms referred to the origin."""
    dim = grid.dim_per_particle
    ai = _atom_at_origin(atom_i, dim)
    aj = _atom_at_origin(atom_j, dim)
    cfg = SystemConfig(atoms=(ai, aj), electron_count=ai.charge_Z + aj.charge_Z)
    zi = ai.charge_Z
    a = Decomposition((tuple(range(zi)), tuple(range(zi, zi + aj.charge_Z))))
    return build_decomposition_hamiltonian(cfg, a, grid)


def _sigma_from_states(atom_i: AtomSpec, atom_j: AtomSpec, v, grid: GridSpec,
                       settings: ResolventSettings,
                       phi_i: WaveFunction, phi_j: WaveFunction,
                       e_i: float, e_j: float) -> tuple[float, float]:
    zi, zj = atom_i.charge_Z, atom_j.charge_Z
    coupling = DipoleCoupling(tuple(v) if v is not None else None, (zi, zj))
    pair_op = _pair_operator(atom_i, atom_j, grid)
    clusters = (tuple(range(zi)), tuple(range(zi, zi + zj)))
    product = product_state([phi_i, phi_j], clusters, grid).normalized()
    b = dipole_coupling_apply(coupling, product)
    overlap = product.inner(b)
    b = WaveFunction(b.coefficients - overlap * product.coefficients, grid,
                     b.particle_count)
    lam = e_i + e_j
    x = projected_resolvent_apply(pair_op, product, lam, b, settings)
    w = grid.volume_element(b.particle_count)
    sigma = float(b.coefficients @ x.coefficients) * w
    # defect of the defining equation, relative to |b|
    p = product.coefficients / np.linalg.norm(product.coefficients)

    def proj(vv):
        return vv - (p @ vv) * p

    resid = np.linalg.norm(proj(pair_op.matvec(proj(x.coefficients))
                                - lam * proj(x.coefficients)) - proj(b.coefficients))
    resid /= np.linalg.norm(b.coefficients)
    return sigma, float(resid)


def sigma_coefficient(atom_i: AtomSpec, atom_j: AtomSpec, v, grid: GridSpec,
                      settings: ResolventSettings, seed: int = 0) -> DispersionResult:
    """Dispersion coefficient of one atom pair.

    Computes both atomic ground states, forms the dipole-coupled product,
    and evaluates the projected-resolvent quadratic form at the sum of the
    atomic ground energies.  The ground states must be non-degenerate
    (checked through the excitation gaps).
    """
    e_i, phi_i, gap_i, _ = _atom_ground(atom_i, grid, settings, seed)
    e_j, phi_j, gap_j, _ = _atom_ground(atom_j, grid, settings, seed + 1)
    gap = min(gap_i, gap_j)
    if gap <= CONDITION_D_GAP:
        raise DegenerateGroundStateError(
            f"atomic excitation gap {gap:.3e} is below {CONDITION_D_GAP:.0e}; "
            "the dispersion coefficient is not defined for degenerate ground states"
        )
    sigma, resid = _sigma_from_states(atom_i, atom_j, v, grid, settings,
                                      phi_i, phi_j, e_i, e_j)
    return DispersionResult(sigma=sigma, resolvent_residual=resid, condition_gap=gap)


def sigma_with_cutoff_states(atom_i: AtomSpec, atom_j: AtomSpec, v, grid: GridSpec,
                             settings: ResolventSettings, cutoff_radius: float,
                             seed: int = 0) -> tuple[float, float, float]:
    """Coefficient from exact versus cut-off ground states.

    Returns (sigma_exact, sigma_cutoff, difference); the difference is
    reported, not asserted, since at finite grids it mixes boundary and
    cutoff effects.
    """
    from .feshbach import smooth_cutoff

    exact = sigma_coefficient(atom_i, atom_j, v, grid, settings, seed)
    e_i, phi_i, _, _ = _atom_ground(atom_i, grid, settings, seed)
    e_j, phi_j, _, _ = _atom_ground(atom_j, grid, settings, seed + 1)
    chi = smooth_cutoff(cutoff_radius)

    def cut(phi: WaveFunction) -> WaveFunction:
        views = coordinate_views(phi.grid, phi.particle_count)
        d = phi.grid.axes_per_particle()
        mask = 1.0
        for p in range(phi.particle_count):
            r2 = sum(views[p * d + c] ** 2 for c in range(d))
            mask = mask * chi(np.sqrt(r2))
        cutstate = phi.tensor() * mask
        out = WaveFunction(cutstate, phi.grid, phi.particle_count)
        if out.norm() < 0.5:
            raise PreconditionError("cutoff removes more than half the state mass")
        return out.normalized()

    sig_cut, _ = _sigma_from_states(atom_i, atom_j, v, grid, settings,
                                    cut(phi_i), cut(phi_j), e_i, e_j)
    return exact.sigma, sig_cut, sig_cut - exact.sigma


def direction_invariance_check(atom_i: AtomSpec, atom_j: AtomSpec, directions,
                               grid: GridSpec, settings: ResolventSettings,
                               seed: int = 0) -> DispersionResult:
    """Evaluate the coefficient along several unit vectors and compare.

    Only meaningful for 3d models; the spread passes when it stays within
    ten times the solver tolerance.
    """
    if grid.dim_per_particle != 3:
        raise PreconditionError("direction invariance applies to 3d models only")
    directions = [tuple(np.asarray(v, dtype=float)) for v in directions]
    if not directions:
        raise ConfigurationError("at least one direction is required")
    e_i, phi_i, gap_i, _ = _atom_ground(atom_i, grid, settings, seed)
    e_j, phi_j, gap_j, _ = _atom_ground(atom_j, grid, settings, seed + 1)
    gap = min(gap_i, gap_j)
    if gap <= CONDITION_D_GAP:
        raise DegenerateGroundStateError(
            f"atomic excitation gap {gap:.3e} too small for a defined coefficient"
        )
    values = {}
    worst_resid = 0.0
    for v in directions:
        sig, resid = _sigma_from_states(atom_i, atom_j, v, grid, settings,
                                        phi_i, phi_j, e_i, e_j)
        values[v] = sig
        worst_resid = max(worst_resid, resid)
    base = values[directions[0]]
    spread = max(abs(s - base) for s in values.values())
    tol = 10.0 * settings.tolerance * max(1.0, abs(base))
    return DispersionResult(sigma=base, resolvent_residual=worst_resid,
                            direction_spread=spread, condition_gap=gap,
                            direction_invariant=bool(spread <= tol),
                            sigma_by_direction=values)


# ---------------------------------------------------------------------------
# multipole expansion of the neutral-pair Coulomb combination

def pair_coulomb_combination(z_l: np.ndarray, z_m: np.ndarray,
                             y: np.ndarray) -> np.ndarray:
    """The four-term neutral-pair Coulomb expression at displacements z.

    -1/|y+z_l| - 1/|y-z_m| + 1/|y| + 1/|y+z_l-z_m|, broadcasting over
    leading sample axes.
    """
    z_l = np.asarray(z_l, dtype=float)
    z_m = np.asarray(z_m, dtype=float)
    y = np.asarray(y, dtype=float)

    def inv_norm(w):
        return 1.0 / np.sqrt(np.sum(w * w, axis=-1))

    return (-inv_norm(y + z_l) - inv_norm(y - z_m) + inv_norm(y)
            + inv_norm(y + z_l - z_m))


def dipole_order_term(z_l: np.ndarray, z_m: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Leading multipole coefficient: z_l . z_m - 3 (z_l . yhat)(z_m . yhat)."""
    z_l = np.asarray(z_l, dtype=float)
    z_m = np.asarray(z_m, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    dot = np.sum(z_l * z_m, axis=-1)
    return dot - 3.0 * np.sum(z_l * y_hat, axis=-1) * np.sum(z_m * y_hat, axis=-1)


@dataclass
class MultipoleReport:
    """Fitted inverse-separation expansion of the neutral-pair combination.

    ``coefficients_by_order[k]`` holds, per displacement sample, the fitted
    coefficient of |y|^(-k).  Orders 0..2 cancel for neutral clusters; the
    order-3 coefficient is the dipole-dipole term.
    """

    coefficients_by_order: dict[int, np.ndarray]
    sup_norm_domain: float
    fit_ladder: tuple[float, float]
    fit_residual: float


MULTIPOLE_MAX_ORDER = 3
_FIT_BASIS_ORDERS = 10
_FIT_LADDER = (10.0, 1000.0)
_FIT_POINTS = 60


def multipole_expand(z_l, z_m, y_ij) -> MultipoleReport:
    """Fit the inverse-power coefficients of the pair combination.

    Samples the expression on a geometric ladder of separations above the
    given one (same direction) and least-squares fits powers |y|^0..-K.
    Every displacement must satisfy |z_l|, |z_m|, |z_l - z_m| <= |y|/3.
    """
    z_l = np.atleast_2d(np.asarray(z_l, dtype=float))
    z_m = np.atleast_2d(np.asarray(z_m, dtype=float))
    y = np.asarray(y_ij, dtype=float)
    if z_l.shape != z_m.shape or z_l.shape[-1] != 3 or y.shape != (3,):
        raise ConfigurationError("displacements and separation must be 3-vectors")
    ynorm = float(np.linalg.norm(y))
    if ynorm == 0.0:
        raise ConfigurationError("separation must be nonzero")
    limit = ynorm / 3.0
    sup = max(np.linalg.norm(z_l, axis=-1).max(initial=0.0),
              np.linalg.norm(z_m, axis=-1).max(initial=0.0),
              np.linalg.norm(z_l - z_m, axis=-1).max(initial=0.0))
    if sup > limit:
        raise PreconditionError(
            f"displacements reach {sup:.3g}, over the allowed |y|/3 = {limit:.3g}"
        )
    y_hat = y / ynorm
    scales = np.geomspace(_FIT_LADDER[0], _FIT_LADDER[1], _FIT_POINTS)
    seps = ynorm * scales
    u = 1.0 / seps
    # samples x ladder matrix of the combination
    vals = np.stack([
        pair_coulomb_combination(z_l, z_m, s * y_hat) for s in seps
    ], axis=-1)
    u_scaled = u / u.max()
    design = np.vander(u_scaled, _FIT_BASIS_ORDERS + 1, increasing=True)
    coef_scaled, *_ = np.linalg.lstsq(design, vals.reshape(-1, u.size).T, rcond=None)
    powers = u.max() ** np.arange(_FIT_BASIS_ORDERS + 1)
    coefs = coef_scaled / powers[:, None]
    fitted = design @ coef_scaled
    resid = float(np.abs(fitted - vals.reshape(-1, u.size).T).max())
    by_order = {k: coefs[k].reshape(z_l.shape[:-1]) for k in range(MULTIPOLE_MAX_ORDER + 1)}
    return MultipoleReport(by_order, float(sup), (float(seps[0]), float(seps[-1])),
                           resid)


# ---------------------------------------------------------------------------
# Newton's theorem quadrature

@dataclass
class NewtonCheck:
    max_relative_deviation: float
    deviations: np.ndarray
    pair_residuals: np.ndarray | None
    total_charge: float


def _exterior_potential(profile, support_radius: float, s: float) -> float:
    """Potential of a spherical charge density at distance s from its center."""

    def integrand(theta, r):
        return (2.0 * math.pi * profile(r) * r * r * math.sin(theta)
                / math.sqrt(s * s + r * r + 2.0 * s * r * math.cos(theta)))

    val, _ = scipy.integrate.dblquad(
        integrand, 0.0, support_radius, 0.0, math.pi,
        epsabs=1e-12, epsrel=1e-11)
    return float(val)


def newton_cancellation_check(density_profile, support_radius: float,
                              eval_points, pair_displacement=None) -> NewtonCheck:
    """Exterior potential of a spherical density versus the point-charge law.

    ``density_profile`` is a radial function, compactly supported inside
    ``support_radius``.  For every evaluation point strictly outside the
    support the potential is compared to Q/|y|.  When ``pair_displacement``
    is given, the four-term neutral-pair combination integrated against the
    density is evaluated too; it vanishes identically for exterior points.
    """
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if pts.shape[-1] != 3:
        raise ConfigurationError("evaluation points must be 3-vectors")
    dists = np.linalg.norm(pts, axis=-1)
    if np.any(dists <= support_radius):
        raise PreconditionError("evaluation points must lie outside the support")
    charge, _ = scipy.integrate.quad(
        lambda r: 4.0 * math.pi * density_profile(r) * r * r,
        0.0, support_radius, epsabs=1e-13, epsrel=1e-12)
    devs = []
    for s in dists:
        u = _exterior_potential(density_profile, support_radius, float(s))
        devs.append(abs(u - charge / s) / abs(charge / s))
    pair = None
    if pair_displacement is not None:
        zm = np.asarray(pair_displacement, dtype=float)
        pair = []
        for p, s in zip(pts, dists):
            shifted = float(np.linalg.norm(p - zm))
            if shifted <= support_radius:
                raise PreconditionError("shifted evaluation point falls inside the support")
            combo = (-_exterior_potential(density_profile, support_radius, float(s))
                     - charge / shifted + charge / s
                     + _exterior_potential(density_profile, support_radius, shifted))
            scale = charge / s
            pair.append(combo / scale)
        pair = np.asarray(pair)
    return NewtonCheck(float(np.max(devs)), np.asarray(devs), pair, float(charge))
