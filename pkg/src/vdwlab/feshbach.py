"""Cut-off product states, rank-one projections, and the Schur-complement
fixed point for the ground energy.

For a rank-one projection P onto a normalized state Phi, the map

    F(lam) = <Phi, H Phi> - <H Phi, (P_perp H P_perp - lam)^{-1} P_perp H Phi>

has the ground energy as a fixed point whenever the projected complement
has a gap above it.  The iteration below is plain Picard with a bisection
safeguard; the second term is evaluated with the projected CG solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Decomposition,
    FACTORIAL_BUDGET,
    GridSpec,
    SystemConfig,
    WaveFunction,
    atomic_decompositions,
    decomposition_sign,
)
from .errors import (
    ConfigurationError,
    ConvergenceError,
    GapError,
    PreconditionError,
)
from .operators import (
    LinearOperator,
    antisymmetrize,
    build_cluster_hamiltonian,
    build_decomposition_hamiltonian,
    coordinate_views,
    product_state,
)
from .spectral import (
    DENSE_CUTOFF,
    ResolventSettings,
    ground_state,
    low_spectrum,
    projected_resolvent_apply,
)


class SmoothCutoff:
    """Smoothed characteristic function: 1 inside R/7, 0 outside R/6."""

    def __init__(self, radius_R: float):
        if radius_R <= 0:
            raise ConfigurationError("cutoff radius must be positive")
        self.radius_R = radius_R
        self.flat_radius = radius_R / 7.0
        self.support_radius = radius_R / 6.0

    @staticmethod
    def _bump(t: np.ndarray) -> np.ndarray:
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = np.exp(-1.0 / t[pos])
        return out

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        t = (self.support_radius - r) / (self.support_radius - self.flat_radius)
        t = np.clip(t, 0.0, 1.0)
        up = self._bump(t)
        down = self._bump(1.0 - t)
        return up / (up + down)


def smooth_cutoff(radius_R: float) -> SmoothCutoff:
    """Radial bump profile used to localize atomic ground states."""
    return SmoothCutoff(radius_R)


@dataclass
class CutoffState:
    """Cut-off product of atomic ground states with its diagnostics."""

    base_state: WaveFunction
    cutoff_radius: float | None
    renormalized: bool
    decomposition: Decomposition
    atom_energies: list[float]
    cut_distances: list[float]
    kept_mass: list[float]
    residual_norm: float

    @property
    def energy_sum(self) -> float:
        return float(sum(self.atom_energies))


def _cutoff_mask(grid: GridSpec, particle_count: int, center, chi: SmoothCutoff):
    views = coordinate_views(grid, particle_count)
    d = grid.axes_per_particle()
    mask = 1.0
    for p in range(particle_count):
        r2 = 0.0
        for c in range(d):
            r2 = r2 + (views[p * d + c] - center[c]) ** 2
        mask = mask * chi(np.sqrt(r2))
    return mask


def build_cutoff_product(cfg: SystemConfig, a: Decomposition, grid: GridSpec,
                         settings: ResolventSettings,
                         cutoff_radius: float | None = None,
                         seed: int = 0) -> CutoffState:
    """Product of per-cluster ground states, each cut off around its nucleus.

    ``cutoff_radius`` defaults to the nuclear separation; pass None
    explicitly stored in the config by using an infinite separation, in
    which case the cutoff is the identity on the grid.  A cutoff that
    removes more than half of any atomic state raises.
    """
    if not a.is_atomic(cfg):
        raise PreconditionError("cut-off products are built on atomic decompositions")
    if cutoff_radius is None:
        r = cfg.separation_R
        cutoff_radius = r if math.isfinite(r) and r > 0 else None
    chi = smooth_cutoff(cutoff_radius) if cutoff_radius is not None else None

    factors = []
    energies = []
    distances = []
    masses = []
    for i, cluster in enumerate(a.clusters):
        op = build_cluster_hamiltonian(cfg, a, i, grid)
        res = ground_state(op, settings, seed=seed + i)
        phi = res.ground_state
        energies.append(res.ground_energy)
        if chi is None:
            factors.append(phi)
            distances.append(0.0)
            masses.append(1.0)
            continue
        mask = _cutoff_mask(grid, len(cluster), cfg.atoms[i].position, chi)
        cut = WaveFunction(phi.tensor() * mask, grid, len(cluster))
        kept = cut.norm()
        if kept < 0.5:
            raise PreconditionError(
                f"cutoff radius {cutoff_radius} keeps only {kept:.3f} of the mass of "
                f"atom {i}; the separation is too small for this grid"
            )
        cut = cut.normalized()
        masses.append(float(kept))
        diff = WaveFunction(cut.coefficients - phi.coefficients, grid, len(cluster))
        distances.append(diff.norm())
        factors.append(cut)

    psi = product_state(factors, a.clusters, grid)
    h_a = build_decomposition_hamiltonian(cfg, a, grid)
    e_inf = float(sum(energies))
    resid = WaveFunction(h_a.matvec(psi.coefficients) - e_inf * psi.coefficients,
                         grid, psi.particle_count).norm()
    return CutoffState(psi, cutoff_radius, True, a, energies, distances, masses, resid)


@dataclass
class ProjectionResult:
    """Rank-one projection data: the unit state spanning its range."""

    state: WaveFunction
    sign_table: dict[tuple, int]
    antisymmetrized: bool
    expansion_defect: float
    independence_defect: float
    component_norm: float


def build_projection(cfg: SystemConfig, grid: GridSpec, settings: ResolventSettings,
                     cutoff_radius: float | None = None,
                     antisymmetrized: bool = True,
                     budget: int = FACTORIAL_BUDGET,
                     seed: int = 0) -> ProjectionResult:
    """Projection onto the (anti)symmetrized cut-off product state.

    Verifies that the antisymmetrizer expands into signed relabelings of
    the product state and that the result does not depend on the reference
    decomposition.
    """
    from .core import canonical_decomposition

    a = canonical_decomposition(cfg)
    base = build_cutoff_product(cfg, a, grid, settings, cutoff_radius, seed=seed)
    psi_a = base.base_state

    if not antisymmetrized:
        return ProjectionResult(psi_a.normalized(), {a.clusters: 1}, False, 0.0, 0.0,
                                psi_a.norm())

    n = cfg.electron_count
    if n > budget:
        raise ConfigurationError(
            f"antisymmetrized projection of N={n} exceeds the factorial budget {budget}"
        )
    q_psi = antisymmetrize(psi_a, budget)
    nq = q_psi.norm()
    if nq < 1e-12:
        raise GapError(
            "the antisymmetrized product state vanishes; cutoff supports overlap"
        )

    decos = atomic_decompositions(cfg)
    sign_table = {b.clusters: decomposition_sign(b, a) for b in decos}
    expansion = np.zeros_like(psi_a.coefficients)
    for b in decos:
        per_cluster = []
        for i, cluster in enumerate(b.clusters):
            # relabeling reuses the cluster states computed for ``a``
            op = build_cluster_hamiltonian(cfg, b, i, grid)
            res = ground_state(op, settings, seed=seed + i)
            phi = res.ground_state
            if base.cutoff_radius is not None:
                chi = smooth_cutoff(base.cutoff_radius)
                mask = _cutoff_mask(grid, len(cluster), cfg.atoms[i].position, chi)
                phi = WaveFunction(phi.tensor() * mask, grid, len(cluster)).normalized()
            per_cluster.append(phi)
        psi_b = product_state(per_cluster, b.clusters, grid)
        expansion += sign_table[b.clusters] * psi_b.coefficients / len(decos)
    defect = WaveFunction(expansion - q_psi.coefficients, grid, n).norm()

    # rebuild from a second decomposition and compare the rank-one ranges
    independence = 0.0
    if len(decos) > 1:
        other = decos[1] if decos[1].clusters != a.clusters else decos[0]
        per_cluster = []
        for i, cluster in enumerate(other.clusters):
            op = build_cluster_hamiltonian(cfg, other, i, grid)
            res = ground_state(op, settings, seed=seed + i)
            phi = res.ground_state
            if base.cutoff_radius is not None:
                chi = smooth_cutoff(base.cutoff_radius)
                mask = _cutoff_mask(grid, len(cluster), cfg.atoms[i].position, chi)
                phi = WaveFunction(phi.tensor() * mask, grid, len(cluster)).normalized()
            per_cluster.append(phi)
        psi_other = product_state(per_cluster, other.clusters, grid)
        q_other = antisymmetrize(psi_other, budget).normalized()
        overlap = abs(q_other.inner(q_psi.normalized()))
        independence = abs(1.0 - overlap)

    return ProjectionResult(q_psi.normalized(), sign_table, True, defect,
                            independence, nq)


def _phi_of(pi) -> WaveFunction:
    return pi.state if isinstance(pi, ProjectionResult) else pi


def _feshbach_eval(op: LinearOperator, phi: WaveFunction, lam: float,
                   settings: ResolventSettings, x0=None):
    """One evaluation of the Schur-complement map; returns (value, x, V)."""
    h_phi = op.matvec(phi.coefficients)
    w = phi.grid.volume_element(phi.particle_count)
    diag = float(phi.coefficients @ h_phi) * w
    # orthogonalize exactly against phi in the flat inner product
    p = phi.coefficients / np.linalg.norm(phi.coefficients)
    b = h_phi - (p @ h_phi) * p
    rhs = WaveFunction(b, phi.grid, phi.particle_count)
    if rhs.norm() == 0.0:
        return diag, np.zeros_like(b), 0.0
    x = projected_resolvent_apply(op, phi, lam, rhs, settings, x0=x0)
    v = float(b @ x.coefficients) * w
    return diag - v, x.coefficients, v


def feshbach_value(op: LinearOperator, pi, lam: float,
                   settings: ResolventSettings) -> float:
    """Schur-complement energy map evaluated at one trial energy."""
    value, _, _ = _feshbach_eval(op, _phi_of(pi), lam, settings)
    return value


@dataclass
class FeshbachResult:
    energy: float
    interaction_energy: float | None
    gap_lower_bound: float | None
    iterations: list[float] = field(default_factory=list)
    residual: float = math.nan
    schur_term: float = math.nan
    ground_overlap_state: WaveFunction | None = None

    @property
    def valid(self) -> bool:
        return self.gap_lower_bound is None or self.gap_lower_bound > 0


def measure_complement_gap(op: LinearOperator, phi: WaveFunction, energy: float,
                           settings: ResolventSettings, seed: int = 3) -> float:
    """Lowest eigenvalue of the projected complement minus the given energy."""
    p = phi.coefficients / np.linalg.norm(phi.coefficients)

    def matvec(x: np.ndarray) -> np.ndarray:
        y = x - (p @ x) * p
        y = op.matvec(y)
        return y - (p @ y) * p

    comp = LinearOperator(op.grid, op.particle_count, op.descriptor + " complement",
                          matvec, is_self_adjoint=True)
    if comp.size <= DENSE_CUTOFF:
        res = low_spectrum(comp, 1, settings, seed=seed, force_iterative=True,
                           project=lambda v: v - (p @ v) * p)
    else:
        coarse = ResolventSettings(tolerance=1e-4,
                                   max_iterations=min(settings.max_iterations, 400))
        try:
            res = low_spectrum(comp, 1, coarse, seed=seed, force_iterative=True,
                               project=lambda v: v - (p @ v) * p)
        except ConvergenceError:
            return math.nan
    return float(res.eigenvalues[0] - energy)


def solve_fixed_point(op: LinearOperator, pi, settings: ResolventSettings,
                      e_infinity: float | None = None,
                      fixed_point_tolerance: float = 1e-11,
                      max_picard: int = 60,
                      compute_gap: bool = True,
                      seed: int = 3) -> FeshbachResult:
    """Picard iteration on the Schur-complement map from the diagonal energy.

    Falls back to bisection when the iterates oscillate.  Returns the
    converged energy, the interaction energy relative to ``e_infinity``,
    the measured complement gap, and the reconstructed ground state.
    """
    phi = _phi_of(pi).normalized()
    h_phi = op.matvec(phi.coefficients)
    w = phi.grid.volume_element(phi.particle_count)
    lam = float(phi.coefficients @ h_phi) * w  # diagonal energy starts the iteration
    trace = [lam]
    x_warm = None
    bracket: tuple[float, float] | None = None
    bisecting = False
    energy = None
    prev_g = math.inf
    for _ in range(max_picard):
        value, x_warm, schur = _feshbach_eval(op, phi, lam, settings, x0=x_warm)
        g = value - lam  # decreasing in lam; the root is the fixed point
        trace.append(value)
        if abs(g) <= fixed_point_tolerance:
            energy = lam
            break
        # the map is decreasing, so iterates bracket the root once they turn
        if g > 0:
            lo_new = lam
            hi_new = value
        else:
            lo_new, hi_new = value, lam
        if bracket is None:
            bracket = (lo_new, hi_new)
        else:
            bracket = (max(bracket[0], lo_new), min(bracket[1], hi_new))
        if not bisecting and abs(g) > 0.5 * prev_g:
            bisecting = True  # Picard stopped contracting; fall back
        prev_g = abs(g)
        if bisecting:
            lo, hi = bracket
            if hi <= lo:
                energy = lam
                break
            lam = 0.5 * (lo + hi)
            if hi - lo < 0.5 * fixed_point_tolerance:
                energy = lam
                break
        else:
            lam = value
    if energy is None:
        raise ConvergenceError(
            f"fixed point did not settle within {max_picard} evaluations; "
            f"trace {trace[-4:]}",
            best_residual=abs(trace[-1] - trace[-2]),
        )

    value, x_final, schur = _feshbach_eval(op, phi, energy, settings, x0=x_warm)
    residual = abs(value - energy)
    ground = WaveFunction(phi.coefficients - x_final, phi.grid,
                          phi.particle_count).normalized()

    gap = None
    if compute_gap:
        gap = measure_complement_gap(op, phi, energy, settings, seed=seed)

    w_y = None if e_infinity is None else energy - e_infinity
    return FeshbachResult(energy=energy, interaction_energy=w_y,
                          gap_lower_bound=gap, iterations=trace,
                          residual=residual, schur_term=schur,
                          ground_overlap_state=ground)


@dataclass
class DiagonalEnergyReport:
    deviation: float
    verdict: bool | None
    note: str


def diagonal_energy_check(cfg: SystemConfig, grid: GridSpec,
                          settings: ResolventSettings,
                          cutoff_radius: float | None = None,
                          seed: int = 0) -> DiagonalEnergyReport:
    """Deviation of the diagonal product energy from the isolated-atom sum.

    For 1d surrogate models there is no spherical-shell cancellation, so
    the value is reported without a verdict; spherical (3d) cancellation is
    exercised separately through the quadrature checks.
    """
    from .core import canonical_decomposition

    a = canonical_decomposition(cfg)
    state = build_cutoff_product(cfg, a, grid, settings, cutoff_radius, seed=seed)
    psi = state.base_state.normalized()
    from .operators import build_full_hamiltonian

    h = build_full_hamiltonian(cfg, grid)
    w = grid.volume_element(psi.particle_count)
    diag = float(psi.coefficients @ h.matvec(psi.coefficients)) * w
    dev = abs(diag - state.energy_sum)
    one_d = grid.dim_per_particle == 1
    note = ("1d surrogate: no spherical cancellation applies, value reported only"
            if one_d else "3d model: deviation expected to be exponentially small")
    return DiagonalEnergyReport(dev, None if one_d else dev < 1e-6, note)
