"""Many-body Hamiltonian assembly and permutation operators.

All Hamiltonians are second-order central finite differences with Dirichlet
walls plus a multiplication potential, so every operator here is a kinetic
stencil over a subset of tensor axes plus a diagonal.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    COULOMB_3D,
    DEFAULT_MEMORY_BUDGET,
    FACTORIAL_BUDGET,
    SOFT_COULOMB_1D,
    WELL_1D,
    WELL_3D,
    Decomposition,
    GridSpec,
    SystemConfig,
    WaveFunction,
    permutation_sign,
)
from .errors import BudgetError, ConfigurationError


@dataclass
class LinearOperator:
    """Matrix-free self-adjoint operator over one tensor grid."""

    grid: GridSpec
    particle_count: int
    descriptor: str
    matvec: Callable[[np.ndarray], np.ndarray]
    is_self_adjoint: bool = True
    diagonal: np.ndarray | None = field(default=None, repr=False)
    matmat: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.grid.total_size(self.particle_count)

    @property
    def tensor_shape(self) -> tuple[int, ...]:
        axes = self.particle_count * self.grid.axes_per_particle()
        return (self.grid.points_per_axis,) * axes

    def apply(self, psi: WaveFunction) -> WaveFunction:
        if psi.coefficients.size != self.size:
            raise ConfigurationError(
                f"operator of size {self.size} applied to vector of size "
                f"{psi.coefficients.size}"
            )
        out = self.matvec(psi.coefficients)
        return WaveFunction(out, self.grid, self.particle_count)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(np.asarray(x, dtype=float).ravel())


def _add_second_difference(acc: np.ndarray, t: np.ndarray, axis: int, inv_h2: float):
    """acc += (2 t - shift_+ t - shift_- t) * inv_h2 along one axis."""
    am = np.moveaxis(acc, axis, 0)
    tm = np.moveaxis(t, axis, 0)
    am += 2.0 * inv_h2 * tm
    am[1:] -= inv_h2 * tm[:-1]
    am[:-1] -= inv_h2 * tm[1:]


def kinetic_plus_diagonal(grid: GridSpec, particle_count: int, potential: np.ndarray,
                          descriptor: str) -> LinearOperator:
    """Operator sum of -Laplacian (all axes) and a multiplication potential."""
    shape = (grid.points_per_axis,) * (particle_count * grid.axes_per_particle())
    pot = np.asarray(potential, dtype=float).reshape(shape)
    inv_h2 = 1.0 / grid.spacing**2
    n_axes = len(shape)

    def matvec(x: np.ndarray) -> np.ndarray:
        t = x.reshape(shape)
        acc = pot * t
        for axis in range(n_axes):
            _add_second_difference(acc, t, axis, inv_h2)
        return acc.ravel()

    def matmat(xs: np.ndarray) -> np.ndarray:
        cols = xs.shape[1]
        t = xs.reshape(shape + (cols,))
        acc = pot[..., None] * t
        for axis in range(n_axes):
            _add_second_difference(acc, t, axis, inv_h2)
        return acc.reshape(-1, cols)

    return LinearOperator(grid, particle_count, descriptor, matvec,
                          diagonal=pot.ravel(), matmat=matmat)


def multiplication_operator(grid: GridSpec, particle_count: int, values: np.ndarray,
                            descriptor: str) -> LinearOperator:
    vals = np.asarray(values, dtype=float).ravel()

    def matvec(x: np.ndarray) -> np.ndarray:
        return vals * x

    def matmat(xs: np.ndarray) -> np.ndarray:
        return vals[:, None] * xs

    return LinearOperator(grid, particle_count, descriptor, matvec, diagonal=vals,
                          matmat=matmat)


# ---------------------------------------------------------------------------
# potential kernels

def _soft_inverse(dist2: np.ndarray, softening: float) -> np.ndarray:
    return 1.0 / np.sqrt(dist2 + softening**2)


def _hard_inverse(dist2: np.ndarray) -> np.ndarray:
    if np.any(dist2 == 0.0):
        raise ConfigurationError(
            "Coulomb kernel hit a zero distance; move the nucleus off the grid points"
        )
    return 1.0 / np.sqrt(dist2)


def coordinate_views(grid: GridSpec, particle_count: int):
    """Coordinate arrays broadcastable over the full tensor, one per axis."""
    return _axis_views(grid, particle_count)


def _axis_views(grid: GridSpec, particle_count: int):
    """Coordinate arrays broadcastable over the full tensor, one per axis."""
    ax = grid.axis()
    d = grid.axes_per_particle()
    n_axes = particle_count * d
    views = []
    for k in range(n_axes):
        shape = [1] * n_axes
        shape[k] = ax.size
        views.append(ax.reshape(shape))
    return views


def _particle_dist2(views, p: int, q: int, d: int, shift: np.ndarray) -> np.ndarray:
    """|x_p - x_q - shift|^2 broadcast over the full tensor."""
    out = 0.0
    for c in range(d):
        out = out + (views[p * d + c] - views[q * d + c] - shift[c]) ** 2
    return out


def _nucleus_dist2(views, p: int, d: int, pos) -> np.ndarray:
    out = 0.0
    for c in range(d):
        out = out + (views[p * d + c] - pos[c]) ** 2
    return out


def _check_kind_vs_grid(cfg: SystemConfig, grid: GridSpec):
    kind = cfg.kind
    want_dim = 3 if kind in (COULOMB_3D, WELL_3D) else 1
    if grid.geometry == "radial":
        if kind != COULOMB_3D:
            raise ConfigurationError("radial geometry applies to coulomb3d atoms only")
        if cfg.atom_count != 1 or cfg.electron_count > 1:
            raise ConfigurationError(
                "the s-wave radial reduction covers a single atom with one electron"
            )
        return
    if grid.dim_per_particle != want_dim:
        raise ConfigurationError(
            f"{kind} atoms need a {want_dim}-dimensional grid, got "
            f"{grid.dim_per_particle}"
        )


def _softening(cfg: SystemConfig) -> float:
    params = {a.parameter for a in cfg.atoms}
    if len(params) > 1:
        raise ConfigurationError("soft-Coulomb atoms must share one softening length")
    return cfg.atoms[0].parameter


def nuclear_repulsion(cfg: SystemConfig) -> float:
    """Constant nucleus-nucleus energy; zero for neutral Drude wells."""
    if cfg.kind in (WELL_1D, WELL_3D):
        return 0.0
    total = 0.0
    for (ai, aj) in itertools.combinations(cfg.atoms, 2):
        d2 = sum((u - v) ** 2 for u, v in zip(ai.position, aj.position))
        if cfg.kind == SOFT_COULOMB_1D:
            total += ai.charge_Z * aj.charge_Z * _soft_inverse(np.asarray(d2), _softening(cfg))
        else:
            total += ai.charge_Z * aj.charge_Z * _hard_inverse(np.asarray(d2))
    return float(total)


def _well_owner_terms(cfg: SystemConfig, electrons, owner_of, views, d):
    """Sum of confinement potentials for the given electrons."""
    out = 0.0
    for local, j in enumerate(electrons):
        atom = cfg.atoms[owner_of[j]]
        w2 = atom.well_strengths(d)
        for c in range(d):
            out = out + w2[c] * (views[local * d + c] - atom.position[c]) ** 2
    return out


def _full_potential(cfg: SystemConfig, grid: GridSpec) -> np.ndarray:
    n = cfg.electron_count
    d = grid.axes_per_particle()
    views = _axis_views(grid, n)
    kind = cfg.kind

    if grid.geometry == "radial":
        # -Z/r on the radial axis; handled before well/Coulomb branches.
        if n == 0:
            return np.zeros(())
        return -cfg.atoms[0].charge_Z / views[0]

    if kind in (WELL_1D, WELL_3D):
        if n == 0:
            return np.zeros((1,) * 0)
        if not cfg.is_neutral:
            raise ConfigurationError("Drude wells model neutral systems only")
        owner = {j: i for i, cl in enumerate(cfg.canonical_clusters()) for j in cl}
        pot = _well_owner_terms(cfg, range(n), owner, views, d)
        lam = cfg.dipole_coupling
        if lam != 0.0:
            for l, m in itertools.combinations(range(n), 2):
                if owner[l] == owner[m]:
                    continue
                al, am = cfg.atoms[owner[l]], cfg.atoms[owner[m]]
                for c in range(d):
                    pot = pot + lam * (views[l * d + c] - al.position[c]) * (
                        views[m * d + c] - am.position[c])
        return pot + np.zeros((grid.points_per_axis,) * (n * d))

    inv = (lambda d2: _soft_inverse(d2, _softening(cfg))) if kind == SOFT_COULOMB_1D \
        else _hard_inverse
    pot = 0.0
    for l in range(n):
        for atom in cfg.atoms:
            pot = pot - atom.charge_Z * inv(_nucleus_dist2(views, l, d, atom.position))
    for l, m in itertools.combinations(range(n), 2):
        pot = pot + inv(_particle_dist2(views, l, m, d, np.zeros(d)))
    pot = pot + nuclear_repulsion(cfg)
    return pot + np.zeros((grid.points_per_axis,) * (n * d))


def _decomposition_potential(cfg: SystemConfig, a: Decomposition, grid: GridSpec) -> np.ndarray:
    """Potential of the cluster Hamiltonian sum on the full electron space."""
    n = cfg.electron_count
    d = grid.axes_per_particle()
    views = _axis_views(grid, n)
    kind = cfg.kind
    owner = a.owner()
    if set(owner) != set(range(n)):
        raise ConfigurationError("decomposition does not cover all electrons")

    if kind in (WELL_1D, WELL_3D):
        pot = _well_owner_terms(cfg, range(n), owner, views, d)
        return pot + np.zeros((grid.points_per_axis,) * (n * d))

    inv = (lambda d2: _soft_inverse(d2, _softening(cfg))) if kind == SOFT_COULOMB_1D \
        else _hard_inverse
    pot = 0.0
    for j in range(n):
        atom = cfg.atoms[owner[j]]
        pot = pot - atom.charge_Z * inv(_nucleus_dist2(views, j, d, atom.position))
    for i, cluster in enumerate(a.clusters):
        for l, m in itertools.combinations(cluster, 2):
            pot = pot + inv(_particle_dist2(views, l, m, d, np.zeros(d)))
    return pot + np.zeros((grid.points_per_axis,) * (n * d))


# ---------------------------------------------------------------------------
# public constructors

def build_full_hamiltonian(cfg: SystemConfig, grid: GridSpec,
                           budget: int = DEFAULT_MEMORY_BUDGET) -> LinearOperator:
    """Full clamped-nuclei Hamiltonian on the N-electron tensor grid."""
    _check_kind_vs_grid(cfg, grid)
    grid.check_budget(cfg.electron_count, budget)
    label = f"H[{cfg.kind}, M={cfg.atom_count}, N={cfg.electron_count}]"
    if cfg.electron_count == 0:
        const = nuclear_repulsion(cfg)
        return multiplication_operator(grid, 0, np.asarray([const]), label + " (nuclei only)")
    pot = _full_potential(cfg, grid)
    return kinetic_plus_diagonal(grid, cfg.electron_count, pot, label)


def build_decomposition_hamiltonian(cfg: SystemConfig, a: Decomposition,
                                    grid: GridSpec,
                                    budget: int = DEFAULT_MEMORY_BUDGET) -> LinearOperator:
    """Sum of cluster Hamiltonians on the full electron space."""
    _check_kind_vs_grid(cfg, grid)
    grid.check_budget(cfg.electron_count, budget)
    if cfg.electron_count == 0:
        return multiplication_operator(grid, 0, np.zeros(1), "H_a (no electrons)")
    pot = _decomposition_potential(cfg, a, grid)
    return kinetic_plus_diagonal(grid, cfg.electron_count, pot,
                                 f"H_a[{cfg.kind}, clusters={a.clusters}]")


def build_cluster_hamiltonian(cfg: SystemConfig, a: Decomposition, i: int,
                              grid: GridSpec,
                              budget: int = DEFAULT_MEMORY_BUDGET) -> LinearOperator:
    """Ion Hamiltonian of cluster i on its own |A_i|-electron space.

    An empty cluster gives the zero operator on the trivial space.
    """
    _check_kind_vs_grid(cfg, grid)
    if not 0 <= i < cfg.atom_count:
        raise ConfigurationError(f"cluster index {i} out of range")
    cluster = a.clusters[i]
    m = len(cluster)
    if m == 0:
        return multiplication_operator(grid, 0, np.zeros(1), f"H_A{i} (empty cluster)")
    grid.check_budget(m, budget)
    atom = cfg.atoms[i]
    d = grid.axes_per_particle()
    views = _axis_views(grid, m)
    kind = cfg.kind
    if kind in (WELL_1D, WELL_3D):
        owner = {j: 0 for j in range(m)}
        one_atom = SystemConfig(atoms=(atom,), electron_count=0)
        pot = _well_owner_terms(one_atom, range(m), owner, views, d)
    else:
        inv = (lambda d2: _soft_inverse(d2, _softening(cfg))) if kind == SOFT_COULOMB_1D \
            else _hard_inverse
        pot = 0.0
        for j in range(m):
            pot = pot - atom.charge_Z * inv(_nucleus_dist2(views, j, d, atom.position))
        for l, q in itertools.combinations(range(m), 2):
            pot = pot + inv(_particle_dist2(views, l, q, d, np.zeros(d)))
    pot = pot + np.zeros((grid.points_per_axis,) * (m * d))
    return kinetic_plus_diagonal(grid, m, pot,
                                 f"H_A{i}[{kind}, Z={atom.charge_Z}, n_e={m}]")


def build_interaction(cfg: SystemConfig, a: Decomposition, grid: GridSpec,
                      budget: int = DEFAULT_MEMORY_BUDGET) -> LinearOperator:
    """Inter-cluster interaction as a multiplication operator.

    Assembled as the potential of H minus the potential of H_a, so
    H = H_a + I_a holds identically at apply level.
    """
    _check_kind_vs_grid(cfg, grid)
    grid.check_budget(cfg.electron_count, budget)
    if cfg.electron_count == 0:
        return multiplication_operator(grid, 0, np.asarray([nuclear_repulsion(cfg)]),
                                       "I_a (nuclei only)")
    diff = _full_potential(cfg, grid) - _decomposition_potential(cfg, a, grid)
    return multiplication_operator(grid, cfg.electron_count, diff,
                                   f"I_a[{cfg.kind}, clusters={a.clusters}]")


# ---------------------------------------------------------------------------
# permutations and antisymmetrization

def _axis_order(perm, d: int) -> list[int]:
    return [perm[p] * d + c for p in range(len(perm)) for c in range(d)]


def permute(psi: WaveFunction, pi) -> WaveFunction:
    """Coordinate-permutation unitary: moves particle slot k to slot pi[k]."""
    pi = list(pi)
    if len(pi) != psi.particle_count:
        raise ConfigurationError(
            f"permutation length {len(pi)} does not match {psi.particle_count} particles"
        )
    permutation_sign(pi)  # validates
    d = psi.grid.axes_per_particle()
    out = np.transpose(psi.tensor(), _axis_order(pi, d))
    return WaveFunction(out.ravel().copy(), psi.grid, psi.particle_count, psi.norm_cached)


def antisymmetrize(psi: WaveFunction, budget: int = FACTORIAL_BUDGET) -> WaveFunction:
    """Project onto the antisymmetric subspace: average of signed permutations."""
    n = psi.particle_count
    if n > budget:
        raise BudgetError(
            f"antisymmetrization of {n} particles needs {math.factorial(n)} terms, "
            f"over the factorial budget of {budget} particles"
        )
    d = psi.grid.axes_per_particle()
    t = psi.tensor()
    acc = np.zeros_like(t)
    for perm in itertools.permutations(range(n)):
        acc += permutation_sign(perm) * np.transpose(t, _axis_order(perm, d))
    acc /= math.factorial(n)
    return WaveFunction(acc.ravel(), psi.grid, psi.particle_count)


def antisymmetrizer_matvec(grid: GridSpec, particle_count: int,
                           budget: int = FACTORIAL_BUDGET) -> Callable[[np.ndarray], np.ndarray]:
    """Flat-vector form of the antisymmetrizer, for use inside solvers."""
    n = particle_count
    if n > budget:
        raise BudgetError(f"factorial budget of {budget} particles exceeded by N={n}")
    d = grid.axes_per_particle()
    shape = (grid.points_per_axis,) * (n * d)
    orders = [( permutation_sign(p), _axis_order(p, d) )
              for p in itertools.permutations(range(n))]
    norm = 1.0 / math.factorial(n)

    def matvec(x: np.ndarray) -> np.ndarray:
        t = x.reshape(shape)
        acc = np.zeros_like(t)
        for sign, order in orders:
            acc += sign * np.transpose(t, order)
        return (norm * acc).ravel()

    return matvec


def symmetrized_operator(op: LinearOperator, budget: int = FACTORIAL_BUDGET) -> LinearOperator:
    """H followed by the antisymmetrizer; equals Q H Q when [H, Q] = 0.

    This is the operator whose restriction to the antisymmetric sector
    carries the fermionic spectrum while the rest is annihilated.
    """
    q = antisymmetrizer_matvec(op.grid, op.particle_count, budget)

    def matvec(x: np.ndarray) -> np.ndarray:
        return q(op.matvec(q(x)))

    return LinearOperator(op.grid, op.particle_count, op.descriptor + " Q-projected",
                          matvec, is_self_adjoint=op.is_self_adjoint)


def product_state(factors, clusters, grid: GridSpec) -> WaveFunction:
    """Assemble prod_i psi_i(x_{A_i}) from per-cluster states.

    ``factors[i]`` lives on the |A_i|-particle space; the result lives on
    the full space with electron axes in natural order.
    """
    d = grid.axes_per_particle()
    order = [j for cluster in clusters for j in cluster]
    n = len(order)
    tensor = np.ones((1,) * 0)
    for wf in factors:
        if wf.particle_count == 0:
            continue
        tensor = np.multiply.outer(tensor, wf.tensor())
    # tensor axes currently follow cluster-concatenated electron order
    current = _axis_order(order, d)
    inverse = [0] * (n * d)
    for pos, ax in enumerate(current):
        inverse[ax] = pos
    tensor = np.transpose(tensor, inverse)
    return WaveFunction(tensor.ravel(), grid, n)


# ---------------------------------------------------------------------------
# diagnostics

def operator_to_dense(op: LinearOperator, max_size: int = 4096) -> np.ndarray:
    if op.size > max_size:
        raise BudgetError(
            f"dense assembly of size {op.size} exceeds the cutoff {max_size}"
        )
    if op.matmat is not None:
        return op.matmat(np.eye(op.size))
    eye = np.eye(op.size)
    cols = [op.matvec(eye[:, k]) for k in range(op.size)]
    return np.column_stack(cols)


def max_linearity_defect(op: LinearOperator, rng: np.random.Generator,
                         trials: int = 10) -> float:
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.size)
        v = rng.standard_normal(op.size)
        al, be = rng.standard_normal(2)
        lhs = op.matvec(al * u + be * v)
        rhs = al * op.matvec(u) + be * op.matvec(v)
        scale = np.linalg.norm(rhs) or 1.0
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / scale))
    return worst


def max_symmetry_defect(op: LinearOperator, rng: np.random.Generator,
                        trials: int = 10) -> float:
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.size)
        v = rng.standard_normal(op.size)
        lhs = float(u @ op.matvec(v))
        rhs = float(op.matvec(u) @ v)
        scale = abs(lhs) + abs(rhs) or 1.0
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
