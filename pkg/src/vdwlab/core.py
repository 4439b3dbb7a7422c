"""Grids, model atoms, system configurations, and discrete wavefunctions.

Units: the elementary charge is 1 and the electron mass is 1/2, so the
kinetic term of one electron is the plain (negative) Laplacian.  In these
units the hydrogen-like ground energy is -Z^2/4.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ConfigurationError

# Hard ceiling on tensor-grid entries unless the caller raises it explicitly.
DEFAULT_MEMORY_BUDGET = 1 << 24

# Explicit antisymmetrization enumerates N! permutations.
FACTORIAL_BUDGET = 6

COULOMB_3D = "coulomb3d"
SOFT_COULOMB_1D = "softcoulomb1d"
WELL_1D = "well1d"
WELL_3D = "well3d"

_POTENTIAL_KINDS = (COULOMB_3D, SOFT_COULOMB_1D, WELL_1D, WELL_3D)
_WELL_KINDS = (WELL_1D, WELL_3D)


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid, one axis per spatial dimension per particle.

    ``geometry`` is "box" for [-L, L] per axis with Dirichlet walls, or
    "radial" for the s-wave reduction of a 3d problem, where the single
    axis holds r_k = k*h on (0, 2L] with h = 2L/(points+1) and Dirichlet
    conditions at r=0 and r=2L+h.
    """

    dim_per_particle: int
    points_per_axis: int
    half_width: float
    geometry: str = "box"

    def __post_init__(self):
        if self.dim_per_particle not in (1, 3):
            raise ConfigurationError("dim_per_particle must be 1 or 3")
        if self.points_per_axis < 8:
            raise ConfigurationError("points_per_axis must be at least 8")
        if self.half_width <= 0:
            raise ConfigurationError("half_width must be positive")
        if self.geometry not in ("box", "radial"):
            raise ConfigurationError(f"unknown grid geometry {self.geometry!r}")
        if self.geometry == "radial" and self.dim_per_particle != 1:
            raise ConfigurationError("radial geometry uses a single axis per particle")

    @property
    def spacing(self) -> float:
        if self.geometry == "radial":
            return 2.0 * self.half_width / (self.points_per_axis + 1)
        return 2.0 * self.half_width / (self.points_per_axis - 1)

    def axis(self) -> np.ndarray:
        """Grid points along one axis."""
        n = self.points_per_axis
        if self.geometry == "radial":
            return self.spacing * np.arange(1, n + 1)
        return np.linspace(-self.half_width, self.half_width, n)

    def axes_per_particle(self) -> int:
        return self.dim_per_particle

    def particle_size(self) -> int:
        return self.points_per_axis ** self.dim_per_particle

    def total_size(self, particle_count: int) -> int:
        return self.particle_size() ** particle_count

    def volume_element(self, particle_count: int) -> float:
        return self.spacing ** (self.dim_per_particle * particle_count)

    def check_budget(self, particle_count: int, budget: int = DEFAULT_MEMORY_BUDGET):
        size = self.total_size(particle_count)
        if size > budget:
            raise BudgetError(
                f"tensor grid needs {size} entries for {particle_count} particles, "
                f"over the budget of {budget}; shrink the grid or raise the budget"
            )
        return size


@dataclass(frozen=True)
class AtomSpec:
    """One model atom: nuclear charge, potential family, and position.

    ``parameter`` is the softening length for softcoulomb1d and the
    confinement strength (frequency) for the well kinds; coulomb3d
    ignores it.  ``anisotropy`` optionally scales the well strength per
    axis for well3d.
    """

    charge_Z: int
    potential_kind: str
    position: tuple[float, ...] = (0.0,)
    parameter: float = 1.0
    anisotropy: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.charge_Z < 1:
            raise ConfigurationError("charge_Z must be a positive integer")
        if self.potential_kind not in _POTENTIAL_KINDS:
            raise ConfigurationError(f"unknown potential kind {self.potential_kind!r}")
        if self.potential_kind == SOFT_COULOMB_1D and self.parameter <= 0:
            raise ConfigurationError("softening length must be positive")
        if self.potential_kind in _WELL_KINDS and self.parameter <= 0:
            raise ConfigurationError("confinement strength must be positive")
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    def well_strengths(self, dim: int) -> np.ndarray:
        """Per-axis squared frequencies for well potentials."""
        w = np.full(dim, self.parameter**2, dtype=float)
        if self.anisotropy is not None:
            w = w * np.asarray(self.anisotropy, dtype=float)
        return w


@dataclass(frozen=True)
class SystemConfig:
    """Clamped nuclei plus an electron count; the Born-Oppenheimer data.

    For well-kind (Drude) atoms the electrons are distinguishable: the
    i-th block of electron indices is confined to the i-th atom, and the
    inter-atomic interaction is the bilinear displacement coupling with
    strength ``dipole_coupling`` (playing the role of 1/R^3).
    """

    atoms: tuple[AtomSpec, ...]
    electron_count: int
    dipole_coupling: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise ConfigurationError("at least one atom is required")
        kinds = {a.potential_kind for a in self.atoms}
        if len(kinds) > 1:
            raise ConfigurationError(f"mixed potential kinds {sorted(kinds)} are not supported")
        if self.electron_count < 0:
            raise ConfigurationError("electron_count must be nonnegative")
        if self.dipole_coupling != 0.0 and self.kind not in _WELL_KINDS:
            raise ConfigurationError("dipole_coupling applies to well-kind atoms only")

    @property
    def kind(self) -> str:
        return self.atoms[0].potential_kind

    @property
    def atom_count(self) -> int:
        return len(self.atoms)

    @property
    def is_neutral(self) -> bool:
        return self.electron_count == sum(a.charge_Z for a in self.atoms)

    @property
    def separation_R(self) -> float:
        """Minimum distance between distinct nuclei (inf for one atom)."""
        best = math.inf
        for a, b in itertools.combinations(self.atoms, 2):
            d = math.dist(a.position, b.position)
            best = min(best, d)
        return best

    def canonical_clusters(self) -> tuple[tuple[int, ...], ...]:
        """Block assignment of electrons to atoms: atom i owns the next
        Z_i indices.  Only meaningful for neutral systems."""
        out = []
        start = 0
        for a in self.atoms:
            out.append(tuple(range(start, start + a.charge_Z)))
            start += a.charge_Z
        return tuple(out)


@dataclass(frozen=True)
class Decomposition:
    """Partition of the electron indices {0..N-1} into one cluster per atom.

    Clusters may be empty; cluster i is tied to nucleus i.  A decomposition
    is atomic when every cluster size equals its nuclear charge.
    """

    clusters: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        clusters = tuple(tuple(sorted(c)) for c in self.clusters)
        object.__setattr__(self, "clusters", clusters)
        seen: set[int] = set()
        for c in clusters:
            for j in c:
                if j in seen:
                    raise ConfigurationError(f"electron {j} appears in two clusters")
                seen.add(j)
        n = len(seen)
        if seen and seen != set(range(n)):
            raise ConfigurationError("clusters must partition a 0-based index range")

    @property
    def electron_count(self) -> int:
        return sum(len(c) for c in self.clusters)

    def owner(self) -> dict[int, int]:
        """Electron index -> cluster index."""
        return {j: i for i, c in enumerate(self.clusters) for j in c}

    def is_atomic(self, cfg: SystemConfig) -> bool:
        return all(len(c) == a.charge_Z for c, a in zip(self.clusters, cfg.atoms))


def canonical_decomposition(cfg: SystemConfig) -> Decomposition:
    return Decomposition(cfg.canonical_clusters())


def atomic_decompositions(cfg: SystemConfig) -> list[Decomposition]:
    """All assignments of electrons to atoms with cluster sizes (Z_1..Z_M).

    The count is N!/prod(Z_i!); callers should stay within the factorial
    budget before enumerating.
    """
    sizes = [a.charge_Z for a in cfg.atoms]
    n = sum(sizes)
    if n != cfg.electron_count:
        raise ConfigurationError("atomic decompositions need a neutral system")
    out: list[Decomposition] = []

    def recurse(remaining: frozenset[int], chosen: list[tuple[int, ...]]):
        if len(chosen) == len(sizes):
            out.append(Decomposition(tuple(chosen)))
            return
        size = sizes[len(chosen)]
        for comb in itertools.combinations(sorted(remaining), size):
            recurse(remaining - set(comb), chosen + [comb])

    recurse(frozenset(range(n)), [])
    return out


def decomposition_sign(b: Decomposition, a: Decomposition) -> int:
    """Sign of the permutation mapping a's clusters onto b's, increasing
    within each cluster."""
    n = a.electron_count
    perm = [0] * n
    for ca, cb in zip(a.clusters, b.clusters):
        if len(ca) != len(cb):
            raise ConfigurationError("decompositions have mismatched cluster sizes")
        for src, dst in zip(sorted(ca), sorted(cb)):
            perm[src] = dst
    return permutation_sign(perm)


def permutation_sign(perm) -> int:
    """Parity of a permutation given as the list of images of 0..n-1."""
    perm = list(perm)
    n = len(perm)
    if sorted(perm) != list(range(n)):
        raise ConfigurationError("not a permutation of 0..n-1")
    seen = [False] * n
    sign = 1
    for start in range(n):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@dataclass
class WaveFunction:
    """Flat coefficient vector over the tensor grid of N particles."""

    coefficients: np.ndarray
    grid: GridSpec
    particle_count: int
    norm_cached: float = field(default=0.0)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).ravel()
        expected = self.grid.total_size(self.particle_count)
        if self.coefficients.size != expected:
            raise ConfigurationError(
                f"coefficient count {self.coefficients.size} does not match the "
                f"grid size {expected}"
            )
        if not self.norm_cached:
            self.norm_cached = self.norm()

    @property
    def shape(self) -> tuple[int, ...]:
        axes = self.particle_count * self.grid.axes_per_particle()
        return (self.grid.points_per_axis,) * axes

    def tensor(self) -> np.ndarray:
        return self.coefficients.reshape(self.shape)

    def norm(self) -> float:
        w = self.grid.volume_element(self.particle_count)
        return float(np.sqrt(np.vdot(self.coefficients, self.coefficients).real * w))

    def inner(self, other: "WaveFunction") -> float:
        w = self.grid.volume_element(self.particle_count)
        return float(np.vdot(self.coefficients, other.coefficients).real * w)

    def normalized(self) -> "WaveFunction":
        nrm = self.norm()
        if nrm == 0:
            raise ConfigurationError("cannot normalize the zero vector")
        return WaveFunction(self.coefficients / nrm, self.grid, self.particle_count, 1.0)

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.coefficients.copy(), self.grid, self.particle_count,
                            self.norm_cached)
