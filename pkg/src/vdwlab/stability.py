"""Ionization ladders, electron-transfer energy inequalities, the localized
partition of unity, and the zero-sum charge combinatorics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AtomSpec,
    Decomposition,
    FACTORIAL_BUDGET,
    GridSpec,
    SystemConfig,
)
from .errors import (
    BudgetError,
    ConfigurationError,
    ConvergenceError,
    PreconditionError,
    VdwlabError,
)
from .operators import antisymmetrizer_matvec, build_cluster_hamiltonian
from .spectral import ResolventSettings, ground_state

# ---------------------------------------------------------------------------
# ionization ladders


@dataclass
class IonLadder:
    """Ground energies E_n of one atom for charge states n in [-n_max, Z].

    n is the net charge: n = Z is the bare nucleus (zero energy by
    convention), n = 0 the neutral atom, negative n an anion.
    """

    atom: AtomSpec
    energies: dict[int, float]
    residuals: dict[int, float]
    converged: dict[int, bool]
    grid: GridSpec

    @property
    def charge_Z(self) -> int:
        return self.atom.charge_Z

    @property
    def anion_depth(self) -> int:
        return -min(self.energies)

    def energy(self, n: int) -> float:
        if n not in self.energies:
            raise PreconditionError(
                f"ladder for Z={self.charge_Z} has no charge state n={n}"
            )
        if not self.converged.get(n, False):
            raise PreconditionError(f"charge state n={n} did not converge")
        return self.energies[n]


def ion_ladder(atom: AtomSpec, n_max: int, grid: GridSpec,
               settings: ResolventSettings, seed: int = 0,
               budget: int = FACTORIAL_BUDGET) -> IonLadder:
    """Ground energies of every charge state from the bare nucleus down.

    Multi-electron states are solved in the antisymmetric sector (spinless
    fermions); unconverged entries are flagged rather than fatal.
    """
    z = atom.charge_Z
    energies: dict[int, float] = {z: 0.0}
    residuals: dict[int, float] = {z: 0.0}
    converged: dict[int, bool] = {z: True}
    cfg_proto = SystemConfig(atoms=(atom,), electron_count=0)
    for n in range(z - 1, -n_max - 1, -1):
        m = z - n
        if m > budget:
            break
        deco = Decomposition((tuple(range(m)),))
        cfg = SystemConfig(atoms=(atom,), electron_count=m)
        op = build_cluster_hamiltonian(cfg, deco, 0, grid)
        project = antisymmetrizer_matvec(grid, m, budget) if m >= 2 else None
        try:
            res = ground_state(op, settings, seed=seed + m,
                               force_iterative=project is not None,
                               project=project)
            energies[n] = res.ground_energy
            residuals[n] = float(res.residual_norms[0])
            converged[n] = True
        except ConvergenceError as err:
            energies[n] = math.nan
            residuals[n] = math.inf if err.best_residual is None else err.best_residual
            converged[n] = False
    return IonLadder(atom, energies, residuals, converged, grid)


@dataclass
class TransferVerdict:
    passed: bool
    witness: tuple | None
    margin: float
    checked: int


def property_E_check(ladders: list[IonLadder]) -> TransferVerdict:
    """Pairwise electron-transfer inequalities between a donor and acceptor.

    For atoms i != j and m, n >= 0, l >= 1 with m + l <= Z_i and the
    acceptor anion state available, requires

        E_i[m] + E_j[-n]  <  E_i[m+l] + E_j[-n-l].

    Returns the first violating witness, or a pass with the minimal margin.
    """
    if len(ladders) < 2:
        raise PreconditionError("transfer inequalities need at least two ladders")
    checked = 0
    margin = math.inf
    for i, j in itertools.permutations(range(len(ladders)), 2):
        li, lj = ladders[i], ladders[j]
        depth = lj.anion_depth
        any_pair = False
        for m in range(0, li.charge_Z + 1):
            for l in range(1, li.charge_Z - m + 1):
                for n in range(0, depth - l + 1):
                    lhs = li.energy(m) + lj.energy(-n)
                    rhs = li.energy(m + l) + lj.energy(-n - l)
                    checked += 1
                    any_pair = True
                    gap = rhs - lhs
                    margin = min(margin, gap)
                    if gap <= 0:
                        return TransferVerdict(False, (i, j, m, n, l, lhs, rhs),
                                               gap, checked)
        if not any_pair:
            raise PreconditionError(
                f"ladder {j} has no anion entries; transfer inequalities need "
                "at least one"
            )
    return TransferVerdict(True, None, margin, checked)


def property_Eprime_check(ladders: list[IonLadder], m_atoms: int | None = None,
                          enumeration_budget: int = 4) -> TransferVerdict:
    """Neutral ionization inequality over all nonzero zero-sum charge vectors.

    Exhaustive enumeration, capped at four atoms.
    """
    m = m_atoms if m_atoms is not None else len(ladders)
    if m != len(ladders):
        raise ConfigurationError("one ladder per atom is required")
    if m > enumeration_budget:
        raise BudgetError(
            f"charge-vector enumeration for M={m} exceeds the budget of "
            f"{enumeration_budget} atoms"
        )
    neutral = sum(lad.energy(0) for lad in ladders)
    ranges = [range(-lad.anion_depth, lad.charge_Z + 1) for lad in ladders]
    checked = 0
    margin = math.inf
    for vec in itertools.product(*ranges):
        if sum(vec) != 0 or all(v == 0 for v in vec):
            continue
        total = sum(lad.energy(v) for lad, v in zip(ladders, vec))
        checked += 1
        gap = total - neutral
        margin = min(margin, gap)
        if gap <= 0:
            return TransferVerdict(False, (vec, neutral, total), gap, checked)
    if checked == 0:
        raise PreconditionError("no admissible charge vectors; ladders too shallow")
    return TransferVerdict(True, None, margin, checked)


# ---------------------------------------------------------------------------
# localized partition of unity


def _bump_cdf_table(samples: int = 8193):
    s = np.linspace(-1.0, 1.0, samples)
    vals = np.zeros_like(s)
    inner = np.abs(s) < 1.0
    vals[inner] = np.exp(-1.0 / (1.0 - s[inner] ** 2))
    cdf = np.concatenate(([0.0], np.cumsum((vals[1:] + vals[:-1]) * 0.5 * np.diff(s))))
    return s, vals / cdf[-1], cdf / cdf[-1]


_BUMP_S, _BUMP_PDF, _BUMP_CDF = _bump_cdf_table()


def _mollified_step(t: np.ndarray) -> np.ndarray:
    """CDF of the unit bump: 0 for t <= -1, 1 for t >= 1, smooth between."""
    return np.interp(t, _BUMP_S, _BUMP_CDF, left=0.0, right=1.0)


def _bump_pdf(t: np.ndarray) -> np.ndarray:
    return np.interp(t, _BUMP_S, _BUMP_PDF, left=0.0, right=0.0)


@dataclass
class PartitionOfUnity:
    """Smooth localized partition over electron-assignment members.

    Cluster members are labeled by the tuple of owning nuclei per electron;
    far members by the lone electron index.  The per-electron factors are
    products, so all member values derive from three tabulated radial
    functions (near factor per nucleus, far factor, and their derivatives).
    """

    nuclei: tuple[float, ...]
    electron_count: int
    separation_R: float
    mollifier_radius: float
    near_flat: float      # inner radius where the near factor is 1
    near_support: float   # outer support of the near factor
    far_support: float    # electrons beyond this distance enter the far member
    gradient_sup: float = math.nan
    sample_axis: np.ndarray | None = None
    member_samples: dict = field(default_factory=dict)

    # -- per-electron scalar factors -------------------------------------
    def near_factor(self, x: np.ndarray, j: int) -> np.ndarray:
        eps = self.mollifier_radius
        t = np.asarray(x, dtype=float) - self.nuclei[j]
        r_ind = 0.5 * (self.near_flat + self.near_support)
        return _mollified_step((t + r_ind) / eps) - _mollified_step((t - r_ind) / eps)

    def near_factor_d(self, x: np.ndarray, j: int) -> np.ndarray:
        eps = self.mollifier_radius
        t = np.asarray(x, dtype=float) - self.nuclei[j]
        r_ind = 0.5 * (self.near_flat + self.near_support)
        return (_bump_pdf((t + r_ind) / eps) - _bump_pdf((t - r_ind) / eps)) / eps

    def far_factor(self, x: np.ndarray) -> np.ndarray:
        eps = self.mollifier_radius
        out = np.ones_like(np.asarray(x, dtype=float))
        r_ind = self.far_support + eps
        for y in self.nuclei:
            t = np.asarray(x, dtype=float) - y
            out = out - (_mollified_step((t + r_ind) / eps)
                         - _mollified_step((t - r_ind) / eps))
        return np.clip(out, 0.0, 1.0)

    def far_factor_d(self, x: np.ndarray) -> np.ndarray:
        eps = self.mollifier_radius
        out = np.zeros_like(np.asarray(x, dtype=float))
        r_ind = self.far_support + eps
        for y in self.nuclei:
            t = np.asarray(x, dtype=float) - y
            out = out - (_bump_pdf((t + r_ind) / eps)
                         - _bump_pdf((t - r_ind) / eps)) / eps
        return out

    # -- member evaluation -------------------------------------------------
    def members(self):
        m = len(self.nuclei)
        for owners in itertools.product(range(m), repeat=self.electron_count):
            yield owners
        for i in range(self.electron_count):
            yield ("far", i)

    def _tables(self, points: np.ndarray):
        """Factor values per electron coordinate for a (P, N) sample array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        f = np.stack([np.stack([self.near_factor(pts[:, i], j)
                                for j in range(len(self.nuclei))], axis=0)
                      for i in range(self.electron_count)], axis=0)
        h = np.stack([self.far_factor(pts[:, i])
                      for i in range(self.electron_count)], axis=0)
        return pts, f, h

    def normalization(self, points: np.ndarray) -> np.ndarray:
        pts, f, h = self._tables(points)
        s = (f ** 2).sum(axis=1)          # (N, P)
        return s.prod(axis=0) + (h ** 2).sum(axis=0)

    def member_values(self, points: np.ndarray) -> dict:
        pts, f, h = self._tables(points)
        s = (f ** 2).sum(axis=1)
        t = s.prod(axis=0) + (h ** 2).sum(axis=0)
        root = np.sqrt(t)
        out = {}
        for owners in itertools.product(range(len(self.nuclei)),
                                        repeat=self.electron_count):
            val = np.ones(pts.shape[0])
            for i, j in enumerate(owners):
                val = val * f[i, j]
            out[owners] = val / root
        for i in range(self.electron_count):
            out[("far", i)] = h[i] / root
        return out

    def sum_of_squares(self, points: np.ndarray) -> np.ndarray:
        vals = self.member_values(points)
        return sum(v ** 2 for v in vals.values())

    def gradient_sum(self, points: np.ndarray) -> np.ndarray:
        """Sum over members of |grad J|^2 at each sample point."""
        pts, f, h = self._tables(points)
        n, m, p = f.shape
        s = (f ** 2).sum(axis=1)                       # (N, P)
        fd = np.stack([np.stack([self.near_factor_d(pts[:, i], j)
                                 for j in range(m)], axis=0)
                       for i in range(n)], axis=0)
        hd = np.stack([self.far_factor_d(pts[:, i]) for i in range(n)], axis=0)
        q = (fd ** 2).sum(axis=1)                      # sum_j f_j'^2, (N, P)
        sd = 2.0 * (f * fd).sum(axis=1)                # s', (N, P)
        s_all = s.prod(axis=0)                         # (P,)
        t = s_all + (h ** 2).sum(axis=0)
        total = np.zeros(p)
        for i in range(n):
            others = np.ones(p)
            for i2 in range(n):
                if i2 != i:
                    others = others * s[i2]
            dt = sd[i] * others + 2.0 * h[i] * hd[i]
            total += (q[i] * others + hd[i] ** 2) / t - dt ** 2 / (4.0 * t ** 2)
        return total


def build_ims_partition(cfg: SystemConfig, axis_points: int = 0,
                        electron_count: int | None = None) -> PartitionOfUnity:
    """Localized partition of unity on a dedicated 1d configuration mesh.

    Scales follow the R^(3/4) construction: indicator radii 7/48 and 5/48
    of that scale, mollifier radius scale/48, so member supports sit inside
    the beta = 1/6 (cluster) and 1/12 (far) regions.  ``axis_points``
    overrides the per-axis sample count; too few points to resolve the
    mollifier is a refusal.
    """
    nuclei = tuple(a.position[0] for a in cfg.atoms)
    n = electron_count if electron_count is not None else cfg.electron_count
    if n < 1:
        raise ConfigurationError("the partition needs at least one electron")
    if n > 4:
        raise BudgetError("partition sampling is limited to four electrons")
    r = cfg.separation_R if len(nuclei) > 1 else 16.0
    if not math.isfinite(r) or r < 1.0:
        raise PreconditionError("the construction needs nuclear separation R >= 1")
    scale = r ** 0.75
    eps = scale / 48.0
    near_ind = 7.0 * scale / 48.0
    far_ind = 5.0 * scale / 48.0
    pou = PartitionOfUnity(
        nuclei=nuclei,
        electron_count=n,
        separation_R=r,
        mollifier_radius=eps,
        near_flat=near_ind - eps,
        near_support=near_ind + eps,
        far_support=far_ind - eps,
    )
    if len(nuclei) > 1:
        gaps = np.diff(np.sort(np.asarray(nuclei)))
        if gaps.min() <= 2.0 * (far_ind + eps):
            raise ConfigurationError("far indicator balls of distinct nuclei overlap")

    lo = min(nuclei) - 2.0 * scale
    hi = max(nuclei) + 2.0 * scale
    min_points = int(math.ceil((hi - lo) / (eps / 4.0)))
    if axis_points and axis_points < min_points:
        raise ConfigurationError(
            f"{axis_points} axis points cannot resolve the mollifier; "
            f"at least {min_points} are needed"
        )
    # informative per-axis samples: fine windows around every transition shell
    windows = []
    for y in nuclei:
        for radius in (near_ind, far_ind):
            for sign in (-1.0, 1.0):
                c = y + sign * radius
                windows.append(np.linspace(c - 1.5 * eps, c + 1.5 * eps, 81))
    windows.append(np.linspace(lo, hi, max(axis_points, 257) if axis_points else 257))
    axis = np.unique(np.concatenate(windows))
    pou.sample_axis = axis

    # sup of the gradient sum over the product mesh of informative samples
    if n <= 2:
        mesh = np.array(list(itertools.product(axis, repeat=n)))
    else:
        rng = np.random.default_rng(7)
        cols = [rng.choice(axis, size=200000) for _ in range(n)]
        mesh = np.column_stack(cols)
    grads = pou.gradient_sum(mesh)
    pou.gradient_sup = float(np.max(grads))

    coarse = axis[:: max(1, axis.size // 160)]
    sample_mesh = np.array(list(itertools.product(coarse, repeat=n))) if n <= 2 \
        else mesh[:4096]
    pou.member_samples = pou.member_values(sample_mesh)
    return pou


# ---------------------------------------------------------------------------
# zero-sum charge combinatorics


def zero_subset_witness(charges) -> list[int]:
    """Nonempty index subset whose sum is a multiple of len(charges).

    Prefix-remainder pigeonhole: either some prefix sum is divisible, or
    two prefixes share a remainder and their difference is.
    """
    ks = [int(k) for k in charges]
    z = len(ks)
    if z == 0:
        raise ConfigurationError("at least one integer is required")
    seen = {0: -1}
    total = 0
    for idx, k in enumerate(ks):
        total = (total + k) % z
        if total in seen:
            return list(range(seen[total] + 1, idx + 1))
        seen[total] = idx
    raise VdwlabError("pigeonhole failure; unreachable")  # pragma: no cover


@dataclass
class SubgroupDecomposition:
    charges: tuple[int, ...]
    groups: list[tuple[int, ...]]
    max_group_size: int

    def group_values(self, g: int) -> list[int]:
        return [self.charges[i] for i in self.groups[g]]


def _shortest_zero_subset(values: dict[int, int]) -> tuple[int, ...] | None:
    """Smallest nonempty index subset of the remaining charges with zero sum."""
    idx = sorted(values)
    for size in range(1, len(idx) + 1):
        for comb in itertools.combinations(idx, size):
            if sum(values[i] for i in comb) == 0:
                return comb
    return None


def charge_group_decompose(charges, z: int,
                           length_budget: int = 24) -> SubgroupDecomposition:
    """Greedy split of a zero-sum charge list into minimal zero-sum groups.

    Hypotheses: every charge is a nonzero integer in [-Z, Z] and the total
    is zero.  Extracting the shortest zero-sum subset first makes every
    group minimal, so each stays below the Z^2 + 2*delta(Z,1) bound.
    """
    vals = [int(c) for c in charges]
    if z < 1:
        raise ConfigurationError("Z must be a positive integer")
    if len(vals) > length_budget:
        raise BudgetError(f"subset search beyond {length_budget} charges refused")
    for v in vals:
        if v == 0 or abs(v) > z:
            raise PreconditionError(
                f"charge {v} violates the hypothesis 0 < |n| <= Z = {z}"
            )
    if sum(vals) != 0:
        raise PreconditionError("charges must sum to zero")
    remaining = {i: v for i, v in enumerate(vals)}
    groups: list[tuple[int, ...]] = []
    bound = z * z + (2 if z == 1 else 0)
    while remaining:
        comb = _shortest_zero_subset(remaining)
        if comb is None:  # cannot happen: the full remainder sums to zero
            raise VdwlabError("no zero-sum subset in a zero-sum remainder")
        if len(comb) >= bound:
            raise VdwlabError(
                f"minimal group of size {len(comb)} contradicts the bound {bound}"
            )
        groups.append(comb)
        for i in comb:
            del remaining[i]
    return SubgroupDecomposition(tuple(vals), groups,
                                 max(len(g) for g in groups))


def has_proper_zero_subset(values) -> bool:
    """Exhaustive check for a nonempty proper zero-sum subset (len <= 12)."""
    vals = [int(v) for v in values]
    if len(vals) > 12:
        raise BudgetError("exhaustive subset check is limited to 12 charges")
    n = len(vals)
    for mask in range(1, (1 << n) - 1):
        if sum(vals[i] for i in range(n) if mask >> i & 1) == 0:
            return True
    return False


@dataclass
class MinimalSequenceScan:
    z: int
    max_length_scanned: int
    observed_max: int
    count_by_length: dict[int, int]
    example_longest: tuple[int, ...] | None

    @property
    def bound(self) -> int:
        return self.z * self.z + (2 if self.z == 1 else 0)

    @property
    def bound_respected(self) -> bool:
        return self.observed_max < self.bound


def minimal_sequence_scan(z: int, max_length: int | None = None) -> MinimalSequenceScan:
    """Enumerate all minimal zero-sum sequences over [-Z, Z] up to a length.

    A sequence is minimal when it sums to zero and no proper nonempty
    subset does.  Order does not matter, so multisets are enumerated.  The
    scan reports the longest minimal sequence observed; the proved bound is
    Z^2 + 2*delta(Z,1) and the scan lets the sharper conjectured bound be
    probed.
    """
    if max_length is None:
        max_length = z * z + 2
    alphabet = [v for v in range(-z, z + 1) if v != 0]
    counts: dict[int, int] = {}
    observed = 0
    example = None
    for length in range(1, max_length + 1):
        for combo in itertools.combinations_with_replacement(alphabet, length):
            if sum(combo) != 0:
                continue
            if length > 1 and has_proper_zero_subset(combo):
                continue
            if length == 1:
                continue  # a single nonzero charge cannot sum to zero
            counts[length] = counts.get(length, 0) + 1
            if length > observed:
                observed = length
                example = combo
    return MinimalSequenceScan(z, max_length, observed, counts, example)
