"""Eigenvalue solvers, projected resolvent solves, and state diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import GridSpec, WaveFunction
from .errors import ConfigurationError, ConvergenceError, GapError, PreconditionError
from .operators import LinearOperator, operator_to_dense

DENSE_CUTOFF = 4096

METHOD_DENSE = "dense_oracle"
METHOD_ITERATIVE = "iterative"


@dataclass(frozen=True)
class ResolventSettings:
    """Targets for iterative solves (CG and Lanczos)."""

    tolerance: float = 1e-8
    max_iterations: int = 20000
    shift: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.tolerance <= 1e-4:
            raise ConfigurationError("tolerance must lie in (0, 1e-4]")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: list[WaveFunction]
    residual_norms: np.ndarray
    method: str

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.residual_norms = np.asarray(self.residual_norms, dtype=float)

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_state(self) -> WaveFunction:
        return self.eigenvectors[0]


def _as_wavefunction(flat: np.ndarray, op: LinearOperator) -> WaveFunction:
    return WaveFunction(flat, op.grid, op.particle_count).normalized()


def _true_residual(op: LinearOperator, lam: float, v: np.ndarray) -> float:
    return float(np.linalg.norm(op.matvec(v) - lam * v))


def _dense_low_spectrum(op: LinearOperator, k: int) -> EigenResult:
    mat = operator_to_dense(op, DENSE_CUTOFF)
    vals, vecs = scipy.linalg.eigh(mat)
    k = min(k, op.size)
    res = [_true_residual(op, vals[j], vecs[:, j]) for j in range(k)]
    states = [_as_wavefunction(vecs[:, j], op) for j in range(k)]
    return EigenResult(vals[:k], states, res, METHOD_DENSE)


LANCZOS_BASIS_CAP = 96


def _lanczos_lowest(op: LinearOperator, settings: ResolventSettings,
                    rng: np.random.Generator, deflate: list[np.ndarray],
                    project=None) -> tuple[float, np.ndarray, float]:
    """Lowest Ritz pair via restarted Lanczos with full reorthogonalization.

    The basis is capped and each cycle restarts from the current best Ritz
    vector, which keeps memory bounded while the Rayleigh quotient decreases
    monotonically.  ``deflate`` vectors (flat, unit) are projected out of
    every iterate; ``project`` optionally maps iterates into an invariant
    subspace of the operator (applied around every matvec).
    """
    n = op.size

    def clean(w: np.ndarray) -> np.ndarray:
        if project is not None:
            w = project(w)
        for q in deflate:
            w = w - (q @ w) * q
        return w

    v = clean(rng.standard_normal(n))
    nv = np.linalg.norm(v)
    for _ in range(20):
        if nv > 1e-8:
            break
        v = clean(rng.standard_normal(n))
        nv = np.linalg.norm(v)
    else:
        raise ConvergenceError("could not seed a start vector in the target subspace")
    v /= nv

    best_pair: tuple[float, np.ndarray] | None = None
    best_res = np.inf
    matvecs = 0
    cycle_cap = min(n, LANCZOS_BASIS_CAP)
    V = np.empty((cycle_cap, n))

    while matvecs < settings.max_iterations:
        V[0] = v
        alphas: list[float] = []
        betas: list[float] = []
        exhausted = False
        while len(alphas) < cycle_cap and matvecs < settings.max_iterations:
            j = len(alphas)
            w = clean(op.matvec(V[j]))
            matvecs += 1
            alphas.append(float(V[j] @ w))
            # full reorthogonalization, twice for stability
            for _ in range(2):
                w -= V[: j + 1].T @ (V[: j + 1] @ w)
            w = clean(w)
            beta = float(np.linalg.norm(w))
            if beta < 1e-12:
                exhausted = True
                break
            betas.append(beta)
            if j + 1 < cycle_cap:
                V[j + 1] = w / beta
            else:
                betas.pop()
                break

        m = len(alphas)
        if m == 1:
            theta, y = alphas[0], np.array([1.0])
        else:
            vals, vecs = scipy.linalg.eigh_tridiagonal(np.array(alphas),
                                                       np.array(betas[: m - 1]))
            theta, y = float(vals[0]), vecs[:, 0]
        x = clean(V[:m].T @ y)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            raise ConvergenceError("Lanczos lost the target subspace", best_residual=best_res)
        x /= nx
        res = _true_residual(op, theta, x)
        if res < best_res:
            best_res, best_pair = res, (theta, x)
        if res <= settings.tolerance:
            return theta, x, res
        if exhausted:
            # invariant subspace: the Ritz pair is exact up to roundoff
            if best_res <= max(settings.tolerance, 1e-10):
                theta, x = best_pair
                return theta, x, best_res
            raise ConvergenceError(
                f"Lanczos exhausted an invariant subspace at residual {best_res:.3e}",
                best_residual=best_res,
            )
        v = x  # restart from the best Ritz vector

    raise ConvergenceError(
        f"Lanczos did not reach residual {settings.tolerance:.1e} within "
        f"{settings.max_iterations} matvecs (best {best_res:.3e})",
        best_residual=best_res,
    )


def low_spectrum(op: LinearOperator, k: int, settings: ResolventSettings,
                 seed: int = 0, force_iterative: bool = False,
                 project=None) -> EigenResult:
    """k lowest eigenpairs, dense below the cutoff and deflated Lanczos above."""
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    if op.size <= DENSE_CUTOFF and not force_iterative and project is None:
        return _dense_low_spectrum(op, k)
    rng = np.random.default_rng(seed)
    vals: list[float] = []
    vecs: list[np.ndarray] = []
    resids: list[float] = []
    for _ in range(k):
        theta, x, res = _lanczos_lowest(op, settings, rng, deflate=vecs, project=project)
        vals.append(theta)
        vecs.append(x)
        resids.append(res)
    order = np.argsort(vals)
    states = [_as_wavefunction(vecs[j], op) for j in order]
    return EigenResult(np.asarray(vals)[order], states,
                       np.asarray(resids)[order], METHOD_ITERATIVE)


def ground_state(op: LinearOperator, settings: ResolventSettings,
                 seed: int = 0, force_iterative: bool = False,
                 project=None) -> EigenResult:
    """Lowest eigenpair of a self-adjoint operator."""
    return low_spectrum(op, 1, settings, seed=seed, force_iterative=force_iterative,
                        project=project)


def projected_resolvent_apply(op: LinearOperator, projector_state: WaveFunction,
                              lam: float, b: WaveFunction,
                              settings: ResolventSettings,
                              x0: np.ndarray | None = None) -> WaveFunction:
    """Solve P (A - lam) P x = b on the orthogonal complement of one state.

    Conjugate gradients with re-projection of every iterate; negative
    curvature means lam is not below the projected spectrum and raises
    GapError.  ``x0`` warm-starts the iteration.
    """
    p = projector_state.coefficients / np.linalg.norm(projector_state.coefficients)
    rhs = b.coefficients
    nb = np.linalg.norm(rhs)
    if nb == 0.0:
        return WaveFunction(np.zeros_like(rhs), op.grid, op.particle_count, 0.0)
    if abs(p @ rhs) / nb > 1e-10:
        raise PreconditionError(
            "right-hand side is not orthogonal to the projector state; "
            "project it out first"
        )

    def proj(v: np.ndarray) -> np.ndarray:
        return v - (p @ v) * p

    def kmat(v: np.ndarray) -> np.ndarray:
        return proj(op.matvec(proj(v)) - lam * proj(v))

    if x0 is None:
        x = np.zeros_like(rhs)
        r = proj(rhs.copy())
    else:
        x = proj(np.asarray(x0, dtype=float).ravel().copy())
        r = proj(rhs - kmat(x))
    d = r.copy()
    rs = float(r @ r)
    target = settings.tolerance * nb
    for _ in range(settings.max_iterations):
        if np.sqrt(rs) <= target:
            break
        kd = kmat(d)
        curv = float(d @ kd)
        if curv <= 0.0:
            raise GapError(
                "negative curvature in CG: the shift is not below the projected "
                "spectrum (no positive gap)"
            )
        step = rs / curv
        x += step * d
        r -= step * kd
        x = proj(x)
        rs_new = float(r @ r)
        d = r + (rs_new / rs) * d
        rs = rs_new
    else:
        raise ConvergenceError(
            f"CG residual {np.sqrt(rs) / nb:.3e} above {settings.tolerance:.1e} after "
            f"{settings.max_iterations} iterations",
            best_residual=float(np.sqrt(rs) / nb),
        )
    return WaveFunction(x, op.grid, op.particle_count)


def one_electron_density(psi: WaveFunction, electron_index: int = 0) -> np.ndarray:
    """Marginal density of one electron, integrating to the squared norm."""
    n = psi.particle_count
    if not 0 <= electron_index < n:
        raise ConfigurationError(f"electron index {electron_index} out of range")
    d = psi.grid.axes_per_particle()
    prob = psi.tensor() ** 2
    keep = tuple(range(electron_index * d, electron_index * d + d))
    other = tuple(ax for ax in range(n * d) if ax not in keep)
    rho = prob.sum(axis=other) if other else prob
    return rho * psi.grid.spacing ** (d * (n - 1))


@dataclass
class DecayFit:
    """Least-squares exponential-decay rate of a one-electron density.

    ``fitted_rate`` is the decay rate of the density itself; the amplitude
    (wavefunction) rate is half of it.
    """

    fitted_rate: float
    theoretical_bound: float | None
    fit_window: tuple[float, float]
    rms_log_error: float
    superexponential: bool = False

    @property
    def amplitude_rate(self) -> float:
        return 0.5 * self.fitted_rate

    @property
    def exceeds_bound(self) -> bool:
        if self.theoretical_bound is None:
            return self.superexponential
        return self.superexponential or self.amplitude_rate > self.theoretical_bound


def _radial_profile(psi: WaveFunction, center: float) -> tuple[np.ndarray, np.ndarray]:
    grid = psi.grid
    rho = one_electron_density(psi, 0)
    if grid.geometry == "radial":
        r = grid.axis()
        # reduced radial function u = r * psi: report the 3d point density
        return r, rho / r**2
    if grid.dim_per_particle != 1:
        raise ConfigurationError("decay fits support 1d and radial grids")
    z = grid.axis()
    r = np.abs(z - center)
    order = np.argsort(r)
    return r[order], rho[order]


def fit_decay_rate(psi: WaveFunction, center: float = 0.0,
                   fit_window: tuple[float, float] | None = None,
                   theoretical_bound: float | None = None) -> DecayFit:
    """Fit log density against radius over a tail window.

    The returned rate uses the density convention (twice the amplitude
    rate).  A window whose density underflows is shrunk with a warning.
    """
    r, rho = _radial_profile(psi, center)
    peak = float(rho.max())
    if fit_window is None:
        lo = 1e-10 * peak
        hi = 1e-2 * peak
        usable = (rho > lo) & (rho < hi)
        if not np.any(usable):
            raise PreconditionError("no usable tail region for a decay fit")
        fit_window = (float(r[usable].min()), float(r[usable].max()))
    r_lo, r_hi = fit_window
    mask = (r >= r_lo) & (r <= r_hi) & (rho > 0)
    floor = 1e-280
    if np.any((r >= r_lo) & (r <= r_hi) & (rho <= floor)):
        mask &= rho > floor
        warnings.warn("density underflows inside the fit window; window shrunk")
    if mask.sum() < 4:
        raise PreconditionError("fit window contains fewer than 4 usable points")
    rr = r[mask]
    ll = np.log(rho[mask])
    slope, intercept = np.polyfit(rr, ll, 1)
    resid = ll - (slope * rr + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))

    # compare near/far half-window slopes to flag faster-than-exponential decay
    mid = 0.5 * (rr.min() + rr.max())
    near, far = rr <= mid, rr > mid
    super_exp = False
    if near.sum() >= 3 and far.sum() >= 3:
        s_near = np.polyfit(rr[near], ll[near], 1)[0]
        s_far = np.polyfit(rr[far], ll[far], 1)[0]
        super_exp = s_far < 1.2 * s_near and s_far < s_near  # both negative
    return DecayFit(float(-slope), theoretical_bound,
                    (float(rr.min()), float(rr.max())), rms, super_exp)
