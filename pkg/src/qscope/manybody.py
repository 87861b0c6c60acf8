"""Non-interacting fermions in a box with a hard point impurity.

Units are hbar = m = 1 unless given; the box spans -L/2 <= z <= L/2 with an
infinitely strong impurity at the origin, so every orbital has a node there.

Single-particle orbitals come in degenerate pairs (odd/even parity, or the
left/right combinations (odd -+ even)/sqrt(2) which live on one half of the
box each).  Many-body states are occupation configurations: the ground Slater
determinant plus particle-hole excitations within ``window`` orbitals of the
Fermi level.

Two evolution paths are provided.  :func:`step_manybody_sme` is the dense SME
on the configuration space and works for any choice of operators.  For the
scan itself :class:`FriedelScanner` exploits that, in the left/right basis,
f^(0) is diagonal and every jump b†_ν b_ν' maps configurations one-to-one, so
a diagonal initial state stays diagonal and only populations need stepping.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .hilbert import QuadratureAccuracyError
from .sme import StepResult, sme_step

__all__ = [
    "BasisOverflowError",
    "BoxImpurityModel",
    "OrbitalSet",
    "ManyBodyBasis",
    "ManyBodyOperators",
    "build_orbitals",
    "ground_state_density",
    "orbital_sum_density",
    "friedel_density",
    "single_particle_f_elements",
    "build_manybody_basis",
    "pair_rate",
    "build_manybody_operators",
    "step_manybody_sme",
    "manybody_increment",
    "nondemolition_bound",
    "FriedelScanner",
    "fit_friedel_period",
    "peak_spacing",
]


class BasisOverflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoxImpurityModel:
    """N fermions (N even) in a box of length L.

    ``n_orbitals`` is the number of kept modes per sector; by default the
    Fermi level plus the excitation window.
    """

    n_fermions: int
    box_length: float = 1.0
    n_orbitals: int | None = None
    mass: float = 1.0
    hbar: float = 1.0
    window: int = 6

    def __post_init__(self):
        if self.n_fermions <= 0 or self.n_fermions % 2:
            raise ValueError("n_fermions must be a positive even integer")
        if not self.box_length > 0 or not self.mass > 0:
            raise ValueError("box_length and mass must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.n_orbitals is not None and self.n_orbitals < self.n_fermions // 2:
            raise ValueError("need at least N/2 orbitals per sector")

    @property
    def n_per_sector(self) -> int:
        return self.n_fermions // 2

    @property
    def orbitals_per_sector(self) -> int:
        return self.n_orbitals if self.n_orbitals is not None else self.n_per_sector + self.window

    @property
    def energy_unit(self) -> float:
        """2 pi^2 hbar^2 / (m L^2)."""
        return 2 * np.pi**2 * self.hbar**2 / (self.mass * self.box_length**2)

    @property
    def density(self) -> float:
        return self.n_fermions / self.box_length

    @property
    def k_fermi(self) -> float:
        return np.pi * self.density


@dataclass(frozen=True)
class OrbitalSet:
    """Kept single-particle modes.

    ``labels`` is ``"o"``/``"e"`` (parity basis) or ``"L"``/``"R"``; ``n`` is
    the radial quantum number.  Order: n ascending, sector alternating.
    """

    model: BoxImpurityModel
    basis: str
    n: np.ndarray
    labels: tuple
    energies: np.ndarray

    def __len__(self):
        return len(self.n)

    def wavefunctions(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        L = self.model.box_length
        out = np.empty((len(self.n),) + z.shape)
        inside = np.abs(z) <= L / 2
        for i, (n, lab) in enumerate(zip(self.n, self.labels)):
            k = 2 * np.pi * n / L
            if lab == "o":
                v = np.sqrt(2 / L) * np.sin(k * z)
            elif lab == "e":
                v = np.sqrt(2 / L) * np.sin(k * np.abs(z))
            elif lab == "L":
                v = np.where(z < 0, 2 / np.sqrt(L) * np.sin(k * z), 0.0)
            else:
                v = np.where(z > 0, 2 / np.sqrt(L) * np.sin(k * z), 0.0)
            out[i] = np.where(inside, v, 0.0)
        return out


def build_orbitals(model: BoxImpurityModel, basis: str = "parity") -> OrbitalSet:
    if basis == "parity":
        secs = ("o", "e")
    elif basis in ("left_right", "lr"):
        basis, secs = "left_right", ("L", "R")
    else:
        raise ValueError(f"unknown orbital basis {basis!r}")
    m = model.orbitals_per_sector
    n = np.repeat(np.arange(1, m + 1), 2)
    labels = tuple(secs[i % 2] for i in range(2 * m))
    return OrbitalSet(model, basis, n, labels, model.energy_unit * n.astype(float) ** 2)


def ground_state_density(model: BoxImpurityModel, z) -> np.ndarray:
    """Closed-form ground-state density with the removable singularities filled in."""
    z = np.asarray(z, dtype=float)
    L, N = model.box_length, model.n_fermions
    x = 2 * np.pi * z / L
    s = np.sin(x)
    # sin((N+1)x)/sin(x) -> (N+1) cos((N+1)x)/cos(x) at the zeros of sin x
    near = np.abs(s) < 1e-8
    ratio = np.where(near, (N + 1) * np.cos((N + 1) * x) / np.cos(np.where(near, x, 0.0)),
                     np.sin((N + 1) * x) / np.where(near, 1.0, s))
    return N / L + (1.0 - ratio) / L


def orbital_sum_density(model: BoxImpurityModel, z) -> np.ndarray:
    orb = build_orbitals(model, "parity")
    psi = orb.wavefunctions(z)
    occ = orb.n <= model.n_per_sector
    return (psi[occ] ** 2).sum(axis=0)


def friedel_density(model: BoxImpurityModel, z) -> np.ndarray:
    """n_F [1 - sin(2 k_F z) / (2 k_F z)]."""
    x = 2 * model.k_fermi * np.asarray(z, dtype=float)
    return model.density * (1.0 - np.sinc(x / np.pi))


def _box_grid(L, n_points):
    n_points = int(n_points) | 1  # odd, so z = 0 is a node
    return np.linspace(-L / 2, L / 2, n_points)


def _default_points(orbitals: OrbitalSet, sigma: float | None) -> int:
    L = orbitals.model.box_length
    h = L / (40 * orbitals.n.max())
    if sigma:
        h = min(h, sigma / 20)
    return int(np.ceil(L / h)) + 1


def single_particle_f_elements(
    profile,
    orbitals: OrbitalSet,
    sigma: float | None = None,
    n_points: int | None = None,
    tol: float = 1e-6,
) -> np.ndarray:
    """<ν|f(z)|ν'> by trapezoid quadrature over the box.

    ``profile`` is either a callable f(z) or an array of samples on
    ``numpy.linspace(-L/2, L/2, n_points)``; samples may carry leading axes
    (one row per focal point).  For a callable the result is checked against
    half the resolution; a relative discrepancy above ``tol`` raises
    :class:`QuadratureAccuracyError`.
    """
    L = orbitals.model.box_length
    if callable(profile):
        n = n_points or _default_points(orbitals, sigma)
        z = _box_grid(L, n)
        fine = _f_on_grid(profile(z), z, orbitals)
        zc = z[::2]
        coarse = _f_on_grid(profile(zc), zc, orbitals)
        scale = max(np.abs(fine).max(), 1e-300)
        err = np.abs(fine - coarse).max() / scale
        # trapezoid error falls ~4x per halving, so the fine result is ~err/3 off
        if err / 3 > tol:
            raise QuadratureAccuracyError(f"box quadrature relative error ~{err / 3:.1e} > {tol:g}")
        return fine
    vals = np.asarray(profile, dtype=float)
    z = _box_grid(L, vals.shape[-1])
    return _f_on_grid(vals, z, orbitals)


def _f_on_grid(vals, z, orbitals):
    w = np.full(z.size, z[1] - z[0])
    w[0] = w[-1] = 0.5 * w[0]
    psi = orbitals.wavefunctions(z)
    m = (vals[..., None, :] * (psi * w)) @ psi.T
    return 0.5 * (m + np.swapaxes(m, -1, -2))


# --- many-body configuration space -------------------------------------------------

@dataclass(frozen=True)
class ManyBodyBasis:
    """Occupation configurations over the kept orbitals.

    ``occupations`` has shape (n_states, n_orbitals) with exactly N ones per
    row; ``excitations`` counts particle-hole pairs relative to the ground
    configuration (row 0).
    """

    orbitals: OrbitalSet
    occupations: np.ndarray
    excitations: np.ndarray
    energies: np.ndarray
    index: dict = field(repr=False)

    def __len__(self):
        return self.occupations.shape[0]

    @property
    def bitstrings(self) -> list[str]:
        return ["".join("1" if b else "0" for b in row) for row in self.occupations]


def build_manybody_basis(
    orbitals: OrbitalSet,
    excitation_cutoff: int = 1,
    window: int | None = None,
    max_states: int = 20000,
) -> ManyBodyBasis:
    """Ground configuration plus up to ``excitation_cutoff`` particle-hole pairs.

    Holes are taken from the ``window`` highest occupied levels of each
    sector and particles placed in the ``window`` lowest empty ones.
    """
    model = orbitals.model
    if excitation_cutoff < 0:
        raise ValueError("excitation_cutoff must be >= 0")
    W = model.window if window is None else int(window)
    nf = model.n_per_sector
    ground = (orbitals.n <= nf).astype(np.int8)
    holes = [i for i, n in enumerate(orbitals.n) if nf - W < n <= nf]
    parts = [i for i, n in enumerate(orbitals.n) if nf < n <= nf + W]
    configs = [ground.copy()]
    exc = [0]
    for k in range(1, excitation_cutoff + 1):
        from math import comb

        count = comb(len(holes), k) * comb(len(parts), k)
        if len(configs) + count > max_states:
            raise BasisOverflowError(f"{len(configs) + count} states exceed max_states={max_states}")
        for hs in combinations(holes, k):
            for ps in combinations(parts, k):
                c = ground.copy()
                c[list(hs)] = 0
                c[list(ps)] = 1
                configs.append(c)
                exc.append(k)
    occ = np.array(configs, dtype=np.int8)
    energies = occ @ orbitals.energies
    index = {row.tobytes(): i for i, row in enumerate(occ)}
    return ManyBodyBasis(orbitals, occ, np.array(exc), energies, index)


def _transitions(basis: ManyBodyBasis):
    """All (src, dst, nu, nu', sign) with b†_nu b_nu' |src> = sign |dst> inside the basis."""
    occ = basis.occupations
    M = occ.shape[1]
    src, dst, nu, nup, sign = [], [], [], [], []
    for s, row in enumerate(occ):
        filled = np.flatnonzero(row)
        empty = np.flatnonzero(row == 0)
        for b in filled:
            s1 = (-1) ** int(row[:b].sum())
            r2 = row.copy()
            r2[b] = 0
            for a in empty:
                s2 = (-1) ** int(r2[:a].sum())
                r3 = r2.copy()
                r3[a] = 1
                t = basis.index.get(r3.tobytes())
                if t is not None:
                    src.append(s)
                    dst.append(t)
                    nu.append(a)
                    nup.append(b)
                    sign.append(s1 * s2)
    return (np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp), np.array(nu, dtype=np.intp),
            np.array(nup, dtype=np.intp), np.array(sign, dtype=float))


def pair_rate(gamma: float, f: float, delta_e: float, kappa: float) -> float:
    """gamma f^2 / (1 + 4 dE^2 / kappa^2)."""
    return gamma * f * f / (1.0 + 4.0 * delta_e**2 / kappa**2)


@dataclass(frozen=True)
class ManyBodyOperators:
    f0: np.ndarray
    jumps: list
    hamiltonian: np.ndarray
    basis: ManyBodyBasis


def build_manybody_operators(
    f_elements: np.ndarray,
    basis: ManyBodyBasis,
    gamma: float,
    kappa: float,
    grouping: str = "pair",
    degeneracy_tol: float = 1e-9,
) -> ManyBodyOperators:
    """Measured observable f^(0) and suppressed jump channels on the configuration space.

    With ``grouping="pair"`` every single-particle pair (ν, ν') with
    ε_ν != ε_ν' is its own channel b†_ν b_ν' at rate γ f_νν'^2/(1 + 4Δε^2/κ^2).
    ``grouping="energy"`` sums all pairs sharing Δε into one operator
    Σ f_νν' b†_ν b_ν' at rate γ/(1 + 4Δε^2/κ^2).  Degenerate pairs
    (Δε = 0, e.g. odd/even partners) belong to f^(0).
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    f = np.asarray(f_elements, dtype=float)
    orb = basis.orbitals
    unit = orb.model.energy_unit
    S = len(basis)
    src, dst, nu, nup, sgn = _transitions(basis)
    de = orb.energies[nu] - orb.energies[nup]
    degenerate = np.abs(de) <= degeneracy_tol * unit
    f0 = np.diag(basis.occupations @ np.diag(f)).astype(complex)
    for s, t, a, b, g in zip(src[degenerate], dst[degenerate], nu[degenerate], nup[degenerate], sgn[degenerate]):
        f0[t, s] += g * f[a, b]
    jumps = []
    keep = ~degenerate
    if grouping == "pair":
        pairs = {}
        for s, t, a, b, g in zip(src[keep], dst[keep], nu[keep], nup[keep], sgn[keep]):
            pairs.setdefault((a, b), []).append((s, t, g))
        for (a, b), entries in pairs.items():
            r = pair_rate(gamma, f[a, b], orb.energies[a] - orb.energies[b], kappa)
            if r == 0:
                continue
            L = np.zeros((S, S), dtype=complex)
            for s, t, g in entries:
                L[t, s] = g
            jumps.append((r, L))
    elif grouping == "energy":
        groups = {}
        key = np.round(de / (unit * degeneracy_tol * 10)).astype(np.int64)
        for s, t, a, b, g, k in zip(src[keep], dst[keep], nu[keep], nup[keep], sgn[keep], key[keep]):
            groups.setdefault(k, []).append((s, t, g * f[a, b], orb.energies[a] - orb.energies[b]))
        for entries in groups.values():
            L = np.zeros((S, S), dtype=complex)
            for s, t, v, _ in entries:
                L[t, s] += v
            if np.any(L):
                jumps.append((gamma / (1.0 + 4.0 * entries[0][3] ** 2 / kappa**2), L))
    else:
        raise ValueError(f"unknown grouping {grouping!r}")
    return ManyBodyOperators(f0, jumps, np.diag(basis.energies).astype(complex), basis)


def step_manybody_sme(rho, ops: ManyBodyOperators, gamma: float, dt: float, noise,
                      scheme: str = "kraus", **kw) -> StepResult:
    """Dense many-body SME step; the cavity-mediated Hamiltonian correction is omitted."""
    c = np.sqrt(gamma) * ops.f0
    return sme_step(rho, ops.hamiltonian, dt, noise, measured=c, jumps=ops.jumps, scheme=scheme, **kw)


def manybody_increment(rho, f0, gamma: float, dW, dt: float):
    val = np.einsum("ij,...ji->...", np.asarray(f0), np.asarray(rho)).real
    return 2 * np.sqrt(gamma) * val * dt + np.asarray(dW)


def nondemolition_bound(sigma: float, mass: float = 1.0, hbar: float = 1.0) -> float:
    """Largest linewidth hbar / (m sigma^2) compatible with a non-demolition scan."""
    return hbar / (mass * sigma**2)


# --- population-level scanner -----------------------------------------------------

class FriedelScanner:
    """Population-level many-body scan in the left/right orbital basis.

    f-matrix elements are tabulated on ``n_z0`` focal points and cubic-spline
    interpolated.  ``step`` advances a batch of configuration populations with
    the diagonal of the Kraus-form SME step.
    """

    def __init__(
        self,
        model: BoxImpurityModel,
        focus: Callable,
        kappa: float,
        gamma: float,
        excitation_cutoff: int = 1,
        window: int | None = None,
        sigma: float | None = None,
        n_z0: int = 2048,
        n_points: int | None = None,
    ):
        self.model = model
        self.kappa = float(kappa)
        self.gamma = float(gamma)
        self.orbitals = build_orbitals(model, "left_right")
        self.basis = build_manybody_basis(self.orbitals, excitation_cutoff, window)
        L = model.box_length
        n = n_points or _default_points(self.orbitals, sigma)
        z = _box_grid(L, n)
        self.z0_grid = np.linspace(-L / 2, L / 2, n_z0)
        vals = np.stack([focus(z, z0) for z0 in self.z0_grid])
        F = _f_on_grid(vals, z, self.orbitals)
        self._spline = CubicSpline(self.z0_grid, F, axis=0)
        self._focus = focus
        self._z = z
        src, dst, nu, nup, _ = _transitions(self.basis)
        de = self.orbitals.energies[nu] - self.orbitals.energies[nup]
        keep = np.abs(de) > 1e-9 * model.energy_unit
        self.src, self.dst, self.nu, self.nup = src[keep], dst[keep], nu[keep], nup[keep]
        self.suppression = 1.0 / (1.0 + 4.0 * de[keep] ** 2 / self.kappa**2)
        from scipy.sparse import csr_matrix

        T = self.src.size
        self._gather = csr_matrix((np.ones(T), (np.arange(T), self.dst)), shape=(T, len(self.basis)))
        self._occ = self.basis.occupations.astype(float)

    def f_matrix(self, z0) -> np.ndarray:
        return self._spline(z0)

    def f_matrix_direct(self, z0) -> np.ndarray:
        return _f_on_grid(self._focus(self._z, z0), self._z, self.orbitals)

    def f0_diagonal(self, z0) -> np.ndarray:
        return self._occ @ np.diagonal(self.f_matrix(z0))

    def ground_populations(self, batch: int | None = None) -> np.ndarray:
        p = np.zeros(len(self.basis))
        p[0] = 1.0
        return p if batch is None else np.tile(p, (batch, 1))

    def step(self, p, z0: float, dt: float, dW):
        """Returns (p', <f0> before the step, pre-normalization sum error)."""
        F = self.f_matrix(z0)
        f0 = self._occ @ np.diagonal(F)
        rates = self.gamma * self.suppression * F[self.nu, self.nup] ** 2
        out = np.bincount(self.src, weights=rates, minlength=len(self.basis))
        mean = p @ f0
        df = f0 - mean[..., None]
        g = self.gamma
        mult = 1.0 - 0.5 * out * dt - 0.5 * g * df**2 * dt + np.sqrt(g) * df * np.asarray(dW)[..., None]
        inflow = (self._gather.T @ (p[..., self.src] * rates).T).T
        new = mult * mult * p + dt * inflow
        tot = new.sum(axis=-1)
        return new / tot[..., None], mean, tot - 1.0

    def step_mean(self, p, z0: float, dt: float):
        """Unconditional (rate-equation) step; returns (p', <f0> before the step)."""
        F = self.f_matrix(z0)
        f0 = self._occ @ np.diagonal(F)
        rates = self.gamma * self.suppression * F[self.nu, self.nup] ** 2
        out = np.bincount(self.src, weights=rates, minlength=len(self.basis))
        inflow = np.bincount(self.dst, weights=p[self.src] * rates, minlength=len(self.basis))
        return p + dt * (inflow - out * p), float(p @ f0)

    def tail_probability(self, p, order: int = 2) -> np.ndarray:
        """Probability in configurations with at least ``order`` particle-hole pairs."""
        return p[..., self.basis.excitations >= order].sum(axis=-1)


def fit_friedel_period(z, density, model: BoxImpurityModel) -> float:
    """Period pi/k of the best fit c [1 - a sin(2kz)/(2kz)] to a density profile."""
    from scipy.optimize import curve_fit

    def fn(x, a, k, c):
        return c * (1.0 - a * np.sinc(2 * k * x / np.pi))

    p0 = [1.0, model.k_fermi, model.density]
    popt, _ = curve_fit(fn, np.asarray(z), np.asarray(density), p0=p0, maxfev=20000)
    return float(np.pi / abs(popt[1]))


def peak_spacing(z, density) -> float:
    """Mean spacing between local maxima of a sampled profile."""
    y = np.asarray(density)
    k = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    if k.size < 2:
        return float("nan")
    return float(np.mean(np.diff(np.asarray(z)[k])))
