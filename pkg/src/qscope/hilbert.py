"""Truncated Hilbert spaces, operators and density matrices.

Units throughout are hbar = 1.  For single-particle runs the trap frequency
and the oscillator length are also set to one, so energies are in units of
omega and lengths in units of l0 = sqrt(hbar / m omega).

Hot loops (the stochastic steppers) work on plain ``ndarray`` objects with an
optional leading batch axis.  The small dataclasses below carry basis metadata
for the public, validated entry points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import gammaln, roots_hermite

__all__ = [
    "InvalidBasisError",
    "BasisMismatchError",
    "QuadratureAccuracyError",
    "PositivityError",
    "TruncatedBasis",
    "OperatorMatrix",
    "DensityMatrix",
    "WaveFunctionGrid",
    "HOOperators",
    "ho_basis",
    "cavity_basis",
    "tensor_basis",
    "annihilation",
    "build_ho_operators",
    "ho_wavefunctions",
    "matrix_elements_of_function",
    "matrix_elements_on_grid",
    "expectation",
    "purity",
    "fock_dm",
    "coherent_dm",
    "coherent_amplitudes",
    "thermal_populations",
    "thermal_dm",
    "min_eigenvalue",
    "check_density_matrix",
    "dag",
]


class InvalidBasisError(ValueError):
    pass


class BasisMismatchError(ValueError):
    pass


class QuadratureAccuracyError(RuntimeError):
    pass


class PositivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class TruncatedBasis:
    """Truncated basis descriptor.

    ``kind`` is one of ``"harmonic_oscillator"``, ``"cavity_fock"`` or
    ``"tensor_product"``.  For tensor products ``factors`` lists the
    component bases (atom first, cavity second by convention).
    """

    kind: str
    dimension: int
    length_scale: float = 1.0
    factors: tuple["TruncatedBasis", ...] = field(default=(), compare=True)

    def __post_init__(self):
        if self.kind not in ("harmonic_oscillator", "cavity_fock", "tensor_product", "generic"):
            raise InvalidBasisError(f"unknown basis kind {self.kind!r}")
        if int(self.dimension) < 2:
            raise InvalidBasisError(f"dimension must be >= 2, got {self.dimension}")
        if not self.length_scale > 0:
            raise InvalidBasisError("length_scale must be positive")
        if self.kind == "tensor_product":
            prod = int(np.prod([f.dimension for f in self.factors])) if self.factors else 0
            if prod != self.dimension:
                raise InvalidBasisError(
                    f"tensor_product dimension {self.dimension} != product of factors {prod}"
                )


def ho_basis(dimension: int, length_scale: float = 1.0) -> TruncatedBasis:
    return TruncatedBasis("harmonic_oscillator", int(dimension), float(length_scale))


def cavity_basis(dimension: int) -> TruncatedBasis:
    return TruncatedBasis("cavity_fock", int(dimension))


def tensor_basis(*factors: TruncatedBasis) -> TruncatedBasis:
    dim = int(np.prod([f.dimension for f in factors]))
    return TruncatedBasis("tensor_product", dim, 1.0, tuple(factors))


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class OperatorMatrix:
    basis: TruncatedBasis
    entries: np.ndarray
    hermitian_hint: bool = False

    def __post_init__(self):
        d = self.basis.dimension
        e = np.asarray(self.entries, dtype=complex)
        if e.shape != (d, d):
            raise BasisMismatchError(f"entries shape {e.shape} does not match basis dimension {d}")
        object.__setattr__(self, "entries", e)
        if self.hermitian_hint:
            scale = max(np.abs(e).max(), 1e-300)
            if np.abs(e - e.conj().T).max() > 1e-12 * scale:
                raise ValueError("operator flagged Hermitian but is not")

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def dimension(self) -> int:
        return self.basis.dimension


@dataclass(frozen=True)
class DensityMatrix:
    basis: TruncatedBasis
    entries: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        d = self.basis.dimension
        if e.shape != (d, d):
            raise BasisMismatchError(f"entries shape {e.shape} does not match basis dimension {d}")
        object.__setattr__(self, "entries", e)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def validate(self, trace_tol=1e-8, herm_tol=1e-10, eig_tol=-1e-8):
        check_density_matrix(self.entries, trace_tol, herm_tol, eig_tol)
        return self


@dataclass(frozen=True)
class WaveFunctionGrid:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("grid needs at least two points")
        d = np.diff(p)
        if np.any(d <= 0):
            raise ValueError("grid points must be strictly increasing")
        if not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise ValueError("grid must be uniform")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "values", np.asarray(self.values))

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])


def _entries(x) -> np.ndarray:
    if isinstance(x, (OperatorMatrix, DensityMatrix)):
        return x.entries
    return np.asarray(x)


def annihilation(dimension: int) -> np.ndarray:
    """Truncated lowering operator a with a|n> = sqrt(n)|n-1>."""
    return np.diag(np.sqrt(np.arange(1, dimension, dtype=float)), 1).astype(complex)


class HOOperators(NamedTuple):
    H_sys: OperatorMatrix
    z_op: OperatorMatrix
    p_op: OperatorMatrix


def build_ho_operators(basis: TruncatedBasis, omega: float = 1.0, hbar: float = 1.0) -> HOOperators:
    """Harmonic-oscillator Hamiltonian, position and momentum in the Fock basis.

    The mass is implied by ``basis.length_scale`` via l0 = sqrt(hbar / m omega).
    """
    if basis.kind != "harmonic_oscillator":
        raise InvalidBasisError("build_ho_operators needs a harmonic_oscillator basis")
    if not omega > 0:
        raise ValueError("omega must be positive")
    d = basis.dimension
    l0 = basis.length_scale
    a = annihilation(d)
    H = np.diag(hbar * omega * (np.arange(d) + 0.5)).astype(complex)
    z = (l0 / np.sqrt(2)) * (a + a.T)
    p = 1j * (hbar / (l0 * np.sqrt(2))) * (a.T - a)
    return HOOperators(
        OperatorMatrix(basis, H, True),
        OperatorMatrix(basis, z, True),
        OperatorMatrix(basis, p, True),
    )


def _hermite_functions_scaled(x: np.ndarray, dimension: int) -> np.ndarray:
    """Normalized Hermite polynomials h_n(x) with phi_n(x) = exp(-x^2/2) h_n(x).

    Returns an array of shape (dimension, len(x)).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((dimension,) + x.shape)
    out[0] = np.pi ** -0.25
    if dimension > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, dimension - 1):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def ho_wavefunctions(z, dimension: int, length_scale: float = 1.0) -> np.ndarray:
    """Eigenfunctions <z|n> for n < dimension, shape (dimension, len(z)).

    Uses the three-term recurrence on the Gaussian-weighted functions, which is
    stable far into the classically forbidden region.
    """
    z = np.asarray(z, dtype=float)
    x = z / length_scale
    out = np.empty((dimension,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if dimension > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, dimension - 1):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out / np.sqrt(length_scale)


def _gauss_hermite_elements(f, dimension, l0, order):
    x, w = roots_hermite(order)
    h = _hermite_functions_scaled(x, dimension) * np.sqrt(w)
    fx = np.asarray(f(l0 * x), dtype=float)
    m = (h * fx) @ h.T
    return 0.5 * (m + m.T)


def matrix_elements_of_function(
    f: Callable[[np.ndarray], np.ndarray],
    basis: TruncatedBasis,
    quadrature_order: int | None = None,
    tol: float = 1e-10,
) -> OperatorMatrix:
    """Matrix elements <m|f(z)|n> by Gauss-Hermite quadrature.

    The result is checked against a run at twice the order; a disagreement
    larger than ``tol`` (relative to the largest element) raises
    :class:`QuadratureAccuracyError`.  Narrow functions need a high order, or
    use :func:`matrix_elements_on_grid`.
    """
    if basis.kind != "harmonic_oscillator":
        raise InvalidBasisError("matrix elements need a harmonic_oscillator basis")
    d = basis.dimension
    order = 4 * d if quadrature_order is None else int(quadrature_order)
    if order < 2 * d:
        raise QuadratureAccuracyError(f"quadrature_order {order} < 2*dimension {2 * d}")
    m1 = _gauss_hermite_elements(f, d, basis.length_scale, order)
    m2 = _gauss_hermite_elements(f, d, basis.length_scale, 2 * order)
    scale = max(np.abs(m2).max(), 1e-300)
    err = np.abs(m1 - m2).max() / scale
    if err > tol:
        raise QuadratureAccuracyError(
            f"Gauss-Hermite order {order} vs {2 * order} differ by {err:.2e} (relative); "
            "increase quadrature_order"
        )
    return OperatorMatrix(basis, m2.astype(complex), True)


def matrix_elements_on_grid(
    f_values: np.ndarray, z: np.ndarray, dimension: int, length_scale: float = 1.0
) -> np.ndarray:
    """Matrix elements from samples of f on a uniform grid (trapezoid rule).

    ``f_values`` may carry leading axes (e.g. one row per focal point); the
    result then has shape ``f_values.shape[:-1] + (d, d)``.  The grid must
    extend well into the region where the eigenfunctions have decayed, in
    which case the trapezoid rule is spectrally accurate.
    """
    z = np.asarray(z, dtype=float)
    dz = z[1] - z[0]
    psi = ho_wavefunctions(z, dimension, length_scale)
    fv = np.asarray(f_values, dtype=float)
    weighted = fv[..., None, :] * psi * dz
    m = weighted @ psi.T
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def expectation(O, rho) -> complex | np.ndarray:
    """Tr(O rho); batched over leading axes of ``rho``.

    Returns a real value when ``O`` is flagged Hermitian.
    """
    if isinstance(O, OperatorMatrix) and isinstance(rho, DensityMatrix):
        if O.basis != rho.basis:
            raise BasisMismatchError("operator and state live in different bases")
    o = _entries(O)
    r = _entries(rho)
    if o.shape[-1] != r.shape[-1]:
        raise BasisMismatchError(f"dimension mismatch {o.shape} vs {r.shape}")
    val = np.einsum("ij,...ji->...", o, r)
    if isinstance(O, OperatorMatrix) and O.hermitian_hint:
        return val.real
    return val


def purity(rho) -> float | np.ndarray:
    r = _entries(rho)
    return np.einsum("...ij,...ji->...", r, r).real


def fock_dm(dimension: int, n: int) -> np.ndarray:
    rho = np.zeros((dimension, dimension), dtype=complex)
    rho[n, n] = 1.0
    return rho


def coherent_amplitudes(alpha: complex, dimension: int) -> np.ndarray:
    """Fock amplitudes of |alpha>, renormalized on the truncated space."""
    if alpha == 0:
        c = np.zeros(dimension, dtype=complex)
        c[0] = 1.0
        return c
    n = np.arange(dimension)
    logmag = n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1) - 0.5 * abs(alpha) ** 2
    c = np.exp(logmag) * np.exp(1j * n * np.angle(alpha))
    return c / np.linalg.norm(c)


def coherent_dm(alpha: complex, dimension: int) -> np.ndarray:
    c = coherent_amplitudes(alpha, dimension)
    return np.outer(c, c.conj())


def thermal_populations(n_th: float, dimension: int) -> np.ndarray:
    """Geometric distribution with mean n_th, truncated and renormalized."""
    if n_th <= 0:
        p = np.zeros(dimension)
        p[0] = 1.0
        return p
    q = n_th / (1.0 + n_th)
    p = (1 - q) * q ** np.arange(dimension)
    return p / p.sum()


def thermal_dm(n_th: float, dimension: int) -> np.ndarray:
    return np.diag(thermal_populations(n_th, dimension)).astype(complex)


def min_eigenvalue(rho) -> float | np.ndarray:
    r = _entries(rho)
    h = 0.5 * (r + dag(r))
    return np.linalg.eigvalsh(h)[..., 0]


def check_density_matrix(rho, trace_tol=1e-8, herm_tol=1e-10, eig_tol=-1e-8):
    r = _entries(rho)
    tr = np.trace(r, axis1=-2, axis2=-1)
    if np.any(np.abs(tr - 1) > trace_tol):
        raise ValueError(f"trace deviates from one: {np.abs(tr - 1).max():.2e}")
    scale = max(np.abs(r).max(), 1e-300)
    if np.abs(r - dag(r)).max() > herm_tol * scale:
        raise ValueError("density matrix is not Hermitian")
    lam = np.min(min_eigenvalue(r))
    if lam < eig_tol:
        raise PositivityError(f"smallest eigenvalue {lam:.3e} below {eig_tol:g}")
