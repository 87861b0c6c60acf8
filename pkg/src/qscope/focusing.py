"""Subwavelength focusing functions from a position-dependent dark state.

A Lambda system |g>, |r>, |e> is driven with Rabi frequencies

    Omega_0(z) = eps * Omega_c
    Omega_1(z) = Omega_c * (1 + beta - cos k1 (z - z0))

and supports the dark state |D(z)> = sin(theta)|g> - cos(theta)|r> with
tan(theta) = Omega_1 / Omega_0.  The overlap |<r|D(z)>|^2 = cos^2(theta) is
sharply peaked around z0 and, multiplied by the dispersive shift of |r>,
defines the focusing function phi(z) = A f(z).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hilbert import WaveFunctionGrid

__all__ = [
    "DegenerateConfigurationError",
    "LambdaConfig",
    "LambdaEigensystem",
    "FocusProfile",
    "CavityAtomBudget",
    "rabi_frequencies",
    "dark_overlap",
    "lambda_hamiltonian",
    "lambda_eigensystem",
    "focus_profile",
    "fwhm_resolution",
    "analytic_resolution",
    "max_overlap",
    "nonadiabatic_potential",
    "max_nonadiabatic_potential",
    "stationary_amplitude",
    "raman_compensation",
    "measurement_rate",
    "spontaneous_rate",
    "decay_budget",
    "gaussian_focus",
    "dark_state_focus",
    "make_focus",
]


class DegenerateConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class LambdaConfig:
    """Laser configuration of the Lambda system.

    ``omega0_waist`` switches on the single-peak variant: Omega_0 acquires a
    Gaussian envelope exp(-(z - z0)^2 / w^2), which removes the periodic
    replicas of the focal spot.  ``None`` keeps Omega_0 constant.
    """

    epsilon: float
    beta: float
    k1: float = 2 * np.pi
    z0: float = 0.0
    omega_c: float = 1.0
    delta_e: float = 0.0
    gamma_e: float = 0.0
    omega0_waist: float | None = None

    def __post_init__(self):
        if not 0 < self.epsilon <= 0.3:
            raise ValueError(f"epsilon must lie in (0, 0.3], got {self.epsilon}")
        if self.epsilon > 0.1:
            warnings.warn(
                f"epsilon={self.epsilon} > 0.1: the closed-form resolution is only asymptotic",
                stacklevel=3,
            )
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.k1 > 0 or not self.omega_c > 0:
            raise ValueError("k1 and omega_c must be positive")
        if self.gamma_e < 0:
            raise ValueError("gamma_e must be non-negative")

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.k1


def rabi_frequencies(config: LambdaConfig, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    x = z - config.z0
    om1 = config.omega_c * (1.0 + config.beta - np.cos(config.k1 * x))
    om0 = np.full_like(x, config.epsilon * config.omega_c)
    if config.omega0_waist is not None:
        om0 = om0 * np.exp(-((x / config.omega0_waist) ** 2))
    return om0, om1


def dark_overlap(config: LambdaConfig, z) -> np.ndarray:
    """|<r|D(z)>|^2 = Omega_0^2 / (Omega_0^2 + Omega_1^2)."""
    om0, om1 = rabi_frequencies(config, z)
    den = om0 * om0 + om1 * om1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, om0 * om0 / np.where(den > 0, den, 1.0), np.nan)
    return out


def lambda_hamiltonian(config: LambdaConfig, z: float) -> np.ndarray:
    """Non-Hermitian 3x3 Hamiltonian in the ordered basis (g, r, e)."""
    om0, om1 = rabi_frequencies(config, z)
    om0, om1 = float(om0), float(om1)
    dt = config.delta_e + 0.5j * config.gamma_e
    H = np.zeros((3, 3), dtype=complex)
    H[2, 2] = -dt
    H[2, 0] = H[0, 2] = 0.5 * om0
    H[2, 1] = H[1, 2] = 0.5 * om1
    return H


@dataclass(frozen=True)
class LambdaEigensystem:
    theta: float
    chi: complex
    E_plus: complex
    E_minus: complex
    dark_state: np.ndarray
    dark_residual: float

    @property
    def overlap_r(self) -> float:
        return float(np.cos(self.theta) ** 2)


def lambda_eigensystem(config: LambdaConfig, z: float) -> LambdaEigensystem:
    """Mixing angles, bright-state energies and the dark state at position z.

    ``dark_residual`` is |H_a |D>|, which vanishes for an exact dark state.
    """
    om0, om1 = (float(v) for v in rabi_frequencies(config, z))
    if om0 == 0 and om1 == 0:
        raise DegenerateConfigurationError(f"both Rabi frequencies vanish at z={z}")
    theta = float(np.arctan2(om1, om0))
    dt = config.delta_e + 0.5j * config.gamma_e
    root = np.sqrt(om0**2 + om1**2 + dt**2 + 0j)
    e_plus = -0.5 * (dt - root)
    e_minus = -0.5 * (dt + root)
    if dt == 0:
        chi = -0.25 * np.pi + 0j
    else:
        chi = -0.5 * np.arctan(np.sqrt(om0**2 + om1**2) / dt + 0j)
    dark = np.array([np.sin(theta), -np.cos(theta), 0.0], dtype=complex)
    residual = float(np.linalg.norm(lambda_hamiltonian(config, z) @ dark))
    return LambdaEigensystem(theta, complex(chi), complex(e_plus), complex(e_minus), dark, residual)


@dataclass(frozen=True)
class FocusProfile:
    """Focusing function sampled on a grid.

    ``grid.values`` holds the dimensionless f(z), normalized so that its
    integral over the window equals ``norm_length``.  ``amplitude`` is A in
    phi(z) = A f(z); ``peak_coupling`` is hbar g(z0)^2 / Delta_t.
    """

    config: LambdaConfig
    grid: WaveFunctionGrid
    amplitude: float
    norm_length: float
    peak_coupling: float

    @property
    def z(self) -> np.ndarray:
        return self.grid.points

    @property
    def f(self) -> np.ndarray:
        return self.grid.values

    def phi(self) -> np.ndarray:
        return self.amplitude * self.grid.values


def _trapezoid(y, x):
    return float(np.trapezoid(y, x))


def focus_profile(
    config: LambdaConfig,
    g_of_z: Callable[[np.ndarray], np.ndarray] | None = None,
    delta_t: float = 1.0,
    norm_length: float = 1.0,
    window: tuple[float, float] | None = None,
    grid_points: int | None = None,
    hbar: float = 1.0,
) -> FocusProfile:
    """Sample phi(z) = hbar g(z)^2 / Delta_t cos^2 theta(z) and split it as A f(z).

    The window defaults to one standing-wave period centred on z0; the grid
    spacing defaults to lambda_1 / 10^4.
    """
    if delta_t == 0:
        raise ValueError("delta_t must be non-zero")
    if not norm_length > 0:
        raise ValueError("norm_length must be positive")
    lam = config.wavelength
    if window is None:
        window = (config.z0 - 0.5 * lam, config.z0 + 0.5 * lam)
    a, b = window
    if b - a < lam * (1 - 1e-12):
        raise ValueError("window must cover at least one standing-wave period")
    if grid_points is None:
        grid_points = int(round((b - a) / (lam * 1e-4))) + 1
    z = np.linspace(a, b, grid_points)
    shape = dark_overlap(config, z)
    g0 = 1.0 if g_of_z is None else float(np.asarray(g_of_z(np.array([config.z0])))[0])
    if g_of_z is not None:
        shape = shape * np.asarray(g_of_z(z), dtype=float) ** 2 / g0**2
    integral = _trapezoid(shape, z)
    f = shape * (norm_length / integral)
    peak = hbar * g0**2 / delta_t
    amplitude = peak * integral / norm_length
    return FocusProfile(config, WaveFunctionGrid(z, f), amplitude, norm_length, peak)


def analytic_resolution(epsilon: float, beta: float, wavelength: float = 1.0) -> float:
    """Closed-form FWHM (valid for epsilon << 1)."""
    return np.sqrt(2.0) * wavelength / np.pi * np.sqrt(np.sqrt(epsilon**2 + 2 * beta**2) - beta)


def _grid_fwhm(z, y):
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = i
    while left > 0 and y[left] > half:
        left -= 1
    right = i
    while right < len(y) - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        raise ValueError("profile does not drop below half maximum inside the window")
    zl = np.interp(half, [y[left], y[left + 1]], [z[left], z[left + 1]])
    zr = np.interp(half, [y[right], y[right - 1]], [z[right], z[right - 1]])
    return float(zr - zl)


def fwhm_resolution(config: LambdaConfig, spacing_fraction: float = 1e-4) -> dict:
    """Analytic and grid FWHM of |<r|D(z)>|^2, in the same length units as k1."""
    lam = config.wavelength
    n = int(round(1.0 / spacing_fraction)) + 1
    z = config.z0 + np.linspace(-0.5 * lam, 0.5 * lam, n)
    numeric = _grid_fwhm(z, dark_overlap(config, z))
    return {"analytic": analytic_resolution(config.epsilon, config.beta, lam), "numeric": numeric}


def max_overlap(epsilon: float, beta: float) -> float:
    """Peak |<r|D>|^2 = (1 + beta^2/epsilon^2)^-1."""
    return 1.0 / (1.0 + (beta / epsilon) ** 2)


def nonadiabatic_potential(config: LambdaConfig, z, mass: float = 1.0, hbar: float = 1.0,
                           recoil_units: bool = True):
    """V_na(z) = hbar^2 / 2m (d theta / dz)^2.

    Returned in units of the recoil energy hbar^2 k1^2 / 2m unless
    ``recoil_units`` is False.  With an Omega_0 envelope the derivative is
    taken by central differences.
    """
    if not mass > 0:
        raise ValueError("mass must be positive")
    z = np.asarray(z, dtype=float)
    k = config.k1
    if config.omega0_waist is None:
        x = k * (z - config.z0)
        u = 1.0 + config.beta - np.cos(x)
        e = config.epsilon
        dtheta = (k / e) * np.sin(x) / (1.0 + (u / e) ** 2)
    else:
        h = 1e-6 / k
        om0p, om1p = rabi_frequencies(config, z + h)
        om0m, om1m = rabi_frequencies(config, z - h)
        dtheta = (np.arctan2(om1p, om0p) - np.arctan2(om1m, om0m)) / (2 * h)
    v = 0.5 * hbar**2 / mass * dtheta**2
    if recoil_units:
        v = v / (0.5 * hbar**2 * k**2 / mass)
    return v


def max_nonadiabatic_potential(config: LambdaConfig, n_grid: int = 20001) -> float:
    """Maximum of V_na over one period, in recoil units."""
    lam = config.wavelength
    z = config.z0 + np.linspace(-0.5 * lam, 0.5 * lam, n_grid)
    return float(np.max(nonadiabatic_potential(config, z)))


def stationary_amplitude(drive: float, kappa: float, delta: float = 0.0) -> complex:
    """Steady intracavity amplitude alpha = sqrt(kappa) E / (i delta - kappa/2)."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return np.sqrt(kappa) * drive / (1j * delta - 0.5 * kappa)


def raman_compensation(g_z0: float, drive: float, kappa: float, delta: float, delta_t: float) -> float:
    """Raman detuning g(z0)^2 |alpha|^2 / Delta_t that cancels the cavity light shift."""
    if delta_t == 0:
        raise ValueError("delta_t must be non-zero")
    alpha = stationary_amplitude(drive, kappa, delta)
    return g_z0**2 * abs(alpha) ** 2 / delta_t


def measurement_rate(amplitude: float, drive: float, kappa: float, hbar: float = 1.0) -> float:
    """gamma = [4 A E / (hbar kappa)]^2 (resonant drive)."""
    return (4.0 * amplitude * drive / (hbar * kappa)) ** 2


def spontaneous_rate(amplitude: float, drive: float, kappa: float, gamma_t: float, delta_t: float,
                     hbar: float = 1.0) -> float:
    """Spatially averaged dark-state decay rate 4 A E^2 Gamma_t / (hbar kappa Delta_t)."""
    return 4.0 * amplitude * drive**2 * gamma_t / (hbar * kappa * delta_t)


@dataclass(frozen=True)
class CavityAtomBudget:
    cooperativity: float
    sigma_over_l0: float
    max_overlap: float
    gamma_over_gamma_sp: float


def decay_budget(cooperativity: float, sigma_over_l0: float, max_overlap: float) -> CavityAtomBudget:
    """Measurement-to-spontaneous-emission ratio 4 C (sigma/l0) |<r|D>|^2_max."""
    if not (cooperativity > 0 and sigma_over_l0 > 0 and max_overlap > 0):
        raise ValueError("cooperativity, sigma_over_l0 and max_overlap must be positive")
    if max_overlap > 1:
        raise ValueError("max_overlap cannot exceed one")
    ratio = 4.0 * cooperativity * sigma_over_l0 * max_overlap
    return CavityAtomBudget(cooperativity, sigma_over_l0, max_overlap, ratio)


# --- focus kernels for dynamics -------------------------------------------------

def gaussian_focus(sigma: float, norm_length: float = 1.0):
    """Gaussian kernel f(z; z0) with FWHM ``sigma`` and integral ``norm_length``."""
    s = sigma / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    c = norm_length / (s * np.sqrt(2 * np.pi))

    def f(z, z0=0.0):
        z = np.asarray(z, dtype=float)
        z0 = np.asarray(z0, dtype=float)
        return c * np.exp(-0.5 * ((z - z0[..., None] if z0.ndim else z - z0) / s) ** 2)

    return f


def dark_state_focus(sigma: float, epsilon: float = 0.1, beta: float = 0.2, norm_length: float = 1.0,
                     waist_fraction: float = 0.5):
    """Single-peak dark-state kernel whose FWHM equals ``sigma``.

    lambda_1 is fixed by the grid FWHM of the enveloped profile; Omega_0 carries a
    Gaussian envelope of waist ``waist_fraction * lambda_1`` to suppress the
    periodic replicas.
    """
    # the FWHM scales with lambda_1 at fixed waist fraction; measure it once at lambda_1 = 1
    unit = LambdaConfig(epsilon, beta, omega0_waist=waist_fraction)
    zu = np.linspace(-0.5, 0.5, 100001)
    lam = sigma / _grid_fwhm(zu, dark_overlap(unit, zu))
    cfg = LambdaConfig(epsilon, beta, k1=2 * np.pi / lam, omega0_waist=waist_fraction * lam)
    zz = np.linspace(-3 * lam, 3 * lam, 60001)
    norm = norm_length / np.trapezoid(dark_overlap(cfg, zz), zz)

    def f(z, z0=0.0):
        z = np.asarray(z, dtype=float)
        z0 = np.asarray(z0, dtype=float)
        x = z - z0[..., None] if z0.ndim else z - z0
        return norm * dark_overlap(cfg, x)

    return f


def make_focus(kind: str, sigma: float, norm_length: float = 1.0, **kw):
    if kind == "gaussian":
        return gaussian_focus(sigma, norm_length)
    if kind == "dark_state":
        return dark_state_focus(sigma, norm_length=norm_length, **kw)
    raise ValueError(f"unknown focus kind {kind!r}")
