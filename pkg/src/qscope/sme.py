"""Conditional and unconditional master equations under homodyne detection.

All steppers accept a density matrix with optional leading batch axes
(``rho.shape == (..., d, d)``) and one Wiener increment per batch member, so a
whole ensemble can be advanced with a single call.  Operators are shared by
the batch.

Two discretizations of the Ito SME are available:

``"euler"``
    Plain Euler-Maruyama of dρ = L ρ dt + H[c] ρ dW.  Trace is conserved to
    round-off, but positivity is lost at O(dt) whenever the state carries
    coherences.
``"kraus"`` (default)
    ρ' = M ρ M† + dt Σ r L ρ L† with M = 1 + K dt + (c - m) dW and
    m = Re<c>.  Its Ito expansion equals the Euler-Maruyama update to first
    order, the map is completely positive, and the pre-normalization trace
    carries the zero-mean likelihood factor (<c†c> - m^2)(dW^2 - dt).

Both are followed by Hermitization and trace renormalization.  The
Hamiltonian part is applied as an exact unitary in a symmetric (Strang)
split, half a step on each side, so the deterministic splitting error is
second order in dt.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

from .hilbert import (
    OperatorMatrix,
    PositivityError,
    annihilation,
    dag,
    min_eigenvalue,
)

__all__ = [
    "StepSizeError",
    "CavityParams",
    "MeasurementParams",
    "NoiseSource",
    "NoiseBank",
    "SidebandDecomposition",
    "StepResult",
    "SREResult",
    "FullModel",
    "dissipator",
    "measurement_superop",
    "lindblad_rhs",
    "sme_step",
    "step_full_sme",
    "step_bad_cavity_sme",
    "step_good_cavity_sme",
    "step_sre",
    "step_populations",
    "sideband_rate_matrix",
    "step_master_equation",
    "sideband_decompose",
    "eqnd_projection",
    "sideband_rates",
    "good_cavity_channels",
    "bad_cavity_parameters",
    "full_model",
    "default_dt",
]


class StepSizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class CavityParams:
    kappa: float
    delta: float = 0.0
    drive: float = 0.0
    phi: float = -np.pi / 2

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class MeasurementParams:
    """Effective measurement rate and trap frequency.

    ``coupling`` is the linearized atom-cavity coupling epsilon of the
    eliminated models, when known.
    """

    gamma: float
    omega: float = 1.0
    coupling: float | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    @classmethod
    def from_drive(cls, amplitude: float, cavity: CavityParams, omega: float = 1.0, hbar: float = 1.0):
        """gamma = [4 A E / (hbar kappa)]^2 at resonant drive, with the matching epsilon."""
        k, d = cavity.kappa, cavity.delta
        eps = amplitude * cavity.drive / hbar * np.sqrt(k / (k * k / 4 + d * d))
        gamma = eps**2 * k / (k * k / 4 + d * d)
        return cls(gamma=gamma, omega=omega, coupling=eps)


def default_dt(gamma: float = 0.0, omega: float = 0.0, kappa: float = 0.0) -> float:
    """min(0.01/gamma, 0.01/omega, 0.05/kappa) over the rates that are non-zero."""
    c = [0.01 / r for r in (gamma, omega) if r > 0]
    if kappa > 0:
        c.append(0.05 / kappa)
    if not c:
        raise ValueError("at least one rate must be positive")
    return min(c)


class NoiseSource:
    """Reproducible Wiener increments for one trajectory.

    The stream is keyed by ``(seed, stream_id)`` through
    ``numpy.random.SeedSequence``; identical keys reproduce the identical
    sequence regardless of how the draws are chunked.
    """

    def __init__(self, seed: int, stream_id: int = 0, block: int = 8192):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._rng = np.random.Generator(np.random.PCG64(ss))
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos >= self._buf.size:
                self._buf = self._rng.standard_normal(self._block)
                self._pos = 0
            take = min(n - filled, self._buf.size - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        return out

    def increment(self, dt: float) -> float:
        return float(self.normals(1)[0] * np.sqrt(dt))

    def increments(self, dt: float, n: int) -> np.ndarray:
        return self.normals(n) * np.sqrt(dt)


class NoiseBank:
    """One :class:`NoiseSource` per batch member, drawn column-wise.

    ``increment(dt)`` returns an array with one dW per stream.  Stream k of a
    bank reproduces ``NoiseSource(seed, stream_ids[k])`` exactly.
    """

    def __init__(self, seed: int, stream_ids: Sequence[int], block: int = 4096):
        self.seed = int(seed)
        self.stream_ids = [int(s) for s in stream_ids]
        self.sources = [NoiseSource(seed, s, block=block) for s in self.stream_ids]
        self._block = block
        self._buf = np.empty((len(self.sources), 0))
        self._pos = 0

    def __len__(self):
        return len(self.sources)

    def _refill(self):
        self._buf = np.stack([s.normals(self._block) for s in self.sources])
        self._pos = 0

    def normals(self) -> np.ndarray:
        if self._pos >= self._buf.shape[1]:
            self._refill()
        col = self._buf[:, self._pos]
        self._pos += 1
        return col

    def increment(self, dt: float) -> np.ndarray:
        return self.normals() * np.sqrt(dt)


def _draw(noise, dt, batch_shape):
    if noise is None:
        raise ValueError("a noise source or explicit dW is required")
    if hasattr(noise, "increment"):
        dW = noise.increment(dt)
    else:
        dW = noise
    dW = np.asarray(dW, dtype=float)
    if dW.shape != tuple(batch_shape):
        dW = np.broadcast_to(dW, batch_shape)
    return dW


# --- superoperators ----------------------------------------------------------------

def dissipator(L, rho):
    """D[L] rho = L rho L† - (L†L rho + rho L†L)/2."""
    L = np.asarray(L)
    Ld = dag(L)
    LdL = Ld @ L
    return L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)


def measurement_superop(c, rho):
    """H[c] rho = c rho + rho c† - Tr[(c + c†) rho] rho."""
    c = np.asarray(c)
    x = c @ rho
    tr = np.trace(x, axis1=-2, axis2=-1)
    return x + dag(x) - (2 * tr.real)[..., None, None] * rho


def lindblad_rhs(rho, H, lindblad_ops=()):
    out = -1j * (H @ rho - rho @ H)
    for rate, L in lindblad_ops:
        if rate:
            out = out + rate * dissipator(L, rho)
    return out


# --- unitary part --------------------------------------------------------------

_PROP_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()


def _is_diagonal(a: np.ndarray) -> bool:
    d = a.shape[-1]
    return not np.any(a.reshape(-1)[:-1].reshape(d - 1, d + 1)[:, 1:])


def _propagator(H: np.ndarray, dt: float):
    """exp(-i H dt) as a phase vector (diagonal H) or a cached dense matrix."""
    if _is_diagonal(H):
        return np.exp(-1j * np.diagonal(H) * dt), True
    key = (H.shape, hash(H.tobytes()), float(dt))
    U = _PROP_CACHE.get(key)
    if U is None:
        U = expm(-1j * H * dt)
        _PROP_CACHE[key] = U
        if len(_PROP_CACHE) > 64:
            _PROP_CACHE.popitem(last=False)
    return U, False


def _apply_unitary(rho, H, dt):
    if H is None:
        return rho
    U, diag = _propagator(np.asarray(H), dt)
    if diag:
        return rho * (U[:, None] * U.conj()[None, :])
    return U @ rho @ U.conj().T


class StepResult(NamedTuple):
    rho: np.ndarray
    dW: np.ndarray
    trace_drift: np.ndarray


def _renormalize(rho):
    rho = 0.5 * (rho + dag(rho))
    tr = np.trace(rho, axis1=-2, axis2=-1).real
    return rho / tr[..., None, None], tr - 1.0


def sme_step(
    rho: np.ndarray,
    H: np.ndarray | None,
    dt: float,
    dW=None,
    measured: np.ndarray | None = None,
    jumps: Sequence[tuple[float, np.ndarray]] = (),
    scheme: str = "kraus",
    trace_tol: float | None = None,
    check_positivity: bool = False,
    eig_tol: float = -1e-8,
) -> StepResult:
    """One step of dρ = -i[H,ρ]dt + Σ r D[L]ρ dt + D[c]ρ dt + H[c]ρ dW.

    ``measured`` is the monitored operator c with its rate folded in
    (e.g. sqrt(gamma) f).  ``jumps`` lists unmonitored channels as
    ``(rate, L)`` pairs.  Returns the normalized state, the dW used and the
    pre-normalization trace error.
    """
    rho = np.asarray(rho, dtype=complex)
    batch = rho.shape[:-2]
    d = rho.shape[-1]
    if measured is not None:
        dW = _draw(dW, dt, batch)
    else:
        dW = np.zeros(batch)
    jumps = [(float(r), np.asarray(L)) for r, L in jumps if r]
    if scheme not in ("euler", "kraus"):
        raise ValueError(f"unknown scheme {scheme!r}")
    rho = _apply_unitary(rho, H, 0.5 * dt)

    if scheme == "euler":
        new = rho.copy()
        for r, L in jumps:
            new += (r * dt) * dissipator(L, rho)
        if measured is not None:
            c = np.asarray(measured)
            new += dt * dissipator(c, rho) + dW[..., None, None] * measurement_superop(c, rho)
        tol = 1e-4 if trace_tol is None else trace_tol
    elif scheme == "kraus":
        A = np.zeros((d, d), dtype=complex)
        for r, L in jumps:
            A += r * (dag(L) @ L)
        if measured is not None:
            c = np.asarray(measured)
            A += dag(c) @ c
            m = np.einsum("ij,...ji->...", c, rho).real
            a1 = dt * m + dW
            a0 = 1.0 - 0.5 * m * m * dt - m * dW
        else:
            c = None
        B0 = -0.5 * dt * A
        if c is not None and _is_diagonal(c) and _is_diagonal(A):
            mdiag = a0[..., None] + np.diagonal(B0) + a1[..., None] * np.diagonal(c)
            new = mdiag[..., :, None] * rho * mdiag.conj()[..., None, :]
        else:
            M = np.eye(d) + B0
            if c is not None:
                M = a0[..., None, None] * np.eye(d) + B0 + a1[..., None, None] * c
            new = M @ rho @ dag(M)
        for r, L in jumps:
            new += (r * dt) * (L @ rho @ dag(L))
        # the Kraus trace carries a zero-mean likelihood factor, so only gross errors are flagged
        tol = 0.5 if trace_tol is None else trace_tol
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    new = _apply_unitary(new, H, 0.5 * dt)
    new, drift = _renormalize(new)
    worst = float(np.max(np.abs(drift))) if np.size(drift) else 0.0
    if worst > tol:
        raise StepSizeError(
            f"trace drift {worst:.2e} before renormalization exceeds {tol:g} at dt={dt:g}; reduce dt"
        )
    if check_positivity:
        lam = np.min(min_eigenvalue(new))
        if lam < eig_tol:
            raise PositivityError(f"smallest eigenvalue {lam:.3e} < {eig_tol:g} at dt={dt:g}; reduce dt")
    return StepResult(new, dW, drift)


# --- full atom-cavity model ----------------------------------------------------------

@dataclass(frozen=True)
class FullModel:
    """Atom-cavity operators on the tensor space (atom index first).

    ``signal_phase`` is the homodyne angle for which the fluctuation
    quadrature reads +2 sqrt(gamma) <f>.  ``field_offset`` is the classical
    amplitude removed from the cavity operator in the linearized frame.
    """

    H_total: np.ndarray
    c_op: np.ndarray
    f_op: np.ndarray
    atom_dim: int
    cavity_dim: int
    epsilon: float
    gamma: float
    signal_phase: float
    field_offset: complex = 0.0

    def quadrature(self, phi: float) -> np.ndarray:
        return np.exp(1j * phi) * dag(self.c_op) + np.exp(-1j * phi) * self.c_op

    def atom_state(self, rho):
        """Partial trace over the cavity."""
        na, nc = self.atom_dim, self.cavity_dim
        r = np.asarray(rho).reshape(rho.shape[:-2] + (na, nc, na, nc))
        return np.einsum("...icjc->...ij", r)

    def cavity_state(self, rho):
        na, nc = self.atom_dim, self.cavity_dim
        r = np.asarray(rho).reshape(rho.shape[:-2] + (na, nc, na, nc))
        return np.einsum("...aiaj->...ij", r)


def full_model(
    H_sys,
    f_op,
    cavity: CavityParams,
    amplitude: float,
    cavity_dim: int,
    linearized: bool = False,
    compensate: bool = True,
) -> FullModel:
    """Build H = H_sys + A f c†c + i sqrt(kappa) E (c - c†) - delta c†c.

    With ``linearized`` the cavity is expanded around its steady amplitude
    alpha = sqrt(kappa) E / (i delta - kappa/2) and only the fluctuation
    coupling epsilon f (c + c†) is kept, epsilon = A E sqrt(kappa / (kappa^2/4 + delta^2)).
    Otherwise the full dispersive coupling is used; ``compensate`` subtracts
    the static light shift A |alpha|^2 f (Raman compensation).
    """
    Hs = np.asarray(H_sys, dtype=complex)
    f = np.asarray(f_op, dtype=complex)
    na = Hs.shape[0]
    nc = int(cavity_dim)
    a = annihilation(nc)
    Ia, Ic = np.eye(na), np.eye(nc)
    c = np.kron(Ia, a)
    n_c = np.kron(Ia, a.T @ a)
    fj = np.kron(f, Ic)
    k, dl, E = cavity.kappa, cavity.delta, cavity.drive
    eps = amplitude * E * np.sqrt(k / (k * k / 4 + dl * dl))
    gamma = eps**2 * k / (k * k / 4 + dl * dl)
    alpha = np.sqrt(k) * E / (1j * dl - 0.5 * k)
    H = np.kron(Hs, Ic) - dl * n_c
    if linearized:
        H = H + eps * fj @ (c + dag(c))
        phase = -np.pi / 2 + np.arctan(2 * dl / k)
        offset = alpha
    else:
        H = H + amplitude * fj @ n_c + 1j * np.sqrt(k) * E * (c - dag(c))
        if compensate:
            H = H - amplitude * abs(alpha) ** 2 * fj
        # linearized coupling is A*alpha, so the signal sign follows alpha
        phase = -np.pi / 2 + np.arctan(2 * dl / k) + (np.pi if np.real(alpha) < 0 else 0.0)
        offset = 0.0
    return FullModel(H, c, fj, na, nc, float(eps), float(gamma), float(phase), complex(offset))


def step_full_sme(
    rho,
    H_total,
    c_op,
    cavity: CavityParams,
    dt: float,
    noise,
    scheme: str = "kraus",
    check: bool = True,
    **kw,
) -> StepResult:
    """Full atom-cavity SME with homodyne monitoring of sqrt(kappa) c e^{-i phi}."""
    if check and dt * cavity.kappa > 0.05:
        raise StepSizeError(f"dt*kappa = {dt * cavity.kappa:.3g} > 0.05")
    c = np.sqrt(cavity.kappa) * np.exp(-1j * cavity.phi) * np.asarray(c_op)
    return sme_step(rho, H_total, dt, noise, measured=c, scheme=scheme, **kw)


def bad_cavity_parameters(epsilon: float, kappa: float, delta: float = 0.0) -> dict:
    """Rate, Hamiltonian shift coefficient and optimal homodyne angle of the bad-cavity limit."""
    den = kappa * kappa / 4 + delta * delta
    return {
        "gamma": epsilon**2 * kappa / den,
        "shift": delta * epsilon**2 / den,
        "phi": -np.pi / 2 + np.arctan(2 * delta / kappa),
    }


def step_bad_cavity_sme(
    rho,
    H_sys,
    f_op,
    meas: MeasurementParams,
    dt: float,
    noise,
    delta: float = 0.0,
    kappa: float | None = None,
    scheme: str = "kraus",
    check: bool = True,
    **kw,
) -> StepResult:
    """Eliminated-cavity SME dρ = -i[H_eff,ρ]dt + γ D[f]ρ dt + sqrt(γ) H[f]ρ dW.

    H_eff = H_sys + delta eps^2 f^2 / (kappa^2/4 + delta^2); the shift is
    only added for non-zero detuning and then needs ``kappa`` and
    ``meas.coupling``.
    """
    if check:
        if dt * meas.gamma > 0.01 + 1e-12 or dt * meas.omega > 0.01 + 1e-12:
            raise StepSizeError(
                f"dt*gamma = {dt * meas.gamma:.3g}, dt*omega = {dt * meas.omega:.3g}; both must be <= 0.01"
            )
    f = np.asarray(f_op)
    H = np.asarray(H_sys)
    if delta != 0:
        if kappa is None or meas.coupling is None:
            raise ValueError("non-zero detuning needs kappa and the coupling epsilon")
        shift = bad_cavity_parameters(meas.coupling, kappa, delta)["shift"]
        H = H + shift * (f @ f)
    c = np.sqrt(meas.gamma) * f
    return sme_step(rho, H, dt, noise, measured=c, scheme=scheme, **kw)


# --- good cavity -----------------------------------------------------------------

@dataclass(frozen=True)
class SidebandDecomposition:
    """f = Σ_l f^(l) with f^(l) = Σ_n f_{n,n+l} |n><n+l|."""

    operators: dict
    omega: float

    def reconstruct(self) -> np.ndarray:
        return sum(self.operators.values())

    def __getitem__(self, ell):
        return self.operators[ell]


def sideband_decompose(f_op, omega: float = 1.0) -> SidebandDecomposition:
    f = np.asarray(f_op, dtype=complex)
    d = f.shape[-1]
    ops = {}
    for ell in range(-(d - 1), d):
        ops[ell] = np.diag(np.diagonal(f, offset=ell), k=ell).astype(complex)
    return SidebandDecomposition(ops, float(omega))


def eqnd_projection(O) -> np.ndarray:
    """Energy-diagonal part Σ_n |n><n|O|n><n|."""
    o = O.entries if isinstance(O, OperatorMatrix) else np.asarray(O)
    return np.diag(np.diagonal(o)).astype(complex)


def sideband_rates(gamma: float, omega: float, kappa: float, ell_max: int) -> dict:
    """gamma / (1 + (2 omega l / kappa)^2) for 0 < |l| <= ell_max."""
    return {
        ell: gamma / (1.0 + (2.0 * omega * ell / kappa) ** 2)
        for ell in range(-ell_max, ell_max + 1)
        if ell != 0
    }


def good_cavity_channels(sidebands: SidebandDecomposition, gamma, kappa, ell_max):
    rates = sideband_rates(gamma, sidebands.omega, kappa, ell_max)
    return [(r, sidebands.operators[ell]) for ell, r in rates.items() if ell in sidebands.operators]


def step_good_cavity_sme(
    rho,
    H_sys,
    sidebands: SidebandDecomposition,
    meas: MeasurementParams,
    kappa: float,
    dt: float,
    noise,
    ell_max: int = 1,
    scheme: str = "kraus",
    check: bool = True,
    **kw,
) -> StepResult:
    """Good-cavity SME: measured f^(0), sidebands as suppressed dissipators."""
    if ell_max < 1:
        raise ValueError("ell_max must be >= 1")
    if check:
        if not kappa / sidebands.omega < 1:
            raise ValueError(f"good-cavity SME needs kappa/omega < 1, got {kappa / sidebands.omega:g}")
        if dt * meas.gamma > 0.01 + 1e-12:
            raise StepSizeError(f"dt*gamma = {dt * meas.gamma:.3g} > 0.01")
    jumps = good_cavity_channels(sidebands, meas.gamma, kappa, ell_max)
    c = np.sqrt(meas.gamma) * sidebands.operators[0]
    return sme_step(rho, H_sys, dt, noise, measured=c, jumps=jumps, scheme=scheme, **kw)


# --- stochastic rate equation ----------------------------------------------------------

class SREResult(NamedTuple):
    p: np.ndarray
    dW: np.ndarray
    sum_error: np.ndarray
    clipped: np.ndarray


def step_sre(
    p,
    f_matrix,
    meas: MeasurementParams,
    kappa: float,
    dt: float,
    noise,
    scheme: str = "euler",
    neg_tol: float = 1e-6,
) -> SREResult:
    """Stochastic rate equation for trap populations (nearest-neighbour sidebands).

    dp_n = Γ [A+_n p_{n+1} + A-_n p_{n-1} - B_n p_n] dt + 2 sqrt(γ) p_n (f_nn - Σ f_mm p_m) dW
    with Γ = γ / (1 + (2ω/κ)^2), A±_n = |f_{n,n±1}|^2 and B_n = A+_n + A-_n.

    ``scheme="kraus"`` uses the multiplicative update that coincides with the
    diagonal of the Kraus-form SME step.  ``sum_error`` is Σp - 1 before
    renormalization and ``clipped`` the total negative mass removed.
    """
    p = np.asarray(p, dtype=float)
    f = np.asarray(f_matrix.entries if isinstance(f_matrix, OperatorMatrix) else f_matrix)
    fd = np.diagonal(f).real
    up = np.abs(np.diagonal(f, offset=1)) ** 2  # A+_n for n < d-1
    d = fd.size
    Ap = np.zeros(d)
    Am = np.zeros(d)
    Ap[:-1] = up
    Am[1:] = up
    B = Ap + Am
    rate = meas.gamma / (1.0 + (2.0 * meas.omega / kappa) ** 2)
    dW = _draw(noise, dt, p.shape[:-1])
    mean_f = p @ fd
    df = fd - mean_f[..., None]
    inflow = np.zeros_like(p)
    inflow[..., :-1] += Ap[:-1] * p[..., 1:]
    inflow[..., 1:] += Am[1:] * p[..., :-1]
    if scheme == "euler":
        new = p + rate * (inflow - B * p) * dt + 2 * np.sqrt(meas.gamma) * p * df * dW[..., None]
    elif scheme == "kraus":
        g = meas.gamma
        mult = 1.0 - 0.5 * rate * B * dt - 0.5 * g * df**2 * dt + np.sqrt(g) * df * dW[..., None]
        new = mult * mult * p + rate * inflow * dt
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    total = new.sum(axis=-1)
    neg = np.where(new < 0, new, 0.0)
    if np.any(neg < -neg_tol):
        raise StepSizeError(f"population fell to {neg.min():.2e} before clipping; reduce dt")
    clipped = -neg.sum(axis=-1)
    new = np.clip(new, 0.0, None)
    new = new / new.sum(axis=-1, keepdims=True)
    return SREResult(new, dW, total - 1.0, clipped)


def sideband_rate_matrix(gamma: float, omega: float, kappa: float, ell_max: int, d: int) -> np.ndarray:
    """R[n, k] = rate of sideband l = k - n for 0 < |l| <= ell_max, else 0."""
    ell = np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    R = gamma / (1.0 + (2.0 * omega * ell / kappa) ** 2)
    return np.where((ell > 0) & (ell <= ell_max), R, 0.0)


def step_populations(p, c_diag, transfer, dt: float, noise) -> StepResult:
    """Kraus-form step restricted to diagonal states.

    Valid when the measured operator and the Hamiltonian are diagonal and
    every jump operator has at most one non-zero entry per column, so that
    a diagonal ρ stays diagonal.  ``c_diag`` is the diagonal of the measured
    operator (rate folded in) and ``transfer[n, k] = Σ_j r_j |L_j[n, k]|^2``.
    Agrees with the diagonal of :func:`sme_step` (``scheme="kraus"``) to
    rounding.  ``trace_drift`` holds Σp - 1 before renormalization.
    """
    p = np.asarray(p, dtype=float)
    c = np.asarray(c_diag, dtype=float)
    T = np.asarray(transfer, dtype=float)
    dW = _draw(noise, dt, p.shape[:-1])
    m = p @ c
    a1 = dt * m + dW
    a0 = 1.0 - 0.5 * m * m * dt - m * dW
    out = T.sum(axis=-2)
    mult = a0[..., None] - 0.5 * dt * (out + c * c) + a1[..., None] * c
    new = mult * mult * p + dt * (p @ np.swapaxes(T, -1, -2))
    tot = new.sum(axis=-1)
    return StepResult(new / tot[..., None], dW, tot - 1.0)


# --- unconditional master equation -------------------------------------------------

def step_master_equation(rho, H, lindblad_ops: Sequence[tuple[float, np.ndarray]], dt: float) -> np.ndarray:
    """Classical RK4 step of dρ/dt = -i[H,ρ] + Σ r D[L]ρ."""
    ops = []
    for r, L in lindblad_ops:
        if r < 0:
            raise ValueError("Lindblad rates must be non-negative")
        ops.append((r, np.asarray(L)))
    H = np.asarray(H)
    rho = np.asarray(rho, dtype=complex)
    k1 = lindblad_rhs(rho, H, ops)
    k2 = lindblad_rhs(rho + 0.5 * dt * k1, H, ops)
    k3 = lindblad_rhs(rho + 0.5 * dt * k2, H, ops)
    k4 = lindblad_rhs(rho + dt * k3, H, ops)
    return rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
