"""Scan schedules, trajectory and ensemble drivers, jump labelling.

Single-particle runs use hbar = omega = l0 = m = 1; box runs use
hbar = m = L = 1.  All trajectories of an ensemble are advanced together as
a batch; batches are split over a thread pool capped by ``QSCOPE_THREADS``.
"""
from __future__ import annotations

import hashlib
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import __version__
from .focusing import make_focus
from .hilbert import (
    build_ho_operators,
    coherent_dm,
    dag,
    fock_dm,
    ho_basis,
    matrix_elements_on_grid,
    purity,
    thermal_dm,
)
from .homodyne import CurrentRecord, EnsembleAccumulator, EnsembleStats, lowpass_filter
from .manybody import BoxImpurityModel, FriedelScanner, nondemolition_bound
from .sme import (
    CavityParams,
    MeasurementParams,
    NoiseBank,
    default_dt,
    full_model,
    good_cavity_channels,
    sideband_decompose,
    sideband_rate_matrix,
    sme_step,
    step_master_equation,
    step_populations,
    step_sre,
)

__all__ = [
    "GuardError",
    "ScanSchedule",
    "RunConfig",
    "FocusTable",
    "TrajectoryRecord",
    "EnsembleResult",
    "evaluate_guards",
    "run_trajectory",
    "run_batch",
    "run_ensemble",
    "detect_jumps",
    "config_hash",
    "manifest",
    "FriedelResult",
    "run_friedel",
    "master_equation_oracle",
]

REGIMES = ("full", "bad_cavity", "good_cavity", "sre", "manybody")
INITIAL = ("coherent", "fock", "thermal", "fermi_ground")


class GuardError(ValueError):
    pass


@dataclass(frozen=True)
class ScanSchedule:
    mode: str = "fixed_point"
    z0_start: float = 0.0
    z0_end: float = 0.0
    duration: float = 1.0
    n_scans: int = 1

    def __post_init__(self):
        if self.mode not in ("fixed_point", "linear_scan"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.n_scans < 1:
            raise ValueError("n_scans must be >= 1")

    @property
    def total_time(self) -> float:
        return self.duration * self.n_scans

    def z0(self, t):
        t = np.asarray(t, dtype=float)
        if self.mode == "fixed_point":
            return np.full(t.shape, float(self.z0_start)) if t.ndim else float(self.z0_start)
        frac = np.mod(t, self.duration) / self.duration
        # the last instant of a scan belongs to that scan, not the next one
        frac = np.where((t > 0) & np.isclose(frac, 0.0) & np.isclose(t, self.total_time), 1.0, frac)
        out = self.z0_start + (self.z0_end - self.z0_start) * frac
        return out if np.ndim(out) else float(out)

    def scan_index(self, t):
        return np.minimum(np.floor(np.asarray(t) / self.duration).astype(int), self.n_scans - 1)


@dataclass(frozen=True)
class RunConfig:
    """Complete description of a run.

    Physics parameters default to the single-particle units.  ``dt=None``
    selects min(0.01/gamma, 0.01/omega, 0.05/kappa) (the kappa bound only for
    the full model).  ``record_every`` thins the stored population/energy
    series; currents are kept at every step.
    """

    regime: str = "bad_cavity"
    gamma: float = 1.0
    kappa: float = 20.0
    omega: float = 1.0
    sigma: float = 0.3
    delta: float = 0.0
    phi: float = -np.pi / 2
    focus: str = "gaussian"
    initial: str = "coherent"
    alpha: float = 2.0
    fock_n: int = 0
    n_th: float = 0.6
    dimension: int = 20
    cavity_dim: int = 6
    ell_max: int = 1
    scheme: str = "kraus"
    schedule: ScanSchedule = field(default_factory=ScanSchedule)
    dt: float | None = None
    tau: float | None = None
    n_trajectories: int = 1
    seed: int = 0
    record_every: int = 1
    n_fermions: int = 16
    box_length: float = 1.0
    excitation_cutoff: int = 1
    window: int = 6
    override_guards: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.initial not in INITIAL:
            raise ValueError(f"initial must be one of {INITIAL}, got {self.initial!r}")
        for name in ("gamma", "kappa", "omega", "sigma", "delta", "phi", "alpha", "n_th", "box_length"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        for name in ("kappa", "omega", "sigma", "box_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_th < 0:
            raise ValueError("n_th must be non-negative")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_trajectories < 1 or self.record_every < 1:
            raise ValueError("n_trajectories and record_every must be >= 1")
        if (self.regime == "manybody") != (self.initial == "fermi_ground"):
            raise ValueError("the fermi_ground initial state goes with, and only with, the manybody regime")
        if self.regime == "sre" and self.initial == "coherent":
            raise ValueError("the sre regime needs a diagonal initial state (fock or thermal)")
        if self.initial == "fock" and not 0 <= self.fock_n < self.dimension:
            raise ValueError("fock_n outside the truncated basis")

    @property
    def time_step(self) -> float:
        if self.dt is not None:
            return float(self.dt)
        if self.regime == "full":
            return default_dt(self.gamma, self.omega, self.kappa)
        return default_dt(self.gamma, self.omega)

    @property
    def filter_time(self) -> float:
        if self.tau is not None:
            return float(self.tau)
        # spatial resolution sets the filter: tau = (sigma / scan length) T
        s = self.schedule
        span = abs(s.z0_end - s.z0_start)
        if s.mode == "linear_scan" and span > 0:
            return self.sigma / span * s.duration
        return max(2 * self.time_step, 0.05 * s.duration)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = asdict(self.schedule)
        return d


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate_guards(config: RunConfig, warn: bool = True) -> dict:
    """Regime and time-scale diagnostics.

    Returns T_coll = 1/gamma, T_dwell = (2 omega/kappa)^2/gamma and the
    derived flags.  Warnings are issued for soft violations; hard
    violations raise :class:`GuardError` unless ``override_guards`` is set.
    """
    c = config
    ratio = c.kappa / c.omega
    g = c.gamma
    T = c.schedule.duration
    rep = {"kappa_over_omega": ratio, "scan_time": T}
    msgs = []
    if c.regime == "manybody":
        model = BoxImpurityModel(c.n_fermions, c.box_length, window=c.window)
        bound = nondemolition_bound(c.sigma)
        level = model.energy_unit * (2 * model.n_per_sector + 1)
        rep.update(nondemolition_bound=bound, nondemolition_ok=bool(c.kappa <= bound),
                   fermi_level_gap=level, T_coll=1 / g if g else np.inf,
                   T_dwell=(2 * level / c.kappa) ** 2 / g if g else np.inf)
        if c.kappa > bound:
            msg = f"kappa = {c.kappa:g} exceeds the non-demolition bound {bound:g}"
            if not c.override_guards:
                raise GuardError(msg)
            msgs.append(msg)
    else:
        rep["T_coll"] = 1 / g if g else np.inf
        rep["T_dwell"] = (2 * c.omega / c.kappa) ** 2 / g if g else np.inf
        if c.regime == "bad_cavity" and ratio < 5:
            msgs.append(f"bad-cavity model used at kappa/omega = {ratio:g} < 5")
        if c.regime in ("good_cavity", "sre"):
            if ratio > 0.5:
                msgs.append(f"{c.regime} model used at kappa/omega = {ratio:g} > 0.5")
            if ratio >= 1 and not c.override_guards:
                raise GuardError(f"good-cavity model needs kappa/omega < 1 (got {ratio:g}); set override_guards")
    rep["collapse_before_scan"] = bool(rep["T_coll"] < 0.1 * T)
    rep["scan_within_dwell"] = bool(T <= rep["T_dwell"])
    rep["warnings"] = msgs
    if warn:
        for m in msgs:
            warnings.warn(m, stacklevel=2)
    return rep


# --- focus tables -----------------------------------------------------------------

class FocusTable:
    """f_{mn}(z0) in the oscillator basis, tabulated and cubic-spline interpolated.

    Tabulation uses the trapezoid rule on a grid spanning the oscillator
    eigenfunctions and the focal range.
    """

    def __init__(self, config: RunConfig, n_points: int = 512):
        c = config
        self.dimension = c.dimension
        self.focus = make_focus(c.focus, c.sigma, 1.0)
        s = c.schedule
        lo, hi = sorted((s.z0_start, s.z0_end))
        reach = np.sqrt(2 * c.dimension + 1) + 8.0
        zmax = max(abs(lo), abs(hi)) + reach + 4 * c.sigma
        h = min(c.sigma / 20, 0.02)
        self.z = np.linspace(-zmax, zmax, int(np.ceil(2 * zmax / h)) | 1)
        self.fixed = s.mode == "fixed_point" or hi == lo
        if self.fixed:
            self.z0_grid = np.array([lo])
            self._F = self.direct(lo)
            self._spline = None
        else:
            pad = 0.02 * (hi - lo)
            self.z0_grid = np.linspace(lo - pad, hi + pad, n_points)
            F = np.stack([self.direct(z0) for z0 in self.z0_grid])
            self._spline = CubicSpline(self.z0_grid, F, axis=0)

    def direct(self, z0: float) -> np.ndarray:
        return matrix_elements_on_grid(self.focus(self.z, z0), self.z, self.dimension)

    def __call__(self, z0: float) -> np.ndarray:
        if self._spline is None:
            return self._F
        return self._spline(z0)


# --- records ----------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    config_hash: str
    stream_id: int
    current: CurrentRecord
    sample_times: np.ndarray
    populations: np.ndarray
    mean_energy: np.ndarray
    purity: np.ndarray
    signal: np.ndarray
    jump_events: list
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "n_jumps": len(self.jump_events),
            "final_energy": float(self.mean_energy[-1]),
            "final_purity": float(self.purity[-1]),
            **{k: v for k, v in self.diagnostics.items() if np.isscalar(v)},
        }


def _initial_state(c: RunConfig) -> np.ndarray:
    if c.initial == "coherent":
        return coherent_dm(c.alpha, c.dimension)
    if c.initial == "fock":
        return fock_dm(c.dimension, c.fock_n)
    return thermal_dm(c.n_th, c.dimension)


def _step_times(c: RunConfig):
    dt = c.time_step
    n = int(round(c.schedule.total_time / dt))
    return dt, n, np.arange(n) * dt


def run_batch(config: RunConfig, stream_ids: Sequence[int], keep_states: bool = False) -> list[TrajectoryRecord]:
    """Advance one batch of trajectories (one noise stream each) through the schedule."""
    c = config
    stream_ids = [int(s) for s in stream_ids]
    guards = evaluate_guards(c, warn=False)
    dt, n, times = _step_times(c)
    B = len(stream_ids)
    noise = NoiseBank(c.seed, stream_ids)
    z0_mid = c.schedule.z0(times + 0.5 * dt)
    stride = c.record_every
    samples = np.arange(0, n + 1, stride)
    if samples[-1] != n:
        samples = np.append(samples, n)
    ns = samples.size
    dX = np.empty((B, n))
    sig = np.empty((B, n))
    drift_max = np.zeros(B)
    h = config_hash(c)

    if c.regime == "manybody":
        model = BoxImpurityModel(c.n_fermions, c.box_length, window=c.window)
        foc = make_focus(c.focus, c.sigma, c.box_length / c.n_fermions)
        scanner = _scanner_cache(c, model, foc)
        p = scanner.ground_populations(B)
        E = scanner.basis.energies
        pops = np.empty((B, ns, len(scanner.basis)))
        pops[:, 0] = p
        k_s = 1
        for k in range(n):
            dW = noise.increment(dt)
            p, mean, err = scanner.step(p, z0_mid[k], dt, dW)
            sig[:, k] = mean
            dX[:, k] = 2 * np.sqrt(c.gamma) * mean * dt + dW
            drift_max = np.maximum(drift_max, np.abs(err))
            if k + 1 == samples[k_s]:
                pops[:, k_s] = p
                k_s += 1
        energy = pops @ E
        pur = (pops**2).sum(-1)
        tail = scanner.tail_probability(pops, 2) if c.excitation_cutoff >= 2 else np.zeros((B, ns))
        excited = scanner.tail_probability(pops, 1)
        recs = []
        for b in range(B):
            rec = CurrentRecord(times, dX[b], dt, "manybody")
            recs.append(TrajectoryRecord(h, stream_ids[b], rec, samples * dt, pops[b], energy[b], pur[b], sig[b], [],
                                         {"trace_drift_max": float(drift_max[b]),
                                          "excited_max": float(excited[b].max()),
                                          "tail_max": float(tail[b].max()), "guards": guards}))
        return recs

    ops = build_ho_operators(ho_basis(c.dimension), omega=c.omega)
    H = np.asarray(ops.H_sys.entries)
    energies = np.real(np.diagonal(H))
    table = _table_cache(c)
    meas = MeasurementParams(c.gamma, c.omega)
    pops = np.empty((B, ns, c.dimension))
    energy = np.empty((B, ns))
    pur = np.empty((B, ns))

    if c.regime == "sre":
        p = np.tile(np.real(np.diagonal(_initial_state(c))), (B, 1))
        pops[:, 0] = p
        k_s = 1
        for k in range(n):
            F = table(z0_mid[k])
            fd = np.diagonal(F)
            mean = p @ fd
            r = step_sre(p, F, meas, c.kappa, dt, noise, scheme="euler" if c.scheme == "euler" else "kraus")
            p = r.p
            sig[:, k] = mean
            dX[:, k] = 2 * np.sqrt(c.gamma) * mean * dt + r.dW
            drift_max = np.maximum(drift_max, np.abs(r.sum_error))
            if k + 1 == samples[k_s]:
                pops[:, k_s] = p
                k_s += 1
        energy = pops @ energies
        pur = (pops**2).sum(-1)
        states = None
    elif c.regime == "good_cavity" and c.initial != "coherent" and c.scheme == "kraus":
        # diagonal start, diagonal f^(0) and single-entry sideband jumps: ρ stays diagonal
        p = np.tile(np.real(np.diagonal(_initial_state(c))), (B, 1))
        pops[:, 0] = p
        R = sideband_rate_matrix(c.gamma, c.omega, c.kappa, c.ell_max, c.dimension)
        sg = np.sqrt(c.gamma)
        k_s = 1
        chunk = 4096
        for k0 in range(0, n, chunk):
            Fs = np.stack([table(z) for z in z0_mid[k0:k0 + chunk]]) if table.fixed else table(z0_mid[k0:k0 + chunk])
            f0s = np.diagonal(Fs, axis1=-2, axis2=-1).real
            Ts = R * np.abs(Fs) ** 2
            for j in range(f0s.shape[0]):
                k = k0 + j
                mean = p @ f0s[j]
                r = step_populations(p, sg * f0s[j], Ts[j], dt, noise)
                p = r.rho
                sig[:, k] = mean
                dX[:, k] = 2 * sg * mean * dt + r.dW
                drift_max = np.maximum(drift_max, np.abs(r.trace_drift))
                if k + 1 == samples[k_s]:
                    pops[:, k_s] = p
                    k_s += 1
        energy = pops @ energies
        pur = (pops**2).sum(-1)
        states = None
    else:
        if c.regime == "full":
            cav = CavityParams(c.kappa, c.delta, 1.0, c.phi)
            eps = 0.5 * np.sqrt(c.gamma * c.kappa)
            F0 = table(z0_mid[0])
            model = full_model(H, F0, cav, eps, c.cavity_dim, linearized=True)
            cav = replace(cav, phi=model.signal_phase)
            na, nc = c.dimension, c.cavity_dim
            vac = np.zeros((nc, nc))
            vac[0, 0] = 1
            rho = np.tile(np.kron(_initial_state(c), vac), (B, 1, 1)).astype(complex)
            cop = np.sqrt(c.kappa) * np.exp(-1j * cav.phi) * model.c_op
            X = model.quadrature(cav.phi)
            Icav = np.eye(nc)
            Hc = np.kron(H, Icav) - c.delta * np.kron(np.eye(na), dag(np.eye(nc, k=1)) @ np.eye(nc, k=1))
            a = model.c_op
        else:
            rho = np.tile(_initial_state(c), (B, 1, 1)).astype(complex)
        pops[:, 0] = np.real(np.diagonal(rho if c.regime != "full" else model.atom_state(rho), axis1=-2, axis2=-1))
        k_s = 1
        for k in range(n):
            F = table(z0_mid[k])
            if c.regime == "bad_cavity":
                mean = np.einsum("ij,bji->b", F, rho).real
                r = sme_step(rho, H, dt, noise, measured=np.sqrt(c.gamma) * F, scheme=c.scheme)
                dX[:, k] = 2 * np.sqrt(c.gamma) * mean * dt + r.dW
            elif c.regime == "good_cavity":
                sb = sideband_decompose(F, c.omega)
                f0 = sb.operators[0]
                mean = np.einsum("ij,bji->b", f0, rho).real
                jumps = good_cavity_channels(sb, c.gamma, c.kappa, c.ell_max)
                r = sme_step(rho, H, dt, noise, measured=np.sqrt(c.gamma) * f0, jumps=jumps, scheme=c.scheme)
                dX[:, k] = 2 * np.sqrt(c.gamma) * mean * dt + r.dW
            else:
                fj = np.kron(F, Icav)
                Ht = Hc + model.epsilon * fj @ (a + dag(a))
                mean = np.einsum("ij,bji->b", fj, rho).real
                xq = np.einsum("ij,bji->b", X, rho).real
                r = sme_step(rho, Ht, dt, noise, measured=cop, scheme=c.scheme)
                dX[:, k] = np.sqrt(c.kappa) * xq * dt + r.dW
            rho = r.rho
            sig[:, k] = mean
            drift_max = np.maximum(drift_max, np.abs(r.trace_drift))
            if k + 1 == samples[k_s]:
                ra = model.atom_state(rho) if c.regime == "full" else rho
                pops[:, k_s] = np.real(np.diagonal(ra, axis1=-2, axis2=-1))
                energy[:, k_s] = np.einsum("ij,bji->b", H, ra).real
                pur[:, k_s] = purity(ra)
                k_s += 1
        r0 = _initial_state(c)
        energy[:, 0] = np.real(np.trace(H @ r0))
        pur[:, 0] = purity(r0)
        states = rho

    hold = 50.0 / c.gamma if c.gamma > 0 else np.inf
    recs = []
    for b in range(B):
        rec = CurrentRecord(times, dX[b], dt, "full" if c.regime == "full" else
                            ("good_cavity" if c.regime in ("good_cavity", "sre") else "bad_cavity"))
        jumps = detect_jumps(pops[b], samples * dt, hold)
        diag = {"trace_drift_max": float(drift_max[b]), "guards": guards}
        if keep_states and states is not None:
            diag["final_state"] = states[b]
        recs.append(TrajectoryRecord(h, stream_ids[b], rec, samples * dt, pops[b], energy[b], pur[b], sig[b], jumps, diag))
    return recs


_TABLES: dict = {}


def _table_cache(c: RunConfig) -> FocusTable:
    key = (c.focus, c.sigma, c.dimension, c.schedule.mode, c.schedule.z0_start, c.schedule.z0_end)
    t = _TABLES.get(key)
    if t is None:
        t = _TABLES[key] = FocusTable(c)
        if len(_TABLES) > 16:
            _TABLES.pop(next(iter(_TABLES)))
    return t


def _scanner_cache(c: RunConfig, model, foc) -> FriedelScanner:
    key = ("mb", c.focus, c.sigma, c.n_fermions, c.box_length, c.kappa, c.gamma, c.excitation_cutoff, c.window)
    s = _TABLES.get(key)
    if s is None:
        s = _TABLES[key] = FriedelScanner(model, foc, c.kappa, c.gamma, c.excitation_cutoff, c.window, sigma=c.sigma)
    return s


def run_trajectory(config: RunConfig, stream_id: int = 0) -> TrajectoryRecord:
    """Single trajectory, reproducible per (seed, stream_id)."""
    evaluate_guards(config)
    return run_batch(config, [stream_id])[0]


# --- ensembles ---------------------------------------------------------------------

@dataclass
class EnsembleResult:
    config: RunConfig
    current_stats: EnsembleStats
    filtered_stats: EnsembleStats
    filtered_times: np.ndarray
    tau: float
    energy_stats: EnsembleStats
    sample_times: np.ndarray
    summaries: list
    oracle: dict | None
    records: list | None = None
    guards: dict = field(default_factory=dict)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QSCOPE_THREADS", "1")))
    except ValueError:
        return 1


def master_equation_oracle(config: RunConfig) -> dict:
    """Unconditional evolution matching the conditional model (noise averaged out).

    Returns the expected current signal <f> (or <X>) per step, the expected
    filtered current and the energy at the sample times.
    """
    c = config
    dt, n, times = _step_times(c)
    z0_mid = c.schedule.z0(times + 0.5 * dt)
    sig = np.empty(n)
    if c.regime == "manybody":
        model = BoxImpurityModel(c.n_fermions, c.box_length, window=c.window)
        sc = _scanner_cache(c, model, make_focus(c.focus, c.sigma, c.box_length / c.n_fermions))
        p = sc.ground_populations()
        for k in range(n):
            p, sig[k] = sc.step_mean(p, z0_mid[k], dt)
        return _oracle_pack(c, sig, times, dt, None)
    ops = build_ho_operators(ho_basis(c.dimension), omega=c.omega)
    H = np.asarray(ops.H_sys.entries)
    table = _table_cache(c)
    rho = _initial_state(c).astype(complex)
    energy = [float(np.real(np.trace(H @ rho)))]
    for k in range(n):
        F = table(z0_mid[k])
        if c.regime in ("bad_cavity", "full"):
            lops = [(c.gamma, F)]
            sig[k] = np.real(np.trace(F @ rho))
        else:
            sb = sideband_decompose(F, c.omega)
            ell = c.ell_max
            lops = good_cavity_channels(sb, c.gamma, c.kappa, ell) + [(c.gamma, sb.operators[0])]
            sig[k] = np.real(np.trace(sb.operators[0] @ rho))
        rho = step_master_equation(rho, H, lops, dt)
        energy.append(float(np.real(np.trace(H @ rho))))
    return _oracle_pack(c, sig, times, dt, np.array(energy))


def _oracle_pack(c, sig, times, dt, energy):
    scale = 2 * np.sqrt(c.gamma)
    rec = CurrentRecord(times, scale * sig * dt, dt, "bad_cavity")
    filt = lowpass_filter(rec, c.filter_time)
    out = {"times": times, "signal": sig, "filtered": filt.values, "filtered_times": filt.times}
    if energy is not None:
        out["energy"] = energy
        out["energy_times"] = np.arange(energy.size) * dt
    return out


def run_ensemble(
    config: RunConfig,
    n_trajectories: int | None = None,
    batch_size: int = 64,
    keep_records: bool = False,
    oracle: bool = True,
) -> EnsembleResult:
    """Run ``n_trajectories`` with stream ids 0..n-1 and merge their statistics.

    Batches run on a thread pool of ``QSCOPE_THREADS`` workers and are merged
    in stream order, so results do not depend on the worker count.
    """
    c = config
    n_traj = c.n_trajectories if n_trajectories is None else int(n_trajectories)
    if n_traj < 1:
        raise ValueError("n_trajectories must be >= 1")
    guards = evaluate_guards(c)
    ids = list(range(n_traj))
    chunks = [ids[i:i + batch_size] for i in range(0, n_traj, batch_size)]
    tau = c.filter_time

    def work(chunk):
        recs = run_batch(c, chunk)
        cur = EnsembleAccumulator().add_batch(np.stack([r.current.increments for r in recs]))
        filt = [lowpass_filter(r.current, tau) for r in recs]
        fa = EnsembleAccumulator().add_batch(np.stack([f.values for f in filt]))
        ea = EnsembleAccumulator().add_batch(np.stack([r.mean_energy for r in recs]))
        return cur, fa, ea, recs, filt[0].times, filt[0].tau

    results = []
    workers = min(_threads(), len(chunks))
    try:
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                results = list(ex.map(work, chunks))
        else:
            results = [work(ch) for ch in chunks]
    except Exception as exc:
        raise RuntimeError(
            f"ensemble aborted after {len(results)} of {len(chunks)} batches: {exc}"
        ) from exc
    cur, fa, ea = EnsembleAccumulator(), EnsembleAccumulator(), EnsembleAccumulator()
    records = []
    for cu, f, e, recs, ft, tau_eff in results:
        cur.merge(cu)
        fa.merge(f)
        ea.merge(e)
        records.extend(recs)
    orc = master_equation_oracle(c) if oracle and c.regime != "manybody" else None
    return EnsembleResult(
        c, cur.stats(), fa.stats(), results[0][4], results[0][5], ea.stats(), records[0].sample_times,
        [r.summary() for r in records], orc, records if keep_records else None, guards,
    )


# --- jump detection ----------------------------------------------------------------

def detect_jumps(populations, times, hold_time: float) -> list[dict]:
    """Changes of the dominant population index that persist for ``hold_time``.

    A run of constant argmax counts as established once it lasts at least
    ``hold_time`` (or reaches the end of the record after starting as the
    first run).  An event is reported at the start of each established run
    whose level differs from the previous established one.
    """
    p = np.asarray(populations)
    t = np.asarray(times, dtype=float)
    if p.shape[0] == 0:
        return []
    idx = np.argmax(p, axis=-1)
    change = np.flatnonzero(np.diff(idx)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [idx.size]])
    events = []
    current = None
    for s, e in zip(starts, ends):
        t_end = t[e] if e < t.size else t[-1]
        duration = t_end - t[s]
        if current is None:
            current = int(idx[s])
            continue
        if duration >= hold_time and int(idx[s]) != current:
            events.append({"time": float(t[s]), "from_n": current, "to_n": int(idx[s])})
            current = int(idx[s])
    return events


def manifest(config: RunConfig, guards: dict | None = None, extra: dict | None = None) -> dict:
    g = evaluate_guards(config, warn=False) if guards is None else guards
    return {
        "code_version": __version__,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "config": config.to_dict(),
        "guards": {k: (v if not isinstance(v, float) or np.isfinite(v) else str(v)) for k, v in g.items()},
        **(extra or {}),
    }


@dataclass
class FriedelResult:
    z0: np.ndarray
    single: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    theory: np.ndarray
    coverage: float
    period_fit: float
    period_fit_single: float
    period_theory: float
    excited_max: float
    tail_max: float
    n_trajectories: int


def run_friedel(config: RunConfig, n_trajectories: int | None = None, window_fraction: float = 0.2,
                batch_size: int = 16) -> FriedelResult:
    """Scanned density estimate n_F I_tau / (2 sqrt(gamma tau)) at the window centres.

    ``single`` is trajectory 0; ``mean``/``std`` are ensemble statistics.
    Coverage counts grid points with |z0| < window_fraction * L at which the
    single scan lies within one ensemble standard deviation of the theory curve.
    """
    from .manybody import fit_friedel_period, friedel_density

    c = config
    if c.regime != "manybody":
        raise ValueError("run_friedel needs the manybody regime")
    evaluate_guards(c)
    n = c.n_trajectories if n_trajectories is None else int(n_trajectories)
    model = BoxImpurityModel(c.n_fermions, c.box_length, window=c.window)
    ids = list(range(n))
    acc = EnsembleAccumulator()
    single = None
    excited = tail = 0.0
    tau = c.filter_time
    for i in range(0, n, batch_size):
        recs = run_batch(c, ids[i:i + batch_size])
        filt = [lowpass_filter(r.current, tau) for r in recs]
        vals = np.stack([f.values for f in filt]) * model.density / (2 * np.sqrt(c.gamma * filt[0].tau))
        if single is None:
            single = vals[0]
            times = filt[0].times + 0.5 * filt[0].tau
        acc.add_batch(vals)
        excited = max(excited, max(r.diagnostics["excited_max"] for r in recs))
        tail = max(tail, max(r.diagnostics["tail_max"] for r in recs))
    st = acc.stats()
    z0 = c.schedule.z0(times)
    theory = friedel_density(model, z0)
    sel = np.abs(z0) < window_fraction * c.box_length
    std = np.sqrt(st.variance)
    cov = float(np.mean(np.abs(single[sel] - theory[sel]) <= std[sel])) if n > 1 else float("nan")
    return FriedelResult(
        z0, single, st.mean, std, theory, cov,
        fit_friedel_period(z0[sel], st.mean[sel], model),
        fit_friedel_period(z0[sel], single[sel], model),
        np.pi / model.k_fermi, excited, tail, n,
    )
