"""Homodyne currents, boxcar filtering, SNR and streaming ensemble statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .hilbert import dag

__all__ = [
    "DegenerateEnsembleError",
    "GridMismatchError",
    "CurrentRecord",
    "FilteredSignal",
    "EnsembleStats",
    "EnsembleAccumulator",
    "synthesize_increment",
    "lowpass_filter",
    "snr",
    "ensemble_average",
    "optimal_tau",
    "current_table",
]

MODES = ("full", "bad_cavity", "good_cavity", "manybody")


class DegenerateEnsembleError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class CurrentRecord:
    """Integrated current increments dX on a uniform grid.

    ``increments[..., k]`` is the integral of I(t) over ``[times[k], times[k] + dt)``.
    Leading axes, if any, index trajectories.
    """

    times: np.ndarray
    increments: np.ndarray
    dt: float
    mode: str = "bad_cavity"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if np.shape(self.increments)[-1] != np.size(self.times):
            raise ValueError("times and increments differ in length")

    @property
    def current(self) -> np.ndarray:
        return np.asarray(self.increments) / self.dt


@dataclass(frozen=True)
class FilteredSignal:
    times: np.ndarray
    values: np.ndarray
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class EnsembleStats:
    n_traj: int
    mean: np.ndarray
    variance: np.ndarray
    std_error: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


class EnsembleAccumulator:
    """Welford/Chan running mean and variance with associative merging.

    The variance reported is the unbiased sample variance (zero for a single
    member).
    """

    def __init__(self, shape=None):
        self.n = 0
        self.mean = None if shape is None else np.zeros(shape)
        self.m2 = None if shape is None else np.zeros(shape)

    def add(self, x) -> "EnsembleAccumulator":
        x = np.asarray(x, dtype=float)
        if self.mean is None:
            self.mean = np.zeros_like(x)
            self.m2 = np.zeros_like(x)
        elif x.shape != self.mean.shape:
            raise GridMismatchError(f"shape {x.shape} does not match {self.mean.shape}")
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)
        return self

    def add_batch(self, xs) -> "EnsembleAccumulator":
        xs = np.asarray(xs, dtype=float)
        other = EnsembleAccumulator()
        other.n = xs.shape[0]
        other.mean = xs.mean(axis=0)
        other.m2 = ((xs - other.mean) ** 2).sum(axis=0)
        return self.merge(other)

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        """Combine in place with ``other`` and return self."""
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return self
        if other.mean.shape != self.mean.shape:
            raise GridMismatchError("cannot merge accumulators on different grids")
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        self.m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        self.n = n
        return self

    def stats(self) -> EnsembleStats:
        if self.n == 0:
            raise DegenerateEnsembleError("empty ensemble")
        var = self.m2 / (self.n - 1) if self.n > 1 else np.zeros_like(self.m2)
        var = np.maximum(var, 0.0)
        return EnsembleStats(self.n, self.mean.copy(), var, np.sqrt(var / self.n))


def _expect(op, rho):
    return np.einsum("ij,...ji->...", np.asarray(op), np.asarray(rho))


def synthesize_increment(
    rho,
    mode: str,
    dW,
    dt: float,
    operator,
    meas=None,
    cavity=None,
    offset: float = 0.0,
):
    """Homodyne increment dX = (signal) dt + dW for the given regime.

    Parameters
    ----------
    rho : array (..., d, d)
        Conditional state after (or before, consistently) the paired SME step.
    mode : {"full", "bad_cavity", "good_cavity", "manybody"}
    dW : float or array
        The same Wiener increment consumed by the SME step.
    operator : array
        Cavity annihilation operator on the joint space for ``"full"``; the
        focusing operator f (bad cavity) or its energy-diagonal part f^(0)
        otherwise.
    meas, cavity : MeasurementParams, CavityParams
        ``meas`` is needed for the eliminated models, ``cavity`` for ``"full"``.
    offset : float
        Constant added to <X_phi> (classical field removed in a displaced frame).
    """
    rho = np.asarray(rho)
    op = np.asarray(operator)
    if op.shape[-1] != rho.shape[-1]:
        raise ValueError(f"operator dimension {op.shape[-1]} does not match state {rho.shape[-1]} for mode {mode!r}")
    if mode == "full":
        if cavity is None:
            raise ValueError("full mode needs CavityParams")
        X = np.exp(1j * cavity.phi) * dag(op) + np.exp(-1j * cavity.phi) * op
        signal = np.sqrt(cavity.kappa) * (_expect(X, rho).real + offset)
    elif mode in ("bad_cavity", "good_cavity", "manybody"):
        if meas is None:
            raise ValueError(f"{mode} mode needs MeasurementParams")
        if mode != "bad_cavity" and np.any(op - np.diag(np.diagonal(op))):
            raise ValueError(f"{mode} mode expects the energy-diagonal operator f^(0)")
        signal = 2.0 * np.sqrt(meas.gamma) * _expect(op, rho).real
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return signal * dt + np.asarray(dW)


def lowpass_filter(record: CurrentRecord, tau: float) -> FilteredSignal:
    """Forward boxcar I_tau(t_k) = Σ_{j=k}^{k+w-1} dX_j / sqrt(tau), w = tau/dt.

    ``tau`` is rounded to an integer number of steps; the stored ``tau`` is
    the effective window w*dt.  The output has one value per window start
    ``t_0 ... t_{n-w}``.
    """
    dt = record.dt
    if tau < 2 * dt * (1 - 1e-12):
        raise ValueError(f"tau = {tau:g} must be at least 2*dt = {2 * dt:g}")
    w = int(round(tau / dt))
    x = np.asarray(record.increments, dtype=float)
    n = x.shape[-1]
    if w > n:
        raise ValueError("filter window longer than the record")
    cs = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    tau_eff = w * dt
    vals = (cs[..., w:] - cs[..., :-w]) / np.sqrt(tau_eff)
    return FilteredSignal(np.asarray(record.times)[: n - w + 1], vals, tau_eff)


def _stack(signals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(signals, (FilteredSignal, CurrentRecord)):
        signals = [signals]
    signals = list(signals)
    if not signals:
        raise DegenerateEnsembleError("empty ensemble")
    t0 = np.asarray(signals[0].times)
    rows = []
    for s in signals:
        if np.shape(s.times) != t0.shape or not np.allclose(s.times, t0, rtol=0, atol=1e-12):
            raise GridMismatchError("ensemble members do not share a time grid")
        if isinstance(s, FilteredSignal) and s.tau != signals[0].tau:
            raise GridMismatchError("ensemble members use different tau")
        v = s.values if isinstance(s, FilteredSignal) else s.increments
        v = np.asarray(v, dtype=float)
        rows.append(v.reshape(-1, v.shape[-1]))
    return t0, np.concatenate(rows, axis=0)


def snr(ensemble: Sequence[FilteredSignal] | FilteredSignal, at_time: float) -> float:
    """<I_tau>^2 / Var(I_tau) over the ensemble at the grid point nearest ``at_time``."""
    t, vals = _stack(ensemble)
    if vals.shape[0] < 2:
        raise DegenerateEnsembleError("SNR needs at least two ensemble members")
    k = int(np.argmin(np.abs(t - at_time)))
    col = vals[:, k]
    var = col.var(ddof=1)
    if not var > 0:
        raise DegenerateEnsembleError("zero ensemble variance; SNR undefined")
    return float(col.mean() ** 2 / var)


def ensemble_average(records: Iterable[CurrentRecord | FilteredSignal]) -> EnsembleStats:
    _, vals = _stack(records)
    return EnsembleAccumulator().add_batch(vals).stats()


def optimal_tau(sigma: float, transit_time: float, length_scale: float = 1.0) -> float:
    """Rule-of-thumb filter time (sigma / l0) * transit time."""
    return sigma / length_scale * transit_time


def current_table(record: CurrentRecord, filtered: FilteredSignal | None = None, populations=None):
    """Rows (t, dX, I_tau[, p_0, p_1, ...]) for a single trajectory; I_tau is NaN past the last window."""
    t = np.asarray(record.times)
    dx = np.asarray(record.increments).reshape(-1)
    itau = np.full(t.size, np.nan)
    if filtered is not None:
        v = np.asarray(filtered.values).reshape(-1)
        itau[: v.size] = v
    cols = [t, dx, itau]
    header = ["t", "dX", "I_tau"]
    if populations is not None:
        p = np.asarray(populations)
        cols += list(p.T)
        header += [f"p_{n}" for n in range(p.shape[1])]
    return header, np.column_stack(cols)
