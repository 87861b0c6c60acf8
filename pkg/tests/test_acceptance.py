"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
Criteria known to be out of reach are still asserted at their stated tolerance.
"""
import time

import numpy as np
import pytest

from conftest import random_density_matrix
from qscope import hilbert as h
from qscope import manybody as mb
from qscope import scanctl as sc
from qscope import sme
from qscope.focusing import (LambdaConfig, decay_budget, fwhm_resolution, gaussian_focus,
                             max_nonadiabatic_potential)
from qscope.homodyne import lowpass_filter, snr

TOSC = 2 * np.pi


def ho(d):
    return np.diag(np.arange(d) + 0.5)


def focus_matrix(d, z0=0.0, sigma=0.3):
    z = np.linspace(-16, 16, 8001)
    return h.matrix_elements_on_grid(gaussian_focus(sigma)(z, z0), z, d)


# --- 1. invariants -----------------------------------------------------------------

def _regimes():
    d = 12
    H, F = ho(d), focus_matrix(d, 0.3)
    meas = sme.MeasurementParams(1.0)
    yield "bad_cavity", 0.004, d, False, lambda r, dt, w: sme.step_bad_cavity_sme(r, H, F, meas, dt, w)
    sb = sme.sideband_decompose(F)
    yield "good_cavity", 0.004, d, False, \
        lambda r, dt, w: sme.step_good_cavity_sme(r, H, sb, meas, 0.1, dt, w, ell_max=2)
    na, nc, kappa = 6, 4, 20.0
    cav = sme.CavityParams(kappa, drive=1.0)
    m = sme.full_model(ho(na), focus_matrix(na, 0.3), cav, 0.5 * np.sqrt(kappa), nc, linearized=True)
    yield "full", 2.5e-4, na * nc, False, lambda r, dt, w: sme.step_full_sme(r, m.H_total, m.c_op, cav, dt, w)
    yield "sre", 0.004, d, True, \
        lambda p, dt, w: sme.step_sre(p, F, meas, 0.1, dt, w, scheme="kraus")
    model = mb.BoxImpurityModel(4, 1.0, window=2)
    orb = mb.build_orbitals(model, "left_right")
    f = mb.single_particle_f_elements(lambda z: gaussian_focus(0.05, 0.25)(z, 0.11), orb, sigma=0.05)
    ops = mb.build_manybody_operators(f, mb.build_manybody_basis(orb, 1), 2.0, 30.0)
    yield "manybody", 0.004, len(ops.basis), False, lambda r, dt, w: mb.step_manybody_sme(r, ops, 2.0, dt, w)


def _mean_drift(step, states, dt, populations):
    # the pre-normalization trace is quadratic in dW, so its mean over dW is the average at +-sqrt(dt)
    out = []
    for w in (np.sqrt(dt), -np.sqrt(dt)):
        r = step(states, dt, np.full(states.shape[0], w))
        out.append(r.sum_error if populations else r.trace_drift)
    return 0.5 * (out[0] + out[1])


def test_acceptance_1_invariants(criterion):
    t0 = time.time()
    rng = np.random.default_rng(1)
    B, n_steps = 200, 50
    rows, ok = [], True
    for name, dt, d, pops, step in _regimes():
        s = rng.dirichlet(np.ones(d), B) if pops else np.array([random_density_matrix(rng, d, 3) for _ in range(B)])
        ratio = np.abs(_mean_drift(step, s, dt, pops)).max() / np.abs(_mean_drift(step, s, dt / 2, pops)).max()
        bank = sme.NoiseBank(5, range(B))
        drift = herm = 0.0
        lam = 1.0
        for _ in range(n_steps):
            drift = max(drift, np.abs(_mean_drift(step, s, dt, pops)).max())
            r = step(s, dt, bank)
            s = r.p if pops else r.rho
            if pops:
                lam = min(lam, s.min())
            else:
                herm = max(herm, np.abs(s - np.swapaxes(s.conj(), -1, -2)).max())
                lam = min(lam, np.linalg.eigvalsh(s).min())
        good = drift < 1e-4 and herm < 1e-10 and lam >= -1e-8 and 4 * 0.7 <= ratio <= 4 * 1.3
        ok &= good
        rows.append(f"{name} drift={drift:.1e} herm={herm:.0e} min_eig={lam:.1e} ratio={ratio:.2f}")
    elapsed = time.time() - t0
    ok &= elapsed < 60
    assert criterion("1 invariants", ok, "; ".join(rows) + f" ({B * n_steps} steps/regime, {elapsed:.0f}s)")


# --- 2. noise ----------------------------------------------------------------------

def test_acceptance_2_noise_statistics(criterion):
    t0 = time.time()
    dt, N = 0.01, 1_000_000
    x = sme.NoiseSource(2024).increments(dt, N)
    mean_z = abs(x.mean()) / np.sqrt(dt / N)
    var_z = abs(x.var(ddof=1) - dt) / (dt * np.sqrt(2.0 / N))
    c = sc.RunConfig(regime="bad_cavity", gamma=1.0, dimension=10, dt=0.01,
                     schedule=sc.ScanSchedule("fixed_point", 0.0, 0.0, 1.0))
    a, b = sc.run_trajectory(c, 3), sc.run_trajectory(c, 3)
    same = (a.current.increments.tobytes() == b.current.increments.tobytes()
            and a.populations.tobytes() == b.populations.tobytes())
    elapsed = time.time() - t0
    ok = mean_z < 5 and var_z < 5 and same and elapsed < 10
    assert criterion("2 noise", ok, f"mean {mean_z:.2f} sd, variance {var_z:.2f} sd, "
                                    f"bit-identical rerun={same} ({elapsed:.1f}s)")


# --- 3. elimination ----------------------------------------------------------------

def test_acceptance_3_elimination_equivalence(criterion):
    t0 = time.time()
    d, nc, kappa, dt = 30, 4, 20.0, 0.0025
    H = ho(d)
    F = focus_matrix(d, 0.0, sigma=1.0)
    cav = sme.CavityParams(kappa, drive=1.0)
    m = sme.full_model(H, F, cav, 0.5 * np.sqrt(kappa), nc, linearized=True)
    vac = np.zeros((nc, nc))
    vac[0, 0] = 1
    bad = h.coherent_dm(1.0, d).astype(complex)
    full = np.kron(bad, vac)
    n = int(round(2 * TOSC / dt))
    checks = set(np.linspace(n // 10, n, 10).astype(int))
    a, b = [], []
    for k in range(1, n + 1):
        full = sme.step_master_equation(full, m.H_total, [(kappa, m.c_op)], dt)
        bad = sme.step_master_equation(bad, H, [(m.gamma, F)], dt)
        if k in checks:
            a.append(np.trace(m.f_op @ full).real)
            b.append(np.trace(F @ bad).real)
    rel = np.abs(np.array(a) - np.array(b)) / np.abs(np.array(b))
    elapsed = time.time() - t0
    ok = m.epsilon / kappa == pytest.approx(0.05) and rel.max() < 0.05 and elapsed < 300
    assert criterion("3 elimination", ok, f"eps/kappa={m.epsilon / kappa:.3f}, max rel diff {rel.max():.3f} "
                                          f"over 10 checkpoints ({elapsed:.0f}s)")


# --- 4. SRE vs SME -----------------------------------------------------------------

def test_acceptance_4_sre_matches_sme(criterion):
    t0 = time.time()
    d, gamma, kappa, dt = 10, 1.0, 0.1, 0.01
    n = int(round(50 / gamma / dt))
    H, F = ho(d), focus_matrix(d, -0.7)
    sb = sme.sideband_decompose(F)
    meas = sme.MeasurementParams(gamma)
    p0 = np.real(np.diagonal(h.thermal_dm(0.6, d)))
    out = {}
    for scheme in ("kraus", "euler"):
        rho = np.diag(p0).astype(complex)
        p = p0.copy()
        src = sme.NoiseSource(17)
        worst = 0.0
        for _ in range(n):
            dW = src.increment(dt)
            rho = sme.step_good_cavity_sme(rho, H, sb, meas, kappa, dt, dW, ell_max=1, scheme=scheme).rho
            p = sme.step_sre(p, F, meas, kappa, dt, dW, scheme=scheme).p
            worst = max(worst, np.abs(np.real(np.diagonal(rho)) - p).max())
        out[scheme] = worst
    elapsed = time.time() - t0
    ok = max(out.values()) < 1e-3 and elapsed < 120
    assert criterion("4 SRE-SME", ok, f"max |dp| kraus {out['kraus']:.1e}, euler {out['euler']:.1e} "
                                      f"over gamma t = 50 ({elapsed:.0f}s)")


# --- 5. bad-cavity movie -----------------------------------------------------------

def _movie(gamma, duration, tau=0.2, n=300, dt=0.0025, record_every=200):
    c = sc.RunConfig(regime="bad_cavity", gamma=gamma, alpha=2.0, sigma=0.3, dimension=30, dt=dt,
                     record_every=record_every, tau=tau, schedule=sc.ScanSchedule("fixed_point", 0.0, 0.0, duration))
    return sc.run_batch(c, list(range(n)))


def test_acceptance_5_bad_cavity_movie(criterion):
    t0 = time.time()
    peaks, energies, rows = [], {}, []
    ok_peaks = ok_rise = True
    for g in (1.0, 2.0, 4.0):
        recs = _movie(g, TOSC)
        t = recs[0].current.times
        sig = np.mean([r.signal for r in recs], axis=0)
        half = t < TOSC / 2
        t1 = t[half][np.argmax(sig[half])]
        t2 = t[~half][np.argmax(sig[~half])]
        peaks.append((t1 / TOSC, t2 / TOSC))
        ok_peaks &= abs(t1 - TOSC / 4) <= 0.02 * TOSC and abs(t2 - 3 * TOSC / 4) <= 0.02 * TOSC
        # energy on a 0.5-wide grid; shorter spacings resolve the ensemble noise rather than the heating
        E = np.mean([r.mean_energy for r in recs], axis=0)
        energies[g] = E
        ok_rise &= bool(np.all(np.diff(E) > 0))
    ordered = bool(np.all(energies[1.0][1:] < energies[2.0][1:]) and np.all(energies[2.0][1:] < energies[4.0][1:]))
    rows.append("peaks/T " + ", ".join(f"({a:.3f}, {b:.3f})" for a, b in peaks) + f" [{ok_peaks}]")
    rows.append(f"energy increasing={ok_rise}, ordered by gamma={ordered}")
    tau = 0.2
    gammas = (0.5, 2.0, 8.0, 32.0)
    s = []
    for g in gammas:
        recs = _movie(g, TOSC / 4 + tau, tau=tau, dt=min(0.0025, 0.01 / g))
        s.append(snr([lowpass_filter(r.current, tau) for r in recs], TOSC / 4 - tau / 2))
    i = int(np.argmax(s))
    interior = 0 < i < len(s) - 1
    rows.append("SNR(gamma tau=" + ", ".join(f"{g * tau:g}" for g in gammas) + ") = "
                + ", ".join(f"{v:.3f}" for v in s) + f" [interior max={interior}]")
    elapsed = time.time() - t0
    ok = ok_peaks and ok_rise and ordered and interior and elapsed < 1800
    assert criterion("5 bad-cavity movie", ok, "; ".join(rows) + f" ({elapsed:.0f}s)")


# --- 6. QND scan -------------------------------------------------------------------

def _collapse_and_correlation(T, gamma):
    c = sc.RunConfig(regime="good_cavity", gamma=gamma, kappa=0.1, initial="thermal", n_th=0.6, dimension=8,
                     record_every=50, schedule=sc.ScanSchedule("linear_scan", -5.0, 5.0, T, 3))
    table = sc.FocusTable(c)
    collapse, rs = [], []
    for i in range(0, 100, 25):
        for r in sc.run_batch(c, list(range(i, i + 25))):
            ts = r.sample_times
            hit = r.purity > 0.99
            collapse.append(ts[np.argmax(hit)] / T if hit.any() else np.inf)
            f = lowpass_filter(r.current, c.filter_time)
            centre = f.times + 0.5 * f.tau
            for s in range(3):
                if any(s * T <= e["time"] < (s + 1) * T for e in r.jump_events):
                    continue
                nn = int(np.argmax(r.populations[np.searchsorted(ts, (s + 1) * T) - 1]))
                # excursions shorter than the jump detector's hold time still count as jumps
                span = (ts >= max(s * T, collapse[-1] * T)) & (ts < (s + 1) * T)
                if np.any(r.populations[span, nn] < 0.5):
                    continue
                sel = (centre >= s * T) & (centre < (s + 1) * T)
                zz = c.schedule.z0(centre[sel])[::50]
                theory = np.array([table(z)[nn, nn] for z in zz])
                rs.append((s, np.corrcoef(f.values[sel][::50], theory)[0, 1]))
    scan, r = np.array(rs).T
    return np.array(collapse), scan, r


def _snr_at_minus_l0(T, gamma, kappa, tau=15.0):
    d = 48 if kappa >= 1 else 8
    c = sc.RunConfig(regime="good_cavity", gamma=gamma, kappa=kappa, initial="fock", fock_n=1, dimension=d,
                     record_every=500, ell_max=d - 1 if kappa >= 1 else 1, override_guards=True, tau=tau,
                     schedule=sc.ScanSchedule("linear_scan", -5.0, -0.5, 0.45 * T))
    recs = sc.run_batch(c, list(range(200)))
    # window centred where z0 = -l0
    return snr([lowpass_filter(r.current, tau) for r in recs], 0.4 * T - 0.5 * tau)


def test_acceptance_6_qnd_scan(criterion):
    t0 = time.time()
    T, gamma = 500.0, 10.0
    collapse, scan, rs = _collapse_and_correlation(T, gamma)
    frac = float(np.mean(collapse <= 0.1))
    ok_a = frac >= 0.9
    ok_b = rs.size > 0 and rs.min() > 0.9
    first = rs[scan == 0].min() if np.any(scan == 0) else np.nan
    later = rs[scan > 0].min() if np.any(scan > 0) else np.nan
    s = [_snr_at_minus_l0(T, gamma, kappa) for kappa in (10.0, 1.0, 0.25, 0.1)]
    ok_c = bool(np.all(np.diff(s) > 0))
    elapsed = time.time() - t0
    detail = (f"collapsed by 0.1T: {frac:.2f} (median {np.median(collapse):.2f}T) [{'ok' if ok_a else 'short'}]; "
              f"no-jump scans {rs.size}, min r {rs.min():.3f} (scan 1: {first:.3f}, scans 2-3: {later:.3f}) "
              f"[{'ok' if ok_b else 'low'}]; "
              f"SNR(kappa=10,1,0.25,0.1) = {', '.join(f'{v:.3f}' for v in s)} [{'ok' if ok_c else 'unordered'}] "
              f"({elapsed:.0f}s)")
    assert criterion("6 QND scan", ok_a and ok_b and ok_c and elapsed < 3600, detail)


# --- 7. Friedel scan ---------------------------------------------------------------

def test_acceptance_7_friedel_scan(criterion):
    t0 = time.time()
    c = sc.RunConfig(regime="manybody", initial="fermi_ground", n_fermions=16, sigma=0.01, kappa=4 * np.pi**2,
                     gamma=400.0, tau=0.01, schedule=sc.ScanSchedule("linear_scan", -0.5, 0.5, 1.0))
    res = sc.run_friedel(c, 50)
    period_err = abs(res.period_fit - res.period_theory) / res.period_theory
    elapsed = time.time() - t0
    ok = res.coverage >= 0.8 and period_err < 0.05 and elapsed < 1800
    assert criterion("7 Friedel scan", ok,
                     f"band coverage {res.coverage:.2f}, period {res.period_fit:.4f} vs pi/kF "
                     f"{res.period_theory:.4f} ({100 * period_err:.1f}%), excited max {res.excited_max:.3f} "
                     f"({elapsed:.0f}s)")


# --- 8. focusing closed forms ------------------------------------------------------

def test_acceptance_8_focusing(criterion):
    t0 = time.time()
    worst = 0.0
    for eps in (0.02, 0.05, 0.1):
        for beta in (0.0, 0.5 * eps, eps, 5 * eps):
            w = fwhm_resolution(LambdaConfig(eps, beta))
            worst = max(worst, abs(w["analytic"] - w["numeric"]) / w["numeric"])
    ratio = decay_budget(150, 0.3, 0.4).gamma_over_gamma_sp
    supp = max_nonadiabatic_potential(LambdaConfig(0.1, 0.0)) / max_nonadiabatic_potential(LambdaConfig(0.1, 0.5))
    elapsed = time.time() - t0
    ok = worst < 0.02 and round(ratio) == 72 and supp >= 10 and elapsed < 10
    assert criterion("8 focusing", ok, f"FWHM max rel err {worst:.4f}, gamma/gamma_sp {ratio:.1f}, "
                                       f"V_na suppression {supp:.0f}x ({elapsed:.1f}s)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
