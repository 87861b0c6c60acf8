import numpy as np
import pytest
from hypothesis import given, strategies as st

from qscope import manybody as mb
from qscope import sme
from qscope.focusing import gaussian_focus
from qscope.hilbert import QuadratureAccuracyError

N16 = mb.BoxImpurityModel(16, 1.0)


def quad(y, z):
    return np.trapezoid(y, z, axis=-1)


# --- orbitals and densities --------------------------------------------------------

@pytest.mark.parametrize("basis", ["parity", "left_right"])
def test_orbitals_nodes_and_orthonormality(basis):
    orb = mb.build_orbitals(N16, basis)
    z = np.linspace(-0.5, 0.5, 200_001)
    psi = orb.wavefunctions(z)
    np.testing.assert_allclose(orb.wavefunctions(np.array([0.0, -0.5, 0.5])), 0.0, atol=1e-12)
    gram = (psi * (z[1] - z[0])) @ psi.T
    np.testing.assert_allclose(gram, np.eye(len(orb)), atol=1e-8)


def test_orbital_energies_degenerate_pairs():
    orb = mb.build_orbitals(N16)
    np.testing.assert_array_equal(orb.energies[0::2], orb.energies[1::2])
    np.testing.assert_allclose(orb.energies[:2], 2 * np.pi**2)
    assert orb.labels[:2] == ("o", "e")


def test_model_validation():
    with pytest.raises(ValueError):
        mb.BoxImpurityModel(15)
    with pytest.raises(ValueError):
        mb.BoxImpurityModel(16, n_orbitals=7)
    assert N16.k_fermi == pytest.approx(16 * np.pi)


def test_density_vanishes_at_impurity_and_walls():
    np.testing.assert_allclose(mb.ground_state_density(N16, [0.0, -0.5, 0.5]), 0.0, atol=1e-9)


def test_closed_form_density_matches_orbital_sum():
    z = np.linspace(-0.5, 0.5, 1000)
    np.testing.assert_allclose(mb.orbital_sum_density(N16, z), mb.ground_state_density(N16, z), atol=1e-8)
    assert quad(mb.ground_state_density(N16, np.linspace(-0.5, 0.5, 20001)), np.linspace(-0.5, 0.5, 20001)) == \
        pytest.approx(16.0, rel=1e-8)


def test_friedel_form_near_impurity():
    z = np.linspace(-0.02, 0.02, 401)  # |z| << L/2pi
    diff = mb.ground_state_density(N16, z) - mb.friedel_density(N16, z)
    assert np.abs(diff).max() < 2.0 / N16.box_length


# --- single-particle focus elements ------------------------------------------------

def test_constant_profile_gives_identity():
    orb = mb.build_orbitals(N16)
    f = mb.single_particle_f_elements(lambda z: np.full_like(z, 0.7), orb, n_points=40001)
    np.testing.assert_allclose(f, 0.7 * np.eye(len(orb)), atol=1e-8)


def test_left_right_cross_elements_vanish():
    orb = mb.build_orbitals(N16, "left_right")
    lab = np.array(orb.labels)
    L, R = lab == "L", lab == "R"
    prev = None
    for sigma in (0.05, 0.02, 0.01):
        foc = gaussian_focus(sigma, 1 / 16)
        f = mb.single_particle_f_elements(lambda z: foc(z, 0.3), orb, sigma=sigma)
        assert np.all(f[np.ix_(L, R)] == 0.0)
        ll = np.abs(f[np.ix_(L, L)]).max()
        if prev is not None:
            assert ll < prev
        prev = ll
    assert prev < 1e-12


def test_parity_cross_elements_vanish_for_symmetric_focus():
    orb = mb.build_orbitals(N16)
    lab = np.array(orb.labels)
    foc = gaussian_focus(0.02, 1 / 16)
    f = mb.single_particle_f_elements(lambda z: foc(z, 0.0), orb, sigma=0.02)
    assert np.abs(f[np.ix_(lab == "o", lab == "e")]).max() < 1e-10


def test_quadrature_check_raises_on_coarse_grid():
    orb = mb.build_orbitals(N16)
    foc = gaussian_focus(0.01, 1 / 16)
    with pytest.raises(QuadratureAccuracyError):
        mb.single_particle_f_elements(lambda z: foc(z, 0.1), orb, n_points=301)


def test_ground_signal_is_density_convolution():
    sigma, z0 = 0.02, 0.13
    foc = gaussian_focus(sigma, 1 / 16)
    orb = mb.build_orbitals(N16)
    f = mb.single_particle_f_elements(lambda z: foc(z, z0), orb, sigma=sigma)
    basis = mb.build_manybody_basis(orb, 1, 3)
    ops = mb.build_manybody_operators(f, basis, 1.0, 10.0)
    z = np.linspace(-0.5, 0.5, 200_001)
    oracle = quad(foc(z, z0) * mb.ground_state_density(N16, z), z)
    assert ops.f0[0, 0].real == pytest.approx(oracle, rel=1e-8)


# --- configuration space and operators ---------------------------------------------

def small_ops(basis="left_right", grouping="pair", z0=0.11, gamma=2.0, kappa=30.0):
    model = mb.BoxImpurityModel(4, 1.0, window=2)
    orb = mb.build_orbitals(model, basis)
    foc = gaussian_focus(0.05, 0.25)
    f = mb.single_particle_f_elements(lambda z: foc(z, z0), orb, sigma=0.05)
    b = mb.build_manybody_basis(orb, 2)
    return mb.build_manybody_operators(f, b, gamma, kappa, grouping), f


def test_basis_conserves_particle_number():
    ops, _ = small_ops()
    b = ops.basis
    assert np.all(b.occupations.sum(axis=1) == 4)
    assert all(s.count("1") == 4 for s in b.bitstrings)
    for _, L in ops.jumps:
        src = np.flatnonzero(np.abs(L).sum(axis=0))
        dst = np.flatnonzero(np.abs(L).sum(axis=1))
        assert np.all(b.occupations[src].sum(1) == b.occupations[dst].sum(1))


def test_basis_size_and_overflow():
    orb = mb.build_orbitals(N16, "left_right")
    b = mb.build_manybody_basis(orb, 1, 6)
    assert len(b) == 1 + 12 * 12
    assert b.excitations[0] == 0 and np.all(b.excitations[1:] == 1)
    with pytest.raises(mb.BasisOverflowError):
        mb.build_manybody_basis(orb, 2, 6, max_states=1000)


@pytest.mark.parametrize("basis", ["parity", "left_right"])
@pytest.mark.parametrize("grouping", ["pair", "energy"])
def test_f0_commutes_with_hamiltonian(basis, grouping):
    ops, _ = small_ops(basis, grouping)
    H, f0 = ops.hamiltonian, ops.f0
    np.testing.assert_allclose(H @ f0 - f0 @ H, 0.0, atol=1e-12)
    np.testing.assert_allclose(f0, f0.conj().T, atol=1e-14)


def test_pair_rates():
    assert mb.pair_rate(2.0, 0.5, 0.0, 3.0) == pytest.approx(0.5)
    assert mb.pair_rate(1.0, 1.0, 5.0, 1.0) == pytest.approx(1 / 101)
    ops, f = small_ops(kappa=7.0)
    orb = ops.basis.orbitals
    for r, L in ops.jumps:
        t, s = np.unravel_index(np.argmax(np.abs(L)), L.shape)
        occ_s, occ_t = ops.basis.occupations[s], ops.basis.occupations[t]
        nu = np.flatnonzero(occ_t - occ_s == 1)[0]
        nup = np.flatnonzero(occ_s - occ_t == 1)[0]
        de = orb.energies[nu] - orb.energies[nup]
        assert r == pytest.approx(2.0 * f[nu, nup] ** 2 / (1 + 4 * de**2 / 49.0))


def test_energy_grouping_preserves_total_dissipation():
    pair, _ = small_ops(grouping="pair")
    energy, _ = small_ops(grouping="energy")
    # Σ r L†L differs only by cross terms between pairs of equal Δε, so the traces agree
    tp = sum(r * np.trace(L.conj().T @ L).real for r, L in pair.jumps)
    te = sum(r * np.trace(L.conj().T @ L).real for r, L in energy.jumps)
    assert te == pytest.approx(tp, rel=1e-12)


def test_ground_state_stationary_without_jumps():
    ops, _ = small_ops()
    ops = mb.ManyBodyOperators(ops.f0, [], ops.hamiltonian, ops.basis)
    S = len(ops.basis)
    rho = np.zeros((S, S), complex)
    rho[0, 0] = 1
    src = sme.NoiseSource(1)
    for _ in range(200):
        dW = src.increment(1e-3)
        dx = mb.manybody_increment(rho, ops.f0, 2.0, dW, 1e-3)
        assert dx - dW == pytest.approx(2 * np.sqrt(2.0) * ops.f0[0, 0].real * 1e-3)
        rho = mb.step_manybody_sme(rho, ops, 2.0, 1e-3, dW).rho
    assert abs(rho[0, 0] - 1) < 1e-12


def test_scanner_matches_dense_sme_diagonal():
    model = mb.BoxImpurityModel(4, 1.0, window=2)
    foc = gaussian_focus(0.05, 0.25)
    sc = mb.FriedelScanner(model, foc, 30.0, 2.0, 1, 2, sigma=0.05, n_z0=512)
    z0 = 0.11
    f = sc.f_matrix_direct(z0)
    ops = mb.build_manybody_operators(f, sc.basis, 2.0, 30.0)
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(len(sc.basis)))
    rho = np.diag(p).astype(complex)
    # use the direct table so only the stepping is compared
    sc._spline = lambda _z, F=f: F
    for dW in (0.01, -0.02):
        pn, mean, _ = sc.step(p, z0, 1e-3, dW)
        dense = mb.step_manybody_sme(rho, ops, 2.0, 1e-3, dW).rho
        np.testing.assert_allclose(pn, np.real(np.diagonal(dense)), atol=1e-12)
        np.testing.assert_allclose(dense - np.diag(np.diagonal(dense)), 0.0, atol=1e-14)
        assert mean == pytest.approx(np.real(np.trace(ops.f0 @ rho)))


def test_scanner_spline_accuracy():
    foc = gaussian_focus(0.01, 1 / 16)
    sc = mb.FriedelScanner(N16, foc, 4 * np.pi**2, 400.0, 1, 6, sigma=0.01)
    for z0 in (-0.1234, 0.0007, 0.2501):
        assert np.abs(sc.f_matrix(z0) - sc.f_matrix_direct(z0)).max() < 1e-6


@given(st.floats(-0.4, 0.4), st.floats(-1.0, 1.0))
def test_scanner_step_keeps_probability_vector(z0, w):
    sc = _cached_scanner()
    p = sc.ground_populations(2)
    p, _, err = sc.step(p, z0, 2.5e-5, np.array([w, -w]) * 5e-3)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    assert np.all(p >= 0)
    assert np.all(np.abs(err) < 1e-4)


_SC = {}


def _cached_scanner():
    if "sc" not in _SC:
        _SC["sc"] = mb.FriedelScanner(N16, gaussian_focus(0.01, 1 / 16), 4 * np.pi**2, 400.0, 1, 6, sigma=0.01)
    return _SC["sc"]


@pytest.mark.slow
def test_excitation_cutoff_convergence():
    foc = gaussian_focus(0.01, 1 / 16)
    dt, n = 1e-4, 10_000
    sig, tail = {}, 0.0
    for k in (1, 2):
        sc = mb.FriedelScanner(N16, foc, 4 * np.pi**2, 400.0, k, 6, sigma=0.01)
        p = sc.ground_populations()
        out = np.empty(n)
        for i in range(n):
            p, out[i] = sc.step_mean(p, -0.5 + (i + 0.5) / n, dt)
            if k == 2 and i % 100 == 0:
                tail = max(tail, float(sc.tail_probability(p, 2)))
        sig[k] = out
    assert tail < 0.01
    assert np.abs(sig[1] - sig[2]).max() < 1e-3 * np.abs(sig[2]).max()


# --- period estimates --------------------------------------------------------------

def test_period_fit_on_friedel_profile():
    z = np.linspace(-0.2, 0.2, 801)
    n = mb.friedel_density(N16, z)
    assert mb.fit_friedel_period(z, n, N16) == pytest.approx(1 / 16, rel=1e-6)
    zr = z[z > 0.02]
    assert mb.peak_spacing(zr, mb.friedel_density(N16, zr)) == pytest.approx(1 / 16, rel=0.05)
    assert np.isnan(mb.peak_spacing(z[:3], z[:3]))


def test_nondemolition_bound():
    assert mb.nondemolition_bound(0.01) == pytest.approx(1e4)
    assert 4 * np.pi**2 < mb.nondemolition_bound(0.01)
