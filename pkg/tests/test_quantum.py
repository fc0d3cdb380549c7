"""Linear-algebra layer, checked against closed-form facts.

The isotropic mixture p*|pair><pair| + (1-p)*I/4 has exact analytic
fidelity, concurrence, purity and spectrum; those formulas are frozen
here as oracles before any use of the estimators elsewhere.
"""

import numpy as np
import pytest

from bbm92kit import quantum as q


def werner(p: float) -> np.ndarray:
    return p * q.projector(q.bell_state(1)) + (1 - p) * np.eye(4) / 4


# Analytic oracles for the isotropic mixture, evaluated by hand:
#   fidelity    F(p) = p + (1 - p)/4
#   concurrence C(p) = max(0, (3p - 1)/2)
#   purity      P(p) = p^2 + p(1 - p)/2 + (1 - p)^2/4
WERNER_CASES = [
    (1.00, 1.0000, 1.00, 1.000000),
    (0.92, 0.9400, 0.88, 0.884800),
    (0.60, 0.7000, 0.40, 0.520000),
    (1 / 3, 0.5000, 0.00, 1 / 3),
    (0.20, 0.4000, 0.00, 0.280000),
    (0.00, 0.2500, 0.00, 0.250000),
]


def test_pauli_algebra():
    for i in range(4):
        s = q.pauli(i)
        assert np.allclose(s @ s, np.eye(2))
        assert np.allclose(s, q.dag(s))
    with pytest.raises(ValueError):
        q.pauli(4)


def test_bell_states_orthonormal_and_canonical():
    vecs = [q.bell_state(i) for i in range(4)]
    gram = np.array([[np.vdot(a, b) for b in vecs] for a in vecs])
    assert np.allclose(gram, np.eye(4), atol=1e-12)
    for v in vecs:
        anchor = v[np.abs(v) > 1e-9][0]
        assert anchor.imag == pytest.approx(0.0, abs=1e-12)
        assert anchor.real > 0


def test_bell_state_one_is_symmetric_swap_pair():
    expect = np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2)
    assert np.allclose(q.bell_state(1), expect, atol=1e-15)


def test_canonical_phase_removes_global_phase(rng):
    for _ in range(20):
        v = q.random_pure_state(rng)
        phase = np.exp(1j * rng.uniform(0, 2 * np.pi))
        assert np.allclose(q.canonical_phase(v), q.canonical_phase(phase * v), atol=1e-12)
    # A vector with no anchor amplitude passes through unchanged.
    assert np.array_equal(q.canonical_phase(np.zeros(4, dtype=complex)), np.zeros(4))


def test_perp_qubit_orthogonal(rng):
    for _ in range(20):
        v = q.random_pure_state(rng, dim=2)
        w = q.perp_qubit(v)
        assert abs(np.vdot(v, w)) < 1e-12
        assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)


def test_check_density_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        q.check_density_matrix(np.eye(4))  # trace 4
    bad = np.eye(4, dtype=complex) / 4
    bad[0, 1] = 0.3  # not Hermitian
    with pytest.raises(ValueError):
        q.check_density_matrix(bad)
    neg = np.diag([0.6, 0.5, -0.05, -0.05]).astype(complex)
    with pytest.raises(ValueError):
        q.check_density_matrix(neg)


@pytest.mark.parametrize("p, fid, conc, pur", WERNER_CASES)
def test_werner_analytics(p, fid, conc, pur):
    rho = werner(p)
    assert q.fidelity_pure(rho, q.bell_state(1)) == pytest.approx(fid, abs=1e-12)
    assert q.concurrence(rho) == pytest.approx(conc, abs=1e-9)
    assert q.purity(rho) == pytest.approx(pur, abs=1e-12)


def test_werner_spectrum():
    dec = q.eigh(werner(0.92))
    assert np.allclose(dec.values, [0.94, 0.02, 0.02, 0.02], atol=1e-12)
    assert dec.top_value == pytest.approx(0.94, abs=1e-12)
    assert dec.gap == pytest.approx(0.92, abs=1e-12)
    assert q.fidelity_pure(werner(0.92), dec.top_vector) == pytest.approx(0.94, abs=1e-12)


def test_eigh_reconstructs(rng):
    for _ in range(20):
        rho = q.random_density_matrix(rng)
        dec = q.eigh(rho)
        assert np.allclose(dec.reconstruct(), rho, atol=1e-12)
        assert np.all(np.diff(dec.values) <= 1e-15)  # descending


def test_concurrence_of_pure_bell_states():
    for i in range(4):
        assert q.concurrence(q.projector(q.bell_state(i))) == pytest.approx(1.0, abs=1e-9)
    product = q.projector(np.kron(q.KET_H, q.KET_D))
    assert q.concurrence(product) == pytest.approx(0.0, abs=1e-9)


def test_apply_local_preserves_spectrum_and_maps_fidelity(rng):
    rho = werner(0.7)
    for _ in range(10):
        u = q.random_unitary(rng)
        v = q.random_unitary(rng)
        out = q.apply_local(rho, u, v)
        q.check_density_matrix(out)
        assert np.allclose(q.eigh(out).values, q.eigh(rho).values, atol=1e-12)
        psi = q.kron(u, v) @ q.bell_state(1)
        assert q.fidelity_pure(out, psi) == pytest.approx(0.7 + 0.3 / 4, abs=1e-12)


def test_rotation_matrix():
    r = q.rotation(np.pi / 4)
    assert np.allclose(r @ q.KET_H, q.KET_D, atol=1e-12)
    assert np.allclose(r @ r.conj().T, np.eye(2), atol=1e-12)


def test_random_generators_are_seeded_and_valid():
    a = q.random_unitary(np.random.default_rng(3))
    b = q.random_unitary(np.random.default_rng(3))
    assert np.array_equal(a, b)
    rng = np.random.default_rng(4)
    for _ in range(10):
        q.check_unitary(q.random_unitary(rng))
        q.check_density_matrix(q.random_density_matrix(rng))
        q.check_state_vector(q.random_pure_state(rng), 4)
