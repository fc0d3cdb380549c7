"""Two-qubit states, local operations and entanglement measures.

Conventions used throughout the package:

* Single-qubit kets are length-2 complex vectors in the polarization
  basis, ``|0> = H`` (horizontal) and ``|1> = V`` (vertical).
* Two-qubit kets are length-4 complex vectors ordered ``|00>, |01>,
  |10>, |11>`` with the transmitter qubit first.
* Density matrices are 4x4 complex, Hermitian, unit trace, PSD.
* The four maximally entangled states are indexed by the local
  operator that generates them from the ``(|00>+|11>)/sqrt(2)``
  reference on the receiver side, so ``bell_state(i)`` equals
  ``(I (x) pauli(i)) @ bell_state(0)`` up to a global phase.

Pure-state vectors returned by this module carry a canonical global
phase: the first amplitude with modulus above 1e-9 is real and
non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tolerances for validating physical inputs.
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = -1e-9
UNITARITY_TOL = 1e-10
NORM_TOL = 1e-12
PHASE_ANCHOR_TOL = 1e-9

_SIGMA = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
for _m in _SIGMA:
    _m.setflags(write=False)

KET_H = np.array([1, 0], dtype=complex)
KET_V = np.array([0, 1], dtype=complex)
KET_D = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_A = np.array([1, -1], dtype=complex) / np.sqrt(2)
KET_R = np.array([1, 1j], dtype=complex) / np.sqrt(2)
KET_L = np.array([1, -1j], dtype=complex) / np.sqrt(2)
for _k in (KET_H, KET_V, KET_D, KET_A, KET_R, KET_L):
    _k.setflags(write=False)


def pauli(i: int) -> np.ndarray:
    """Return the i-th Pauli matrix (0 = identity, 1..3 = x, y, z).

    The returned array is read-only; copy before mutating.
    """
    if i not in (0, 1, 2, 3):
        raise ValueError(f"pauli index must be 0..3, got {i}")
    return _SIGMA[i]


def dag(m: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return m.conj().T


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tensor product, transmitter factor first."""
    return np.kron(a, b)


def normalize(vec: np.ndarray) -> np.ndarray:
    """Scale a state vector to unit norm."""
    n = np.linalg.norm(vec)
    if n < 1e-12:
        raise ValueError("cannot normalize a (near-)zero vector")
    return vec / n


def canonical_phase(vec: np.ndarray) -> np.ndarray:
    """Fix the global phase of a state vector.

    The first amplitude with modulus above 1e-9 is rotated to be real
    and non-negative.  Vectors that already satisfy the convention are
    returned unchanged up to floating-point rounding.
    """
    for a in vec:
        if abs(a) > PHASE_ANCHOR_TOL:
            return vec * (a.conjugate() / abs(a))
    return vec.copy()


def perp_qubit(v: np.ndarray) -> np.ndarray:
    """Return the single-qubit state orthogonal to ``v`` (unique up to phase)."""
    return np.array([-v[1].conjugate(), v[0].conjugate()])


def check_state_vector(psi: np.ndarray, dim: int) -> np.ndarray:
    """Validate shape and unit norm of a pure-state vector."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (dim,):
        raise ValueError(f"state vector must have shape ({dim},), got {psi.shape}")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValueError("state vector is not normalized")
    return psi


def check_unitary(u: np.ndarray) -> np.ndarray:
    """Validate that ``u`` is a 2x2 unitary within 1e-10."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {u.shape}")
    if np.max(np.abs(dag(u) @ u - np.eye(2))) > UNITARITY_TOL:
        raise ValueError("matrix is not unitary within 1e-10")
    return u


def check_density_matrix(rho: np.ndarray) -> np.ndarray:
    """Validate a two-qubit density matrix.

    Checks shape, Hermiticity and unit trace within 1e-10, and
    positive semidefiniteness with eigenvalues above -1e-9.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"density matrix must be 4x4, got shape {rho.shape}")
    if np.max(np.abs(rho - dag(rho))) > HERMITICITY_TOL:
        raise ValueError("density matrix is not Hermitian within 1e-10")
    if abs(np.trace(rho).real - 1.0) > TRACE_TOL or abs(np.trace(rho).imag) > TRACE_TOL:
        raise ValueError("density matrix trace differs from 1 by more than 1e-10")
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < PSD_TOL:
        raise ValueError(f"density matrix has eigenvalue {evals.min():.3e} below -1e-9")
    return rho


def bell_state(i: int) -> np.ndarray:
    """Return the i-th maximally entangled two-qubit state.

    ``bell_state(0)`` is ``(|00>+|11>)/sqrt(2)``; index ``i`` applies
    ``pauli(i)`` on the receiver qubit and refixes the canonical phase.
    """
    psi0 = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    return canonical_phase(kron(_SIGMA[0], pauli(i)) @ psi0)


def projector(psi: np.ndarray) -> np.ndarray:
    """Rank-1 projector |psi><psi|."""
    return np.outer(psi, psi.conj())


def fidelity_pure(rho: np.ndarray, psi: np.ndarray) -> float:
    """Fidelity of a density matrix with a pure reference state.

    Parameters
    ----------
    rho : (4, 4) complex ndarray
        Two-qubit density matrix.
    psi : (4,) complex ndarray
        Normalized reference state.

    Returns
    -------
    float
        ``<psi| rho |psi>``, clipped to [0, 1].
    """
    rho = check_density_matrix(rho)
    psi = check_state_vector(psi, 4)
    f = np.vdot(psi, rho @ psi)
    return float(np.clip(f.real, 0.0, 1.0))


def purity(rho: np.ndarray) -> float:
    """Trace of rho squared, in [0.25, 1] for a two-qubit state."""
    rho = check_density_matrix(rho)
    return float(np.trace(rho @ rho).real)


def concurrence(rho: np.ndarray) -> float:
    """Entanglement of formation monotone for a two-qubit mixed state.

    Computed from the square roots of the eigenvalues of
    ``rho @ (sy (x) sy) @ conj(rho) @ (sy (x) sy)`` sorted in
    decreasing order: ``max(0, mu1 - mu2 - mu3 - mu4)``.

    Returns
    -------
    float
        Concurrence in [0, 1]; 0 for separable, 1 for maximally
        entangled states.
    """
    rho = check_density_matrix(rho)
    yy = kron(_SIGMA[2], _SIGMA[2])
    m = rho @ yy @ rho.conj() @ yy
    # The spectrum of m is real and non-negative in exact arithmetic;
    # clip rounding noise before the square root.
    evals = np.sort(np.linalg.eigvals(m).real)[::-1]
    mu = np.sqrt(np.clip(evals, 0.0, None))
    return float(max(0.0, mu[0] - mu[1] - mu[2] - mu[3]))


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectral decomposition of a density matrix.

    ``values`` are sorted in decreasing order and ``vectors[k]`` is the
    eigenvector belonging to ``values[k]``, carrying the canonical
    global phase.  Eigenvectors are orthonormal also inside degenerate
    subspaces.
    """

    values: np.ndarray
    vectors: np.ndarray

    @property
    def top_value(self) -> float:
        return float(self.values[0])

    @property
    def top_vector(self) -> np.ndarray:
        return self.vectors[0]

    @property
    def gap(self) -> float:
        """Difference between the two largest eigenvalues."""
        return float(self.values[0] - self.values[1])

    def reconstruct(self) -> np.ndarray:
        """Rebuild the matrix as sum of lambda_k |v_k><v_k|."""
        return (self.vectors.T * self.values) @ self.vectors.conj()


def eigh(rho: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian two-qubit density matrix.

    Returns eigenvalues in decreasing order with canonically phased,
    orthonormal eigenvectors.  The decomposition reconstructs the input
    within 1e-9.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - dag(rho))) > HERMITICITY_TOL:
        raise ValueError("matrix is not Hermitian within 1e-10")
    vals, vecs = np.linalg.eigh(rho)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order].T
    vecs = np.array([canonical_phase(v) for v in vecs])
    return EigenDecomposition(values=vals, vectors=vecs)


def apply_local(rho: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Conjugate a two-qubit state by local unitaries ``u (x) v``.

    Preserves trace, spectrum, purity and concurrence.  The result is
    re-symmetrized to suppress floating-point Hermiticity drift.
    """
    rho = check_density_matrix(rho)
    u = check_unitary(u)
    v = check_unitary(v)
    w = kron(u, v)
    out = w @ rho @ dag(w)
    return (out + dag(out)) / 2


def rotation(theta_rad: float) -> np.ndarray:
    """Real polarization rotation by ``theta_rad`` (H tilted towards V)."""
    c, s = np.cos(theta_rad), np.sin(theta_rad)
    return np.array([[c, -s], [s, c]], dtype=complex)


def random_unitary(rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    # Fix the phase freedom of QR so the distribution is exactly Haar.
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_pure_state(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    """Haar-random pure state with canonical phase."""
    g = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return canonical_phase(normalize(g))


def random_density_matrix(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    """Random full-rank density matrix ``G G^dag / tr`` with Gaussian G."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = g @ dag(g)
    return m / np.trace(m).real
