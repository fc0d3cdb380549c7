"""Receiver measurement bases derived from the transmitted state.

The transmitter always measures in the fixed rectilinear (H/V) and
diagonal (D/A) polarization bases.  Instead of undoing collection-fiber
rotations with active polarization control, the receiver derives its
two measurement bases from a tomographic estimate of the shared state:

* Any pair of local unitaries acting on a maximally entangled state is
  equivalent to a single unitary on the receiver side
  (``fold_unitaries``), so one basis correction per basis suffices.
* The pure state nearest to the estimated density matrix is its top
  eigenvector (``nearest_pure``).
* Writing that state as ``sqrt(w)|H>|phi_H> + sqrt(1-w)|V>|phi_V>``
  yields the receiver basis correlated with H/V directly, and the basis
  correlated with D/A from the normalized sum and difference of the two
  conditional states (``optimal_bases``).

The resulting plan removes the unitary part of the channel entirely;
the remaining error rate is set by the mixedness of the state and by
accidental coincidences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantum import (
    KET_A,
    KET_D,
    KET_H,
    KET_L,
    KET_R,
    KET_V,
    bell_state,
    canonical_phase,
    check_density_matrix,
    check_state_vector,
    check_unitary,
    concurrence,
    eigh,
    kron,
    normalize,
    pauli,
    perp_qubit,
    projector,
)

DEGENERACY_TOL = 1e-6
BRANCH_TOL = 1e-9
ORTHO_TOL = 1e-10


class DegenerateTopError(ValueError):
    """Top eigenvalue is not isolated; no well-defined nearest pure state."""


class BranchVanishesError(ValueError):
    """A conditional branch of the state has (near-)zero weight."""


@dataclass(frozen=True)
class MeasBasis:
    """Orthonormal single-qubit measurement basis with port labels."""

    plus: np.ndarray
    minus: np.ndarray
    label: str

    def __post_init__(self) -> None:
        check_state_vector(self.plus, 2)
        check_state_vector(self.minus, 2)
        if abs(np.vdot(self.plus, self.minus)) > ORTHO_TOL:
            raise ValueError(f"basis {self.label!r} ports are not orthogonal within 1e-10")


@dataclass(frozen=True)
class BasisPlan:
    """Receiver measurement settings for one key-exchange session.

    ``basis_z`` pairs with the transmitter's H/V basis and ``basis_x``
    with D/A.  A correlation sign of +1 means the matching-bit outcome
    pairs transmitter H (or D) with the receiver ``plus`` port; -1
    swaps the expected pairing.  ``source_concurrence`` records the
    entanglement of the pure state the plan was derived from.
    """

    basis_z: MeasBasis
    basis_x: MeasBasis
    correlation_sign_z: int
    correlation_sign_x: int
    source_concurrence: float

    def __post_init__(self) -> None:
        if self.correlation_sign_z not in (-1, 1) or self.correlation_sign_x not in (-1, 1):
            raise ValueError("correlation signs must be +1 or -1")
        if not -1e-9 <= self.source_concurrence <= 1 + 1e-9:
            raise ValueError("source concurrence must lie in [0, 1]")


def fold_unitaries(u: np.ndarray, v: np.ndarray, i: int) -> np.ndarray:
    """Collapse local unitaries on both arms into one receiver unitary.

    For the i-th maximally entangled state, ``(u (x) v)`` acts the same
    as ``(1 (x) w)`` with ``w = v @ s_i @ u.T @ s_i`` where ``s_i`` is
    the i-th Pauli matrix.  The identity holds exactly, not only up to
    phase.
    """
    u = check_unitary(u)
    v = check_unitary(v)
    s = pauli(i)
    return v @ s @ u.T @ s


def nearest_pure(rho: np.ndarray) -> tuple[np.ndarray, float]:
    """Pure state closest in fidelity to ``rho`` and the spectral gap.

    Returns the canonically phased top eigenvector together with the
    difference between the two largest eigenvalues.  Raises
    ``DegenerateTopError`` when that gap is below 1e-6, since the
    maximizer is then not unique.
    """
    rho = check_density_matrix(rho)
    dec = eigh(rho)
    if dec.gap < DEGENERACY_TOL:
        raise DegenerateTopError(
            f"top eigenvalue gap {dec.gap:.3e} is below {DEGENERACY_TOL:g}; "
            "the nearest pure state is not well defined"
        )
    return dec.top_vector, dec.gap


def conditional_states(psi: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Receiver states conditioned on the transmitter's H/V outcome.

    Decomposes ``psi`` as ``sqrt(w)|H>|phi_H> + sqrt(1-w)|V>|phi_V>``
    and returns ``(phi_H, phi_V, w)``.  The two conditional states keep
    a common phase reference (the pair is rotated so that ``phi_H``
    carries the canonical phase), because their relative phase feeds
    the diagonal-basis construction.  Raises ``BranchVanishesError``
    when either branch has norm below 1e-9.
    """
    psi = check_state_vector(psi, 4)
    branch_h = psi[0:2]
    branch_v = psi[2:4]
    nh = np.linalg.norm(branch_h)
    nv = np.linalg.norm(branch_v)
    if nh < BRANCH_TOL or nv < BRANCH_TOL:
        raise BranchVanishesError(
            f"conditional branch norms ({nh:.3e}, {nv:.3e}) leave no two-outcome structure"
        )
    phi_h = branch_h / nh
    phi_v = branch_v / nv
    # Common phase factor only: canonical_phase(phi_h) / phi_h.
    for a in phi_h:
        if abs(a) > BRANCH_TOL:
            phase = a.conjugate() / abs(a)
            phi_h = phi_h * phase
            phi_v = phi_v * phase
            break
    return phi_h, phi_v, float(nh**2)


def optimal_bases(rho: np.ndarray) -> BasisPlan:
    """Derive the receiver's two measurement bases from a state estimate.

    The plan's ``basis_z.plus`` is the receiver state conditioned on
    transmitter H, so Z-basis outcomes are correlated with sign +1 by
    construction; ``basis_x.plus`` is the normalized sum of the two
    conditional states, which pairs with transmitter D.  When the
    conditional states are not exactly orthogonal (non-maximally
    entangled estimate), the minus port of the X basis is
    re-orthogonalized against the plus port.
    """
    psi, _gap = nearest_pure(rho)
    phi_h, phi_v, _w = conditional_states(psi)

    basis_z = MeasBasis(plus=phi_h, minus=canonical_phase(perp_qubit(phi_h)), label="Z'")

    sum_vec = phi_h + phi_v
    diff_vec = phi_h - phi_v
    if np.linalg.norm(sum_vec) < BRANCH_TOL or np.linalg.norm(diff_vec) < BRANCH_TOL:
        raise BranchVanishesError(
            "conditional states are (anti)parallel; the diagonal basis degenerates"
        )
    phi_d = normalize(sum_vec)
    phi_a = normalize(diff_vec)
    overlap = np.vdot(phi_d, phi_a)
    if abs(overlap) > ORTHO_TOL:
        phi_a = normalize(phi_a - overlap * phi_d)
    basis_x = MeasBasis(plus=phi_d, minus=phi_a, label="X'")

    return BasisPlan(
        basis_z=basis_z,
        basis_x=basis_x,
        correlation_sign_z=1,
        correlation_sign_x=1,
        source_concurrence=concurrence(projector(psi)),
    )


def _best_sign(rho: np.ndarray, alice: MeasBasis, bob: MeasBasis) -> int:
    """Correlation sign with the lower wrong-bit probability for ``rho``."""
    return 1 if _basis_qber(rho, alice, bob, 1) <= _basis_qber(rho, alice, bob, -1) else -1


_ALICE_Z = MeasBasis(plus=KET_H, minus=KET_V, label="Z")
_ALICE_X = MeasBasis(plus=KET_D, minus=KET_A, label="X")


def pauli_plan(reference: np.ndarray | None = None) -> BasisPlan:
    """Fixed receiver plan measuring plain H/V and D/A.

    Correlation signs are chosen to match ``reference`` (default: the
    singlet-like state ``bell_state(1)``, which anti-correlates in H/V
    and correlates in D/A).  This is the conventional plan a link
    without basis adaptation would use.
    """
    if reference is None:
        reference = bell_state(1)
    ref_rho = projector(check_state_vector(reference, 4))
    return BasisPlan(
        basis_z=_ALICE_Z,
        basis_x=_ALICE_X,
        correlation_sign_z=_best_sign(ref_rho, _ALICE_Z, _ALICE_Z),
        correlation_sign_x=_best_sign(ref_rho, _ALICE_X, _ALICE_X),
        source_concurrence=concurrence(ref_rho),
    )


_PAULI_BASES = {
    1: MeasBasis(plus=KET_D, minus=KET_A, label="X"),
    2: MeasBasis(plus=KET_R, minus=KET_L, label="Y"),
    3: MeasBasis(plus=KET_H, minus=KET_V, label="Z"),
}


def best_pauli_plan(rho: np.ndarray) -> BasisPlan:
    """Best receiver plan restricted to plain Pauli measurement bases.

    Scans the six ordered pairs of distinct Pauli bases on the receiver
    side, picks per-basis correlation signs that minimize the wrong-bit
    probability, and returns the pair with the lowest mean predicted
    error rate.  Useful as the strongest non-adaptive baseline.
    """
    rho = check_density_matrix(rho)
    best = None
    for zi in (1, 2, 3):
        for xi in (1, 2, 3):
            if zi == xi:
                continue
            bz = _PAULI_BASES[zi]
            bx = _PAULI_BASES[xi]
            sz = _best_sign(rho, _ALICE_Z, bz)
            sx = _best_sign(rho, _ALICE_X, bx)
            plan = BasisPlan(
                basis_z=bz,
                basis_x=bx,
                correlation_sign_z=sz,
                correlation_sign_x=sx,
                source_concurrence=concurrence(rho),
            )
            qz, qx = predicted_qber(rho, plan)
            score = (qz + qx) / 2
            if best is None or score < best[0] - 1e-15:
                best = (score, plan)
    return best[1]


def _basis_qber(rho: np.ndarray, alice: MeasBasis, bob: MeasBasis, sign: int) -> float:
    """Wrong-bit probability when both parties use the given bases."""
    pp = projector(alice.plus), projector(alice.minus)
    qq = projector(bob.plus), projector(bob.minus)
    prob = np.empty((2, 2))
    for a in (0, 1):
        for b in (0, 1):
            prob[a, b] = np.trace(rho @ kron(pp[a], qq[b])).real
    total = prob.sum()
    wrong = prob[0, 1] + prob[1, 0] if sign == 1 else prob[0, 0] + prob[1, 1]
    return float(wrong / total)


def predicted_qber(rho: np.ndarray, plan: BasisPlan) -> tuple[float, float]:
    """Born-rule error rates for both matched-basis settings.

    Returns ``(qber_z, qber_x)``: the probability mass on wrong-bit
    outcomes when the transmitter measures H/V (resp. D/A) and the
    receiver uses the plan's Z (resp. X) basis, conditioned on that
    basis pairing.
    """
    rho = check_density_matrix(rho)
    qz = _basis_qber(rho, _ALICE_Z, plan.basis_z, plan.correlation_sign_z)
    qx = _basis_qber(rho, _ALICE_X, plan.basis_x, plan.correlation_sign_x)
    return qz, qx


def _fmt_vec(v: np.ndarray) -> str:
    return " ".join(f"{x:.12g}" for a in v for x in (a.real, a.imag))


def _parse_vec(text: str) -> np.ndarray:
    parts = [float(t) for t in text.split()]
    if len(parts) != 4:
        raise ValueError(f"expected 4 numbers (2 complex amplitudes), got {len(parts)}")
    return np.array([parts[0] + 1j * parts[1], parts[2] + 1j * parts[3]])


def plan_to_text(plan: BasisPlan) -> str:
    """Serialize a plan as a plain-text record (12 significant digits)."""
    lines = [
        "# measurement plan v1",
        f"label_z= {plan.basis_z.label}",
        f"label_x= {plan.basis_x.label}",
        f"basis_z.plus= {_fmt_vec(plan.basis_z.plus)}",
        f"basis_z.minus= {_fmt_vec(plan.basis_z.minus)}",
        f"basis_x.plus= {_fmt_vec(plan.basis_x.plus)}",
        f"basis_x.minus= {_fmt_vec(plan.basis_x.minus)}",
        f"correlation_sign_z= {plan.correlation_sign_z:+d}",
        f"correlation_sign_x= {plan.correlation_sign_x:+d}",
        f"source_concurrence= {plan.source_concurrence:.12g}",
    ]
    return "\n".join(lines) + "\n"


def plan_from_text(text: str) -> BasisPlan:
    """Parse a plan record written by ``plan_to_text``.

    Port vectors are renormalized to absorb decimal rounding; the
    round trip preserves every amplitude to better than 1e-10.
    """
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed plan line: {raw!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    required = {
        "label_z", "label_x", "basis_z.plus", "basis_z.minus",
        "basis_x.plus", "basis_x.minus", "correlation_sign_z",
        "correlation_sign_x", "source_concurrence",
    }
    missing = required - fields.keys()
    if missing:
        raise ValueError(f"plan record is missing fields: {sorted(missing)}")
    basis_z = MeasBasis(
        plus=normalize(_parse_vec(fields["basis_z.plus"])),
        minus=normalize(_parse_vec(fields["basis_z.minus"])),
        label=fields["label_z"],
    )
    basis_x = MeasBasis(
        plus=normalize(_parse_vec(fields["basis_x.plus"])),
        minus=normalize(_parse_vec(fields["basis_x.minus"])),
        label=fields["label_x"],
    )
    return BasisPlan(
        basis_z=basis_z,
        basis_x=basis_x,
        correlation_sign_z=int(fields["correlation_sign_z"]),
        correlation_sign_x=int(fields["correlation_sign_x"]),
        source_concurrence=float(fields["source_concurrence"]),
    )
