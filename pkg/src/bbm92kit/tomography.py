"""Two-qubit state estimation from pairwise Pauli measurements.

Nine settings (each party measures one of the three Pauli bases) with
a fixed number of coincidence counts per setting.  Reconstruction is
linear inversion over the 16 Pauli expectation values -- the ones
involving an identity factor come from single-party marginals averaged
over the partner's settings -- followed by projection onto the
physical set (eigenvalue clipping and trace renormalization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .photonsim import ChannelConfig
from .quantum import (
    KET_A,
    KET_D,
    KET_H,
    KET_L,
    KET_R,
    KET_V,
    apply_local,
    check_density_matrix,
    dag,
    kron,
    pauli,
)
from .seeds import derive_seed

AXIS_LABELS = {1: "X", 2: "Y", 3: "Z"}
AXIS_BY_LABEL = {"X": 1, "Y": 2, "Z": 3}

# Plus/minus eigenvectors of each Pauli axis.
_AXIS_PORTS = {
    1: (KET_D, KET_A),
    2: (KET_R, KET_L),
    3: (KET_H, KET_V),
}

# Fixed setting order: transmitter axis major, receiver axis minor.
SETTING_ORDER = tuple(
    (ai, bi) for ai in (1, 2, 3) for bi in (1, 2, 3)
)


@dataclass(frozen=True)
class TomographySetting:
    """Counts for one pairwise Pauli setting.

    ``counts`` holds the four joint outcomes in order ``(+,+), (+,-),
    (-,+), (-,-)``.  Fractional counts are accepted so that exact
    Born-rule probabilities can be fed through the same path.
    """

    alice_axis: int
    bob_axis: int
    counts: np.ndarray

    def __post_init__(self) -> None:
        if self.alice_axis not in (1, 2, 3) or self.bob_axis not in (1, 2, 3):
            raise ValueError("measurement axes must be 1 (x), 2 (y) or 3 (z)")
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (4,):
            raise ValueError("counts must have exactly 4 entries")
        if counts.min() < 0:
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class CountsTable:
    """Complete 9-setting measurement record."""

    settings: tuple[TomographySetting, ...]
    shots_per_setting: float

    def __post_init__(self) -> None:
        got = tuple((s.alice_axis, s.bob_axis) for s in self.settings)
        if got != SETTING_ORDER:
            raise ValueError(f"settings must be exactly {SETTING_ORDER} in order, got {got}")

    def setting(self, alice_axis: int, bob_axis: int) -> TomographySetting:
        return self.settings[3 * (alice_axis - 1) + (bob_axis - 1)]


def setting_probabilities(state_out: np.ndarray, alice_axis: int, bob_axis: int) -> np.ndarray:
    """Born-rule outcome distribution for one Pauli-pair setting."""
    pa = _AXIS_PORTS[alice_axis]
    pb = _AXIS_PORTS[bob_axis]
    probs = np.empty(4)
    for ao in (0, 1):
        for bo in (0, 1):
            port = kron(pa[ao], pb[bo])
            probs[2 * ao + bo] = np.vdot(port, state_out @ port).real
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def simulate_counts(
    state: np.ndarray, ch: ChannelConfig, shots_per_setting: int, seed: int
) -> CountsTable:
    """Multinomial coincidence counts for all nine Pauli settings.

    The state is first passed through the channel unitaries.  Each
    setting draws from its own derived seed, so settings are
    independent and may be generated concurrently without changing
    the result.
    """
    state = check_density_matrix(state)
    if shots_per_setting <= 0:
        raise ValueError("shots_per_setting must be positive")
    state_out = apply_local(state, ch.u_alice, ch.u_bob)
    settings = []
    for ai, bi in SETTING_ORDER:
        probs = setting_probabilities(state_out, ai, bi)
        rng = np.random.default_rng(derive_seed(seed, f"tomo-{AXIS_LABELS[ai]}{AXIS_LABELS[bi]}"))
        counts = rng.multinomial(shots_per_setting, probs)
        settings.append(TomographySetting(ai, bi, counts.astype(float)))
    return CountsTable(settings=tuple(settings), shots_per_setting=float(shots_per_setting))


def _correlation(counts: np.ndarray) -> float:
    """<sigma_a (x) sigma_b> estimate from one setting's counts."""
    n = counts.sum()
    return float((counts[0] - counts[1] - counts[2] + counts[3]) / n)


def reconstruct(table: CountsTable) -> np.ndarray:
    """Density-matrix estimate from a counts table.

    Linear inversion over Pauli expectations followed by projection to
    the nearest physical state (negative eigenvalues clipped, trace
    renormalized).  Feeding exact outcome probabilities as counts
    returns the true state to machine precision.
    """
    for s in table.settings:
        if s.total <= 0:
            raise ValueError(
                f"setting {AXIS_LABELS[s.alice_axis]}{AXIS_LABELS[s.bob_axis]} has zero counts"
            )

    e = np.zeros((4, 4))
    e[0, 0] = 1.0
    for ai, bi in SETTING_ORDER:
        e[ai, bi] = _correlation(table.setting(ai, bi).counts)
    # Identity-paired expectations from marginals, averaged over the
    # partner's three settings.
    for ai in (1, 2, 3):
        vals = []
        for bi in (1, 2, 3):
            c = table.setting(ai, bi).counts
            vals.append((c[0] + c[1] - c[2] - c[3]) / c.sum())
        e[ai, 0] = np.mean(vals)
    for bi in (1, 2, 3):
        vals = []
        for ai in (1, 2, 3):
            c = table.setting(ai, bi).counts
            vals.append((c[0] - c[1] + c[2] - c[3]) / c.sum())
        e[0, bi] = np.mean(vals)

    rho = np.zeros((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            rho += e[i, j] * kron(pauli(i), pauli(j))
    rho /= 4.0
    rho = (rho + dag(rho)) / 2

    vals, vecs = np.linalg.eigh(rho)
    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    if total <= 0:
        raise ValueError("counts table yields a zero state after projection")
    vals /= total
    return (vecs * vals) @ dag(vecs)


def counts_to_text(table: CountsTable) -> str:
    """Serialize a counts table, one setting per line."""
    lines = ["# pairwise Pauli coincidence counts", "# setting  n_pp n_pm n_mp n_mm"]
    for s in table.settings:
        label = AXIS_LABELS[s.alice_axis] + AXIS_LABELS[s.bob_axis]
        nums = " ".join(f"{c:.12g}" for c in s.counts)
        lines.append(f"{label} {nums}")
    return "\n".join(lines) + "\n"


def counts_from_text(text: str) -> CountsTable:
    """Parse a counts table written by ``counts_to_text``."""
    rows: dict[tuple[int, int], np.ndarray] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5 or len(parts[0]) != 2:
            raise ValueError(f"malformed counts line: {raw!r}")
        try:
            key = (AXIS_BY_LABEL[parts[0][0]], AXIS_BY_LABEL[parts[0][1]])
        except KeyError:
            raise ValueError(f"unknown setting label {parts[0]!r}") from None
        if key in rows:
            raise ValueError(f"duplicate setting {parts[0]!r}")
        rows[key] = np.array([float(p) for p in parts[1:]])
    missing = set(SETTING_ORDER) - rows.keys()
    if missing:
        labels = sorted(AXIS_LABELS[a] + AXIS_LABELS[b] for a, b in missing)
        raise ValueError(f"counts table is missing settings: {labels}")
    settings = tuple(TomographySetting(ai, bi, rows[(ai, bi)]) for ai, bi in SETTING_ORDER)
    return CountsTable(settings=settings, shots_per_setting=float(settings[0].total))
