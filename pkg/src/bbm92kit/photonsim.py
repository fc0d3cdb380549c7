"""Photon-pair source, detection chain and time-tag streams.

Detector channel map (fixed throughout the package):

====  =======================================================
 ch   meaning
====  =======================================================
 0    transmitter H port   (rectilinear basis, bit 0)
 1    transmitter V port   (rectilinear basis, bit 1)
 2    transmitter D port   (diagonal basis, bit 0)
 3    transmitter A port   (diagonal basis, bit 1)
 4    receiver Z' plus port
 5    receiver Z' minus port
 6    receiver X' plus port
 7    receiver X' minus port
====  =======================================================

``generate_session`` draws all randomness from a single seeded
generator in a fixed documented order, so a (state, config, plan,
duration, seed) tuple always produces byte-identical streams:

1. number of emitted pairs, then their emission times,
2. transmitter basis choices, then receiver basis choices,
3. joint measurement outcomes (one uniform per pair),
4. detection thinning, transmitter arm then receiver arm,
5. timing jitter, transmitter arm then receiver arm (skipped
   entirely when ``jitter_sigma_ps`` is zero),
6. dark counts channel by channel in ascending channel order
   (count first, then arrival times).

After the draws, per-party streams are merged, sorted by (time,
channel) and passed through the per-channel dead-time filter; the
filter acts on the merged stream, so dark counts both suffer and
cause dead time like real detector clicks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bases import BasisPlan
from .quantum import (
    KET_A,
    KET_D,
    KET_H,
    KET_V,
    apply_local,
    bell_state,
    check_density_matrix,
    check_unitary,
    kron,
    projector,
)

PS_PER_SECOND = 10**12

ALICE_CHANNELS = (0, 1, 2, 3)
BOB_CHANNELS = (4, 5, 6, 7)
CHANNEL_RANGE = {"alice": ALICE_CHANNELS, "bob": BOB_CHANNELS}

TTAG_MAGIC = b"TTAG1\x00\x00\x00"
_TTAG_RECORD = np.dtype([("time_ps", "<u8"), ("channel", "u1")])


class EmptySessionWarning(UserWarning):
    """Session parameters give zero expected events; streams are empty."""


class TtagFormatError(ValueError):
    """A time-tag file violates the binary format."""


@dataclass(frozen=True)
class SourceConfig:
    """Entangled-pair source settings.

    The emitted state is a singlet-like state mixed with white noise,
    ``p * |psi><psi| + (1 - p)/4 * I`` with ``p = mixing_p``.  An
    explicit 4x4 density matrix can be supplied instead to model
    asymmetric noise; it overrides ``mixing_p``.
    """

    mixing_p: float = 0.92
    pair_rate_hz: float = 2.0e5
    state_matrix: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.mixing_p <= 1.0:
            raise ValueError(f"mixing_p must lie in [0, 1], got {self.mixing_p}")
        if self.pair_rate_hz < 0:
            raise ValueError("pair_rate_hz must be non-negative")
        if self.state_matrix is not None:
            check_density_matrix(self.state_matrix)


@dataclass(frozen=True)
class ChannelConfig:
    """Static local unitaries applied by the two collection fibers."""

    u_alice: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    u_bob: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))

    def __post_init__(self) -> None:
        check_unitary(self.u_alice)
        check_unitary(self.u_bob)


def _per_channel(value, name: str, low_ok: float) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(8, float(arr))
    if arr.shape != (8,):
        raise ValueError(f"{name} must be a scalar or a length-8 sequence")
    if arr.min() < low_ok:
        raise ValueError(f"{name} entries must be >= {low_ok}")
    return arr


@dataclass(frozen=True)
class DetectorConfig:
    """Detection chain settings, scalar or per channel (8 entries).

    ``dark_rate_hz`` models every uncorrelated click source (intrinsic
    dark counts plus stray light), ``jitter_sigma_ps`` the Gaussian
    timing spread of each detector, and ``dead_time_ps`` the span after
    an accepted click during which the same channel stays blind.
    """

    efficiency: float | np.ndarray = 0.66
    dark_rate_hz: float | np.ndarray = 4.3e5
    jitter_sigma_ps: float = 300.0
    dead_time_ps: int = 0

    def __post_init__(self) -> None:
        eff = _per_channel(self.efficiency, "efficiency", 0.0)
        if eff.min() <= 0.0 or eff.max() > 1.0:
            raise ValueError("efficiency entries must lie in (0, 1]")
        object.__setattr__(self, "efficiency", eff)
        object.__setattr__(
            self, "dark_rate_hz", _per_channel(self.dark_rate_hz, "dark_rate_hz", 0.0)
        )
        if self.jitter_sigma_ps < 0:
            raise ValueError("jitter_sigma_ps must be non-negative")
        if self.dead_time_ps < 0:
            raise ValueError("dead_time_ps must be non-negative")


@dataclass(frozen=True)
class TimestampStream:
    """One party's detector clicks over a session.

    ``times_ps`` is non-decreasing; ``channels`` stay inside the
    party's range (0-3 transmitter, 4-7 receiver).
    """

    party: str
    times_ps: np.ndarray
    channels: np.ndarray
    duration_ps: int

    def __post_init__(self) -> None:
        if self.party not in CHANNEL_RANGE:
            raise ValueError(f"party must be 'alice' or 'bob', got {self.party!r}")
        times = np.asarray(self.times_ps, dtype=np.uint64)
        chans = np.asarray(self.channels, dtype=np.uint8)
        if times.shape != chans.shape or times.ndim != 1:
            raise ValueError("times_ps and channels must be 1-d arrays of equal length")
        if times.size and np.any(np.diff(times.astype(np.int64)) < 0):
            raise ValueError("times_ps must be non-decreasing")
        lo, hi = CHANNEL_RANGE[self.party][0], CHANNEL_RANGE[self.party][-1]
        if chans.size and (chans.min() < lo or chans.max() > hi):
            raise ValueError(f"{self.party} channels must lie in [{lo}, {hi}]")
        object.__setattr__(self, "times_ps", times)
        object.__setattr__(self, "channels", chans)

    def __len__(self) -> int:
        return int(self.times_ps.size)

    def channel_times(self, channel: int) -> np.ndarray:
        """Sorted int64 times of one channel."""
        return self.times_ps[self.channels == channel].astype(np.int64)


def build_state(cfg: SourceConfig) -> np.ndarray:
    """Density matrix emitted by the source."""
    if cfg.state_matrix is not None:
        return np.asarray(cfg.state_matrix, dtype=complex)
    pure = projector(bell_state(1))
    return cfg.mixing_p * pure + (1.0 - cfg.mixing_p) * np.eye(4) / 4.0


def _outcome_tables(state_out: np.ndarray, plan: BasisPlan) -> np.ndarray:
    """Cumulative joint-outcome distributions for the 4 basis settings.

    Row ``2*ab + bb`` holds the cumulative probabilities of outcomes
    (a, b) in order (0,0), (0,1), (1,0), (1,1) when the transmitter
    uses basis ``ab`` (0 = H/V, 1 = D/A) and the receiver basis ``bb``
    (0 = Z', 1 = X').
    """
    alice_ports = (KET_H, KET_V, KET_D, KET_A)
    bob_ports = (plan.basis_z.plus, plan.basis_z.minus, plan.basis_x.plus, plan.basis_x.minus)
    cum = np.empty((4, 4))
    for ab in (0, 1):
        for bb in (0, 1):
            probs = np.empty(4)
            for ao in (0, 1):
                for bo in (0, 1):
                    port = kron(alice_ports[2 * ab + ao], bob_ports[2 * bb + bo])
                    probs[2 * ao + bo] = np.vdot(port, state_out @ port).real
            probs = np.clip(probs, 0.0, None)
            probs /= probs.sum()
            cum[2 * ab + bb] = np.cumsum(probs)
    cum[:, 3] = 1.0
    return cum


def generate_session(
    state: np.ndarray,
    pair_rate_hz: float,
    ch: ChannelConfig,
    det: DetectorConfig,
    plan: BasisPlan,
    duration_s: float,
    seed: int,
) -> tuple[TimestampStream, TimestampStream]:
    """Simulate one key-exchange session; returns (alice, bob) streams.

    Pair emissions form a Poisson process at ``pair_rate_hz``; each
    party picks a basis 50:50 per pair; joint outcomes follow the Born
    rule for the channel-rotated state measured in the transmitter's
    fixed ports and the receiver plan's ports.  Losses, jitter, dark
    counts and dead time are applied per the detector config.  See the
    module docstring for the exact randomness draw order.
    """
    state = check_density_matrix(state)
    if pair_rate_hz < 0 or duration_s < 0:
        raise ValueError("pair_rate_hz and duration_s must be non-negative")
    duration_ps = int(round(duration_s * PS_PER_SECOND))
    expected = pair_rate_hz * duration_s + float(np.sum(det.dark_rate_hz)) * duration_s
    if expected == 0.0:
        warnings.warn(
            "session parameters give zero expected events", EmptySessionWarning, stacklevel=2
        )
        empty_t = np.zeros(0, dtype=np.uint64)
        empty_c = np.zeros(0, dtype=np.uint8)
        return (
            TimestampStream("alice", empty_t, empty_c, duration_ps),
            TimestampStream("bob", empty_t, empty_c, duration_ps),
        )

    state_out = apply_local(state, ch.u_alice, ch.u_bob)
    cum = _outcome_tables(state_out, plan)
    rng = np.random.default_rng(seed)

    # 1. pair emission times
    n_pairs = int(rng.poisson(pair_rate_hz * duration_s))
    emit = np.sort(rng.random(n_pairs)) * duration_ps
    emit = np.minimum(emit.astype(np.int64), duration_ps - 1)

    # 2. basis choices
    basis_a = rng.integers(0, 2, n_pairs)
    basis_b = rng.integers(0, 2, n_pairs)

    # 3. joint outcomes via inverse CDF on one uniform per pair
    setting = 2 * basis_a + basis_b
    u = rng.random(n_pairs)
    outcome = np.sum(u[:, None] >= cum[setting], axis=1)
    out_a = outcome >> 1
    out_b = outcome & 1
    chan_a = (2 * basis_a + out_a).astype(np.int64)
    chan_b = (4 + 2 * basis_b + out_b).astype(np.int64)

    # 4. detection thinning
    eff = det.efficiency
    keep_a = rng.random(n_pairs) < eff[chan_a]
    keep_b = rng.random(n_pairs) < eff[chan_b]
    ta, ca = emit[keep_a], chan_a[keep_a]
    tb, cb = emit[keep_b], chan_b[keep_b]

    # 5. timing jitter (integer picoseconds)
    if det.jitter_sigma_ps > 0:
        ta = ta + np.rint(rng.normal(0.0, det.jitter_sigma_ps, ta.size)).astype(np.int64)
        tb = tb + np.rint(rng.normal(0.0, det.jitter_sigma_ps, tb.size)).astype(np.int64)
        ta = np.clip(ta, 0, None)
        tb = np.clip(tb, 0, None)

    # 6. dark counts per channel
    dark_t = {0: [ta], 1: [tb]}
    dark_c = {0: [ca], 1: [cb]}
    for chan in range(8):
        rate = det.dark_rate_hz[chan]
        n_dark = int(rng.poisson(rate * duration_s)) if rate > 0 else 0
        if n_dark:
            t = (rng.random(n_dark) * duration_ps).astype(np.int64)
            party = 0 if chan < 4 else 1
            dark_t[party].append(t)
            dark_c[party].append(np.full(n_dark, chan, dtype=np.int64))

    streams = []
    for party_idx, party in ((0, "alice"), (1, "bob")):
        times = np.concatenate(dark_t[party_idx])
        chans = np.concatenate(dark_c[party_idx])
        order = np.lexsort((chans, times))
        times, chans = times[order], chans[order]
        if det.dead_time_ps > 0 and times.size:
            keep = _kernels.dead_time_keep(times, chans, np.int64(det.dead_time_ps), 8)
            times, chans = times[keep], chans[keep]
        streams.append(
            TimestampStream(party, times.astype(np.uint64), chans.astype(np.uint8), duration_ps)
        )
    return streams[0], streams[1]


def write_ttag(path, stream: TimestampStream) -> None:
    """Write a stream in the binary time-tag format.

    Layout: 8-byte magic ``TTAG1\\0\\0\\0``, little-endian u64 record
    count, then 9-byte records (u64 time in ps, u8 channel).
    """
    records = np.empty(len(stream), dtype=_TTAG_RECORD)
    records["time_ps"] = stream.times_ps
    records["channel"] = stream.channels
    with open(path, "wb") as fh:
        fh.write(TTAG_MAGIC)
        fh.write(np.uint64(len(stream)).tobytes())
        fh.write(records.tobytes())


def read_ttag(path, party: str, duration_ps: int | None = None) -> TimestampStream:
    """Read a binary time-tag file back into a stream.

    ``party`` declares whose file this is; channels outside the party's
    range raise a validation error.  ``duration_ps`` is not stored in
    the format, so it must be supplied when the true session length
    matters (it defaults to the last click time plus one).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise TtagFormatError(f"{path}: header truncated at byte {len(data)} (need 16)")
    if data[:8] != TTAG_MAGIC:
        raise TtagFormatError(f"{path}: bad magic at byte 0: {data[:8]!r}")
    count = int(np.frombuffer(data[8:16], dtype="<u8")[0])
    expected = 16 + 9 * count
    if len(data) != expected:
        offset = min(len(data), expected)
        raise TtagFormatError(
            f"{path}: expected {expected} bytes for {count} records, "
            f"got {len(data)} (mismatch at byte {offset})"
        )
    records = np.frombuffer(data[16:], dtype=_TTAG_RECORD)
    times = records["time_ps"].astype(np.uint64)
    chans = records["channel"].astype(np.uint8)
    if duration_ps is None:
        duration_ps = int(times[-1]) + 1 if times.size else 0
    try:
        return TimestampStream(party, times, chans, int(duration_ps))
    except ValueError as exc:
        raise TtagFormatError(f"{path}: {exc}") from exc
