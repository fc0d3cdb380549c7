"""Coincidence analysis: delay histograms, windowed matching, sifting
and constrained window optimization.

Eight detector pairs matter for key extraction: the transmitter's two
rectilinear ports against the receiver's two Z' ports, and the two
diagonal ports against the two X' ports.  Under a plan's correlation
signs, four of them pair ports whose outcomes should agree (signal
pairs, carrying correct bits) and four pair ports whose outcomes
should disagree (noise pairs, carrying error bits).  Cross-basis
pairs never enter the key.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bases import BasisPlan
from .photonsim import PS_PER_SECOND, TimestampStream

DEFAULT_BIN_WIDTH_PS = 100
DEFAULT_DELAY_RANGE_PS = (-50_000, 50_000)
MAX_HALF_WIDTH_PS = 8_000
EXHAUSTIVE_LIMIT = 10_000

# Same-basis detector pairs in canonical order: Z-basis block then X.
SAME_BASIS_PAIRS = (
    (0, 4), (0, 5), (1, 4), (1, 5),
    (2, 6), (2, 7), (3, 6), (3, 7),
)
Z_PAIRS = SAME_BASIS_PAIRS[:4]
X_PAIRS = SAME_BASIS_PAIRS[4:]


class OverlappingWindowsError(ValueError):
    """More than one coincidence window targets the same detector pair."""


class NoCoincidencesError(ValueError):
    """No same-basis coincidences; sifting has nothing to work with."""


def classify_pairs(plan: BasisPlan) -> tuple[frozenset, frozenset]:
    """Split the 8 same-basis pairs into (signal, noise) under a plan.

    A pair is signal when its ports produce matching bits for the
    expected correlation: with sign +1 transmitter bit-0 ports (H, D)
    pair with receiver plus ports, with sign -1 they pair with minus.
    """
    signal = set()
    for ca, cb in SAME_BASIS_PAIRS:
        sign = plan.correlation_sign_z if cb < 6 else plan.correlation_sign_x
        bit_a = ca & 1
        bit_b = (cb & 1) if sign == 1 else 1 - (cb & 1)
        if bit_a == bit_b:
            signal.add((ca, cb))
    return frozenset(signal), frozenset(SAME_BASIS_PAIRS) - frozenset(signal)


@dataclass(frozen=True)
class CorrelationHistogram:
    """Delay histogram for one detector pair.

    Bin k counts event pairs with ``delay_min_ps + k*bin_width_ps <=
    (t_bob - t_alice) < delay_min_ps + (k+1)*bin_width_ps``.
    """

    alice_channel: int
    bob_channel: int
    bin_width_ps: int
    delay_min_ps: int
    delay_max_ps: int
    counts: np.ndarray

    def __post_init__(self) -> None:
        if self.bin_width_ps <= 0:
            raise ValueError("bin_width_ps must be positive")
        if self.delay_max_ps <= self.delay_min_ps:
            raise ValueError("delay range must be non-empty")
        if (self.delay_max_ps - self.delay_min_ps) % self.bin_width_ps:
            raise ValueError("delay range must be an integer number of bins")
        n = (self.delay_max_ps - self.delay_min_ps) // self.bin_width_ps
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (n,):
            raise ValueError(f"expected {n} bins, got {counts.shape}")
        object.__setattr__(self, "counts", counts)

    @property
    def pair(self) -> tuple[int, int]:
        return (self.alice_channel, self.bob_channel)

    def bin_center(self, k: int) -> int:
        return self.delay_min_ps + k * self.bin_width_ps + self.bin_width_ps // 2


@dataclass(frozen=True)
class CoincidenceWindow:
    """Symmetric acceptance window on one detector pair's delay."""

    alice_channel: int
    bob_channel: int
    center_delay_ps: int
    half_width_ps: int

    def __post_init__(self) -> None:
        if self.half_width_ps <= 0:
            raise ValueError("half_width_ps must be positive")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.alice_channel, self.bob_channel)

    @property
    def lo(self) -> int:
        return self.center_delay_ps - self.half_width_ps

    @property
    def hi(self) -> int:
        return self.center_delay_ps + self.half_width_ps


def cross_correlate(
    a: TimestampStream,
    b: TimestampStream,
    pair: tuple[int, int],
    bin_width_ps: int = DEFAULT_BIN_WIDTH_PS,
    delay_range_ps: tuple[int, int] = DEFAULT_DELAY_RANGE_PS,
) -> CorrelationHistogram:
    """Histogram of b-minus-a click delays for one detector pair.

    Counts every in-range pair (not only matched ones), so the total
    mass equals the number of cross-channel pairs with delay in range.
    Linear in the stream lengths plus the number of in-range pairs.
    """
    ca, cb = pair
    bw = int(bin_width_ps)
    dmin, dmax = int(delay_range_ps[0]), int(delay_range_ps[1])
    if bw <= 0 or dmax <= dmin or (dmax - dmin) % bw:
        raise ValueError("delay range must be a positive whole number of bins")
    ta = a.channel_times(ca)
    tb = b.channel_times(cb)
    counts = _kernels.delay_histogram(
        ta, tb, np.int64(dmin), np.int64(dmax), np.int64(bw), (dmax - dmin) // bw
    )
    return CorrelationHistogram(ca, cb, bw, dmin, dmax, counts)


def find_peak(hist: CorrelationHistogram) -> tuple[int, int]:
    """Location (bin-center delay) and height of the tallest bin.

    Ties are broken toward the smallest absolute delay, preferring the
    earlier (more negative) center on an exact tie.
    """
    top = int(hist.counts.max()) if hist.counts.size else 0
    candidates = np.flatnonzero(hist.counts == top)
    centers = [hist.bin_center(int(k)) for k in candidates]
    center = min(centers, key=lambda c: (abs(c), c))
    return center, top


def estimate_floor(hist: CorrelationHistogram, exclude_ps: int = 5_000) -> float:
    """Mean bin count away from the peak: the flat accidental level."""
    center, _ = find_peak(hist)
    lo = np.array([hist.bin_center(k) for k in range(hist.counts.size)])
    off_peak = np.abs(lo - center) > exclude_ps
    if not off_peak.any():
        return 0.0
    return float(hist.counts[off_peak].mean())


@dataclass(frozen=True)
class PairCounts:
    """Windowed coincidence matches for a set of detector pairs.

    ``matches[pair]`` holds (alice_indices, bob_indices) into the full
    streams for the accepted coincidences of that pair, in time order.
    """

    windows: tuple[CoincidenceWindow, ...]
    matches: dict
    alice_times: np.ndarray
    alice_channels: np.ndarray
    bob_times: np.ndarray
    bob_channels: np.ndarray
    duration_ps: int

    def count(self, pair: tuple[int, int]) -> int:
        return int(self.matches[pair][0].size)

    @property
    def total(self) -> int:
        return sum(self.count(w.pair) for w in self.windows)


def count_in_windows(
    a: TimestampStream, b: TimestampStream, windows
) -> PairCounts:
    """Greedy windowed coincidence counting for each detector pair.

    Events are paired earliest-first: walking both channel streams in
    time order, a coincidence is accepted whenever the delay falls
    inside the pair's window, and both clicks are then consumed (each
    click joins at most one coincidence of a given pair).  One window
    per detector pair; a second window for the same pair raises
    ``OverlappingWindowsError``.
    """
    windows = tuple(windows)
    seen = set()
    for w in windows:
        if w.pair in seen:
            raise OverlappingWindowsError(f"duplicate window for detector pair {w.pair}")
        seen.add(w.pair)
    matches = {}
    for w in windows:
        ia_all = np.flatnonzero(a.channels == w.alice_channel)
        ib_all = np.flatnonzero(b.channels == w.bob_channel)
        ta = a.times_ps[ia_all].astype(np.int64)
        tb = b.times_ps[ib_all].astype(np.int64)
        ka, kb, _n = _kernels.greedy_match(ta, tb, np.int64(w.lo), np.int64(w.hi))
        matches[w.pair] = (ia_all[ka], ib_all[kb])
    return PairCounts(
        windows=windows,
        matches=matches,
        alice_times=a.times_ps.astype(np.int64),
        alice_channels=a.channels.astype(np.int64),
        bob_times=b.times_ps.astype(np.int64),
        bob_channels=b.channels.astype(np.int64),
        duration_ps=max(a.duration_ps, b.duration_ps),
    )


@dataclass(frozen=True)
class SiftResult:
    """Key material and quality figures extracted from coincidences.

    ``records`` is a structured array of the kept coincidences sorted
    by transmitter time (fields ``ta, tb, ca, cb, ia, ib``); the bit
    arrays align with it.  ``qber_z``/``qber_x`` are NaN when a basis
    contributed no bits.
    """

    alice_bits: np.ndarray
    bob_bits: np.ndarray
    records: np.ndarray
    duration_s: float
    qber_z: float
    qber_x: float
    qber_overall: float
    key_rate_bps: float

    @property
    def n_bits(self) -> int:
        return int(self.alice_bits.size)


_RECORD_DTYPE = np.dtype(
    [("ta", "<i8"), ("tb", "<i8"), ("ca", "<i2"), ("cb", "<i2"), ("ia", "<i8"), ("ib", "<i8")]
)


def _receiver_bits(cb: np.ndarray, plan: BasisPlan) -> np.ndarray:
    port = cb & 1
    sign = np.where(cb < 6, plan.correlation_sign_z, plan.correlation_sign_x)
    return np.where(sign == 1, port, 1 - port)


def sift(counts: PairCounts, plan: BasisPlan) -> SiftResult:
    """Turn windowed coincidences into sifted key bits and error rates.

    Only same-basis pairs contribute.  Transmitter bits are 0 for the
    H and D ports and 1 for V and A; receiver bits follow the plan's
    correlation signs so the expected correlated outcome produces
    agreeing bits.  A click that appears in several pairs' matches is
    kept only in the first record in (ta, tb, ca, cb) order; later
    records reusing either click are dropped, so each detector click
    yields at most one key bit.
    """
    rows = []
    for w in counts.windows:
        if w.pair not in SAME_BASIS_PAIRS:
            continue
        ia, ib = counts.matches[w.pair]
        if ia.size == 0:
            continue
        rec = np.empty(ia.size, dtype=_RECORD_DTYPE)
        rec["ta"] = counts.alice_times[ia]
        rec["tb"] = counts.bob_times[ib]
        rec["ca"] = counts.alice_channels[ia]
        rec["cb"] = counts.bob_channels[ib]
        rec["ia"] = ia
        rec["ib"] = ib
        rows.append(rec)
    if not rows:
        raise NoCoincidencesError("zero same-basis coincidences in the supplied windows")
    records = np.concatenate(rows)
    records = records[np.argsort(records, order=("ta", "tb", "ca", "cb"))]

    # One key bit per physical click: keep only first use of each event.
    _, first_a = np.unique(records["ia"], return_index=True)
    _, first_b = np.unique(records["ib"], return_index=True)
    keep = np.zeros(records.size, dtype=bool)
    keep_a = np.zeros(records.size, dtype=bool)
    keep_a[first_a] = True
    keep_b = np.zeros(records.size, dtype=bool)
    keep_b[first_b] = True
    keep = keep_a & keep_b
    records = records[keep]
    if records.size == 0:
        raise NoCoincidencesError("zero same-basis coincidences after deduplication")

    alice_bits = (records["ca"] & 1).astype(np.uint8)
    bob_bits = _receiver_bits(records["cb"].astype(np.int64), plan).astype(np.uint8)
    errors = alice_bits != bob_bits
    in_z = records["cb"] < 6

    def _rate(mask: np.ndarray) -> float:
        n = int(mask.sum())
        return float(errors[mask].sum() / n) if n else float("nan")

    duration_s = counts.duration_ps / PS_PER_SECOND
    if duration_s <= 0:
        raise ValueError("cannot compute a key rate for a zero-length session")
    return SiftResult(
        alice_bits=alice_bits,
        bob_bits=bob_bits,
        records=records,
        duration_s=duration_s,
        qber_z=_rate(in_z),
        qber_x=_rate(~in_z),
        qber_overall=float(errors.mean()),
        key_rate_bps=records.size / duration_s,
    )


@dataclass(frozen=True)
class WindowForecast:
    """Histogram-level prediction of what a window set will sift."""

    qber_overall: float
    qber_z: float
    qber_x: float
    key_rate_bps: float
    n_bits: float
    per_pair: dict


@dataclass(frozen=True)
class WindowOptimization:
    """Chosen windows plus their forecast and feasibility verdict."""

    windows: tuple[CoincidenceWindow, ...]
    forecast: WindowForecast
    feasible: bool
    mode: str


def half_width_grid(bin_width_ps: int, max_half_width_ps: int = MAX_HALF_WIDTH_PS):
    """Geometric candidate half-widths from half a bin to the cap."""
    lo = max(1, bin_width_ps // 2)
    vals = []
    h = float(lo)
    while h < max_half_width_ps:
        vals.append(int(round(h)))
        h *= np.sqrt(2.0)
    vals.append(int(max_half_width_ps))
    return tuple(sorted(set(vals)))


def _window_sum(hist: CorrelationHistogram, center: int, half: int) -> int:
    k_lo = (center - half - hist.delay_min_ps) // hist.bin_width_ps
    k_hi = (center + half - hist.delay_min_ps) // hist.bin_width_ps
    k_lo = max(int(k_lo), 0)
    k_hi = min(int(k_hi), hist.counts.size - 1)
    if k_hi < k_lo:
        return 0
    return int(hist.counts[k_lo : k_hi + 1].sum())


def optimize_windows(
    histograms,
    duration_s: float,
    mode: str,
    plan: BasisPlan,
    qber_target: float = 0.11,
    per_basis_target: float = 0.11,
    max_half_width_ps: int = MAX_HALF_WIDTH_PS,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
) -> WindowOptimization:
    """Pick per-pair symmetric windows maximizing the forecast key rate.

    Each pair's window is centered on its histogram peak; half-widths
    run over a geometric grid.  The search maximizes forecast key rate
    subject to forecast overall QBER <= ``qber_target`` and, in
    ``per-basis`` mode, each basis QBER <= ``per_basis_target``; ties
    prefer smaller total width.  Small search spaces are enumerated
    exhaustively, larger ones by coordinate descent (every accepted
    move strictly improves, so descent terminates).  When no candidate
    is feasible the best-found point is returned with ``feasible``
    False rather than raising.
    """
    if mode not in ("overall", "per-basis"):
        raise ValueError(f"mode must be 'overall' or 'per-basis', got {mode!r}")
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    hists = {h.pair: h for h in histograms}
    missing = set(SAME_BASIS_PAIRS) - hists.keys()
    if missing:
        raise ValueError(f"histograms missing for same-basis pairs: {sorted(missing)}")

    _signal, noise = classify_pairs(plan)
    pairs = SAME_BASIS_PAIRS
    centers = {p: find_peak(hists[p])[0] for p in pairs}
    grids = [half_width_grid(hists[p].bin_width_ps, max_half_width_ps) for p in pairs]

    is_noise = np.array([p in noise for p in pairs])
    is_z = np.array([p in Z_PAIRS for p in pairs])

    # Precompute window sums for every (pair, half-width) once.
    sums = [
        np.array([_window_sum(hists[p], centers[p], h) for h in grid], dtype=np.int64)
        for p, grid in zip(pairs, grids)
    ]

    def evaluate(choice: tuple[int, ...]):
        """Score tuple (feasible, -violation, key_rate, -total_width); larger wins."""
        c = np.array([sums[k][choice[k]] for k in range(8)], dtype=np.float64)
        bits = c.sum()
        err = c[is_noise].sum()
        q = err / bits if bits else 0.0
        bits_z = c[is_z].sum()
        err_z = c[is_noise & is_z].sum()
        bits_x = bits - bits_z
        err_x = err - err_z
        qz = err_z / bits_z if bits_z else 0.0
        qx = err_x / bits_x if bits_x else 0.0
        violation = max(0.0, q - qber_target)
        if mode == "per-basis":
            violation = max(violation, qz - per_basis_target, qx - per_basis_target)
        total_width = sum(grids[k][choice[k]] for k in range(8))
        score = (violation <= 0.0, -violation, bits / duration_s, -total_width)
        return score, (q, qz, qx, bits, c)

    n_space = 1
    for g in grids:
        n_space *= len(g)

    best_choice = None
    best_score = None
    if n_space <= exhaustive_limit:
        for choice in itertools.product(*(range(len(g)) for g in grids)):
            score, _ = evaluate(choice)
            if best_score is None or score > best_score:
                best_score, best_choice = score, choice
    else:
        choice = [0] * 8
        best_score, _ = evaluate(tuple(choice))
        improved = True
        while improved:
            improved = False
            for k in range(8):
                for v in range(len(grids[k])):
                    if v == choice[k]:
                        continue
                    trial = list(choice)
                    trial[k] = v
                    score, _ = evaluate(tuple(trial))
                    if score > best_score:
                        best_score, choice = score, trial
                        improved = True
        best_choice = tuple(choice)

    _, (q, qz, qx, bits, c) = evaluate(tuple(best_choice))
    windows = tuple(
        CoincidenceWindow(p[0], p[1], centers[p], grids[k][best_choice[k]])
        for k, p in enumerate(pairs)
    )
    forecast = WindowForecast(
        qber_overall=float(q),
        qber_z=float(qz),
        qber_x=float(qx),
        key_rate_bps=float(bits / duration_s),
        n_bits=float(bits),
        per_pair={p: int(c[k]) for k, p in enumerate(pairs)},
    )
    return WindowOptimization(
        windows=windows, forecast=forecast, feasible=bool(best_score[0]), mode=mode
    )


def fixed_windows(histograms, half_width_ps: int) -> tuple[CoincidenceWindow, ...]:
    """Uniform windows of one half-width centered on each pair's peak."""
    out = []
    for h in histograms:
        center, _ = find_peak(h)
        out.append(CoincidenceWindow(h.alice_channel, h.bob_channel, center, int(half_width_ps)))
    return tuple(out)


def forecast_windows(histograms, windows, duration_s: float, plan: BasisPlan) -> WindowForecast:
    """Predict sift statistics for explicit windows from histogram mass.

    Every same-basis detector pair needs both a histogram and exactly
    one window.  Counts in windows on anti-correlated (noise) pairs are
    forecast errors; empty denominators forecast a QBER of zero, the
    same convention the optimizer scores with.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    hists = {h.pair: h for h in histograms}
    wins = {}
    for w in windows:
        if w.pair in wins:
            raise OverlappingWindowsError(f"duplicate window for pair {w.pair}")
        wins[w.pair] = w
    for p in SAME_BASIS_PAIRS:
        if p not in hists:
            raise ValueError(f"missing histogram for same-basis pair {p}")
        if p not in wins:
            raise ValueError(f"missing window for same-basis pair {p}")

    _signal, noise = classify_pairs(plan)
    per_pair = {}
    bits = err = bits_z = err_z = 0
    for p in SAME_BASIS_PAIRS:
        w = wins[p]
        n = _window_sum(hists[p], w.center_delay_ps, w.half_width_ps)
        per_pair[p] = n
        bits += n
        if p in noise:
            err += n
        if p in Z_PAIRS:
            bits_z += n
            if p in noise:
                err_z += n
    bits_x = bits - bits_z
    err_x = err - err_z
    return WindowForecast(
        qber_overall=err / bits if bits else 0.0,
        qber_z=err_z / bits_z if bits_z else 0.0,
        qber_x=err_x / bits_x if bits_x else 0.0,
        key_rate_bps=bits / duration_s,
        n_bits=float(bits),
        per_pair=per_pair,
    )


def histograms_to_text(histograms) -> str:
    """Serialize delay histograms, one header plus one counts line each."""
    lines = ["# delay histograms v1"]
    for h in histograms:
        lines.append(
            f"pair {h.alice_channel} {h.bob_channel} "
            f"bin_width_ps {h.bin_width_ps} range_ps {h.delay_min_ps} {h.delay_max_ps}"
        )
        lines.append("counts " + " ".join(str(int(c)) for c in h.counts))
    return "\n".join(lines) + "\n"


def histograms_from_text(text: str):
    """Parse histograms written by ``histograms_to_text``."""
    out = []
    header = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("pair "):
            parts = line.split()
            if len(parts) != 8 or parts[3] != "bin_width_ps" or parts[5] != "range_ps":
                raise ValueError(f"malformed histogram header: {raw!r}")
            header = (int(parts[1]), int(parts[2]), int(parts[4]), int(parts[6]), int(parts[7]))
        elif line.startswith("counts "):
            if header is None:
                raise ValueError("counts line before any pair header")
            counts = np.array([int(t) for t in line.split()[1:]], dtype=np.int64)
            ca, cb, bw, dmin, dmax = header
            out.append(CorrelationHistogram(ca, cb, bw, dmin, dmax, counts))
            header = None
        else:
            raise ValueError(f"unrecognized histogram line: {raw!r}")
    if header is not None:
        raise ValueError("pair header without a counts line")
    return out


def windows_to_text(windows) -> str:
    """Serialize windows as 'alice_ch bob_ch center_ps half_width_ps' rows."""
    lines = ["# coincidence windows v1", "# alice_ch bob_ch center_delay_ps half_width_ps"]
    for w in windows:
        lines.append(f"{w.alice_channel} {w.bob_channel} {w.center_delay_ps} {w.half_width_ps}")
    return "\n".join(lines) + "\n"


def windows_from_text(text: str):
    """Parse windows written by ``windows_to_text``."""
    out = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"malformed window line: {raw!r}")
        out.append(CoincidenceWindow(*(int(p) for p in parts)))
    return tuple(out)
