"""Compiled inner loops for time-tag processing.

All kernels take int64 picosecond timestamps sorted in non-decreasing
order.  They are two-pointer sweeps, O(n + matches), so a full-rate
session stays well inside the interactive analysis budget.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def delay_histogram(ta, tb, delay_min, delay_max, bin_width, nbins):
    """Histogram of pairwise delays tb - ta restricted to [delay_min, delay_max).

    Counts every (a, b) pair whose delay falls in range; bin k covers
    [delay_min + k*bin_width, delay_min + (k+1)*bin_width).
    """
    hist = np.zeros(nbins, dtype=np.int64)
    nb = tb.shape[0]
    lo = 0
    for i in range(ta.shape[0]):
        t = ta[i]
        while lo < nb and tb[lo] - t < delay_min:
            lo += 1
        j = lo
        while j < nb and tb[j] - t < delay_max:
            hist[(tb[j] - t - delay_min) // bin_width] += 1
            j += 1
    return hist


@njit(cache=True)
def greedy_match(ta, tb, delay_lo, delay_hi):
    """Pair events greedily, earliest first, each consumed at most once.

    Walks both streams with two pointers; an (a, b) pair is accepted
    when delay_lo <= tb[j] - ta[i] <= delay_hi, consuming both events.
    Returns matched index arrays (into ta and tb) and the match count.
    """
    na = ta.shape[0]
    nb = tb.shape[0]
    cap = min(na, nb)
    ia = np.empty(cap, dtype=np.int64)
    ib = np.empty(cap, dtype=np.int64)
    n = 0
    i = 0
    j = 0
    while i < na and j < nb:
        d = tb[j] - ta[i]
        if d < delay_lo:
            j += 1
        elif d > delay_hi:
            i += 1
        else:
            ia[n] = i
            ib[n] = j
            n += 1
            i += 1
            j += 1
    return ia[:n], ib[:n], n


@njit(cache=True)
def dead_time_keep(times, channels, dead_time, nchannels):
    """Mask of clicks that survive per-channel dead time.

    A click is dropped when it arrives strictly less than ``dead_time``
    after the last accepted click on the same channel.
    """
    n = times.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    last = np.full(nchannels, -dead_time - 1, dtype=np.int64)
    for k in range(n):
        c = channels[k]
        if times[k] - last[c] < dead_time:
            keep[k] = False
        else:
            last[c] = times[k]
    return keep


def warmup() -> None:
    """Force JIT compilation of all kernels on tiny inputs."""
    t = np.array([0, 10], dtype=np.int64)
    c = np.array([0, 1], dtype=np.int64)
    delay_histogram(t, t, -5, 5, 1, 10)
    greedy_match(t, t, -5, 5)
    dead_time_keep(t, c, 1, 8)
