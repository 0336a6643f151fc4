"""Partial-period correlation bounds and collision probabilities.

When asynchronous preambles share a slot, a correlation window usually
covers a fragment of an interferer's symbol rather than a full period.
The closed forms here bound the normalized PDP contribution of such
fragments and give the expected number of affected subsequences per
interferer, for both a fixed and a flexible distinguished-symbol position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .waveform import ZcSpec, zc_sequence


@dataclass(frozen=True)
class WindowSpec:
    """A half-open fragment [start, start + length) of one symbol."""

    start: int
    length: int
    root: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.length < 1:
            raise ValueError("window must have non-negative start and positive length")


@dataclass(frozen=True)
class ProbProfile:
    """Per-index overlap probabilities Pr(j) for one format family."""

    values: np.ndarray
    z_l: int
    g_l: int

    @property
    def total(self) -> float:
        return float(self.values.sum())


def q_constant(n_zc: int) -> float:
    """Q = -(N/pi) ln sin(pi / 2N), an upper bound on sum_k 1/sin(pi k' / N).

    Bounds the aggregate inverse-sine sum that appears when a fragment's
    correlation is expanded over lags, trading the exact sum for a closed
    form that only depends on the sequence length.
    """
    if n_zc < 2:
        raise ValueError("n_zc must be at least 2")
    return -(n_zc / math.pi) * math.log(math.sin(math.pi / (2 * n_zc)))


def m2_bound(beta: int, k: int, n_zc: int) -> float:
    """Bound on the normalized PDP of a beta-sample fragment, amplitude k.

    min{(k beta / N)^2, k^2 (beta + 2Q)^2 / N^3}: the first branch is the
    coherent worst case (every term aligned), the second the partial-sum
    envelope via Q. Exact equality occurs in degenerate windows (beta = 1),
    so consumers comparing against measurements should allow for rounding.
    """
    if not 0 <= beta <= n_zc:
        raise ValueError("beta must lie in [0, n_zc]")
    if k < 0:
        raise ValueError("k must be non-negative")
    q = q_constant(n_zc)
    coherent = (k * beta / n_zc) ** 2
    envelope = k**2 * (beta + 2 * q) ** 2 / n_zc**3
    return min(coherent, envelope)


def m3_bound(beta: int, k1: int, k2: int, n_zc: int) -> float:
    """Bound for a window split between two symbols of one interferer.

    The window sees beta samples of a k1-scaled symbol and N - beta of a
    k2-scaled one; amplitudes add before squaring.
    """
    head = math.sqrt(m2_bound(beta, k1, n_zc))
    tail = math.sqrt(m2_bound(n_zc - beta, k2, n_zc))
    return (head + tail) ** 2


def multi_ue_bound(contributions: list[float]) -> float:
    """Worst-case combined PDP of several interferers: amplitudes add."""
    if any(c < 0 for c in contributions):
        raise ValueError("contributions must be non-negative")
    return sum(math.sqrt(c) for c in contributions) ** 2


def interference_to_peak_ratio(k: int, beta: int, k1: int, k2: int, n_zc: int) -> float:
    """Split-window interference relative to a k-scaled matched peak."""
    if k < 1:
        raise ValueError("k must be positive")
    head = math.sqrt(m2_bound(beta, k1, n_zc))
    tail = math.sqrt(m2_bound(n_zc - beta, k2, n_zc))
    return (head + tail / k) ** 2


def empirical_partial_pdp(window: WindowSpec, probe_root: int, n_zc: int) -> float:
    """Measured peak PDP of a fragment correlated against a probe root.

    The fragment occupies [start, start + length) of one symbol period and
    the rest of the correlation window is silent; the maximum over all lags
    is returned so the result is comparable with the closed-form bounds.
    """
    if window.start + window.length > n_zc:
        raise ValueError("fragment must fit within one period")
    seq = np.zeros(n_zc, dtype=complex)
    src = zc_sequence(ZcSpec(window.root, n_zc))
    seq[window.start : window.start + window.length] = src[window.start : window.start + window.length]
    probe = zc_sequence(ZcSpec(probe_root, n_zc))
    corr = np.fft.ifft(np.fft.fft(seq) * np.conj(np.fft.fft(probe)))
    return float(np.max(np.abs(corr / n_zc) ** 2))


def prob_fixed(z_l: int, g_l: int, b: int | None = None) -> ProbProfile:
    """Expected interference counts per subsequence, fixed marked position.

    An interferer with uniform arrival over g_l symbols contributes partial
    fragments at its first and last occupied subsequences and around its
    marked symbol at position b (default z_l, where the tail events merge).
    Values are expected event counts, not probabilities of disjoint events:
    a subsequence can be hit twice, and the profile sums to 3 exactly.
    """
    _check_dims(z_l, g_l)
    if b is None:
        b = z_l
    if not 1 <= b <= z_l:
        raise ValueError("b must lie in [1, z_l]")
    n = z_l + g_l
    j = np.arange(1, n + 1)
    values = np.zeros(n)
    values += _window_hit(j, 1, g_l, g_l)
    values += _window_hit(j, b, g_l, g_l)
    values += _window_hit(j, b + 1, g_l, g_l)
    return ProbProfile(values=values, z_l=z_l, g_l=g_l)


def prob_flexible(z_l: int, g_l: int) -> ProbProfile:
    """Expected interference counts with a uniformly random marked position.

    Both the arrival offset (uniform over g_l) and the marked position
    (uniform over z_l) are averaged. Fragments at the interferer's first
    and last subsequences always occur; the marked symbol adds boundary
    events on both sides except when it sits at an end, where its event
    coincides with the head or tail fragment and is counted once. Averaging
    the marked-position windows collapses to a closed form, evaluated here
    branch by branch so the in-cascade plateau is exactly 2 / z_l: ramps
    over the first and last g_l in-window indices join the plateau, the
    two outermost indices sit at 1 / g_l, and the profile sums to
    4 - 2 / z_l.
    """
    _check_dims(z_l, g_l)
    n = z_l + g_l
    j = np.arange(1, n + 1)
    ramp_up = 1.0 / g_l + 2.0 * (j - 1) / (g_l * z_l)
    ramp_down = 1.0 / g_l + 2.0 * (g_l + z_l - j) / (g_l * z_l)
    values = np.select(
        [j <= g_l, j <= z_l, j < z_l + g_l],
        [ramp_up, 2.0 / z_l, ramp_down],
        default=1.0 / g_l,
    )
    return ProbProfile(values=values, z_l=z_l, g_l=g_l)


def _window_hit(j: np.ndarray, first: int, width: int, g_l: int) -> np.ndarray:
    """Pr that index j equals first + U for U uniform on {0, ..., width-1}."""
    return ((j >= first) & (j < first + width)) / g_l


def detection_complexity_ratio(z_l: int, g_l: int) -> float:
    """Stage-two search cost of a flexible marked position vs a fixed one.

    A fixed position needs g_l + 1 candidate subsequences; a flexible one
    must probe all z_l positions for each arrival, i.e. z_l + g_l
    candidates in the worst case. The ratio z_l / g_l summarizes the
    per-position blowup.
    """
    _check_dims(z_l, g_l)
    return z_l / g_l


def _check_dims(z_l: int, g_l: int) -> None:
    if z_l < 2:
        raise ValueError("z_l must be at least 2")
    if g_l < 1:
        raise ValueError("g_l must be at least 1")
    if g_l > z_l:
        raise ValueError("g_l cannot exceed z_l")


def bound_table(n_zc: int, k: int = 1) -> list[dict]:
    """M2 bound across all fragment lengths, for reporting and CLI output."""
    q = q_constant(n_zc)
    rows = []
    for beta in range(n_zc + 1):
        rows.append(
            {
                "beta": beta,
                "m2": m2_bound(beta, k, n_zc),
                "coherent_branch": (k * beta / n_zc) ** 2,
                "envelope_branch": k**2 * (beta + 2 * q) ** 2 / n_zc**3,
            }
        )
    return rows
