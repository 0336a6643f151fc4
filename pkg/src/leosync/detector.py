"""Two-stage preamble detection and timing-advance assembly.

Stage one estimates the fractional delay K_f: the receive window is cut
into symbol-length subsequences, each is demodulated and correlated against
the cascade root, and the per-lag powers are accumulated across
subsequences. Stage two removes the estimated fractional delay, re-cuts the
window, and locates the distinguished symbol, whose subsequence index gives
the integer delay K_i. The timing advance is the known common part plus
K_i symbols plus K_f.

Stage one alone cannot pick the lag reliably in a loaded slot. A cascade
is periodic, so every subsequence sees the same superposition of the other
terminals' sequences: the cross-root interference in the accumulated
profile is a static pseudo-random floor whose per-lag distribution is
exponential, and its maximum over all lags grows to roughly the height of
the matched peak once tens of equal-power terminals share the slot.
Averaging over subsequences does not reduce it. The distinguished symbol
is what actually separates the terminals, so detection takes the top
stage-one lags as candidates and lets stage two score each: the candidate
whose distinguished-symbol peak stands highest above its own profile floor
wins. A candidate whose stage-two ratio already clears validation_ratio is
accepted immediately, which keeps the common case at one stage-two pass.

Qualification is scale-free: each stage compares its peak against the
profile's own noise floor (the mean of the below-median values), and the
threshold is a peak-to-floor ratio, so a threshold calibrated on
noise-only input transfers to slots where wideband interference raises the
whole profile. Detection requires both ratios of the winning candidate to
clear the threshold; the stage-two ratio alone cannot be thresholded
against its noise-only distribution because the candidate search feeds
stage two the largest noise excursions by construction.

Power accumulation across subsequences in stage one is non-coherent by
default: a residual CFO of f_u rotates consecutive symbols by
2 pi f_u / scs, which nulls the coherent sum near multiples of scs / z_l
(at 3 kHz offset and 30 kHz spacing a 21-copy coherent sum collapses to a
single-copy amplitude), while per-subsequence powers only suffer the small
intra-symbol loss. The coherent mode is kept for offset-free analysis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .waveform import (
    Numerology,
    PreambleFormat,
    TimeDomainSignal,
    ZcSpec,
    mseq_scramble,
    zc_sequence,
)

# Default peak-to-floor ratio a stage must clear when no calibrated
# threshold is supplied.
DEFAULT_THRESHOLD = 4.0


@dataclass(frozen=True)
class DetectorConfig:
    """Detection parameters for one probed preamble."""

    numerology: Numerology
    format: PreambleFormat
    g_l: int
    threshold: float = DEFAULT_THRESHOLD
    false_alarm_target: float = 0.01
    kf_accumulation: str = "noncoherent"
    kf_candidates: int = 6
    validation_ratio: float = 6.0

    def __post_init__(self) -> None:
        if self.g_l < 1:
            raise ValueError("g_l must be at least 1")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        if not 0 < self.false_alarm_target <= 1:
            raise ValueError("false_alarm_target must lie in (0, 1]")
        if self.kf_accumulation not in ("noncoherent", "coherent"):
            raise ValueError("kf_accumulation must be 'noncoherent' or 'coherent'")
        if self.kf_candidates < 1:
            raise ValueError("kf_candidates must be positive")
        if self.validation_ratio <= 0:
            raise ValueError("validation_ratio must be positive")

    @property
    def search_count(self) -> int:
        """Subsequences examined by stage two: z_l + g_l."""
        return self.format.z_l + self.g_l


@dataclass(frozen=True)
class Subsequence:
    """One symbol-length cut of the receive window."""

    index: int
    samples: np.ndarray


@dataclass(frozen=True)
class PdpProfile:
    """Normalized power-delay profile of one sequence against one root."""

    values: np.ndarray
    root_used: int
    peak_index: int
    peak_value: float
    noise_floor: float


@dataclass(frozen=True)
class KfEstimate:
    """Stage-one result: fractional delay and its accumulated profile."""

    k_f: float
    m_star: int
    peak_value: float
    noise_floor: float
    ratio: float
    qualified: bool
    stat: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class KiEstimate:
    """Stage-two result: integer delay in symbols."""

    k_i: int | None
    j_star: int | None
    peak_value: float
    ratio: float
    stats: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class DetectionResult:
    """Outcome of probing one preamble in a receive window."""

    detected: bool
    k_f_hat: float
    k_i_hat: int | None
    j_star: int | None
    m_star: int
    ta_hat: float | None
    ta_error: float | None
    miss_reason: str
    kf_ratio: float = 0.0
    ki_ratio: float = 0.0


@lru_cache(maxsize=None)
def _root_fft_conj(root: int, n_zc: int) -> np.ndarray:
    out = np.conj(np.fft.fft(zc_sequence(ZcSpec(root, n_zc))))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _scramble_cover(seed: int, n_zc: int) -> np.ndarray:
    out = mseq_scramble(np.ones(n_zc), seed).real
    out.setflags(write=False)
    return out


def _pdp_values(rows: np.ndarray, root: int, n_zc: int) -> np.ndarray:
    """Normalized circular-correlation power, all lags, batched over rows."""
    corr = np.fft.ifft(np.fft.fft(rows, axis=-1) * _root_fft_conj(root, n_zc), axis=-1)
    return np.abs(corr / n_zc) ** 2


def _lower_half_mean(values: np.ndarray) -> np.ndarray:
    """Mean of the below-median values: the profile's noise-floor proxy."""
    half = np.sort(values, axis=-1)[..., : values.shape[-1] // 2]
    return half.mean(axis=-1)


def _peak_to_floor(peak, floor):
    """Scale-free qualification statistic; an exactly empty profile scores 0."""
    peak = np.asarray(peak, dtype=float)
    floor = np.asarray(floor, dtype=float)
    out = np.where(
        floor > 0.0,
        peak / np.where(floor > 0.0, floor, 1.0),
        np.where(peak > 0.0, np.inf, 0.0),
    )
    return out if out.ndim else float(out)


def pdp(seq: np.ndarray, probe_root: int, n_zc: int) -> PdpProfile:
    """Power-delay profile |sum_n seq(n) x*(n - m, r) / N|^2 over all lags m.

    Evaluated for every m via one circular correlation; the peak and a
    below-median noise floor are attached for qualification decisions.
    """
    if len(seq) != n_zc:
        raise ValueError(f"sequence length {len(seq)} != n_zc {n_zc}")
    values = _pdp_values(np.asarray(seq, dtype=complex), probe_root, n_zc)
    peak = int(np.argmax(values))
    return PdpProfile(
        values=values,
        root_used=probe_root,
        peak_index=peak,
        peak_value=float(values[peak]),
        noise_floor=float(_lower_half_mean(values)),
    )


def split_subsequences(
    sig: TimeDomainSignal, num: Numerology, offset: int = 0, count: int | None = None
) -> list[Subsequence]:
    """Cut symbol-length subsequences starting at an absolute sample offset."""
    if offset < 0:
        raise ValueError("offset must be non-negative")
    avail = (len(sig.samples) - offset) // num.n_idft
    if count is None:
        count = avail
    if count < 1 or count > avail:
        raise ValueError(f"cannot cut {count} subsequences from {avail} available")
    wins = _window_matrix(sig.samples, num.n_idft, offset, count)
    return [Subsequence(index=j + 1, samples=wins[j]) for j in range(count)]


def _window_matrix(samples: np.ndarray, n_idft: int, offset: int, count: int) -> np.ndarray:
    end = offset + count * n_idft
    if offset < 0 or end > len(samples):
        raise ValueError("window range exceeds signal length")
    return samples[offset:end].reshape(count, n_idft)


def _demodulate_rows(wins: np.ndarray, num: Numerology) -> np.ndarray:
    spectrum = np.fft.fft(wins, axis=-1)[..., 1 : num.n_zc + 1]
    return np.fft.ifft(spectrum, axis=-1)


def _stage1_profile(sig: TimeDomainSignal, cfg: DetectorConfig) -> tuple[np.ndarray, float]:
    num = cfg.numerology
    if len(sig.samples) < num.n_idft:
        raise ValueError("signal shorter than one symbol")
    count = min(cfg.format.slot_symbols(num), len(sig.samples) // num.n_idft)
    wins = _window_matrix(sig.samples, num.n_idft, 0, count)
    if cfg.kf_accumulation == "coherent":
        rows = _demodulate_rows(wins.sum(axis=0), num)
        stat = _pdp_values(rows, cfg.format.root_a, num.n_zc)
    else:
        rows = _demodulate_rows(wins, num)
        stat = _pdp_values(rows, cfg.format.root_a, num.n_zc).mean(axis=0)
    return stat, float(_lower_half_mean(stat))


def estimate_kf(sig: TimeDomainSignal, cfg: DetectorConfig) -> KfEstimate:
    """Stage one: fractional timing estimate from accumulated profiles.

    All slot subsequences are demodulated and correlated against the
    cascade root; the per-lag statistic is the mean subsequence power
    (default) or the profile of the coherently summed subsequences. The
    peak lag m* maps to K_f = m* t_zc / n_zc; the peak qualifies when its
    peak-to-floor ratio clears the threshold. detect_preamble may settle
    on a different lag after stage-two validation of the top candidates.
    """
    stat, floor = _stage1_profile(sig, cfg)
    m_star = int(np.argmax(stat))
    peak = float(stat[m_star])
    ratio = float(_peak_to_floor(peak, floor))
    return KfEstimate(
        k_f=cfg.numerology.lag_to_seconds(m_star),
        m_star=m_star,
        peak_value=peak,
        noise_floor=floor,
        ratio=ratio,
        qualified=ratio >= cfg.threshold,
        stat=stat,
    )


def kf_removal_samples(m_star: int, num: Numerology) -> int:
    """Samples to strip before stage two: ceil(K_f / t_s) on the lag grid."""
    return (m_star * num.n_idft + num.n_zc - 1) // num.n_zc


def _stage2_values(sig: TimeDomainSignal, cfg: DetectorConfig, removal: int) -> np.ndarray:
    """Per-subsequence PDP matrix against the distinguished symbol's root.

    Subsequences are re-cut after stripping `removal` samples, demodulated,
    descrambled when the format scrambles its marker, and correlated
    against the probe root; rows are subsequences, columns lags.
    """
    num = cfg.numerology
    fmt = cfg.format
    avail = (len(sig.samples) - removal) // num.n_idft
    count = min(cfg.search_count, avail)
    if count < fmt.z_l:
        raise ValueError("receive window too short for stage-two search")
    wins = _window_matrix(sig.samples, num.n_idft, removal, count)
    rows = _demodulate_rows(wins, num)
    if fmt.option == "opt2":
        rows = rows * _scramble_cover(fmt.scramble_seed, num.n_zc)
    return _pdp_values(rows, fmt.probe_root, num.n_zc)


def _stage2_profiles(
    sig: TimeDomainSignal, cfg: DetectorConfig, removal: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-subsequence statistics, floors, and ratios for stage two.

    The statistic is the maximum PDP value over lags {-1, 0, +1} against
    the distinguished symbol's probe root; fractional-delay removal is
    quantized to whole samples, so the residual shift stays within about
    half a lag and this window always contains the true peak. Scrambled
    formats (opt2) use lag 0 only: shifted copies do not descramble
    coherently, so the side lags carry no signal.
    """
    values = _stage2_values(sig, cfg, removal)
    if cfg.format.option == "opt2":
        stats = values[:, 0].copy()
    else:
        stats = np.max(values[:, [-1, 0, 1]], axis=-1)
    floors = _lower_half_mean(values)
    return stats, floors, _peak_to_floor(stats, floors)


def _select_row(ratios: np.ndarray, fmt: PreambleFormat) -> int | None:
    """Pick the subsequence holding the distinguished symbol.

    Only indices j >= b_u are physical (arrivals never precede the nominal
    slot start). A plain cascade (opt1) has no unique marker: every
    subsequence inside the preamble correlates equally, so the delay is
    read off the leading edge, the earliest index reaching half the best
    ratio. Marked formats take the best ratio outright.
    """
    searchable = ratios[fmt.b_u - 1 :]
    if len(searchable) == 0 or not np.any(searchable > 0):
        return None
    if fmt.option == "opt1":
        rel = int(np.flatnonzero(searchable >= 0.5 * searchable.max())[0])
    else:
        rel = int(np.argmax(searchable))
    return rel + fmt.b_u - 1


def estimate_ki(sig: TimeDomainSignal, cfg: DetectorConfig, removal: int) -> KiEstimate:
    """Stage two: locate the distinguished symbol and read off K_i = j* - b_u.

    Selection is threshold-free; callers compare the returned peak-to-floor
    ratio against their threshold to decide whether the find is real.
    """
    stats, _, ratios = _stage2_profiles(sig, cfg, removal)
    best = _select_row(ratios, cfg.format)
    if best is None:
        return KiEstimate(k_i=None, j_star=None, peak_value=0.0, ratio=0.0, stats=stats)
    j_star = best + 1
    return KiEstimate(
        k_i=j_star - cfg.format.b_u,
        j_star=j_star,
        peak_value=float(stats[best]),
        ratio=float(ratios[best]),
        stats=stats,
    )


def assemble_ta(t_pre: float, k_i: int, k_f: float, t_zc: float) -> float:
    """Full timing advance: known common part + K_i t_zc + K_f."""
    if t_pre < 0 or k_f < 0:
        raise ValueError("t_pre and k_f must be non-negative")
    if k_f >= t_zc:
        raise ValueError("k_f must be below one symbol duration")
    return t_pre + k_i * t_zc + k_f


def _candidate_lags(sig: TimeDomainSignal, cfg: DetectorConfig) -> tuple[list[int], np.ndarray, float]:
    """Candidate lags for validation, plus the cascade profile and floor.

    Two per-lag profiles vote. The marked profile, max over subsequences of
    the single-subsequence PDP against the probe root, sees the
    distinguished symbol's full k^2 power and dominates other terminals'
    static cross-root floor even in loaded slots; its top lags go first.
    The accumulated cascade profile covers formats whose marker is not
    separable (opt1, unit-ratio markers) and clean slots. Duplicates are
    dropped, order kept.
    """
    stat, floor = _stage1_profile(sig, cfg)
    half = cfg.kf_candidates // 2
    cascade_top = np.argsort(stat)[::-1][: cfg.kf_candidates - half]
    marked_profile = _stage2_values(sig, cfg, 0).max(axis=0)
    marked_top = np.argsort(marked_profile)[::-1][:half]
    seen: dict[int, None] = {}
    for m in (*marked_top, *cascade_top):
        seen.setdefault(int(m))
    return list(seen), stat, floor


def _evaluate(
    sig: TimeDomainSignal, cfg: DetectorConfig
) -> tuple[int, float, KiEstimate]:
    """Joint candidate search: (winning lag, its stage-one ratio, stage two).

    Candidates are scored by the smaller of their two ratios and the best
    score wins. Neither ratio may stand alone: the accumulated profile's
    peak is ambiguous in a loaded slot, and a removal that chops the
    distinguished symbol mid-period throws large partial-period sidelobes
    into stage two. A candidate whose joint score clears validation_ratio
    is accepted immediately; genuine arrivals hit it on the first or
    second candidate, so the scan stays short in the common case.
    """
    num = cfg.numerology
    cands, stat, floor = _candidate_lags(sig, cfg)
    best: tuple[int, float, KiEstimate] | None = None
    best_score = -1.0
    for m in cands:
        r1 = float(_peak_to_floor(float(stat[m]), floor))
        ki = estimate_ki(sig, cfg, kf_removal_samples(m, num))
        score = min(r1, ki.ratio)
        if best is None or score > best_score:
            best = (m, r1, ki)
            best_score = score
        if score >= cfg.validation_ratio:
            break
    assert best is not None
    return best


def detect_preamble(
    sig: TimeDomainSignal,
    cfg: DetectorConfig,
    t_pre: float = 0.0,
    ta_true: float | None = None,
) -> DetectionResult:
    """Validate stage-one candidates, pick the best pair, apply the threshold.

    A preamble is declared present when both stage ratios of the winning
    candidate reach cfg.threshold. With ta_true supplied, ta_error is
    filled in for scoring; miss_reason stays 'none' on success and
    'not_detected' when the threshold test fails.
    """
    m_star, r1, ki = _evaluate(sig, cfg)
    k_f = cfg.numerology.lag_to_seconds(m_star)
    if min(r1, ki.ratio) < cfg.threshold or ki.k_i is None:
        return DetectionResult(
            False, k_f, None, None, m_star, None, None, "not_detected", r1, ki.ratio
        )
    ta_hat = assemble_ta(t_pre, ki.k_i, k_f, cfg.numerology.t_zc)
    err = None if ta_true is None else ta_hat - ta_true
    return DetectionResult(
        True, k_f, ki.k_i, ki.j_star, m_star, ta_hat, err, "none", r1, ki.ratio
    )


def detection_statistic(sig: TimeDomainSignal, cfg: DetectorConfig) -> float:
    """The scalar a detection implicitly thresholds: min of the stage ratios.

    Computed through the same candidate search as detect_preamble, so
    {detected} is exactly {statistic >= threshold}; calibrating a quantile
    of this statistic on noise-only input pins the false-alarm rate.
    """
    _, r1, ki = _evaluate(sig, cfg)
    return min(r1, ki.ratio)


def calibrate_threshold(
    cfg: DetectorConfig,
    noise_variance: float,
    trials: int,
    rng: np.random.Generator,
) -> float:
    """Peak-to-floor threshold hitting the false-alarm target on noise.

    Draws noise-only receive windows, evaluates the detection statistic on
    each, and returns its empirical (1 - false_alarm_target) quantile. A
    target of 1.0 returns the distribution minimum (declare on everything).
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if noise_variance <= 0:
        raise ValueError("noise_variance must be positive")
    num = cfg.numerology
    n = cfg.format.slot_symbols(num) * num.n_idft
    scale = math.sqrt(noise_variance / 2.0)
    stats = np.empty(trials)
    for t in range(trials):
        samples = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        stats[t] = detection_statistic(TimeDomainSignal(samples, num.t_s), cfg)
    return float(np.quantile(stats, 1.0 - cfg.false_alarm_target))


_DETECTION_FIELDS = [
    "ue_id", "detected", "k_f_s", "k_i", "j_star",
    "ta_true_s", "ta_hat_s", "err_samples", "miss_reason",
]


def write_detection_csv(rows: list[dict], path: str | Path) -> None:
    """Per-UE detection outcomes with the documented column set."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_DETECTION_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in _DETECTION_FIELDS})
