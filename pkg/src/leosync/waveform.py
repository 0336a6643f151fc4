"""Preamble construction and the uplink channel.

A random-access preamble is a cascade of z_l identical-length OFDM symbols,
each carrying one length-n_zc Zadoff-Chu sequence on n_zc contiguous
subcarriers of an n_idft-point transform. One distinguished symbol (position
b_u) marks the integer part of the timing advance; it may use a second root,
a boosted amplitude, zeroed neighbors, or a scrambling cover depending on
the format option.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Roundoff guard for symbol-count ceilings on durations that are exact
# multiples of the symbol length.
_CEIL_EPS = 1e-9


def _ceil_symbols(duration: float, t_symbol: float) -> int:
    return max(0, math.ceil(duration / t_symbol - _CEIL_EPS))


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class Numerology:
    """Sampling and transform geometry shared by transmitter and detector."""

    scs: float
    n_zc: int
    n_idft: int

    def __post_init__(self) -> None:
        if self.scs <= 0:
            raise ValueError("scs must be positive")
        if not _is_prime(self.n_zc):
            raise ValueError("n_zc must be prime")
        if self.n_idft <= self.n_zc:
            raise ValueError("n_idft must exceed n_zc")

    @property
    def t_zc(self) -> float:
        """Symbol duration 1/scs, seconds."""
        return 1.0 / self.scs

    @property
    def t_s(self) -> float:
        """Sample interval t_zc/n_idft, seconds."""
        return 1.0 / (self.scs * self.n_idft)

    @property
    def sample_rate(self) -> float:
        return self.scs * self.n_idft

    def lag_to_seconds(self, m: int) -> float:
        """Correlation lag m mapped to delay on the symbol timescale."""
        return m * self.t_zc / self.n_zc


def table2_numerology() -> Numerology:
    """Default numerology used throughout: 30 kHz SCS, length-571 sequences."""
    return Numerology(scs=30e3, n_zc=571, n_idft=4096)


@dataclass(frozen=True)
class ZcSpec:
    """Zadoff-Chu sequence parameters: root and (prime) length."""

    root: int
    length: int

    def __post_init__(self) -> None:
        if not _is_prime(self.length):
            raise ValueError("length must be prime")
        if not 1 <= self.root <= self.length - 1:
            raise ValueError("root must lie in [1, length-1]")


def zc_sequence(spec: ZcSpec) -> np.ndarray:
    """Unit-modulus Zadoff-Chu sequence exp(-j pi r n (n+1) / N), n = 0..N-1."""
    n = np.arange(spec.length, dtype=float)
    phase = -np.pi * spec.root * n * (n + 1) / spec.length
    return np.exp(1j * phase)


def mseq_scramble(seq: np.ndarray, seed: int = 0) -> np.ndarray:
    """Element-wise +/-1 scrambling cover from a degree-9 LFSR.

    The register implements x^9 + x^5 + 1 (period 511) and the output bit
    stream is cyclically extended to the sequence length. Seeding XORs the
    seed bits into the all-ones initial register; a zero register falls back
    to all-ones. Applying the same cover twice restores the input.
    """
    reg = (0x1FF ^ (seed & 0x1FF)) or 0x1FF
    bits = np.empty(511, dtype=np.int64)
    for i in range(511):
        bits[i] = reg & 1
        fb = ((reg >> 0) ^ (reg >> 4)) & 1  # taps at degrees 9 and 5
        reg = (reg >> 1) | (fb << 8)
    cover = 1.0 - 2.0 * bits[np.arange(len(seq)) % 511]
    return seq * cover


def ofdm_modulate(seq: np.ndarray, num: Numerology, amplitude: float = 1.0) -> np.ndarray:
    """One OFDM symbol carrying seq on subcarriers 1..n_zc (DC unused).

    The frequency-domain image of seq is placed on n_zc contiguous bins of
    an n_idft-point spectrum and inverse transformed; demodulate() inverts
    the mapping exactly, so a round trip returns amplitude * seq.
    """
    if len(seq) != num.n_zc:
        raise ValueError(f"sequence length {len(seq)} != n_zc {num.n_zc}")
    spectrum = np.zeros(num.n_idft, dtype=complex)
    spectrum[1 : num.n_zc + 1] = np.fft.fft(seq)
    return amplitude * np.fft.ifft(spectrum)


def demodulate(samples: np.ndarray, num: Numerology) -> np.ndarray:
    """Recover the length-n_zc sequence domain from one symbol of samples."""
    if len(samples) != num.n_idft:
        raise ValueError(f"expected {num.n_idft} samples, got {len(samples)}")
    spectrum = np.fft.fft(samples)
    return np.fft.ifft(spectrum[1 : num.n_zc + 1])


@dataclass(frozen=True)
class PreambleFormat:
    """Cascaded-symbol preamble layout.

    option selects the construction: 'opt3' uses a second root r_b at the
    distinguished position, 'opt2' scrambles the distinguished symbol with
    an M-sequence cover (single root), 'opt1' is a plain cascade whose
    leading symbol is the distinguished one (b_u forced to 1).

    amplitude_ratio k scales the distinguished symbol in the time domain;
    zero_guard blanks both neighbors of the distinguished symbol.
    flexible_position marks formats whose b_u is drawn per transmission;
    the stored b_u then only serves as a template/default.
    """

    option: str
    z_l: int
    root_a: int
    root_b: int
    b_u: int
    amplitude_ratio: float = 1.0
    t_cp: float = 0.0
    t_gt: float = 0.0
    zero_guard: bool = False
    flexible_position: bool = False
    scramble_seed: int = 0

    def __post_init__(self) -> None:
        if self.option not in ("opt1", "opt2", "opt3"):
            raise ValueError(f"unknown option {self.option!r}")
        if self.z_l < 2:
            raise ValueError("z_l must be at least 2")
        if not 1 <= self.b_u <= self.z_l:
            raise ValueError("b_u must lie in [1, z_l]")
        if self.option == "opt1" and self.b_u != 1:
            raise ValueError("opt1 formats detect the leading symbol; b_u must be 1")
        if self.zero_guard and not 2 <= self.b_u <= self.z_l - 1:
            raise ValueError("zero_guard requires 2 <= b_u <= z_l - 1")
        if self.amplitude_ratio <= 0:
            raise ValueError("amplitude_ratio must be positive")
        if self.t_cp < 0 or self.t_gt < 0:
            raise ValueError("t_cp and t_gt must be non-negative")

    @property
    def probe_root(self) -> int:
        """Root the detector correlates against for the distinguished symbol."""
        return self.root_b if self.option == "opt3" else self.root_a

    def guard_symbols(self, num: Numerology) -> int:
        return _ceil_symbols(self.t_gt, num.t_zc)

    def slot_symbols(self, num: Numerology) -> int:
        """Total receive-window length in symbols: preamble plus guard time."""
        return self.z_l + self.guard_symbols(num)


def preamble_symbols_for_duration(t_p: float, t_zc: float) -> int:
    """Number of cascaded symbols filling a preamble duration t_p.

    Durations are quantized to whole symbols; nearest-integer rounding keeps
    published third-decimal-ms durations (e.g. 0.733 ms at 30 kHz) mapping
    to their intended counts.
    """
    if t_p <= 0 or t_zc <= 0:
        raise ValueError("durations must be positive")
    n = round(t_p / t_zc)
    if n < 1:
        raise ValueError("preamble shorter than one symbol")
    return n


def guard_symbols_for_spread(spread: float, t_zc: float) -> int:
    """Smallest symbol count covering a differential-delay spread."""
    if spread < 0:
        raise ValueError("spread must be non-negative")
    return _ceil_symbols(spread, t_zc)


@dataclass(frozen=True)
class TimeDomainSignal:
    """Complex baseband samples with their sampling interval."""

    samples: np.ndarray
    t_s: float
    origin: int = 0

    def __post_init__(self) -> None:
        if self.t_s <= 0:
            raise ValueError("t_s must be positive")


@dataclass(frozen=True)
class ChannelParams:
    """Per-UE single-tap channel: gain, CFO, arrival delay, and noise level.

    normalized_cfo is the uplink frequency offset in multiples of the
    subcarrier spacing; arrival_offset is the delay in whole samples;
    noise_variance is the per-sample complex noise power (set it to zero
    when noise is added once after superposing several UEs).
    """

    amplitude: float = 1.0
    normalized_cfo: float = 0.0
    arrival_offset: int = 0
    noise_variance: float = 0.0

    def __post_init__(self) -> None:
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.arrival_offset < 0:
            raise ValueError("arrival_offset must be non-negative")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")


def assemble_preamble(fmt: PreambleFormat, num: Numerology) -> TimeDomainSignal:
    """Build the z_l-symbol preamble for one UE at unit base amplitude.

    Ordinary symbols carry root_a. The distinguished symbol at position b_u
    carries root_b (opt3) or a scrambled root_a (opt2), scaled by
    amplitude_ratio; for opt1 it is simply the first root_a symbol, scaled.
    With zero_guard, positions b_u - 1 and b_u + 1 are blanked.
    """
    base = ofdm_modulate(zc_sequence(ZcSpec(fmt.root_a, num.n_zc)), num)
    if fmt.option == "opt3":
        marked_seq = zc_sequence(ZcSpec(fmt.root_b, num.n_zc))
    elif fmt.option == "opt2":
        marked_seq = mseq_scramble(zc_sequence(ZcSpec(fmt.root_a, num.n_zc)), fmt.scramble_seed)
    else:
        marked_seq = zc_sequence(ZcSpec(fmt.root_a, num.n_zc))
    marked = ofdm_modulate(marked_seq, num, amplitude=fmt.amplitude_ratio)

    zero = np.zeros(num.n_idft, dtype=complex)
    blanked = {fmt.b_u - 1, fmt.b_u + 1} if fmt.zero_guard else set()
    symbols = []
    for pos in range(1, fmt.z_l + 1):
        if pos == fmt.b_u:
            symbols.append(marked)
        elif pos in blanked:
            symbols.append(zero)
        else:
            symbols.append(base)
    return TimeDomainSignal(np.concatenate(symbols), num.t_s, origin=0)


def apply_channel(
    sig: TimeDomainSignal,
    ch: ChannelParams,
    num: Numerology,
    slot_samples: int,
    rng: np.random.Generator | None = None,
) -> TimeDomainSignal:
    """Delay, scale, rotate, and (optionally) add noise to one UE's preamble.

    Sample l of the output picks up the phase exp(j 2 pi f_u l / n_idft)
    with f_u in multiples of the subcarrier spacing, i.e. the rotation is
    indexed by absolute receive time. The output is cropped or zero-padded
    to slot_samples, the receive window covering preamble plus guard time.
    """
    if ch.arrival_offset >= slot_samples:
        raise ValueError("arrival_offset places the preamble outside the slot")
    out = np.zeros(slot_samples, dtype=complex)
    n_copy = min(len(sig.samples), slot_samples - ch.arrival_offset)
    out[ch.arrival_offset : ch.arrival_offset + n_copy] = ch.amplitude * sig.samples[:n_copy]
    if ch.normalized_cfo != 0.0:
        ramp = np.exp(2j * np.pi * ch.normalized_cfo * np.arange(slot_samples) / num.n_idft)
        out *= ramp
    if ch.noise_variance > 0.0:
        if rng is None:
            raise ValueError("rng is required when noise_variance > 0")
        scale = math.sqrt(ch.noise_variance / 2.0)
        out += scale * (rng.standard_normal(slot_samples) + 1j * rng.standard_normal(slot_samples))
    return TimeDomainSignal(out, sig.t_s, origin=0)


def superpose(signals: list[TimeDomainSignal]) -> TimeDomainSignal:
    """Sample-wise sum of equally sampled, equally anchored signals."""
    if not signals:
        raise ValueError("superpose requires at least one signal")
    first = signals[0]
    for s in signals[1:]:
        if s.t_s != first.t_s or s.origin != first.origin or len(s.samples) != len(first.samples):
            raise ValueError("signals must share t_s, origin, and length")
    total = np.sum([s.samples for s in signals], axis=0)
    return TimeDomainSignal(total, first.t_s, first.origin)


def noise_variance_for_snr(snr_db: float, num: Numerology, base_amplitude: float = 1.0) -> float:
    """Per-sample noise power giving the requested SNR.

    SNR is the ratio of the mean per-sample power of a unit(base)-amplitude
    modulated sequence symbol, (n_zc / n_idft)^2 * base^2, to the complex
    noise power. For boosted formats the reference is explicitly the lower
    amplitude.
    """
    p_signal = (num.n_zc / num.n_idft) ** 2 * base_amplitude**2
    return p_signal / 10.0 ** (snr_db / 10.0)


def save_signal(sig: TimeDomainSignal, path: str | Path) -> None:
    """Dump samples as interleaved float64 (re, im) with a sidecar header.

    The header file (path + '.hdr') holds n_samples, t_s, origin as
    key=value lines.
    """
    path = Path(path)
    inter = np.empty(2 * len(sig.samples), dtype="<f8")
    inter[0::2] = sig.samples.real
    inter[1::2] = sig.samples.imag
    inter.tofile(path)
    with open(path.with_suffix(path.suffix + ".hdr"), "w") as fh:
        fh.write(f"n_samples = {len(sig.samples)}\n")
        fh.write(f"t_s = {sig.t_s!r}\n")
        fh.write(f"origin = {sig.origin}\n")


def load_signal(path: str | Path) -> TimeDomainSignal:
    """Inverse of save_signal."""
    path = Path(path)
    header: dict[str, str] = {}
    with open(path.with_suffix(path.suffix + ".hdr")) as fh:
        for line in fh:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
    n = int(header["n_samples"])
    inter = np.fromfile(path, dtype="<f8", count=2 * n)
    if len(inter) != 2 * n:
        raise ValueError("signal file shorter than header n_samples")
    return TimeDomainSignal(inter[0::2] + 1j * inter[1::2], float(header["t_s"]), int(header["origin"]))
