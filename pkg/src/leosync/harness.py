"""Monte Carlo studies: loaded-slot detection and positioning accuracy.

A scenario is one flat configuration (constellation, numerology, preamble
format, load, impairments) driven over independent trials. Each trial
draws per-terminal roots, arrival offsets and marked positions from a
stream keyed by the absolute trial index, so a study can be split across
runs with trial_offset and merged without changing any draw.
"""

from __future__ import annotations

import csv
import hashlib
import math
import typing
from dataclasses import dataclass, fields, replace
from itertools import combinations

import numpy as np

from .detector import DEFAULT_THRESHOLD, DetectorConfig, calibrate_threshold, detect_preamble
from .geometry import (
    EARTH_RADIUS,
    ConstellationConfig,
    EcefVector,
    SatelliteState,
    UePosition,
    doppler_shift,
    generate_constellation,
    propagation_ta,
    visible_satellites,
)
from .precomp import (
    DownlinkMeasurement,
    EstimateVector,
    SolverConfig,
    cfo_jacobian,
    precompensate,
    solve_position,
)
from .waveform import (
    Numerology,
    PreambleFormat,
    TimeDomainSignal,
    ZcSpec,
    guard_symbols_for_spread,
    mseq_scramble,
    noise_variance_for_snr,
    ofdm_modulate,
    zc_sequence,
)

# Stream tags keep calibration, trial and positioning draws disjoint for a
# given scenario seed.
_CAL_TAG = 0xCA1
_TRIAL_TAG = 0x712
_PRECOMP_TAG = 0x9C0

# Uplink data symbols tolerate a timing error up to the PUSCH cyclic
# prefix; a larger error counts as a miss even when the preamble was found.
PUSCH_CP_SAMPLES = 288


@dataclass(frozen=True)
class ScenarioConfig:
    """Flat scenario description; defaults reproduce the reference setup."""

    orbit_count: int = 20
    satellites_per_orbit: int = 15
    altitude_m: float = 1_000_000.0
    inclination_deg: float = 53.0
    carrier_hz: float = 27e9
    scs_hz: float = 30_000.0
    n_zc: int = 571
    n_idft: int = 4096
    preamble_symbols: int = 22
    guard_symbols: int = 8
    format_option: str = "opt3"
    amplitude_ratio: float = 2.0
    marked_position: int = 0
    flexible_position: bool = True
    zero_guard: bool = True
    scramble_seed: int = 0
    ue_count: int = 64
    snr_db: float = -6.0
    max_arrival_spread_s: float = 0.2e-3
    uplink_cfo_hz: float = 3000.0
    trials: int = 500
    seed: int = 1
    false_alarm_target: float = 0.01
    calibration_trials: int = 5000
    dummy_probes: int = 0
    satellites_used: int = 3
    elevation_min_deg: float = 20.0
    elevation_max_deg: float = 70.0
    lo_offset_max_frac: float = 5e-7
    measurement_error_hz: float = 1200.0
    beam_radius_m: float = 85_000.0
    kf_accumulation: str = "noncoherent"
    cp_miss_samples: int = 288

    def numerology(self) -> Numerology:
        return Numerology(self.scs_hz, self.n_zc, self.n_idft)

    def arrival_window_symbols(self) -> int:
        return guard_symbols_for_spread(self.max_arrival_spread_s, 1.0 / self.scs_hz)

    def constellation(self) -> ConstellationConfig:
        return ConstellationConfig(
            orbit_count=self.orbit_count,
            satellites_per_orbit=self.satellites_per_orbit,
            altitude=self.altitude_m,
            inclination=math.radians(self.inclination_deg),
            carrier_frequency=self.carrier_hz,
        )

    def base_format(self) -> PreambleFormat:
        z_l = self.preamble_symbols
        if self.marked_position >= 1:
            b = self.marked_position
        elif self.format_option == "opt1":
            b = 1
        elif self.flexible_position and self.zero_guard:
            b = max(2, min(z_l - 1, z_l // 2))
        elif self.flexible_position:
            b = max(1, z_l // 2)
        else:
            b = z_l
        root_b = 2 if self.format_option == "opt3" else 1
        return PreambleFormat(
            option=self.format_option,
            z_l=z_l,
            root_a=1,
            root_b=root_b,
            b_u=b,
            amplitude_ratio=self.amplitude_ratio,
            t_gt=self.guard_symbols / self.scs_hz,
            zero_guard=self.zero_guard,
            flexible_position=self.flexible_position,
            scramble_seed=self.scramble_seed,
        )

    def noise_variance(self) -> float:
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        return noise_variance_for_snr(self.snr_db, self.numerology())


_CONFIG_TYPES = typing.get_type_hints(ScenarioConfig)


def parse_config(text: str) -> ScenarioConfig:
    """Parse 'key = value' lines; '#' starts a comment, blanks are skipped.

    Every field must be present so a saved file fully pins a run.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, rhs = line.partition("=")
        key, rhs = key.strip(), rhs.strip()
        if key not in _CONFIG_TYPES:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, rhs, lineno)
    missing = sorted(set(_CONFIG_TYPES) - set(values))
    if missing:
        raise ValueError(f"missing keys: {', '.join(missing)}")
    return ScenarioConfig(**values)


def _coerce(key: str, rhs: str, lineno: int):
    kind = _CONFIG_TYPES[key]
    try:
        if kind is bool:
            if rhs.lower() in ("true", "1", "yes"):
                return True
            if rhs.lower() in ("false", "0", "no"):
                return False
            raise ValueError(rhs)
        if kind is int:
            return int(rhs)
        if kind is float:
            return float(rhs)
        return rhs
    except ValueError:
        raise ValueError(f"line {lineno}: cannot parse {rhs!r} as {kind.__name__} for {key!r}") from None


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg: ScenarioConfig, path) -> None:
    """Write every field; floats use repr so a reload reproduces cfg exactly."""
    with open(path, "w") as fh:
        for f in fields(cfg):
            value = getattr(cfg, f.name)
            if isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            fh.write(f"{f.name} = {rendered}\n")


# Format variants compared in the studies: option, amplitude ratio, marked
# position policy. 'A' is the cascade baseline with a fixed end position;
# 'H' combines the distinct-root marker with boosted amplitude, flexible
# position and zeroed neighbors.
_DESIGNS: dict[str, dict] = {
    "A": dict(format_option="opt3", amplitude_ratio=1.0, flexible_position=False, zero_guard=False),
    "B": dict(format_option="opt3", amplitude_ratio=2.0, flexible_position=False, zero_guard=False),
    "C": dict(format_option="opt3", amplitude_ratio=1.0, flexible_position=True, zero_guard=False),
    "D": dict(format_option="opt1", amplitude_ratio=1.0, flexible_position=False, zero_guard=False),
    "E": dict(format_option="opt1", amplitude_ratio=2.0, flexible_position=False, zero_guard=False),
    "F": dict(format_option="opt2", amplitude_ratio=1.0, flexible_position=False, zero_guard=False),
    "G": dict(format_option="opt2", amplitude_ratio=2.0, flexible_position=True, zero_guard=True),
    "H": dict(format_option="opt3", amplitude_ratio=2.0, flexible_position=True, zero_guard=True),
}


def design_labels() -> list[str]:
    return sorted(_DESIGNS)


def apply_design(cfg: ScenarioConfig, label: str) -> ScenarioConfig:
    if label not in _DESIGNS:
        raise ValueError(f"unknown design {label!r}; expected one of {design_labels()}")
    return replace(cfg, marked_position=0, **_DESIGNS[label])


@dataclass(frozen=True)
class TrialMetrics:
    """Aggregated detection outcomes for one scenario run."""

    trials: int
    ue_count: int
    threshold: float
    detected: int
    missed: int
    missed_detection_rate: float
    false_alarms: int
    dummy_probes: int
    false_alarm_rate: float
    kf_errors: int
    kf_error_rate: float
    ki_errors: int
    ki_error_rate: float
    ta_errors_samples: np.ndarray
    ta_error_quantiles: dict


_symbol_cache: dict = {}


def _base_symbol(root: int, num: Numerology) -> np.ndarray:
    key = ("base", root, num)
    if key not in _symbol_cache:
        out = ofdm_modulate(zc_sequence(ZcSpec(root, num.n_zc)), num)
        out.setflags(write=False)
        _symbol_cache[key] = out
    return _symbol_cache[key]


def _scrambled_symbol(root: int, seed: int, num: Numerology) -> np.ndarray:
    key = ("scrambled", root, seed, num)
    if key not in _symbol_cache:
        out = ofdm_modulate(mseq_scramble(zc_sequence(ZcSpec(root, num.n_zc)), seed), num)
        out.setflags(write=False)
        _symbol_cache[key] = out
    return _symbol_cache[key]


def build_preamble_samples(fmt: PreambleFormat, num: Numerology) -> np.ndarray:
    """Time-domain preamble from cached per-root symbols.

    Produces exactly the samples of waveform.assemble_preamble; the cache
    only avoids re-modulating the same root in every trial.
    """
    base = _base_symbol(fmt.root_a, num)
    if fmt.option == "opt3":
        marked = _base_symbol(fmt.root_b, num)
    elif fmt.option == "opt2":
        marked = _scrambled_symbol(fmt.root_a, fmt.scramble_seed, num)
    else:
        marked = base
    out = np.tile(base, fmt.z_l)
    n = num.n_idft
    b = fmt.b_u
    out[(b - 1) * n : b * n] = fmt.amplitude_ratio * marked
    if fmt.zero_guard:
        out[(b - 2) * n : (b - 1) * n] = 0.0
        out[b * n : (b + 1) * n] = 0.0
    return out


def _per_ue_format(
    template: PreambleFormat, root_a: int, root_b: int, b_u: int
) -> PreambleFormat:
    return replace(template, root_a=root_a, root_b=root_b, b_u=b_u)


def _circular_gap(a: float, b: float, period: float) -> float:
    gap = abs(a - b) % period
    return min(gap, period - gap)


def run_scenario(
    cfg: ScenarioConfig, trial_offset: int = 0, collect_rows: bool = False
) -> tuple[TrialMetrics, list[dict]]:
    """Simulate loaded random-access slots and score every terminal.

    Each trial superposes ue_count preambles with distinct root pairs,
    uniform arrival offsets within the configured spread, a per-terminal
    residual CFO drawn uniformly within +-uplink_cfo_hz (each terminal's
    offset is its own oscillator error, so terminals never share one) and
    complex white noise, then probes each terminal's format plus
    dummy_probes unassigned formats. Per-trial draw order: root
    permutation, arrivals, marker positions, CFOs, noise. Scoring:

    - miss: not detected, or |TA error| above cp_miss_samples samples;
    - kf error: a miss, or the fractional estimate off by more than
      (ceil(n_idft / n_zc) + 1) samples around the symbol period (a missed
      or invalid pairing leaves no usable fractional estimate, so the
      fractional error rate is bounded below by the miss rate);
    - ki error: not detected, or the assembled timing off by more than half
      a symbol (an arrival just below a symbol boundary may round into
      (k_i + 1, 0) instead of (k_i, t_zc); the pair is equivalent, so the
      integer part is scored through the assembled timing);
    - false alarm: any dummy probe declared present.
    """
    num = cfg.numerology()
    template = cfg.base_format()
    g_l = cfg.arrival_window_symbols()
    slot_samples = template.slot_symbols(num) * num.n_idft
    sigma2 = cfg.noise_variance()
    opt3 = cfg.format_option == "opt3"

    threshold = DEFAULT_THRESHOLD
    if sigma2 > 0:
        cal_cfg = DetectorConfig(
            numerology=num,
            format=template,
            g_l=g_l,
            threshold=0.0,
            false_alarm_target=cfg.false_alarm_target,
            kf_accumulation=cfg.kf_accumulation,
        )
        cal_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _CAL_TAG)))
        threshold = calibrate_threshold(cal_cfg, sigma2, cfg.calibration_trials, cal_rng)

    pool_needed = 2 * (cfg.ue_count + cfg.dummy_probes)
    if pool_needed > num.n_zc - 1:
        raise ValueError("not enough distinct roots for the configured load")

    kf_tol = (math.ceil(num.n_idft / num.n_zc) + 1) * num.t_s
    b_lo, b_hi = (2, cfg.preamble_symbols - 1) if cfg.zero_guard else (1, cfg.preamble_symbols)
    draw_b = template.flexible_position and cfg.format_option != "opt1"

    detected = missed = kf_errors = ki_errors = false_alarms = 0
    ta_errors: list[float] = []
    rows: list[dict] = []
    ue_id = trial_offset * cfg.ue_count

    for t in range(cfg.trials):
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, _TRIAL_TAG, trial_offset + t))
        )
        perm = rng.permutation(num.n_zc - 1) + 1
        arrivals = rng.uniform(0.0, cfg.max_arrival_spread_s, cfg.ue_count)
        taus = np.ceil(arrivals / num.t_s).astype(int)
        if draw_b:
            b_draws = rng.integers(b_lo, b_hi + 1, cfg.ue_count)
        else:
            b_draws = np.full(cfg.ue_count, template.b_u)
        if cfg.uplink_cfo_hz > 0:
            cfo_norms = rng.uniform(-cfg.uplink_cfo_hz, cfg.uplink_cfo_hz, cfg.ue_count)
            cfo_norms /= cfg.scs_hz
        else:
            cfo_norms = np.zeros(cfg.ue_count)

        rx = np.zeros(slot_samples, dtype=complex)
        formats = []
        for u in range(cfg.ue_count):
            root_a = int(perm[2 * u])
            root_b = int(perm[2 * u + 1]) if opt3 else root_a
            fmt = _per_ue_format(template, root_a, root_b, int(b_draws[u]))
            formats.append(fmt)
            pre = build_preamble_samples(fmt, num)
            tau = int(taus[u])
            if cfo_norms[u] != 0.0:
                phase = cfo_norms[u] * (tau + np.arange(len(pre))) / num.n_idft
                pre = pre * np.exp(2j * np.pi * phase)
            rx[tau : tau + len(pre)] += pre
        if sigma2 > 0:
            scale = math.sqrt(sigma2 / 2.0)
            rx = rx + scale * (
                rng.standard_normal(slot_samples) + 1j * rng.standard_normal(slot_samples)
            )
        sig = TimeDomainSignal(rx, num.t_s)

        for u in range(cfg.ue_count):
            det_cfg = DetectorConfig(
                numerology=num,
                format=formats[u],
                g_l=g_l,
                threshold=threshold,
                false_alarm_target=cfg.false_alarm_target,
                kf_accumulation=cfg.kf_accumulation,
            )
            ta_true = taus[u] * num.t_s
            result = detect_preamble(sig, det_cfg, t_pre=0.0, ta_true=ta_true)
            reason = result.miss_reason
            err_samples = math.nan
            if result.detected:
                detected += 1
                err_samples = result.ta_error / num.t_s
                ta_errors.append(err_samples)
                valid = abs(err_samples) <= cfg.cp_miss_samples
                if not valid:
                    missed += 1
                    reason = "ta_error_exceeds_cp"
                kf_true = (taus[u] % num.n_idft) * num.t_s
                if not valid or _circular_gap(result.k_f_hat, kf_true, num.t_zc) > kf_tol:
                    kf_errors += 1
                if abs(err_samples) > num.n_idft / 2:
                    ki_errors += 1
            else:
                missed += 1
                kf_errors += 1
                ki_errors += 1
            if collect_rows:
                rows.append(
                    {
                        "ue_id": ue_id,
                        "detected": int(result.detected),
                        "k_f_s": result.k_f_hat,
                        "k_i": result.k_i_hat if result.k_i_hat is not None else "",
                        "j_star": result.j_star if result.j_star is not None else "",
                        "ta_true_s": ta_true,
                        "ta_hat_s": result.ta_hat if result.ta_hat is not None else "",
                        "err_samples": err_samples if not math.isnan(err_samples) else "",
                        "miss_reason": reason,
                    }
                )
            ue_id += 1

        for d in range(cfg.dummy_probes):
            root_a = int(perm[2 * cfg.ue_count + 2 * d])
            root_b = int(perm[2 * cfg.ue_count + 2 * d + 1]) if opt3 else root_a
            fmt = _per_ue_format(template, root_a, root_b, template.b_u)
            det_cfg = DetectorConfig(
                numerology=num,
                format=fmt,
                g_l=g_l,
                threshold=threshold,
                false_alarm_target=cfg.false_alarm_target,
                kf_accumulation=cfg.kf_accumulation,
            )
            if detect_preamble(sig, det_cfg).detected:
                false_alarms += 1

    total = cfg.trials * cfg.ue_count
    dummies = cfg.trials * cfg.dummy_probes
    errors = np.array(ta_errors)
    metrics = TrialMetrics(
        trials=cfg.trials,
        ue_count=cfg.ue_count,
        threshold=threshold,
        detected=detected,
        missed=missed,
        missed_detection_rate=missed / total if total else math.nan,
        false_alarms=false_alarms,
        dummy_probes=dummies,
        false_alarm_rate=false_alarms / dummies if dummies else math.nan,
        kf_errors=kf_errors,
        kf_error_rate=kf_errors / total if total else math.nan,
        ki_errors=ki_errors,
        ki_error_rate=ki_errors / total if total else math.nan,
        ta_errors_samples=errors,
        ta_error_quantiles=_abs_quantiles(errors),
    )
    return metrics, rows


def _abs_quantiles(errors: np.ndarray) -> dict:
    if len(errors) == 0:
        return {"p50": math.nan, "p90": math.nan, "p99": math.nan, "max": math.nan}
    mag = np.abs(errors)
    return {
        "p50": float(np.quantile(mag, 0.50)),
        "p90": float(np.quantile(mag, 0.90)),
        "p99": float(np.quantile(mag, 0.99)),
        "max": float(mag.max()),
    }


def run_format_comparison(
    cfg: ScenarioConfig, labels: list[str] | None = None
) -> dict[str, TrialMetrics]:
    """Run the same scenario under several format designs."""
    out = {}
    for label in labels or design_labels():
        metrics, _ = run_scenario(apply_design(cfg, label))
        out[label] = metrics
    return out


@dataclass(frozen=True)
class PrecompSummary:
    """Aggregated positioning and pre-compensation accuracy."""

    trials: int
    converged_rate: float
    pos_err_quantiles: dict
    ta_err_quantiles: dict
    f_up_err_quantiles: dict
    ta_within_rate: float
    f_up_within_rate: float
    ta_tolerance_s: float
    f_up_tolerance_hz: float


# Accuracy gates reported by the positioning study: the timing advance
# must land within the guard budget and the uplink CFO residual within the
# detector's tolerated offset.
TA_TOLERANCE_S = 1e-4
F_UP_TOLERANCE_HZ = 3.7e3

_PRECOMP_FIELDS = [
    "trial", "theta_hat", "phi_hat", "f_lo_hat", "pos_err_m",
    "ta_pre_err_s", "f_up_err_hz", "iters", "converged",
]


def run_precomp_study(cfg: ScenarioConfig, trials: int | None = None) -> tuple[PrecompSummary, list[dict]]:
    """Positioning accuracy over random terminals under one constellation.

    Per trial a terminal is drawn uniformly on the sphere (redrawn until
    satellites_used satellites sit within the elevation band), downlink
    CFOs are formed from true Doppler plus a shared LO offset and per
    satellite measurement errors, and the fit is scored against truth.

    The serving satellite is the strongest within the elevation band. The
    remaining satellites_used - 1 measurements are not simply the next
    strongest: with exactly three measurements the fit interpolates them,
    so measurement errors map into the estimate through the inverse
    Jacobian, and near-parallel satellite velocities leave an
    ill-conditioned row for the oscillator term. The terminal instead
    screens every candidate subset by the worst-case oscillator
    amplification predicted from broadcast ephemerides alone and keeps the
    best, mirroring dilution-of-precision satellite selection in
    navigation receivers.

    The iteration starts at the center of the camped beam with zero LO
    offset. A downlink-synchronized terminal always holds that prior, and
    it matters: with as many unknowns as measurements the fit has several
    exact roots, indistinguishable by residual, so a start farther away
    than the basin width (several hundred km for sub-satellite starts at
    low serving elevations) can converge hundreds of km from the truth.
    The beam center is within beam_radius_m of the terminal by
    construction, which keeps the iteration inside the correct basin.

    The reported uplink CFO error is twice the oscillator-estimate error,
    the exact residual left on the uplink carrier after the correction.
    Per-trial draw order: terminal redraw loop, LO offset, beam-center
    offset, measurement errors.
    """
    trials = cfg.trials if trials is None else trials
    states = generate_constellation(cfg.constellation())
    el_lo = math.radians(cfg.elevation_min_deg)
    el_hi = math.radians(cfg.elevation_max_deg)
    rows = []
    converged_count = 0
    pos_errs, ta_errs, f_up_errs = [], [], []
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _PRECOMP_TAG, t)))
        serving, pool, ue_ecef = _draw_terminal(states, rng, el_lo, el_hi, cfg.satellites_used)
        f_lo = rng.uniform(0.0, cfg.lo_offset_max_frac) * cfg.carrier_hz
        start = _beam_center_start(ue_ecef, rng, cfg.beam_radius_m)
        sats = _select_measured(serving, pool, start, cfg.satellites_used)
        errs = rng.uniform(-cfg.measurement_error_hz, cfg.measurement_error_hz, len(sats))
        meas = [
            DownlinkMeasurement(sat, doppler_shift(sat, ue_ecef) + f_lo + float(errs[i]))
            for i, sat in enumerate(sats)
        ]
        fit = solve_position(meas, SolverConfig(initial_estimate=start))
        pre = precompensate(fit, meas[0])
        ta_true = propagation_ta(sats[0].position, ue_ecef)
        pos_err = float(
            np.linalg.norm(pre.position.to_ecef().to_array() - ue_ecef.to_array())
        )
        ta_err = pre.t_pre - ta_true
        f_up_err = 2.0 * (f_lo - pre.f_lo_hat)
        converged_count += fit.converged
        pos_errs.append(pos_err)
        ta_errs.append(ta_err)
        f_up_errs.append(f_up_err)
        rows.append(
            {
                "trial": t,
                "theta_hat": fit.estimate.polar_angle,
                "phi_hat": fit.estimate.azimuth_angle,
                "f_lo_hat": fit.estimate.lo_offset,
                "pos_err_m": pos_err,
                "ta_pre_err_s": ta_err,
                "f_up_err_hz": f_up_err,
                "iters": fit.iterations_used,
                "converged": int(fit.converged),
            }
        )
    ta_arr, f_up_arr = np.array(ta_errs), np.array(f_up_errs)
    summary = PrecompSummary(
        trials=trials,
        converged_rate=converged_count / trials,
        pos_err_quantiles=_abs_quantiles(np.array(pos_errs)),
        ta_err_quantiles=_abs_quantiles(ta_arr),
        f_up_err_quantiles=_abs_quantiles(f_up_arr),
        ta_within_rate=float(np.mean(np.abs(ta_arr) <= TA_TOLERANCE_S)),
        f_up_within_rate=float(np.mean(np.abs(f_up_arr) < F_UP_TOLERANCE_HZ)),
        ta_tolerance_s=TA_TOLERANCE_S,
        f_up_tolerance_hz=F_UP_TOLERANCE_HZ,
    )
    return summary, rows


def _draw_terminal(
    states: list[SatelliteState],
    rng: np.random.Generator,
    el_lo: float,
    el_hi: float,
    count: int,
    max_attempts: int = 2000,
) -> tuple[SatelliteState, list[SatelliteState], EcefVector]:
    """Serving satellite, full visible pool and terminal position."""
    for _ in range(max_attempts):
        theta = rng.uniform(-math.pi, math.pi)
        phi = math.asin(rng.uniform(-1.0, 1.0))
        ue = UePosition(EARTH_RADIUS, theta, phi).to_ecef()
        vis = visible_satellites(states, ue, el_lo, el_hi)
        if len(vis) >= count:
            pool = [s for s, _ in visible_satellites(states, ue, el_lo)]
            return vis[0][0], pool, ue
    raise RuntimeError("could not draw a terminal with enough visible satellites")


def _beam_center_start(
    ue_ecef: EcefVector, rng: np.random.Generator, beam_radius: float
) -> EstimateVector:
    """Start of the fit: the camped beam's center, uniform over the beam disk."""
    p = ue_ecef.to_array()
    n = p / np.linalg.norm(p)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    r = beam_radius * math.sqrt(rng.uniform())
    ang = rng.uniform(0.0, 2.0 * math.pi)
    q = p + r * (math.cos(ang) * e1 + math.sin(ang) * e2)
    q *= EARTH_RADIUS / np.linalg.norm(q)
    return EstimateVector(math.atan2(q[1], q[0]), math.asin(q[2] / EARTH_RADIUS), 0.0)


def _select_measured(
    serving: SatelliteState,
    pool: list[SatelliteState],
    start: EstimateVector,
    count: int,
) -> list[SatelliteState]:
    """Serving plus the companions that least amplify the LO estimate.

    The oscillator row of the inverse Jacobian weights each measurement
    error's leak into the LO estimate, so its l1 norm bounds the
    worst-case LO error per unit of measurement error. All inputs are
    known to the terminal before transmitting.
    """
    others = [s for s in pool if s is not serving]
    if count - 1 > len(others):
        raise ValueError("not enough visible satellites for the requested count")
    best: tuple[SatelliteState, ...] | None = None
    best_cost = math.inf
    for group in combinations(others, count - 1):
        jac = cfo_jacobian(start, [serving, *group])
        try:
            cost = float(np.abs(np.linalg.inv(jac.T @ jac) @ jac.T)[2].sum())
        except np.linalg.LinAlgError:
            continue
        if cost < best_cost:
            best_cost, best = cost, group
    if best is None:
        raise RuntimeError("all measurement subsets were numerically singular")
    return [serving, *best]


def write_rows_csv(rows: list[dict], path, fieldnames: list[str] | None = None) -> None:
    if not rows:
        raise ValueError("no rows to write")
    names = fieldnames or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        w.writerows(rows)


def write_precomp_csv(rows: list[dict], path) -> None:
    write_rows_csv(rows, path, _PRECOMP_FIELDS)


def config_digest(cfg: ScenarioConfig) -> str:
    parts = [f"{f.name}={getattr(cfg, f.name)!r}" for f in fields(cfg)]
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def write_run_manifest(path, cfg: ScenarioConfig, command: str, extra: dict | None = None) -> None:
    """Record what produced a result directory: command, seed, config hash."""
    lines = {
        "command": command,
        "seed": cfg.seed,
        "trials": cfg.trials,
        "config_sha256": config_digest(cfg),
        "numpy": np.__version__,
    }
    if extra:
        lines.update(extra)
    with open(path, "w") as fh:
        for key, value in lines.items():
            fh.write(f"{key} = {value}\n")
