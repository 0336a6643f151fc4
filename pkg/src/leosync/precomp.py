"""Doppler-based self-positioning and uplink pre-compensation.

A terminal measures the downlink CFO of several satellites with known
ephemerides. Each measurement mixes the geometric Doppler shift with the
terminal's own oscillator offset, so position angles and the oscillator
offset are estimated jointly: three unknowns (polar angle, azimuth angle,
LO offset) fitted to the measured shifts by Gauss-Newton with an analytic
Jacobian. The fix yields the propagation delay toward the serving
satellite and the uplink carrier correction f_up = f_down - 2 f_lo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    EARTH_RADIUS,
    SPEED_OF_LIGHT,
    EcefVector,
    SatelliteState,
    UePosition,
    doppler_shift,
    spherical_to_ecef,
)


@dataclass(frozen=True)
class DownlinkMeasurement:
    """Measured downlink CFO against one satellite's broadcast ephemeris."""

    satellite: SatelliteState
    measured_cfo: float


@dataclass(frozen=True)
class EstimateVector:
    """Solver state: terminal angles on the Earth sphere plus LO offset."""

    polar_angle: float
    azimuth_angle: float
    lo_offset: float

    def to_array(self) -> np.ndarray:
        return np.array([self.polar_angle, self.azimuth_angle, self.lo_offset])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "EstimateVector":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls for the positioning fit."""

    max_iterations: int = 50
    step_threshold: float = 1e-9
    condition_limit: float = 1e12
    damping_seed: float = 1e-6
    initial_estimate: EstimateVector | None = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.step_threshold <= 0 or self.damping_seed <= 0:
            raise ValueError("step_threshold and damping_seed must be positive")


@dataclass(frozen=True)
class SolveResult:
    """Converged (or truncated) positioning estimate."""

    estimate: EstimateVector
    iterations_used: int
    converged: bool
    residual_norm: float


@dataclass(frozen=True)
class PrecompResult:
    """Timing and frequency corrections derived from a position fix."""

    position: UePosition
    t_pre: float
    f_up: float
    f_lo_hat: float
    iterations_used: int
    converged: bool


# Frequency steps are measured in kHz when mixed with angle steps in rad,
# keeping the three step components comparable in magnitude.
_FREQ_STEP_SCALE = 1e-3


def predicted_downlink_cfo(
    est: EstimateVector, sat: SatelliteState, earth_radius: float = EARTH_RADIUS
) -> float:
    """Forward model: geometric Doppler at the estimated position + LO offset."""
    ue = spherical_to_ecef(earth_radius, est.polar_angle, est.azimuth_angle)
    return doppler_shift(sat, ue) + est.lo_offset


def cfo_jacobian(
    est: EstimateVector,
    sats: list[SatelliteState],
    earth_radius: float = EARTH_RADIUS,
) -> np.ndarray:
    """Analytic Jacobian of the predicted CFO vector in (theta, phi, f_lo).

    The terminal stays on the sphere of radius earth_radius, so position
    partials follow from differentiating the spherical parameterization;
    the range partial drops the |p_u| term because the radius is fixed.
    """
    theta, phi = est.polar_angle, est.azimuth_angle
    ue = spherical_to_ecef(earth_radius, theta, phi).to_array()
    d_theta = np.array([-ue[1], ue[0], 0.0])
    d_phi = np.array(
        [
            -earth_radius * math.cos(theta) * math.sin(phi),
            -earth_radius * math.sin(theta) * math.sin(phi),
            earth_radius * math.cos(phi),
        ]
    )
    rows = np.empty((len(sats), 3))
    for i, sat in enumerate(sats):
        p_s = sat.position.to_array()
        v = sat.velocity.to_array()
        delta = p_s - ue
        dist = float(np.linalg.norm(delta))
        if dist == 0.0:
            raise ValueError("satellite coincides with the estimated position")
        radial = float(v @ delta)
        scale = sat.carrier_frequency / SPEED_OF_LIGHT
        for col, dp in ((0, d_theta), (1, d_phi)):
            d_radial = float(-v @ dp)
            d_dist = float(-p_s @ dp) / dist
            rows[i, col] = scale * (d_radial * dist - radial * d_dist) / dist**2
        rows[i, 2] = 1.0
    return rows


def solve_position(
    measurements: list[DownlinkMeasurement],
    cfg: SolverConfig | None = None,
    earth_radius: float = EARTH_RADIUS,
) -> SolveResult:
    """Fit terminal angles and LO offset to measured downlink CFOs.

    Gauss-Newton on the normal equations, with multiplicative damping when
    the system is ill-conditioned or a step increases the residual. The
    default start is the sub-satellite point of the first measurement
    (callers order measurements strongest elevation first) with zero LO
    offset. Convergence is declared when the scaled step norm (angles in
    rad, frequency in kHz) drops to step_threshold.
    """
    if len(measurements) < 3:
        raise ValueError("at least three measurements are needed for three unknowns")
    cfg = cfg or SolverConfig()
    sats = [m.satellite for m in measurements]
    f_meas = np.array([m.measured_cfo for m in measurements])
    mu = (cfg.initial_estimate or _subsatellite_start(sats[0])).to_array()
    scale = np.array([1.0, 1.0, _FREQ_STEP_SCALE])

    def residual(vec: np.ndarray) -> np.ndarray:
        est = EstimateVector.from_array(vec)
        return f_meas - np.array([predicted_downlink_cfo(est, s, earth_radius) for s in sats])

    res = residual(mu)
    cost = float(res @ res)
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        jac = cfo_jacobian(EstimateVector.from_array(mu), sats, earth_radius)
        jtj = jac.T @ jac
        jtr = jac.T @ res
        lam = cfg.damping_seed if np.linalg.cond(jtj) > cfg.condition_limit else 0.0
        step = None
        for _ in range(16):
            try:
                trial_step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), jtr)
            except np.linalg.LinAlgError:
                lam = max(lam, cfg.damping_seed) * 10.0
                continue
            trial = mu + trial_step
            trial_res = residual(trial)
            trial_cost = float(trial_res @ trial_res)
            if trial_cost <= cost or lam > 1e6:
                step, res, cost, mu = trial_step, trial_res, trial_cost, trial
                break
            lam = max(lam, cfg.damping_seed) * 10.0
        if step is None:
            break
        if float(np.linalg.norm(step * scale)) <= cfg.step_threshold:
            converged = True
            break
    return SolveResult(
        estimate=EstimateVector.from_array(mu),
        iterations_used=iterations,
        converged=converged,
        residual_norm=math.sqrt(cost),
    )


def _subsatellite_start(sat: SatelliteState) -> EstimateVector:
    x, y, z = sat.position.to_array()
    theta = math.atan2(y, x)
    phi = math.asin(z / sat.position.norm())
    return EstimateVector(theta, phi, 0.0)


def precompensate(
    result: SolveResult,
    serving: DownlinkMeasurement,
    earth_radius: float = EARTH_RADIUS,
) -> PrecompResult:
    """Turn a position fix into uplink timing and frequency corrections.

    The timing advance is the round-trip delay toward the serving
    satellite at the estimated position; the uplink carrier is corrected
    by the measured downlink CFO minus twice the LO estimate, so a
    residual LO error of df leaves exactly 2 df on the uplink.
    """
    est = result.estimate
    pos = UePosition(earth_radius, est.polar_angle, est.azimuth_angle)
    ue = pos.to_ecef().to_array()
    dist = float(np.linalg.norm(serving.satellite.position.to_array() - ue))
    return PrecompResult(
        position=pos,
        t_pre=2.0 * dist / SPEED_OF_LIGHT,
        f_up=serving.measured_cfo - 2.0 * est.lo_offset,
        f_lo_hat=est.lo_offset,
        iterations_used=result.iterations_used,
        converged=result.converged,
    )


def cfo_error_prediction(
    pos_error: EcefVector,
    sat: SatelliteState,
    ue: EcefVector,
    ta_error: float,
) -> float:
    """Downlink CFO perturbation from a position error and a timing error.

    First term: the Doppler gradient along the position error, evaluated at
    the range inflated by half the timing error's light distance. Second
    term: the Doppler drift accrued while the measurement is mistimed,
    which vanishes as ta_error goes to zero.
    """
    p_s = sat.position.to_array()
    delta = p_s - ue.to_array()
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        raise ValueError("satellite coincides with the terminal")
    v_dot = float(sat.velocity.to_array() @ pos_error.to_array())
    scale = sat.carrier_frequency / SPEED_OF_LIGHT
    first = scale * v_dot / (dist + SPEED_OF_LIGHT * ta_error / 2.0)
    if ta_error == 0.0:
        second = 0.0
    else:
        second = doppler_shift(sat, ue) / (1.0 + 2.0 * dist / (SPEED_OF_LIGHT * ta_error))
    return first + second
