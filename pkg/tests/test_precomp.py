"""Doppler positioning solver checks: forward model, Jacobian, recovery."""

import math

import numpy as np
import pytest

from leosync.geometry import (
    EARTH_RADIUS,
    SPEED_OF_LIGHT,
    EcefVector,
    SatelliteState,
    doppler_shift,
    propagation_ta,
    spherical_to_ecef,
)
from leosync.precomp import (
    DownlinkMeasurement,
    EstimateVector,
    SolverConfig,
    cfo_error_prediction,
    cfo_jacobian,
    precompensate,
    predicted_downlink_cfo,
    solve_position,
)


def make_sat(rng, theta, phi, alt=1_000_000.0, carrier=27e9) -> SatelliteState:
    pos = spherical_to_ecef(EARTH_RADIUS + alt, theta, phi)
    v = rng.standard_normal(3)
    p = pos.to_array()
    v -= (v @ p) / (p @ p) * p
    v *= 7350.0 / np.linalg.norm(v)
    return SatelliteState(pos, EcefVector(*v), carrier)


def scene(rng, count=3, spread=0.12):
    theta = rng.uniform(-math.pi, math.pi)
    phi = math.asin(rng.uniform(-0.8, 0.8))
    truth = EstimateVector(theta, phi, rng.uniform(0.0, 13.5e3))
    sats = [
        make_sat(rng, theta + rng.uniform(-spread, spread), phi + rng.uniform(-spread, spread))
        for _ in range(count)
    ]
    return truth, sats


def exact_measurements(truth, sats, errors=None):
    ue = spherical_to_ecef(EARTH_RADIUS, truth.polar_angle, truth.azimuth_angle)
    out = []
    for i, sat in enumerate(sats):
        cfo = doppler_shift(sat, ue) + truth.lo_offset
        if errors is not None:
            cfo += errors[i]
        out.append(DownlinkMeasurement(sat, cfo))
    return out


def test_forward_model_zero_case():
    sat = SatelliteState(
        EcefVector(EARTH_RADIUS + 1e6, 0.0, 0.0), EcefVector(0.0, 7350.0, 0.0), 27e9
    )
    est = EstimateVector(0.0, 0.0, 0.0)
    assert predicted_downlink_cfo(est, sat) == 0.0


def test_forward_model_matches_geometry_oracle():
    rng = np.random.default_rng(4)
    for _ in range(25):
        truth, sats = scene(rng)
        ue = spherical_to_ecef(EARTH_RADIUS, truth.polar_angle, truth.azimuth_angle)
        for sat in sats:
            expected = doppler_shift(sat, ue) + truth.lo_offset
            assert predicted_downlink_cfo(truth, sat) == pytest.approx(expected, rel=1e-12)


def test_estimate_vector_array_round_trip():
    est = EstimateVector(0.4, -0.2, 912.5)
    assert EstimateVector.from_array(est.to_array()) == est


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(9)
    step = 1e-7
    for _ in range(10):
        truth, sats = scene(rng)
        jac = cfo_jacobian(truth, sats)
        assert jac.shape == (3, 3)
        np.testing.assert_array_equal(jac[:, 2], 1.0)
        for col, bump in ((0, (step, 0.0, 0.0)), (1, (0.0, step, 0.0))):
            hi = EstimateVector.from_array(truth.to_array() + bump)
            lo = EstimateVector.from_array(truth.to_array() - bump)
            for row, sat in enumerate(sats):
                fd = (predicted_downlink_cfo(hi, sat) - predicted_downlink_cfo(lo, sat)) / (2 * step)
                assert jac[row, col] == pytest.approx(fd, rel=1e-4)


def test_jacobian_full_rank_generic_scene():
    rng = np.random.default_rng(13)
    truth, sats = scene(rng)
    assert np.linalg.matrix_rank(cfo_jacobian(truth, sats)) == 3


def test_noiseless_start_at_truth_is_fixed_point():
    rng = np.random.default_rng(21)
    truth, sats = scene(rng)
    fit = solve_position(exact_measurements(truth, sats), SolverConfig(initial_estimate=truth))
    assert fit.converged
    assert fit.iterations_used <= 2
    assert fit.residual_norm < 1e-6
    assert fit.estimate.polar_angle == pytest.approx(truth.polar_angle, abs=1e-9)
    assert fit.estimate.azimuth_angle == pytest.approx(truth.azimuth_angle, abs=1e-9)


def test_noiseless_recovery_from_perturbed_start():
    rng = np.random.default_rng(33)
    for _ in range(8):
        truth, sats = scene(rng)
        start = EstimateVector(
            truth.polar_angle + rng.uniform(-0.01, 0.01),
            truth.azimuth_angle + rng.uniform(-0.01, 0.01),
            0.0,
        )
        fit = solve_position(exact_measurements(truth, sats), SolverConfig(initial_estimate=start))
        assert fit.converged
        assert fit.estimate.polar_angle == pytest.approx(truth.polar_angle, abs=1e-6)
        assert fit.estimate.azimuth_angle == pytest.approx(truth.azimuth_angle, abs=1e-6)
        assert fit.estimate.lo_offset == pytest.approx(truth.lo_offset, abs=1.0)


def test_solver_never_worsens_the_start_residual():
    rng = np.random.default_rng(41)
    for _ in range(8):
        truth, sats = scene(rng)
        errs = rng.uniform(-1200.0, 1200.0, len(sats))
        meas = exact_measurements(truth, sats, errs)
        start = EstimateVector(truth.polar_angle + 0.005, truth.azimuth_angle - 0.005, 0.0)
        fit = solve_position(meas, SolverConfig(initial_estimate=start))
        start_res = math.hypot(
            *[predicted_downlink_cfo(start, m.satellite) - m.measured_cfo for m in meas]
        )
        assert fit.residual_norm <= start_res + 1e-9


def test_solver_requires_enough_measurements():
    rng = np.random.default_rng(55)
    truth, sats = scene(rng)
    with pytest.raises(ValueError):
        solve_position(exact_measurements(truth, sats[:2]), SolverConfig(initial_estimate=truth))


def test_accuracy_improves_with_more_measurements():
    # Same scene, same error scale: averaging over more satellites shrinks
    # the oscillator-estimate error in expectation.
    rng = np.random.default_rng(77)
    truth, sats = scene(rng, count=8, spread=0.25)
    start = EstimateVector(truth.polar_angle + 0.003, truth.azimuth_angle - 0.003, 0.0)
    mean_err = {}
    for count in (3, 5, 8):
        errs = []
        for _ in range(150):
            noise = rng.uniform(-1200.0, 1200.0, count)
            meas = exact_measurements(truth, sats[:count], noise)
            fit = solve_position(meas, SolverConfig(initial_estimate=start))
            errs.append(abs(fit.estimate.lo_offset - truth.lo_offset))
        mean_err[count] = float(np.mean(errs))
    assert mean_err[3] > mean_err[5] > mean_err[8]


def test_precompensate_geometry_and_exact_cfo_identity():
    rng = np.random.default_rng(91)
    truth, sats = scene(rng)
    f_lo_true = truth.lo_offset
    meas = exact_measurements(truth, sats, rng.uniform(-1200.0, 1200.0, 3))
    fit = solve_position(
        meas,
        SolverConfig(
            initial_estimate=EstimateVector(truth.polar_angle, truth.azimuth_angle, 0.0)
        ),
    )
    pre = precompensate(fit, meas[0])
    est_ecef = spherical_to_ecef(
        EARTH_RADIUS, fit.estimate.polar_angle, fit.estimate.azimuth_angle
    )
    assert pre.t_pre == pytest.approx(propagation_ta(sats[0].position, est_ecef), rel=1e-12)
    # The uplink correction residual is exactly twice the oscillator error.
    f_up_true = meas[0].measured_cfo - 2.0 * f_lo_true
    assert pre.f_up - f_up_true == pytest.approx(2.0 * (f_lo_true - pre.f_lo_hat), abs=1e-9)


def test_cfo_error_prediction_zero_case():
    rng = np.random.default_rng(3)
    _, sats = scene(rng)
    ue = spherical_to_ecef(EARTH_RADIUS, 0.2, 0.1)
    assert cfo_error_prediction(EcefVector(0.0, 0.0, 0.0), sats[0], ue, 0.0) == 0.0


def test_cfo_error_prediction_exact_difference():
    # With the timing error induced by the position error, the prediction
    # reproduces the direct Doppler difference (well under the 5% budget).
    rng = np.random.default_rng(17)
    for _ in range(40):
        truth, sats = scene(rng)
        sat = sats[0]
        ue = spherical_to_ecef(EARTH_RADIUS, truth.polar_angle, truth.azimuth_angle)
        e = rng.standard_normal(3)
        e *= rng.uniform(1.0, 5000.0) / np.linalg.norm(e)
        pert = EcefVector(*(ue.to_array() + e))
        d_true = np.linalg.norm(sat.position.to_array() - ue.to_array())
        d_hat = np.linalg.norm(sat.position.to_array() - pert.to_array())
        ta_err = 2.0 * (d_hat - d_true) / SPEED_OF_LIGHT
        direct = doppler_shift(sat, ue) - doppler_shift(sat, pert)
        pred = cfo_error_prediction(EcefVector(*e), sat, ue, ta_err)
        assert pred == pytest.approx(direct, rel=0.05, abs=1e-6)


def test_cfo_error_prediction_timing_term_small_and_linear():
    rng = np.random.default_rng(29)
    truth, sats = scene(rng)
    sat = sats[0]
    ue = spherical_to_ecef(EARTH_RADIUS, truth.polar_angle, truth.azimuth_angle)
    e = EcefVector(30.0, -40.0, 50.0)
    without = cfo_error_prediction(e, sat, ue, 0.0)
    d = np.linalg.norm(sat.position.to_array() - ue.to_array())
    diffs = []
    for ta_err in (1e-7, 1e-8):  # far below the ~4 ms one-way delay
        with_timing = cfo_error_prediction(e, sat, ue, ta_err)
        second = doppler_shift(sat, ue) / (1.0 + 2.0 * d / (SPEED_OF_LIGHT * ta_err))
        assert abs(second) < 1e-4 * abs(doppler_shift(sat, ue))
        # the perturbation is the drift term plus a far smaller range
        # inflation of the gradient term
        assert with_timing - without == pytest.approx(second, rel=1e-2)
        diffs.append(with_timing - without)
    assert diffs[1] == pytest.approx(diffs[0] / 10.0, rel=1e-2)
