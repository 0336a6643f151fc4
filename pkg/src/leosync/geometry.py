"""Constellation geometry: orbits, visibility, Doppler, and propagation timing.

All positions and velocities are Cartesian ECEF in meters and meters per
second. The Earth is modeled as a sphere and, by default, non-rotating, so
ECEF coincides with the inertial frame; a rotation rate can be supplied for
sensitivity studies. Users on the ground are addressed by spherical angles
(azimuth theta, elevation-like latitude phi) on the sphere of radius
EARTH_RADIUS.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
EARTH_RADIUS = 6_371_000.0
EARTH_MU = 3.986004418e14

# Plausibility caps used when validating satellite states.
_MAX_ORBITAL_SPEED = 1.0e4


class GeometryError(ValueError):
    """Raised for degenerate geometric configurations."""


@dataclass(frozen=True)
class EcefVector:
    """Cartesian position or velocity in the Earth-fixed frame."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("EcefVector components must be finite")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a: np.ndarray) -> "EcefVector":
        return EcefVector(float(a[0]), float(a[1]), float(a[2]))

    def norm(self) -> float:
        return math.hypot(self.x, self.y, self.z)


@dataclass(frozen=True)
class UePosition:
    """Ground terminal position in spherical coordinates.

    polar_angle is the azimuth around +z measured from +x in radians,
    azimuth_angle the latitude-like angle from the equatorial plane. The
    names follow the estimator's unknown vector ordering (theta, phi).
    """

    radius: float
    polar_angle: float
    azimuth_angle: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not -math.pi / 2 <= self.azimuth_angle <= math.pi / 2:
            raise ValueError("azimuth_angle must lie in [-pi/2, pi/2]")

    def to_ecef(self) -> EcefVector:
        return spherical_to_ecef(self.radius, self.polar_angle, self.azimuth_angle)


@dataclass(frozen=True)
class SatelliteState:
    """Instantaneous satellite position, velocity, and carrier frequency."""

    position: EcefVector
    velocity: EcefVector
    carrier_frequency: float
    satellite_id: int = 0

    def __post_init__(self) -> None:
        if self.position.norm() <= EARTH_RADIUS:
            raise ValueError("satellite position must be above the Earth surface")
        if self.velocity.norm() >= _MAX_ORBITAL_SPEED:
            raise ValueError("satellite speed exceeds plausible orbital speed")
        if self.carrier_frequency <= 0:
            raise ValueError("carrier_frequency must be positive")


@dataclass(frozen=True)
class ConstellationConfig:
    """Walker-style constellation layout parameters."""

    orbit_count: int
    satellites_per_orbit: int
    altitude: float
    inclination: float
    carrier_frequency: float
    earth_radius: float = EARTH_RADIUS
    earth_rotation: float = 0.0
    # Inter-plane anomaly phasing factor (Walker notation F).
    phasing_factor: int = 1

    def __post_init__(self) -> None:
        if self.orbit_count < 1 or self.satellites_per_orbit < 1:
            raise ValueError("orbit_count and satellites_per_orbit must be >= 1")
        if self.altitude <= 0:
            raise ValueError("altitude must be positive")
        if not 0 <= self.inclination <= math.pi:
            raise ValueError("inclination must lie in [0, pi]")


def spherical_to_ecef(radius: float, theta: float, phi: float) -> EcefVector:
    """Map spherical angles to Cartesian coordinates.

    x = r cos(theta) cos(phi), y = r sin(theta) cos(phi), z = r sin(phi).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    return EcefVector(
        radius * math.cos(theta) * math.cos(phi),
        radius * math.sin(theta) * math.cos(phi),
        radius * math.sin(phi),
    )


def ecef_to_spherical(p: EcefVector) -> tuple[float, float, float]:
    """Inverse of spherical_to_ecef: returns (radius, theta, phi)."""
    r = p.norm()
    if r == 0:
        raise GeometryError("cannot convert the origin to spherical angles")
    return r, math.atan2(p.y, p.x), math.asin(p.z / r)


def doppler_shift(sat: SatelliteState, ue: EcefVector) -> float:
    """Carrier frequency shift seen at the terminal.

    Computed as f * v . (p_s - p_u) / (c * |p_s - p_u|); the sign convention
    is positive when the satellite velocity has a component along the
    satellite-minus-user direction.

    Raises GeometryError when the separation is degenerate (< 1 m).
    """
    delta = sat.position.to_array() - ue.to_array()
    dist = float(np.linalg.norm(delta))
    if dist < 1.0:
        raise GeometryError("satellite and terminal positions nearly coincide")
    radial = float(sat.velocity.to_array() @ delta)
    return sat.carrier_frequency * radial / (SPEED_OF_LIGHT * dist)


def propagation_ta(sat_pos: EcefVector, ue_pos: EcefVector) -> float:
    """Round-trip timing advance 2 d / c for the given endpoints, in seconds."""
    d = float(np.linalg.norm(sat_pos.to_array() - ue_pos.to_array()))
    return 2.0 * d / SPEED_OF_LIGHT


def differential_ta(t_max: float, t_min: float) -> float:
    """Spread of round-trip delays across a beam: T_max - T_min.

    The common part T_min is assumed known and compensated; only the
    differential part must be absorbed by the preamble design.
    """
    if t_max < t_min:
        raise ValueError("t_max must be >= t_min")
    return t_max - t_min


def elevation_angle(sat_pos: EcefVector, ue_pos: EcefVector) -> float:
    """Elevation of the satellite above the terminal's local horizon, radians."""
    u = ue_pos.to_array()
    d = sat_pos.to_array() - u
    un = np.linalg.norm(u)
    dn = np.linalg.norm(d)
    if un == 0 or dn == 0:
        raise GeometryError("degenerate geometry for elevation computation")
    s = float(u @ d / (un * dn))
    return math.asin(max(-1.0, min(1.0, s)))


def generate_constellation(cfg: ConstellationConfig, epoch: float = 0.0) -> list[SatelliteState]:
    """Generate circular-orbit satellite states on a Walker grid.

    Planes are spaced evenly in right ascension over the full circle, each
    holding satellites_per_orbit evenly spaced satellites; adjacent planes
    are phase-shifted by phasing_factor slots of the total-count grid. All
    orbits are circular at the configured altitude, so the speed follows
    from sqrt(mu / (R + h)). With earth_rotation nonzero, states are rotated
    into the Earth-fixed frame at the given epoch.

    Args:
        cfg: constellation layout.
        epoch: time since the reference epoch, seconds.

    Returns:
        One SatelliteState per satellite, ids numbered plane-major.
    """
    r_orbit = cfg.earth_radius + cfg.altitude
    speed = math.sqrt(EARTH_MU / r_orbit)
    n_rate = speed / r_orbit
    total = cfg.orbit_count * cfg.satellites_per_orbit
    states: list[SatelliteState] = []
    for plane in range(cfg.orbit_count):
        raan = 2.0 * math.pi * plane / cfg.orbit_count
        cos_o, sin_o = math.cos(raan), math.sin(raan)
        cos_i, sin_i = math.cos(cfg.inclination), math.sin(cfg.inclination)
        for slot in range(cfg.satellites_per_orbit):
            u = (
                2.0 * math.pi * slot / cfg.satellites_per_orbit
                + 2.0 * math.pi * cfg.phasing_factor * plane / total
                + n_rate * epoch
            )
            # In-plane basis rotated by RAAN about z then inclination about x.
            p_orb = np.array([math.cos(u), math.sin(u), 0.0]) * r_orbit
            v_orb = np.array([-math.sin(u), math.cos(u), 0.0]) * speed
            rot = np.array(
                [
                    [cos_o, -sin_o * cos_i, sin_o * sin_i],
                    [sin_o, cos_o * cos_i, -cos_o * sin_i],
                    [0.0, sin_i, cos_i],
                ]
            )
            p = rot @ p_orb
            v = rot @ v_orb
            if cfg.earth_rotation != 0.0:
                ang = -cfg.earth_rotation * epoch
                ca, sa = math.cos(ang), math.sin(ang)
                rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
                p = rz @ p
                # Frame rotation adds -omega x r to the inertial velocity.
                v = rz @ v - np.cross([0.0, 0.0, cfg.earth_rotation], p)
            states.append(
                SatelliteState(
                    position=EcefVector.from_array(p),
                    velocity=EcefVector.from_array(v),
                    carrier_frequency=cfg.carrier_frequency,
                    satellite_id=plane * cfg.satellites_per_orbit + slot,
                )
            )
    return states


def visible_satellites(
    states: list[SatelliteState],
    ue: EcefVector,
    min_elevation: float,
    max_elevation: float = math.pi / 2,
) -> list[tuple[SatelliteState, float]]:
    """Satellites whose elevation lies in [min_elevation, max_elevation].

    Returns (state, elevation) pairs sorted by elevation, highest first.
    """
    out = []
    for s in states:
        el = elevation_angle(s.position, ue)
        if min_elevation <= el <= max_elevation:
            out.append((s, el))
    out.sort(key=lambda t: t[1], reverse=True)
    return out


_EPHEMERIS_FIELDS = ["sat_id", "t", "x", "y", "z", "vx", "vy", "vz", "f_carrier"]


def save_ephemeris(states: list[SatelliteState], t: float, path: str | Path) -> None:
    """Write satellite states to CSV with columns sat_id,t,x,y,z,vx,vy,vz,f_carrier."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_EPHEMERIS_FIELDS)
        for s in states:
            p, v = s.position, s.velocity
            w.writerow([s.satellite_id, repr(t), repr(p.x), repr(p.y), repr(p.z),
                        repr(v.x), repr(v.y), repr(v.z), repr(s.carrier_frequency)])


def load_ephemeris(path: str | Path) -> tuple[list[SatelliteState], float]:
    """Read states written by save_ephemeris. Returns (states, t)."""
    states: list[SatelliteState] = []
    t = 0.0
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != _EPHEMERIS_FIELDS:
            raise ValueError(f"unexpected ephemeris header: {r.fieldnames}")
        for row in r:
            t = float(row["t"])
            states.append(
                SatelliteState(
                    position=EcefVector(float(row["x"]), float(row["y"]), float(row["z"])),
                    velocity=EcefVector(float(row["vx"]), float(row["vy"]), float(row["vz"])),
                    carrier_frequency=float(row["f_carrier"]),
                    satellite_id=int(row["sat_id"]),
                )
            )
    return states, t
