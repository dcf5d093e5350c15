"""Physical constants shared across the simulator (SI units)."""

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s
R_EARTH_M = 6_371_000.0  # spherical Earth
MU_EARTH = 3.986004418e14  # m^3/s^2
OMEGA_EARTH = 7.2921159e-5  # rad/s, sidereal rotation rate

UNMATCHED = -1  # virtual "no satellite" vertex


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))
