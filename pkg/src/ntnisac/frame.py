"""OFDMA budget of a system frame: communication, sensing and feedback."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .constants import SPEED_OF_LIGHT
from .orbits import OrbitalShell


def _exact(x) -> Fraction:
    # decimal reading of the float, so ceil(6400/6400) is not pushed to 2 by 0.01's binary error
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def _ceil(num, den) -> int:
    return math.ceil(_exact(num) / _exact(den))


@dataclass(frozen=True)
class FrameLayout:
    T_system_s: float
    T_ofdma_s: float
    n_total: int
    n_comm: int
    n_sens: int
    n_fb: int

    def __post_init__(self):
        if min(self.n_comm, self.n_sens, self.n_fb) < 0:
            raise ValueError(f"negative frame budget: {self}")
        if self.n_comm < 1:
            raise ValueError(
                f"sensing ({self.n_sens}) and feedback ({self.n_fb}) leave no communication "
                f"frames out of {self.n_total}"
            )
        if self.n_comm + self.n_sens + self.n_fb != self.n_total:
            raise ValueError("N_T != N_C + N_S + N_FB")


def build_layout(n_total: int, T_ofdma_s: float, n_sens: int = 0, n_fb: int = 0) -> FrameLayout:
    return FrameLayout(
        T_system_s=n_total * T_ofdma_s,
        T_ofdma_s=T_ofdma_s,
        n_total=n_total,
        n_comm=n_total - n_sens - n_fb,
        n_sens=n_sens,
        n_fb=n_fb,
    )


def pilot_symbol_durations(pilot_length: int, shell: OrbitalShell) -> int:
    """ceil(L_p * symbol_bandwidth / bandwidth)."""
    if not shell.sensing_enabled:
        raise ValueError(f"shell {shell.shell_id} does not take part in sensing")
    return _ceil(_exact(pilot_length) * _exact(shell.symbol_bandwidth_hz), shell.bandwidth_hz)


def pilot_duration(pilot_length: int, shell: OrbitalShell) -> float:
    return pilot_symbol_durations(pilot_length, shell) * shell.symbol_duration_s


def sensing_time(n_cells: int, d_max_m: float, beams: int, pilot_duration_s: float) -> float:
    """Propagation once, then one pilot per cell hopping over the beams."""
    if beams < 1:
        raise ValueError("beams must be >= 1")
    return d_max_m / SPEED_OF_LIGHT + math.ceil(n_cells / beams) * pilot_duration_s


def sensing_frames(sensing_times_s, T_ofdma_s: float) -> int:
    """N_S: OFDMA frames that cover the slowest sensing satellite (0 if none)."""
    return max((_ceil(t, T_ofdma_s) for t in sensing_times_s), default=0)


def feedback_frames(tuple_bits: int, list_length: int, rate_bps: float, T_ofdma_s: float) -> int:
    if rate_bps <= 0:
        raise ValueError("feedback rate must be > 0")
    return _ceil(_exact(tuple_bits) * list_length, _exact(rate_bps) * _exact(T_ofdma_s))
