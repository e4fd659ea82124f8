"""Hardware and logical clock models.

A hardware clock is a free-running oscillator with a constant drift and a
power-on offset, read out in whole microseconds. A logical clock is derived
from it through a tunable rate multiplier and offset corrections; it is the
time a node exposes after synchronization.

Both types are immutable values. Updates return new instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

GRANULARITY_US = 1


class ClockError(ValueError):
    """Raised on an invalid clock operation (backwards read, bad rate)."""


@dataclass(frozen=True, slots=True)
class HardwareClock:
    rate_ppm: float = 0.0
    boot_offset_us: float = 0.0
    granularity_us: int = GRANULARITY_US

    @property
    def rate(self) -> float:
        """Clock speed relative to true time (1.0 is nominal)."""
        return 1.0 + self.rate_ppm / 1e6

    def exact(self, true_time_us: float) -> float:
        # Unquantized value; the simulator uses it for ground truth only.
        return true_time_us + true_time_us * self.rate_ppm / 1e6 + self.boot_offset_us


@dataclass(frozen=True, slots=True)
class LogicalClock:
    phi: float = 1.0
    anchor_hw_us: int = 0
    anchor_logical_us: float = 0.0

    def __post_init__(self) -> None:
        if not self.phi > 0:
            raise ClockError(f"rate multiplier must be positive, got {self.phi}")

    def exact(self, hw_now_us: float) -> float:
        return self.anchor_logical_us + self.phi * (hw_now_us - self.anchor_hw_us)


def hardware_read(clock: HardwareClock, true_time_us: float) -> int:
    """Read ``clock`` at ``true_time_us``, quantized down to its granularity."""
    if true_time_us < 0:
        raise ClockError(f"true time must be non-negative, got {true_time_us}")
    g = clock.granularity_us
    return int(math.floor(clock.exact(true_time_us) / g)) * g


def logical_read(lc: LogicalClock, hw_now_us: int) -> int:
    """Integer logical time for a hardware reading taken after the last anchor."""
    if hw_now_us < lc.anchor_hw_us:
        raise ClockError(
            f"hardware reading {hw_now_us} precedes logical anchor {lc.anchor_hw_us}"
        )
    return int(math.floor(lc.exact(hw_now_us)))


def apply_update(
    lc: LogicalClock, hw_now_us: int, new_phi: float, offset_correction_us: float
) -> LogicalClock:
    """Re-anchor ``lc`` at ``hw_now_us``.

    The logical value jumps by ``offset_correction_us`` at ``hw_now_us`` and
    advances at ``new_phi`` per hardware microsecond afterwards. Negative
    corrections are allowed, so logical time may step backwards.
    """
    if not new_phi > 0:
        raise ClockError(f"rate multiplier must be positive, got {new_phi}")
    if hw_now_us < lc.anchor_hw_us:
        raise ClockError(
            f"hardware reading {hw_now_us} precedes logical anchor {lc.anchor_hw_us}"
        )
    if offset_correction_us == 0 and new_phi == lc.phi:
        return lc
    return LogicalClock(
        phi=new_phi,
        anchor_hw_us=hw_now_us,
        anchor_logical_us=lc.exact(hw_now_us) + offset_correction_us,
    )
