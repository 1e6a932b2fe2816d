"""System-level dimensional and physical constants."""

from __future__ import annotations

from dataclasses import dataclass, field

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class SystemConfig:
    """Physical setup of the lens-array OFDM link.

    n          antennas at the base station
    n_rf       RF chains (baseband measurement dimension per pilot instant)
    m          OFDM subcarriers
    q          pilot instants
    f_c, f_b   carrier frequency and bandwidth [Hz]
    d          antenna spacing [m]; defaults to half a carrier wavelength
    """

    n: int = 32
    n_rf: int = 8
    m: int = 32
    q: int = 2
    f_c: float = 28e9
    f_b: float = 4e9
    d: float | None = None
    c: float = field(default=SPEED_OF_LIGHT)

    def __post_init__(self):
        for name in ("n", "n_rf", "m", "q"):
            v = getattr(self, name)
            if not isinstance(v, (int,)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.n_rf > self.n:
            raise ValueError(f"n_rf={self.n_rf} exceeds antenna count n={self.n}")
        if not (self.f_c > 0 and self.f_b > 0):
            raise ValueError("f_c and f_b must be positive")
        if not self.f_b < 2 * self.f_c:
            raise ValueError(f"bandwidth f_b={self.f_b} must be below 2*f_c={2 * self.f_c}")
        if self.d is None:
            object.__setattr__(self, "d", 0.5 * self.c / self.f_c)
        elif self.d <= 0:
            raise ValueError("antenna spacing d must be positive")

    @property
    def n_meas(self) -> int:
        """Stacked measurement dimension q * n_rf."""
        return self.q * self.n_rf


def default_config() -> SystemConfig:
    """The 32-antenna / 8-chain / 32-subcarrier setup used by the benchmarks."""
    return SystemConfig(n=32, n_rf=8, m=32, q=2, f_c=28e9, f_b=4e9)
