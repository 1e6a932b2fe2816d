"""Wideband beamspace channel simulation for a lens antenna array.

Implements the multipath frequency-selective channel with beam squint: the
spatial direction seen by the array scales with the subcarrier frequency, so
each path drifts across beams over the band.  The lens is modelled as the
unitary spatial DFT whose columns are steering vectors on a uniform direction
grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

SPATIAL = "spatial"
BEAMSPACE = "beamspace"


@dataclass
class PathSet:
    """One channel realization: L path gains, delays [s] and directions [rad]."""

    gains: np.ndarray
    delays: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.complex128)
        self.delays = np.asarray(self.delays, dtype=np.float64)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if not (self.gains.shape == self.delays.shape == self.angles.shape):
            raise ValueError("gains, delays and angles must have equal length")
        if self.gains.ndim != 1 or self.gains.size < 1:
            raise ValueError("a PathSet needs at least one path")
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("path gains must be finite")
        if np.any(self.delays < 0):
            raise ValueError("path delays must be nonnegative")
        if np.any(self.angles <= -np.pi / 2) or np.any(self.angles > np.pi / 2):
            raise ValueError("path angles must lie in (-pi/2, pi/2]")

    @property
    def n_paths(self) -> int:
        return self.gains.size


@dataclass
class ComplexChannel:
    """Complex channel matrix, one column per subcarrier, tagged by domain."""

    entries: np.ndarray
    domain: str

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.ndim != 2:
            raise ValueError("channel entries must be an N x M matrix")
        if self.domain not in (SPATIAL, BEAMSPACE):
            raise ValueError(f"unknown channel domain {self.domain!r}")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("channel entries must be finite")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]


@dataclass
class LensTransform:
    """Unitary N x N spatial DFT implemented by the lens."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        n = self.entries.shape[0]
        if self.entries.ndim != 2 or self.entries.shape != (n, n):
            raise ValueError("lens transform must be square")
        if self.unitarity_defect() > 1e-10:
            raise ValueError("lens transform must be unitary (within 1e-10)")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def unitarity_defect(self) -> float:
        f = self.entries
        return float(np.max(np.abs(f.conj().T @ f - np.eye(self.n))))


def subcarrier_freq(m_idx: int, cfg: SystemConfig) -> float:
    """Frequency of 1-based subcarrier m_idx: f_c + (f_b/M)(m - 1 - (M-1)/2)."""
    if not 1 <= m_idx <= cfg.m:
        raise IndexError(f"subcarrier index {m_idx} outside 1..{cfg.m}")
    return cfg.f_c + (cfg.f_b / cfg.m) * (m_idx - 1 - (cfg.m - 1) / 2)


def subcarrier_freqs(cfg: SystemConfig) -> np.ndarray:
    """All M subcarrier frequencies as a vector."""
    m = np.arange(1, cfg.m + 1, dtype=np.float64)
    return cfg.f_c + (cfg.f_b / cfg.m) * (m - 1 - (cfg.m - 1) / 2)


def spatial_direction(theta, m_idx: int, cfg: SystemConfig):
    """Frequency-dependent spatial direction (f_m / c) * d * sin(theta).

    The dependence on m is the beam squint: with d = c/(2 f_c) the direction
    equals 0.5 (f_m/f_c) sin(theta), so it stretches with subcarrier frequency.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(np.abs(theta) > np.pi / 2):
        raise ValueError("physical direction must satisfy |theta| <= pi/2")
    f_m = subcarrier_freq(m_idx, cfg)
    out = (f_m / cfg.c) * cfg.d * np.sin(theta)
    return float(out) if out.ndim == 0 else out


def antenna_index(n: int) -> np.ndarray:
    """Symmetric antenna index grid -(N-1)/2, -(N-3)/2, ..., (N-1)/2."""
    return -(n - 1) / 2 + np.arange(n, dtype=np.float64)


def array_response(phi: float, n: int) -> np.ndarray:
    """Steering vector with entries exp(-j 2 pi phi p) over the index grid."""
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    return np.exp(-2j * np.pi * phi * antenna_index(n))


def sample_paths(rng: np.random.Generator, n_paths: int, tau_max: float) -> PathSet:
    """Draw i.i.d. paths: uniform angles and delays, unit-variance complex gains."""
    if n_paths < 1:
        raise ValueError("need at least one path")
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    angles = rng.uniform(-np.pi / 2, np.pi / 2, size=n_paths)
    delays = rng.uniform(0.0, tau_max, size=n_paths)
    gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2.0)
    return PathSet(gains=gains, delays=delays, angles=angles)


def spatial_channel(paths: PathSet, cfg: SystemConfig) -> ComplexChannel:
    """Multipath spatial channel; column m is the superposition of L steered paths."""
    f = subcarrier_freqs(cfg)                       # (M,)
    p = antenna_index(cfg.n)                        # (N,)
    # per path/subcarrier direction, (L, M)
    phi = (f[None, :] / cfg.c) * cfg.d * np.sin(paths.angles)[:, None]
    steer = np.exp(-2j * np.pi * phi[:, None, :] * p[None, :, None])   # (L, N, M)
    phase = np.exp(-2j * np.pi * paths.delays[:, None] * f[None, :])   # (L, M)
    coef = paths.gains[:, None] * phase                                # (L, M)
    h = np.sqrt(1.0 / paths.n_paths) * np.einsum("lm,lnm->nm", coef, steer)
    return ComplexChannel(entries=h, domain=SPATIAL)


def beam_grid(n: int) -> np.ndarray:
    """Directions predefined by the lens: (1/N)(n - (N+1)/2) for n = 1..N."""
    return (np.arange(1, n + 1, dtype=np.float64) - (n + 1) / 2) / n


def lens_transform(n: int) -> LensTransform:
    """Unitary spatial DFT F = N^{-1/2} [a(phi_1), ..., a(phi_N)] on the beam grid."""
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    cols = [array_response(phi, n) for phi in beam_grid(n)]
    return LensTransform(entries=np.stack(cols, axis=1) / np.sqrt(n))


def beamspace_channel(spatial: ComplexChannel, lens: LensTransform) -> ComplexChannel:
    """Apply the lens: column m becomes F^H h_m."""
    if spatial.n != lens.n:
        raise ValueError(
            f"antenna count mismatch: channel has {spatial.n}, lens has {lens.n}"
        )
    return ComplexChannel(entries=lens.entries.conj().T @ spatial.entries, domain=BEAMSPACE)


def dirichlet_kernel(x, n: int):
    """sin(N pi x) / sin(pi x), with the limit N cos(N pi k)/cos(pi k) at integer k."""
    x = np.asarray(x, dtype=np.float64)
    s = np.sin(np.pi * x)
    near = np.abs(s) < 1e-9
    safe = np.where(near, 1.0, s)
    out = np.sin(n * np.pi * x) / safe
    if np.any(near):
        k = np.round(x)
        lim = n * np.cos(n * np.pi * k) / np.cos(np.pi * k)
        out = np.where(near, lim, out)
    return float(out) if out.ndim == 0 else out


def beam_component(phi: float, n: int) -> np.ndarray:
    """Beamspace signature of a steering vector: entry b is the Dirichlet kernel
    at the offset from grid beam b, scaled by N^{-1/2}.  Equals F^H a(phi)."""
    x = phi - beam_grid(n)
    return dirichlet_kernel(x, n).astype(np.complex128) / np.sqrt(n)


def to_real_matrix(channel: ComplexChannel) -> np.ndarray:
    """Real stacking [Re(h_1..h_M) | Im(h_1..h_M)], shape N x 2M."""
    if channel.domain != BEAMSPACE:
        raise ValueError("real stacking is defined on the beamspace channel")
    return np.concatenate([channel.entries.real, channel.entries.imag], axis=1)


def from_real_matrix(h: np.ndarray) -> ComplexChannel:
    """Inverse of to_real_matrix; h has shape N x 2M."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] % 2:
        raise ValueError("expected an N x 2M real matrix")
    m = h.shape[1] // 2
    return ComplexChannel(entries=h[:, :m] + 1j * h[:, m:], domain=BEAMSPACE)
