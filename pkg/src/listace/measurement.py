"""Pilot measurement model: one-bit combining, colored noise, and the NMSE metric.

The base station observes Q pilot instants through an N_RF-chain combiner
W_q with one-bit entries; noise enters at the antennas and is therefore
colored by the combiner.  Stacking instants and subcarriers (real and
imaginary parts side by side) yields the linear model Y = W H + N with
Y of shape (Q N_RF) x 2M and H of shape N x 2M.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import BEAMSPACE, ComplexChannel
from .config import SystemConfig


@dataclass
class SelectionMatrix:
    """Stacked combining matrix, Q blocks of N_RF rows, entries +-1/sqrt(Q N_RF)."""

    entries: np.ndarray
    q: int

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] % self.q:
            raise ValueError("entries must stack q equally sized blocks")

    @property
    def n_rf(self) -> int:
        return self.entries.shape[0] // self.q

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    def block(self, q_idx: int) -> np.ndarray:
        """Combiner W_q of instant q_idx (0-based), a view."""
        return self.entries[q_idx * self.n_rf : (q_idx + 1) * self.n_rf]


def gen_selection(rng: np.random.Generator, cfg: SystemConfig) -> SelectionMatrix:
    """Draw i.i.d. equiprobable one-bit combiner entries."""
    scale = 1.0 / np.sqrt(cfg.n_meas)
    signs = rng.integers(0, 2, size=(cfg.n_meas, cfg.n)) * 2 - 1
    return SelectionMatrix(entries=signs * scale, q=cfg.q)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-antenna complex noise power and the SNR [dB] it encodes.

    The channel generator normalizes E||h_m||^2 = N, i.e. unit average power
    per antenna, so sigma2 = 10^(-snr_db/10) makes snr_db the per-antenna SNR
    before combining.
    """

    sigma2: float
    snr_db: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("noise power must be nonnegative")
        expect = 10.0 ** (-self.snr_db / 10.0)
        if not np.isclose(self.sigma2, expect, rtol=1e-12, atol=0):
            raise ValueError(
                f"sigma2={self.sigma2} does not encode snr_db={self.snr_db}"
            )


def snr_to_sigma(snr_db: float) -> NoiseSpec:
    return NoiseSpec(sigma2=10.0 ** (-snr_db / 10.0), snr_db=snr_db)


@dataclass
class Observation:
    """Pilot observation Y with the combiner that produced it plus metadata."""

    y: np.ndarray
    w: SelectionMatrix
    snr_db: float
    n_paths: int

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 2 or self.y.shape[0] != self.w.entries.shape[0]:
            raise ValueError("observation rows must match the selection matrix")


def observe(
    channel: ComplexChannel,
    w: SelectionMatrix,
    noise: NoiseSpec,
    rng: np.random.Generator,
    n_paths: int = 0,
) -> Observation:
    """Simulate the pilot phase for one beamspace channel.

    Per instant q and subcarrier m, y = W_q (h_m + n_{m,q}) with unit pilots
    and n_{m,q} circularly-symmetric Gaussian of covariance sigma2 I; the
    effective noise after combining has covariance sigma2 W_q W_q^T per block.
    """
    if channel.domain != BEAMSPACE:
        raise ValueError("observations are taken on the beamspace channel")
    if channel.n != w.n:
        raise ValueError("channel and selection matrix disagree on antenna count")
    n, m, q = channel.n, channel.m, w.q
    scale = np.sqrt(noise.sigma2 / 2.0)
    blocks = []
    for qi in range(q):
        noise_q = scale * (
            rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
        )
        blocks.append(w.block(qi) @ (channel.entries + noise_q))
    yc = np.concatenate(blocks, axis=0)
    y = np.concatenate([yc.real, yc.imag], axis=1)
    return Observation(y=y, w=w, snr_db=noise.snr_db, n_paths=n_paths)


def observe_real(
    h: np.ndarray,
    w: SelectionMatrix,
    sigma2,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batched observation on real-stacked channels.

    h has shape (..., N, 2M); sigma2 is a scalar or broadcasts over the batch.
    Returns (..., Q N_RF, 2M).  Noise is drawn in one call so results are
    reproducible for a given generator state.
    """
    h = np.asarray(h, dtype=np.float64)
    lead = h.shape[:-2]
    n, m2 = h.shape[-2:]
    q, n_rf = w.q, w.n_rf
    sig = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), lead)
    # real stacking of CN(0, sigma2 I): each real entry has variance sigma2/2
    noise = rng.standard_normal(lead + (q, n, m2)) * np.sqrt(sig / 2.0)[..., None, None, None]
    y = np.matmul(w.entries, h)
    for qi in range(q):
        y[..., qi * n_rf : (qi + 1) * n_rf, :] += np.matmul(w.block(qi), noise[..., qi, :, :])
    return y


def nmse(h_hat: np.ndarray, h_ref: np.ndarray) -> float:
    """Squared-error ratio ||h_hat - h_ref||_F^2 / ||h_ref||_F^2 for one sample."""
    h_hat = np.asarray(h_hat, dtype=np.float64)
    h_ref = np.asarray(h_ref, dtype=np.float64)
    if h_hat.shape != h_ref.shape:
        raise ValueError("shapes must match")
    denom = float(np.sum(h_ref * h_ref))
    if denom == 0.0:
        raise ValueError("reference channel has zero norm")
    return float(np.sum((h_hat - h_ref) ** 2)) / denom


def nmse_batch(h_hat: np.ndarray, h_ref: np.ndarray) -> np.ndarray:
    """Per-sample NMSE ratios for stacked (..., N, 2M) arrays."""
    h_hat = np.asarray(h_hat, dtype=np.float64)
    h_ref = np.asarray(h_ref, dtype=np.float64)
    if h_hat.shape != h_ref.shape:
        raise ValueError("shapes must match")
    err = np.sum((h_hat - h_ref) ** 2, axis=(-2, -1))
    ref = np.sum(h_ref * h_ref, axis=(-2, -1))
    if np.any(ref == 0.0):
        raise ValueError("reference channel has zero norm")
    return err / ref


def to_db(ratio: float) -> float:
    """Mean NMSE ratio in dB; exact zero maps to -inf."""
    if ratio < 0:
        raise ValueError("NMSE ratio cannot be negative")
    if ratio == 0.0:
        return float("-inf")
    return float(10.0 * np.log10(ratio))
