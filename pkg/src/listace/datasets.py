"""Dataset generation and evaluation observations with reproducible seeding.

Every sample is generated from its own derived seed (base_seed + index), so
serial and worker-parallel generation produce identical datasets, and any
sample can be regenerated in isolation.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    PathSet,
    beamspace_channel,
    lens_transform,
    sample_paths,
    spatial_channel,
    to_real_matrix,
)
from .config import SystemConfig
from .measurement import gen_selection, observe_real, snr_to_sigma

THREADS_ENV = "LISTACE_THREADS"
DEFAULT_TAU_MAX = 20e-9


def default_workers() -> int:
    """Worker count for sample-parallel loops, from the environment."""
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


_LENS_CACHE: dict = {}


def _lens(n: int):
    if n not in _LENS_CACHE:
        _LENS_CACHE[n] = lens_transform(n)
    return _LENS_CACHE[n]


@dataclass
class ChannelDataset:
    """Labeled channel realizations: real-stacked targets plus generation metadata."""

    h: np.ndarray                     # (S, N, 2M) float64
    n_paths: np.ndarray               # (S,) int
    snr_db: np.ndarray                # (S,) float64
    paths: list[PathSet] = field(repr=False)
    n: int = 0
    m: int = 0
    q: int = 0
    n_rf: int = 0
    base_seed: int = 0
    tau_max: float = DEFAULT_TAU_MAX
    l_mode: str = "fixed"             # "fixed" | "per-sample"
    snr_mode: str = "fixed"
    dtype: str = "f64"                # storage dtype of h when written to file

    def __len__(self) -> int:
        return self.h.shape[0]

    def subset(self, idx) -> "ChannelDataset":
        idx = np.asarray(idx)
        return ChannelDataset(
            h=self.h[idx],
            n_paths=self.n_paths[idx],
            snr_db=self.snr_db[idx],
            paths=[self.paths[i] for i in idx],
            n=self.n,
            m=self.m,
            q=self.q,
            n_rf=self.n_rf,
            base_seed=self.base_seed,
            tau_max=self.tau_max,
            l_mode=self.l_mode,
            snr_mode=self.snr_mode,
            dtype=self.dtype,
        )


def generate_sample(
    seed: int,
    cfg: SystemConfig,
    tau_max: float,
    n_paths: int | None = None,
    l_set: tuple[int, ...] | None = None,
    snr_db: float | None = None,
    snr_range: tuple[float, float] | None = None,
):
    """One labeled sample from its derived seed.

    Draw order is fixed (L, then SNR, then the paths) so that fixed and mixed
    modes stay reproducible.  Returns (h_real, path_set, L, snr).
    """
    rng = np.random.default_rng(seed)
    if l_set is not None:
        n_paths = int(rng.choice(np.asarray(l_set, dtype=np.int64)))
    if n_paths is None:
        raise ValueError("either n_paths or l_set is required")
    if snr_range is not None:
        snr_db = float(rng.uniform(snr_range[0], snr_range[1]))
    if snr_db is None:
        raise ValueError("either snr_db or snr_range is required")
    paths = sample_paths(rng, n_paths, tau_max)
    beam = beamspace_channel(spatial_channel(paths, cfg), _lens(cfg.n))
    return to_real_matrix(beam), paths, n_paths, snr_db


def generate_dataset(
    cfg: SystemConfig,
    count: int,
    base_seed: int,
    n_paths: int | None = 3,
    l_set: tuple[int, ...] | None = None,
    snr_db: float | None = 10.0,
    snr_range: tuple[float, float] | None = None,
    tau_max: float = DEFAULT_TAU_MAX,
    workers: int | None = None,
) -> ChannelDataset:
    """Generate `count` samples with per-sample seeds base_seed + i."""
    if count < 1:
        raise ValueError("dataset must contain at least one sample")
    if l_set is not None:
        n_paths = None
    if snr_range is not None:
        snr_db = None
    workers = default_workers() if workers is None else workers

    def make(i: int):
        return generate_sample(
            base_seed + i,
            cfg,
            tau_max,
            n_paths=n_paths,
            l_set=l_set,
            snr_db=snr_db,
            snr_range=snr_range,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(make, range(count)))
    else:
        results = [make(i) for i in range(count)]

    h = np.stack([r[0] for r in results])
    paths = [r[1] for r in results]
    ls = np.array([r[2] for r in results], dtype=np.int64)
    snrs = np.array([r[3] for r in results], dtype=np.float64)
    return ChannelDataset(
        h=h,
        n_paths=ls,
        snr_db=snrs,
        paths=paths,
        n=cfg.n,
        m=cfg.m,
        q=cfg.q,
        n_rf=cfg.n_rf,
        base_seed=base_seed,
        tau_max=tau_max,
        l_mode="fixed" if l_set is None else "per-sample",
        snr_mode="fixed" if snr_range is None else "per-sample",
    )


def make_eval_observations(
    ds: ChannelDataset,
    cfg: SystemConfig,
    seed: int,
    snr_override: float | None = None,
):
    """Fixed evaluation observations: per-sample combiner and noise from
    derived seeds (seed + i), so different estimators see identical inputs.

    Returns (y, w_entries, snr_db) with shapes (S, QN_RF, 2M), (S, QN_RF, N), (S,).
    """
    s = len(ds)
    y = np.empty((s, cfg.n_meas, 2 * cfg.m))
    w = np.empty((s, cfg.n_meas, cfg.n))
    snr = np.full(s, snr_override) if snr_override is not None else ds.snr_db.copy()
    for i in range(s):
        rng = np.random.default_rng(seed + i)
        wi = gen_selection(rng, cfg)
        w[i] = wi.entries
        y[i] = observe_real(ds.h[i], wi, snr_to_sigma(float(snr[i])).sigma2, rng)
    return y, w, snr
