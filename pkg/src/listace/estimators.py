"""Estimator classes with a scikit-learn style surface.

Every estimator exposes get_params / set_params (keyed off __init__
arguments), an optional fit step, and predict on observations.  predict
accepts a single Observation, a list of them, or raw (y, w) arrays, and
returns real-stacked channel estimates.  evaluate_dataset builds the shared
per-sample evaluation observations so different estimators are compared on
identical inputs.
"""

from __future__ import annotations

import inspect

import numpy as np

from .classical import (
    IstaConfig,
    default_omp_sparsity,
    ista_batch,
    omp_columns,
    tune_ista,
)
from .config import SystemConfig
from .datasets import ChannelDataset, make_eval_observations
from .hyper import HyperModel
from .measurement import Observation, to_db
from .network import ListaParams, NetConfig
from .training import EVAL_CHUNK, EvalResult, TrainConfig, _eval_observations_nmse, train


class NotFittedError(RuntimeError):
    """predict was called before fit on an estimator that needs fitting."""


class BaseChannelEstimator:
    """get_params/set_params plus shared observation handling."""

    def get_params(self, deep: bool = True) -> dict:
        names = [
            p.name
            for p in inspect.signature(type(self).__init__).parameters.values()
            if p.name != "self"
            and p.kind not in (p.VAR_KEYWORD, p.VAR_POSITIONAL)
        ]
        return {name: getattr(self, name) for name in names}

    def set_params(self, **kwargs):
        valid = self.get_params()
        for key, value in kwargs.items():
            if key not in valid:
                raise ValueError(f"unknown parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def fit(self, *args, **kwargs):
        return self

    # -- input plumbing ------------------------------------------------------

    @staticmethod
    def _unpack(obs, w=None):
        """Normalize predict inputs to (y (B, QN, 2M), w (B, QN, N), meta)."""
        if isinstance(obs, Observation):
            obs = [obs]
        if isinstance(obs, (list, tuple)) and obs and isinstance(obs[0], Observation):
            y = np.stack([o.y for o in obs])
            w = np.stack([o.w.entries for o in obs])
            n_paths = np.array([o.n_paths for o in obs])
            snr = np.array([o.snr_db for o in obs])
            return y, w, n_paths, snr
        y = np.asarray(obs, dtype=np.float64)
        if w is None:
            raise ValueError("array input requires the selection entries w")
        w = np.asarray(w, dtype=np.float64)
        single = y.ndim == 2
        if single:
            y = y[None]
        if w.ndim == 2:
            w = np.broadcast_to(w, (y.shape[0],) + w.shape)
        if y.ndim != 3 or w.ndim != 3 or y.shape[0] != w.shape[0]:
            raise ValueError("inconsistent observation shapes")
        return y, w, None, None

    def predict(self, obs, w=None):
        """Estimate real-stacked channels; mirrors the input's batching."""
        single = isinstance(obs, Observation) or (
            not isinstance(obs, (list, tuple)) and np.asarray(obs).ndim == 2
        )
        y, wb, n_paths, snr = self._unpack(obs, w)
        out = self._predict_batch(y, wb, n_paths, snr)
        return out[0] if single else out

    def _predict_batch(self, y, w, n_paths, snr_db) -> np.ndarray:
        raise NotImplementedError

    def evaluate_dataset(
        self, ds: ChannelDataset, syscfg: SystemConfig, seed: int = 0,
        snr_override: float | None = None,
    ) -> EvalResult:
        """Mean NMSE over a dataset under seed-derived per-sample observations."""
        y, w, snr = make_eval_observations(ds, syscfg, seed, snr_override=snr_override)
        s = len(ds)
        ratios = np.empty(s)
        denom = np.sum(ds.h * ds.h, axis=(-2, -1))
        for lo in range(0, s, EVAL_CHUNK):
            hi = min(lo + EVAL_CHUNK, s)
            est = self._predict_batch(
                y[lo:hi], w[lo:hi], ds.n_paths[lo:hi], snr[lo:hi]
            )
            ratios[lo:hi] = np.sum((est - ds.h[lo:hi]) ** 2, axis=(-2, -1)) / denom[lo:hi]
        mean = float(np.mean(ratios))
        return EvalResult(nmse=mean, nmse_db=to_db(mean), per_sample=ratios)


class ZeroEstimator(BaseChannelEstimator):
    """Always predicts the zero channel (the 0 dB NMSE reference)."""

    def _predict_batch(self, y, w, n_paths, snr_db):
        return np.zeros((y.shape[0], w.shape[-1], y.shape[-1]))


class IstaEstimator(BaseChannelEstimator):
    """Fixed-transform iterative shrinkage with grid-tuned (rho, lam).

    Leave rho/lam unset and call fit to grid-search them on held-out data.
    """

    def __init__(self, rho=None, lam=None, iters=200, transform="frequency_dft"):
        self.rho = rho
        self.lam = lam
        self.iters = iters
        self.transform = transform

    def fit(self, ds: ChannelDataset, syscfg: SystemConfig, seed: int = 0,
            max_samples: int = 256, search_iters: int | None = None):
        sub = ds.subset(np.arange(min(len(ds), max_samples)))
        y, w, _ = make_eval_observations(sub, syscfg, seed)
        cfg = tune_ista(
            y, w, sub.h,
            iters=self.iters if search_iters is None else search_iters,
            transform=self.transform,
        )
        self.rho = cfg.rho
        self.lam = cfg.lam
        return self

    def _config(self) -> IstaConfig:
        if self.rho is None or self.lam is None:
            raise NotFittedError("rho/lam unset: call fit or pass them explicitly")
        return IstaConfig(
            rho=self.rho, lam=self.lam, iters=self.iters, transform=self.transform
        )

    def _predict_batch(self, y, w, n_paths, snr_db):
        return ista_batch(y, w, self._config())


class OmpEstimator(BaseChannelEstimator):
    """Greedy per-subcarrier matching; sparsity defaults to 4 atoms per path."""

    def __init__(self, sparsity=None, residual_tol=None):
        self.sparsity = sparsity
        self.residual_tol = residual_tol

    def _predict_batch(self, y, w, n_paths, snr_db):
        b = y.shape[0]
        m = y.shape[-1] // 2
        out = np.empty((b, w.shape[-1], 2 * m))
        for i in range(b):
            k = self.sparsity
            if k is None:
                k = default_omp_sparsity(int(n_paths[i]) if n_paths is not None else 3)
            yc = y[i, :, :m] + 1j * y[i, :, m:]
            x = omp_columns(yc, w[i], k, self.residual_tol)
            out[i] = np.concatenate([x.real, x.imag], axis=1)
        return out


class ListaEstimator(BaseChannelEstimator):
    """The unrolled learned estimator; fit trains it, or load a checkpoint."""

    def __init__(self, netcfg: NetConfig | None = None, params: ListaParams | None = None):
        self.netcfg = netcfg
        self.params = params

    @classmethod
    def from_checkpoint(cls, path) -> "ListaEstimator":
        from .fileio import read_checkpoint

        netcfg, params, _ = read_checkpoint(path)
        return cls(netcfg=netcfg, params=params)

    def fit(
        self,
        train_ds: ChannelDataset,
        syscfg: SystemConfig,
        val_ds: ChannelDataset | None = None,
        traincfg: TrainConfig | None = None,
        progress=None,
    ):
        if self.netcfg is None:
            self.netcfg = NetConfig(n=train_ds.n, m=train_ds.m)
        result = train(
            train_ds, val_ds, syscfg, self.netcfg,
            traincfg or TrainConfig(), params=self.params, progress=progress,
        )
        self.params = result.params
        self.train_log_ = result.log
        return self

    def _require(self):
        if self.params is None or self.netcfg is None:
            raise NotFittedError("no parameters: call fit or from_checkpoint first")

    def _predict_batch(self, y, w, n_paths, snr_db):
        self._require()
        from .autodiff import forward_batch

        hp, _, _ = forward_batch(y, w, self.params, self.netcfg)
        return hp

    def evaluate_dataset(
        self, ds: ChannelDataset, syscfg: SystemConfig, seed: int = 0,
        snr_override: float | None = None, per_layer: bool = False,
    ) -> EvalResult:
        self._require()
        y, w, snr = make_eval_observations(ds, syscfg, seed, snr_override=snr_override)
        return _eval_observations_nmse(
            self.params, self.netcfg, y, w, ds.h, per_layer=per_layer
        )


class HyperListaEstimator(BaseChannelEstimator):
    """Frozen base estimator whose scalars are generated per condition."""

    def __init__(self, model: HyperModel | None = None, netcfg: NetConfig | None = None):
        self.model = model
        self.netcfg = netcfg

    @classmethod
    def from_checkpoint(cls, path) -> "HyperListaEstimator":
        from .fileio import read_checkpoint

        netcfg, _, hyper_model = read_checkpoint(path)
        if hyper_model is None:
            raise ValueError(f"checkpoint {path} has no hypernetwork section")
        return cls(model=hyper_model, netcfg=netcfg)

    def _require(self):
        if self.model is None or self.netcfg is None:
            raise NotFittedError("no hypernetwork model loaded")

    def _predict_batch(self, y, w, n_paths, snr_db):
        self._require()
        if n_paths is None or snr_db is None:
            raise ValueError("condition metadata (n_paths, snr_db) is required")
        from .autodiff import forward_batch

        scal = self.model.scalar_fn()(n_paths, snr_db)
        hp, _, _ = forward_batch(y, w, self.model.base, self.netcfg, scalars=scal)
        return hp

    def evaluate_dataset(
        self, ds: ChannelDataset, syscfg: SystemConfig, seed: int = 0,
        snr_override: float | None = None, per_layer: bool = False,
    ) -> EvalResult:
        self._require()
        y, w, snr = make_eval_observations(ds, syscfg, seed, snr_override=snr_override)
        return _eval_observations_nmse(
            self.model.base, self.netcfg, y, w, ds.h,
            scalar_fn=self.model.scalar_fn(), n_paths=ds.n_paths, snr_db=snr,
            per_layer=per_layer,
        )
