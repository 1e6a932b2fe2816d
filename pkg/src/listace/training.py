"""Training loop: Adam on the hand-rolled gradients, with the pilot protocol
of a fresh combiner and fresh noise for every batch.

Channel realizations are fixed per dataset; the observation side (combiner,
noise) is regenerated each batch visit, which acts as data augmentation over
the measurement ensemble.  Validation uses fixed per-sample observations so
epoch-to-epoch numbers are comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ScalarSet, backward_batch, forward_batch, loss_value
from .config import SystemConfig
from .datasets import ChannelDataset, make_eval_observations
from .measurement import gen_selection, observe_real, to_db
from .network import ListaParams, NetConfig, init_params

LOSS_KINDS = ("nmse_mean", "mse")
EVAL_CHUNK = 256


class TrainingDiverged(RuntimeError):
    """Raised when the loss or an intermediate stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    loss: str = "nmse_mean"
    grad_clip: float | None = None
    target_val_db: float | None = None  # stop once validation NMSE reaches this

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


@dataclass
class AdamState:
    """First/second moment accumulators per learnable, plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_tensors(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
        )


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale the whole gradient set so its global norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total

def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
):
    """One bias-corrected Adam update, applied in place to each learnable."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, arr in tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def loss(h_hat: np.ndarray, h_true: np.ndarray, kind: str = "nmse_mean") -> float:
    """Batch training loss; see autodiff.loss_value."""
    return loss_value(h_hat, h_true, kind)


@dataclass
class EvalResult:
    nmse: float
    nmse_db: float
    per_sample: np.ndarray
    per_layer_db: list[float] | None = None


@dataclass
class TrainResult:
    params: ListaParams
    log: list[dict] = field(repr=False)
    best_val_db: float = float("nan")
    best_epoch: int = -1


def _eval_observations_nmse(
    params: ListaParams,
    cfg: NetConfig,
    y: np.ndarray,
    w: np.ndarray,
    h: np.ndarray,
    scalar_fn=None,
    n_paths=None,
    snr_db=None,
    per_layer: bool = False,
):
    """Mean NMSE of the network on prebuilt observations, in chunks."""
    s = y.shape[0]
    ratios = np.empty(s)
    t_layers = cfg.t_layers
    layer_err = np.zeros((t_layers, s)) if per_layer else None
    denom = np.sum(h * h, axis=(-2, -1))
    for lo in range(0, s, EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, s)
        scal = None
        if scalar_fn is not None:
            scal = scalar_fn(n_paths[lo:hi], snr_db[lo:hi])
        hp, _, outs = forward_batch(
            y[lo:hi], w[lo:hi], params, cfg,
            scalars=scal, emit_per_layer=per_layer,
        )
        ratios[lo:hi] = np.sum((hp - h[lo:hi]) ** 2, axis=(-2, -1)) / denom[lo:hi]
        if per_layer:
            for t, out in enumerate(outs):
                layer_err[t, lo:hi] = (
                    np.sum((out - h[lo:hi]) ** 2, axis=(-2, -1)) / denom[lo:hi]
                )
    mean = float(np.mean(ratios))
    per_layer_db = (
        [to_db(float(np.mean(layer_err[t]))) for t in range(t_layers)]
        if per_layer
        else None
    )
    return EvalResult(
        nmse=mean, nmse_db=to_db(mean), per_sample=ratios, per_layer_db=per_layer_db
    )


def evaluate(
    params: ListaParams,
    ds: ChannelDataset,
    syscfg: SystemConfig,
    cfg: NetConfig,
    seed: int = 0,
    per_layer: bool = False,
    scalar_fn=None,
    snr_override: float | None = None,
) -> EvalResult:
    """Dataset NMSE under fixed per-sample evaluation observations.

    scalar_fn, when given, maps (n_paths, snr_db) arrays for a chunk to a
    ScalarSet with per-sample values (hypernetwork-style conditioning).
    """
    y, w, snr = make_eval_observations(ds, syscfg, seed, snr_override=snr_override)
    return _eval_observations_nmse(
        params, cfg, y, w, ds.h,
        scalar_fn=scalar_fn, n_paths=ds.n_paths, snr_db=snr,
        per_layer=per_layer,
    )


def train(
    train_ds: ChannelDataset,
    val_ds: ChannelDataset | None,
    syscfg: SystemConfig,
    netcfg: NetConfig,
    traincfg: TrainConfig,
    params: ListaParams | None = None,
    progress=None,
) -> TrainResult:
    """Train the unrolled estimator.

    Each epoch shuffles the sample order; every batch draws a fresh combiner
    (shared within the batch) and fresh noise, then takes one Adam step on the
    exact gradients.  Thresholds are projected back to >= 0 after each step.
    Keeps the parameters with the best validation NMSE; stops early after
    `patience` epochs without improvement.  Fully deterministic given the seed.
    progress, when given, is called with each log row.
    """
    rng = np.random.default_rng(traincfg.seed)
    if params is None:
        params = init_params(rng, netcfg)
    tensors = params.tensors()
    adam = AdamState.for_tensors(tensors)

    val = None
    if val_ds is not None:
        val = make_eval_observations(val_ds, syscfg, traincfg.seed)

    h_all = train_ds.h
    sigma2_all = 10.0 ** (-train_ds.snr_db / 10.0)
    s_total = len(train_ds)
    best_db = np.inf
    best_params = params.copy()
    best_epoch = -1
    log: list[dict] = []
    t0 = time.perf_counter()

    for epoch in range(traincfg.max_epochs):
        order = rng.permutation(s_total)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, s_total, traincfg.batch_size):
            idx = order[lo : lo + traincfg.batch_size]
            w = gen_selection(rng, syscfg)
            y = observe_real(h_all[idx], w, sigma2_all[idx], rng)
            try:
                batch_loss, grads = backward_batch(
                    y, h_all[idx], w.entries, params, netcfg, traincfg.loss
                )
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch}: {exc}"
                ) from exc
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(f"epoch {epoch}: loss is {batch_loss}")
            if traincfg.grad_clip is not None:
                clip_gradients(grads, traincfg.grad_clip)
            adam_step(tensors, grads, adam, traincfg.lr)
            np.maximum(params.theta, 0.0, out=params.theta)
            np.maximum(params.theta_p, 0.0, out=params.theta_p)
            epoch_loss += batch_loss
            n_batches += 1

        if val is not None:
            res = _eval_observations_nmse(params, netcfg, val[0], val[1], val_ds.h)
            val_db = res.nmse_db
        else:
            val_db = to_db(epoch_loss / n_batches)
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / n_batches,
            "val_nmse_db": val_db,
            "wall_seconds": time.perf_counter() - t0,
        }
        log.append(row)
        if progress is not None:
            progress(row)
        if val_db < best_db:
            best_db = val_db
            best_params = params.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= traincfg.patience:
            break
        if traincfg.target_val_db is not None and best_db <= traincfg.target_val_db:
            break

    return TrainResult(
        params=best_params, log=log, best_val_db=float(best_db), best_epoch=best_epoch
    )
