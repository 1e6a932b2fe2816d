"""Condition-adaptive scalar generation with a small hypernetwork.

A three-layer bias-free MLP maps the operating condition (path count, SNR) to
the 4T per-layer step sizes and thresholds of the unrolled estimator.  The
two-phase protocol first trains an average model over mixed conditions, then
freezes its transforms and trains only the hypernetwork, so that at run time
the estimator retunes its scalars to the environment without retraining.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import ScalarSet, backward_batch
from .classical import omp_columns
from .config import SystemConfig
from .datasets import ChannelDataset, make_eval_observations
from .measurement import Observation, gen_selection, observe_real
from .network import ListaParams, NetConfig
from .training import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    _eval_observations_nmse,
    adam_step,
    clip_gradients,
    evaluate,
    train,
)


def softplus(x):
    """log(1 + e^x), numerically stable (maps thresholds to positive values)."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus on positive inputs: log(e^y - 1)."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inv needs positive inputs")
    # log(expm1(y)) = y + log(1 - e^-y)
    return y + np.log(-np.expm1(-y))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class ConditionBounds:
    """Min-max normalization ranges of the training conditions."""

    l_min: float
    l_max: float
    snr_min: float
    snr_max: float

    def normalize(self, n_paths, snr_db) -> np.ndarray:
        """Map (L, SNR) to the unit square over the training ranges.

        Conditions outside the ranges extrapolate beyond [0, 1].
        Returns shape (..., 2).
        """
        n_paths = np.asarray(n_paths, dtype=np.float64)
        snr_db = np.asarray(snr_db, dtype=np.float64)
        l_span = self.l_max - self.l_min
        s_span = self.snr_max - self.snr_min
        ln = (n_paths - self.l_min) / l_span if l_span > 0 else np.zeros_like(n_paths)
        sn = (snr_db - self.snr_min) / s_span if s_span > 0 else np.zeros_like(snr_db)
        return np.stack([ln, sn], axis=-1)


@dataclass(frozen=True)
class ConditionVector:
    """One operating condition with its normalization bounds."""

    n_paths: float
    snr_db: float
    bounds: ConditionBounds

    @property
    def normalized(self) -> np.ndarray:
        return self.bounds.normalize(self.n_paths, self.snr_db)


@dataclass
class HyperParams:
    """Three bias-free layers: w1 (d x 2), w2 (d x d), w3 (4T x d)."""

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray

    def __post_init__(self):
        d = self.w1.shape[0]
        if self.w1.shape != (d, 2) or self.w2.shape != (d, d):
            raise ValueError("hypernetwork weight shapes are inconsistent")
        if self.w3.shape[1] != d or self.w3.shape[0] % 4:
            raise ValueError("output layer must emit 4T values")

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def t_layers(self) -> int:
        return self.w3.shape[0] // 4

    def tensors(self) -> dict[str, np.ndarray]:
        return {"hyper.w1": self.w1, "hyper.w2": self.w2, "hyper.w3": self.w3}

    def copy(self) -> "HyperParams":
        return HyperParams(self.w1.copy(), self.w2.copy(), self.w3.copy())


def _mlp_forward(s_norm: np.ndarray, hp: HyperParams):
    """Raw 4T outputs plus the pre-activation cache for the backward pass."""
    z1 = s_norm @ hp.w1.T                    # (B, d)
    z2 = np.maximum(z1, 0.0) @ hp.w2.T       # (B, d)
    raw = np.maximum(z2, 0.0) @ hp.w3.T      # (B, 4T)
    return raw, (s_norm, z1, z2)


def split_raw(raw: np.ndarray) -> ScalarSet:
    """Map raw 4T outputs to scalars, layer order (rho, rho', theta, theta').

    Thresholds pass through softplus so they are strictly positive; step
    sizes pass through unchanged.
    """
    t = raw.shape[-1] // 4
    blocks = raw.reshape(raw.shape[:-1] + (t, 4))
    return ScalarSet(
        rho=blocks[..., 0],
        rho_p=blocks[..., 1],
        theta=softplus(blocks[..., 2]),
        theta_p=softplus(blocks[..., 3]),
    )


def hyper_forward(cond, hp: HyperParams) -> ScalarSet:
    """Emit the per-layer scalar set for a condition (or batch of conditions).

    cond: a ConditionVector, or an already-normalized array of shape (2,) or
    (B, 2).  Scalar arrays come back shaped (T,) or (B, T).
    """
    if isinstance(cond, ConditionVector):
        s_norm = cond.normalized
    else:
        s_norm = np.asarray(cond, dtype=np.float64)
    single = s_norm.ndim == 1
    raw, _ = _mlp_forward(np.atleast_2d(s_norm), hp)
    if single:
        raw = raw[0]
    return split_raw(raw)


@dataclass
class HyperModel:
    """Frozen base estimator plus the hypernetwork that drives its scalars."""

    base: ListaParams
    hyper: HyperParams
    bounds: ConditionBounds

    def scalar_fn(self):
        """Chunk hook for evaluation: (n_paths, snr_db) arrays -> ScalarSet."""

        def fn(n_paths, snr_db):
            return hyper_forward(self.bounds.normalize(n_paths, snr_db), self.hyper)

        return fn


def init_hyper(
    rng: np.random.Generator,
    base: ListaParams,
    bounds: ConditionBounds,
    d: int = 128,
    grid: np.ndarray | None = None,
) -> HyperParams:
    """Hypernetwork initialized near the base model's operating point.

    w1 and w2 are random; w3 is the least-squares fit of the base scalars
    (thresholds mapped back through softplus) on a grid of normalized
    training conditions, so training starts close to the average model's
    behaviour.  The bias-free network is positively homogeneous in its
    input, so a constant target is only ever fit approximately, and the
    all-dead origin row is excluded from the fit.
    """
    t = base.t_layers
    w1 = rng.standard_normal((d, 2))
    w2 = rng.standard_normal((d, d)) * np.sqrt(2.0 / d)
    if grid is None:
        ls = np.linspace(0.0, 1.0, 5)
        ss = np.linspace(0.0, 1.0, 5)
        grid = np.stack(np.meshgrid(ls, ss, indexing="ij"), axis=-1).reshape(-1, 2)
    z1 = grid @ w1.T
    feats = np.maximum(np.maximum(z1, 0.0) @ w2.T, 0.0)     # (G, d)
    live = np.any(feats != 0.0, axis=1)
    feats = feats[live]
    target = np.empty(4 * t)
    target[0::4] = base.rho
    target[1::4] = base.rho_p
    target[2::4] = softplus_inv(np.maximum(base.theta, 1e-6))
    target[3::4] = softplus_inv(np.maximum(base.theta_p, 1e-6))
    targets = np.tile(target, (feats.shape[0], 1))          # (G', 4T)
    w3t, *_ = np.linalg.lstsq(feats, targets, rcond=None)
    return HyperParams(w1=w1, w2=w2, w3=np.ascontiguousarray(w3t.T))


def train_aver(
    train_ds: ChannelDataset,
    val_ds: ChannelDataset | None,
    syscfg: SystemConfig,
    netcfg: NetConfig,
    traincfg: TrainConfig,
    progress=None,
) -> TrainResult:
    """Train the average model over a mixed-condition dataset.

    This is the plain training loop; with a single condition it degenerates
    to ordinary training.  Per-condition validation NMSE (grouped by path
    count) is appended to the log for inspection.
    """
    result = train(train_ds, val_ds, syscfg, netcfg, traincfg, progress=progress)
    if val_ds is not None and len(result.log) > 0:
        by_l = {}
        for l_val in sorted(set(int(v) for v in val_ds.n_paths)):
            sub = val_ds.subset(np.flatnonzero(val_ds.n_paths == l_val))
            by_l[l_val] = evaluate(
                result.params, sub, syscfg, netcfg, seed=traincfg.seed
            ).nmse_db
        result.log.append({"per_condition_val_db": by_l})
    return result


def train_hyper(
    base: ListaParams,
    train_ds: ChannelDataset,
    val_ds: ChannelDataset | None,
    syscfg: SystemConfig,
    netcfg: NetConfig,
    traincfg: TrainConfig,
    bounds: ConditionBounds | None = None,
    d: int = 128,
    progress=None,
) -> tuple[HyperModel, list[dict]]:
    """Phase two: freeze the base transforms, train only the hypernetwork.

    Per batch, each sample's (L, SNR) condition is normalized and fed through
    the hypernetwork to produce that sample's scalars; gradients flow through
    the unrolled estimator into the hypernetwork weights only.
    """
    if bounds is None:
        bounds = ConditionBounds(
            l_min=float(np.min(train_ds.n_paths)),
            l_max=float(np.max(train_ds.n_paths)),
            snr_min=float(np.min(train_ds.snr_db)),
            snr_max=float(np.max(train_ds.snr_db)),
        )
    rng = np.random.default_rng(traincfg.seed)
    hp = init_hyper(rng, base, bounds, d=d)
    tensors = hp.tensors()
    adam = AdamState.for_tensors(tensors)
    frozen = base.copy()

    val = None
    if val_ds is not None:
        val = make_eval_observations(val_ds, syscfg, traincfg.seed)
        val_norm = bounds.normalize(val_ds.n_paths, val_ds.snr_db)

    h_all = train_ds.h
    sigma2_all = 10.0 ** (-train_ds.snr_db / 10.0)
    cond_all = bounds.normalize(train_ds.n_paths, train_ds.snr_db)
    s_total = len(train_ds)
    best_db = np.inf
    best_hp = hp.copy()
    best_epoch = -1
    log: list[dict] = []
    t0 = time.perf_counter()

    def model() -> HyperModel:
        return HyperModel(base=frozen, hyper=hp, bounds=bounds)

    for epoch in range(traincfg.max_epochs):
        order = rng.permutation(s_total)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, s_total, traincfg.batch_size):
            idx = order[lo : lo + traincfg.batch_size]
            w = gen_selection(rng, syscfg)
            y = observe_real(h_all[idx], w, sigma2_all[idx], rng)
            raw, cache = _mlp_forward(cond_all[idx], hp)
            scal = split_raw(raw)
            try:
                batch_loss, sgrads = backward_batch(
                    y, h_all[idx], w.entries, frozen, netcfg,
                    traincfg.loss, scalars=scal, wrt="scalars",
                )
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(f"epoch {epoch}: loss is {batch_loss}")
            t = netcfg.t_layers
            d_raw = np.empty((len(idx), 4 * t))
            d_raw[:, 0::4] = sgrads.rho
            d_raw[:, 1::4] = sgrads.rho_p
            d_raw[:, 2::4] = sgrads.theta * _sigmoid(raw[:, 2::4])
            d_raw[:, 3::4] = sgrads.theta_p * _sigmoid(raw[:, 3::4])
            s_norm, z1, z2 = cache
            g3 = d_raw.T @ np.maximum(z2, 0.0)
            dh2 = (d_raw @ hp.w3) * (z2 > 0.0)
            g2 = dh2.T @ np.maximum(z1, 0.0)
            dh1 = (dh2 @ hp.w2) * (z1 > 0.0)
            g1 = dh1.T @ s_norm
            grads = {"hyper.w1": g1, "hyper.w2": g2, "hyper.w3": g3}
            if traincfg.grad_clip is not None:
                clip_gradients(grads, traincfg.grad_clip)
            adam_step(tensors, grads, adam, traincfg.lr)
            epoch_loss += batch_loss
            n_batches += 1

        if val is not None:
            res = _eval_observations_nmse(
                frozen, netcfg, val[0], val[1], val_ds.h,
                scalar_fn=lambda lv, sv: hyper_forward(
                    bounds.normalize(lv, sv), hp
                ),
                n_paths=val_ds.n_paths, snr_db=val[2],
            )
            val_db = res.nmse_db
        else:
            val_db = 10.0 * np.log10(epoch_loss / n_batches)
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
            best_hp = hp.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= traincfg.patience:
            break

    return HyperModel(base=frozen, hyper=best_hp, bounds=bounds), log


def estimate_condition(
    obs: Observation,
    bounds: ConditionBounds,
    l_source: str = "metadata",
    drop_tol: float = 0.35,
) -> ConditionVector:
    """Operating condition for one observation.

    The SNR is taken from the observation's noise spec; the path count comes
    from generation metadata, or, in "omp" mode, from a crude online probe
    that counts greedy atoms until the residual stops dropping and divides by
    the beams-per-path window.
    """
    if l_source == "metadata":
        n_paths = obs.n_paths
    elif l_source == "omp":
        m = obs.y.shape[1] // 2
        yc = obs.y[:, :m] + 1j * obs.y[:, m:]
        w = obs.w.entries
        counts = []
        max_atoms = min(w.shape[0], w.shape[1]) // 2
        for col in range(m):
            r = yc[:, col]
            norm0 = np.linalg.norm(r)
            if norm0 == 0:
                continue
            picked = []
            prev = norm0
            for _ in range(max_atoms):
                x = omp_columns(r[:, None], w, len(picked) + 1)
                r_new = r - w @ x[:, 0]
                new = np.linalg.norm(r_new)
                if prev > 0 and (prev - new) / prev < drop_tol:
                    break
                picked.append(1)
                prev = new
            counts.append(max(1, len(picked)))
        n_paths = max(1, int(round(np.median(counts) / 4.0))) if counts else 1
    else:
        raise ValueError("l_source must be 'metadata' or 'omp'")
    return ConditionVector(n_paths=float(n_paths), snr_db=obs.snr_db, bounds=bounds)
