"""Batched forward evaluation and hand-rolled reverse-mode gradients.

The unrolled graph is fixed, so the backward pass is written out explicitly,
mirroring the forward stages in reverse.  Conventions at the kinks:
relu'(0) = 0; for the soft threshold, d/dx = 1{|x| > theta} and
d/dtheta = -sign(x) 1{|x| > theta} (the measure-zero boundary gets 0).

States carry a leading batch axis (B, N, 2M).  The transform stages merge the
batch into the column axis ("flat" layout (rows, B * cols)) so the shared
weight matrices multiply in single large GEMMs; param-gradient contractions
are likewise single GEMMs against the flat tape.  The tape stores
post-activation values: the relu mask is v > 0 and the active soft-threshold
set is s != 0, so nothing is recomputed on the way back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ListaParams, NetConfig


@dataclass
class ScalarSet:
    """Per-layer step sizes and thresholds; arrays of shape (T,) or (B, T).

    A (B, T) shape carries per-sample values (used when a hypernetwork emits
    scalars conditioned on each sample's environment).
    """

    rho: np.ndarray
    rho_p: np.ndarray
    theta: np.ndarray
    theta_p: np.ndarray

    @classmethod
    def from_params(cls, params: ListaParams) -> "ScalarSet":
        return cls(params.rho, params.rho_p, params.theta, params.theta_p)

    def at(self, t: int):
        """Layer-t values, each a scalar () or a (B,) vector."""
        return (
            self.rho[..., t],
            self.rho_p[..., t],
            self.theta[..., t],
            self.theta_p[..., t],
        )


# ---------------------------------------------------------------------------
# layout helpers
#
# batched:  (B, N, 2M) row-channel states
# flat:     (rows, B * cols) inputs to the shared transform weights
# ---------------------------------------------------------------------------


def _fold_freq(a: np.ndarray) -> np.ndarray:
    """(B, N, C) -> (C, B*N): per-sample transpose, stacked along columns."""
    b, n, c = a.shape
    return np.ascontiguousarray(a.transpose(2, 0, 1)).reshape(c, b * n)


def _unfold_freq(a: np.ndarray, b: int) -> np.ndarray:
    """(C, B*N) -> (B, N, C): adjoint (= inverse) of _fold_freq, strided view."""
    c = a.shape[0]
    return a.reshape(c, b, -1).transpose(1, 2, 0)


def _fold_beam(a: np.ndarray) -> np.ndarray:
    """(B, N, 2M) -> (2N, B*M): stack the Re / Im column blocks vertically."""
    b, n, m2 = a.shape
    m = m2 // 2
    left = a[:, :, :m].transpose(1, 0, 2)
    right = a[:, :, m:].transpose(1, 0, 2)
    return np.concatenate([left, right], axis=0).reshape(2 * n, b * m)


def _unfold_beam(a: np.ndarray, b: int) -> np.ndarray:
    """(2N, B*M) -> (B, N, 2M): adjoint (= inverse) of _fold_beam, strided view."""
    n2 = a.shape[0]
    n = n2 // 2
    v = a.reshape(n2, b, -1)
    return np.concatenate([v[:n], v[n:]], axis=-1).transpose(1, 0, 2)


def _scale(arr, s, cols: int):
    """arr * s where arr is flat (rows, B*cols) and s is () or (B,)."""
    if np.ndim(s) == 0:
        return arr * s
    rows = arr.shape[0]
    return (arr.reshape(rows, -1, cols) * s[None, :, None]).reshape(rows, arr.shape[1])


def _scale_state(arr, s):
    """arr * s where arr is batched (B, N, C) and s is () or (B,)."""
    if np.ndim(s) == 0:
        return arr * s
    return arr * s[:, None, None]


def _soft(x: np.ndarray, theta, cols: int) -> np.ndarray:
    """Fused soft threshold on a flat array; theta is () or (B,)."""
    out = np.abs(x)
    if np.ndim(theta) == 0:
        out -= theta
    else:
        v = out.reshape(out.shape[0], -1, cols)
        v -= theta[None, :, None]
    np.maximum(out, 0.0, out=out)
    return np.copysign(out, x, out=out)


def _relu(x: np.ndarray) -> np.ndarray:
    # callers pass freshly allocated GEMM outputs, so clip in place
    return np.maximum(x, 0.0, out=x)


@dataclass
class _LayerTape:
    wg: np.ndarray      # (B, N, 2M)  W^T (W hp_prev - y)
    x: np.ndarray       # (2M, B*N)   freq transform input
    v1: np.ndarray      # (w1, B*N)   relu(a x)
    s: np.ndarray       # (w2, B*N)   soft(b v1, theta)
    v3: np.ndarray      # (w1, B*N)   relu(b_inv s)
    wg2: np.ndarray     # (B, N, 2M)  W^T (W h - y)
    xp: np.ndarray      # (2N, B*M)   beam transform input
    v1p: np.ndarray
    sp: np.ndarray
    v3p: np.ndarray


def forward_batch(
    y: np.ndarray,
    w: np.ndarray,
    params: ListaParams,
    cfg: NetConfig,
    scalars: ScalarSet | None = None,
    keep_tape: bool = False,
    emit_per_layer: bool = False,
    check_finite: bool = False,
):
    """Evaluate the unrolled estimator on a batch.

    y: (B, QN_RF, 2M); w: (QN_RF, N) shared across the batch or (B, QN_RF, N)
    per sample.  Returns (hp, tapes, per_layer) where hp is (B, N, 2M); tapes
    and per_layer are None unless requested.
    """
    if scalars is None:
        scalars = ScalarSet.from_params(params)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    wt = np.swapaxes(w, -1, -2)
    # the data-fit gradient W^T (W h - y) is gram @ h - wty with both factors
    # shared across layers
    gram = np.matmul(wt, w)
    wty = np.matmul(wt, y)
    b, _, m2 = y.shape
    n, m = cfg.n, cfg.m
    h = np.zeros((b, n, m2))
    hp = np.zeros((b, n, m2))
    tapes = [] if keep_tape else None
    outs = [] if emit_per_layer else None

    for t in range(cfg.t_layers):
        tr = params.transform_at(t)
        rho, rho_p, theta, theta_p = scalars.at(t)

        wg = np.matmul(gram, hp) - wty
        anchor = h if cfg.anchor_mode == "as_written" else hp
        r = anchor - _scale_state(wg, rho)

        x = _fold_freq(r)                                   # (2M, B*N)
        v1 = _relu(tr.freq.a @ x)
        s = _soft(tr.freq.b @ v1, theta, n)
        v3 = _relu(tr.freq.b_inv @ s)
        u4 = tr.freq.a_inv @ v3                             # (2M, B*N)
        h = r + _unfold_freq(u4, b)

        wg2 = np.matmul(gram, h) - wty
        rp = h - _scale_state(wg2, rho_p)

        xp = _fold_beam(rp)                                 # (2N, B*M)
        v1p = _relu(tr.beam.a @ xp)
        sp = _soft(tr.beam.b @ v1p, theta_p, m)
        v3p = _relu(tr.beam.b_inv @ sp)
        u4p = tr.beam.a_inv @ v3p                           # (2N, B*M)
        hp = rp + _unfold_beam(u4p, b)

        if check_finite:
            for name, arr in (("r", r), ("h", h), ("r_p", rp), ("h_p", hp)):
                if not np.all(np.isfinite(arr)):
                    raise FloatingPointError(
                        f"non-finite values in stage {name} of layer {t + 1}"
                    )
        if keep_tape:
            tapes.append(_LayerTape(wg, x, v1, s, v3, wg2, xp, v1p, sp, v3p))
        if emit_per_layer:
            outs.append(hp)
    return hp, tapes, outs


def loss_value(h_hat: np.ndarray, h_true: np.ndarray, kind: str) -> float:
    """Batch loss: mean per-sample NMSE ratio, or plain MSE per entry."""
    err = np.sum((h_hat - h_true) ** 2, axis=(-2, -1))
    if kind == "nmse_mean":
        denom = np.sum(h_true * h_true, axis=(-2, -1))
        if np.any(denom == 0.0):
            raise ValueError("nmse_mean loss undefined for a zero-norm target")
        return float(np.mean(err / denom))
    if kind == "mse":
        return float(np.mean(err / (h_true.shape[-2] * h_true.shape[-1])))
    raise ValueError(f"unknown loss kind {kind!r}")


def _loss_grad(h_hat: np.ndarray, h_true: np.ndarray, kind: str) -> np.ndarray:
    b = h_hat.shape[0]
    diff = h_hat - h_true
    if kind == "nmse_mean":
        denom = np.sum(h_true * h_true, axis=(-2, -1))
        return (2.0 / b) * diff / denom[:, None, None]
    if kind == "mse":
        return (2.0 / (b * h_true.shape[-2] * h_true.shape[-1])) * diff
    raise ValueError(f"unknown loss kind {kind!r}")


def _reduce_flat(prod: np.ndarray, cols: int, per_sample: bool):
    """Sum a flat (rows, B*cols) product, totally or per sample."""
    if per_sample:
        return prod.reshape(prod.shape[0], -1, cols).sum(axis=(0, 2))
    return float(np.sum(prod))


def _reduce_state(prod: np.ndarray, per_sample: bool):
    if per_sample:
        return prod.sum(axis=(1, 2))
    return float(np.sum(prod))


def backward_batch(
    y: np.ndarray,
    h_true: np.ndarray,
    w: np.ndarray,
    params: ListaParams,
    cfg: NetConfig,
    loss_kind: str = "nmse_mean",
    scalars: ScalarSet | None = None,
    wrt: str = "params",
):
    """Loss and exact reverse-mode gradients through the unrolled graph.

    wrt="params": gradients for every learnable in params (shared scalars),
    returned as a dict keyed like params.tensors().
    wrt="scalars": per-sample gradients of the 4T scalars only (transforms
    treated as frozen), returned as a ScalarSet of (B, T) arrays.
    """
    if wrt not in ("params", "scalars"):
        raise ValueError("wrt must be 'params' or 'scalars'")
    if scalars is None:
        scalars = ScalarSet.from_params(params)
    per_sample = wrt == "scalars"
    want_tr = wrt == "params"

    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    hp, tapes, _ = forward_batch(
        y, w, params, cfg, scalars=scalars, keep_tape=True, check_finite=True
    )
    loss = loss_value(hp, h_true, loss_kind)

    b = y.shape[0]
    n, m = cfg.n, cfg.m
    t_layers = cfg.t_layers
    wt = np.swapaxes(w, -1, -2)
    gram = np.matmul(wt, w)
    if per_sample:
        grads = ScalarSet(
            rho=np.zeros((b, t_layers)),
            rho_p=np.zeros((b, t_layers)),
            theta=np.zeros((b, t_layers)),
            theta_p=np.zeros((b, t_layers)),
        )
    else:
        grads = {name: np.zeros_like(arr) for name, arr in params.tensors().items()}

    dh_acc = np.zeros_like(hp)
    dhp = _loss_grad(hp, h_true, loss_kind)

    for t in reversed(range(t_layers)):
        tape = tapes[t]
        tr = params.transform_at(t)
        rho, rho_p, _, _ = scalars.at(t)
        key = "" if params.shared else f"layer{t}."

        # ---- beam-axis residual denoiser ----------------------------------
        du4p = _fold_beam(dhp)
        if want_tr:
            grads[key + "beam.a_inv"] += du4p @ tape.v3p.T
        dv3p = tr.beam.a_inv.T @ du4p
        du3p = np.multiply(dv3p, tape.v3p > 0.0, out=dv3p)
        if want_tr:
            grads[key + "beam.b_inv"] += du3p @ tape.sp.T
        dsp = tr.beam.b_inv.T @ du3p
        du2p = np.multiply(dsp, tape.sp != 0.0, out=dsp)
        # sign(sp) vanishes off the active set, so du2p carries the same terms
        g_theta_p = _reduce_flat(-np.sign(tape.sp) * du2p, m, per_sample)
        if want_tr:
            grads[key + "beam.b"] += du2p @ tape.v1p.T
        dv1p = tr.beam.b.T @ du2p
        du1p = np.multiply(dv1p, tape.v1p > 0.0, out=dv1p)
        if want_tr:
            grads[key + "beam.a"] += du1p @ tape.xp.T
        dxp = tr.beam.a.T @ du1p
        drp = dhp + _unfold_beam(dxp, b)

        # ---- second gradient stage ----------------------------------------
        g_rho_p = _reduce_state(-drp * tape.wg2, per_sample)
        dh = dh_acc + drp - _scale_state(np.matmul(gram, drp), rho_p)

        # ---- frequency-axis residual denoiser ------------------------------
        du4 = _fold_freq(dh)
        if want_tr:
            grads[key + "freq.a_inv"] += du4 @ tape.v3.T
        dv3 = tr.freq.a_inv.T @ du4
        du3 = np.multiply(dv3, tape.v3 > 0.0, out=dv3)
        if want_tr:
            grads[key + "freq.b_inv"] += du3 @ tape.s.T
        ds = tr.freq.b_inv.T @ du3
        du2 = np.multiply(ds, tape.s != 0.0, out=ds)
        g_theta = _reduce_flat(-np.sign(tape.s) * du2, n, per_sample)
        if want_tr:
            grads[key + "freq.b"] += du2 @ tape.v1.T
        dv1 = tr.freq.b.T @ du2
        du1 = np.multiply(dv1, tape.v1 > 0.0, out=dv1)
        if want_tr:
            grads[key + "freq.a"] += du1 @ tape.x.T
        dx = tr.freq.a.T @ du1
        dr = dh + _unfold_freq(dx, b)

        # ---- first gradient stage ------------------------------------------
        g_rho = _reduce_state(-dr * tape.wg, per_sample)
        back = np.matmul(gram, dr)
        if cfg.anchor_mode == "as_written":
            dh_acc = dr
            dhp = -_scale_state(back, rho)
        else:
            dh_acc = np.zeros_like(dr)
            dhp = dr - _scale_state(back, rho)

        if per_sample:
            grads.rho[:, t] = g_rho
            grads.rho_p[:, t] = g_rho_p
            grads.theta[:, t] = g_theta
            grads.theta_p[:, t] = g_theta_p
        else:
            grads["rho"][t] = g_rho
            grads["rho_p"][t] = g_rho_p
            grads["theta"][t] = g_theta
            grads["theta_p"][t] = g_theta_p

    return loss, grads
