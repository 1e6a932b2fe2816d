"""Unrolled learned channel estimator.

The estimator runs T layers, each chaining four stages on the real-stacked
channel matrix: a gradient step on the data-fit term in the beam-frequency
domain, a residual denoiser acting along the frequency axis, a second
gradient step, and a residual denoiser acting along the beam axis.  Both
denoisers soft-threshold inside a learned two-layer sparsifying transform and
map back through an independently learned two-layer inverse transform.
Step sizes and thresholds are learned per layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classical import soft_threshold

ANCHOR_MODES = ("as_written", "primed")


@dataclass(frozen=True)
class NetConfig:
    """Architecture of the unrolled estimator for an N x 2M channel."""

    t_layers: int = 7
    w1: int = 128
    w2: int = 256
    share_transforms: bool = True
    anchor_mode: str = "as_written"
    n: int = 32
    m: int = 32

    def __post_init__(self):
        if self.t_layers < 1:
            raise ValueError("need at least one layer")
        if self.w1 < 1 or self.w2 < 1:
            raise ValueError("transform widths must be >= 1")
        if self.anchor_mode not in ANCHOR_MODES:
            raise ValueError(f"anchor_mode must be one of {ANCHOR_MODES}")
        if self.n < 1 or self.m < 1:
            raise ValueError("channel dimensions must be >= 1")


@dataclass(frozen=True)
class LayerScalars:
    """Step sizes and soft thresholds of one layer."""

    rho: float
    rho_p: float
    theta: float
    theta_p: float


@dataclass
class DomainTransform:
    """Weights of a sparsifying transform and its (independent) inverse.

    Forward: z = b @ relu(a @ x); inverse: x = a_inv @ relu(b_inv @ z).
    """

    a: np.ndarray
    b: np.ndarray
    b_inv: np.ndarray
    a_inv: np.ndarray

    def check_shapes(self, width_in: int, w1: int, w2: int):
        expect = {
            "a": (w1, width_in),
            "b": (w2, w1),
            "b_inv": (w1, w2),
            "a_inv": (width_in, w1),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass
class TransformParams:
    """One layer's (or the shared) pair of transforms: frequency and beam axis."""

    freq: DomainTransform
    beam: DomainTransform


@dataclass
class ListaParams:
    """All learnables: per-layer scalars plus shared or per-layer transforms."""

    rho: np.ndarray
    rho_p: np.ndarray
    theta: np.ndarray
    theta_p: np.ndarray
    transforms: TransformParams | list[TransformParams]

    @property
    def t_layers(self) -> int:
        return self.rho.shape[0]

    @property
    def shared(self) -> bool:
        return isinstance(self.transforms, TransformParams)

    def transform_at(self, t: int) -> TransformParams:
        return self.transforms if self.shared else self.transforms[t]

    def scalars(self, t: int) -> LayerScalars:
        return LayerScalars(
            rho=float(self.rho[t]),
            rho_p=float(self.rho_p[t]),
            theta=float(self.theta[t]),
            theta_p=float(self.theta_p[t]),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        """Canonical name -> array views of every learnable (no copies)."""
        out = {
            "rho": self.rho,
            "rho_p": self.rho_p,
            "theta": self.theta,
            "theta_p": self.theta_p,
        }
        if self.shared:
            groups = [("", self.transforms)]
        else:
            groups = [(f"layer{t}.", tr) for t, tr in enumerate(self.transforms)]
        for prefix, tr in groups:
            for dom_name, dom in (("freq", tr.freq), ("beam", tr.beam)):
                for w_name in ("a", "b", "b_inv", "a_inv"):
                    out[f"{prefix}{dom_name}.{w_name}"] = getattr(dom, w_name)
        return out

    def n_params(self) -> int:
        return sum(arr.size for arr in self.tensors().values())

    def copy(self) -> "ListaParams":
        def cp_tr(tr: TransformParams) -> TransformParams:
            return TransformParams(
                freq=DomainTransform(*(getattr(tr.freq, k).copy() for k in ("a", "b", "b_inv", "a_inv"))),
                beam=DomainTransform(*(getattr(tr.beam, k).copy() for k in ("a", "b", "b_inv", "a_inv"))),
            )

        tr = self.transforms
        return ListaParams(
            rho=self.rho.copy(),
            rho_p=self.rho_p.copy(),
            theta=self.theta.copy(),
            theta_p=self.theta_p.copy(),
            transforms=cp_tr(tr) if self.shared else [cp_tr(x) for x in tr],
        )


def _gaussian(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    # variance 2 / fan_in, where fan_in is the input dimension (columns)
    return rng.standard_normal(shape) * np.sqrt(2.0 / shape[1])


def _init_domain(rng: np.random.Generator, width_in: int, cfg: NetConfig) -> DomainTransform:
    return DomainTransform(
        a=_gaussian(rng, (cfg.w1, width_in)),
        b=_gaussian(rng, (cfg.w2, cfg.w1)),
        b_inv=_gaussian(rng, (cfg.w1, cfg.w2)),
        a_inv=_gaussian(rng, (width_in, cfg.w1)),
    )


def init_params(rng: np.random.Generator, cfg: NetConfig) -> ListaParams:
    """Fresh learnables: Gaussian transform weights, rho = 0.5, theta = 0.01."""
    t = cfg.t_layers

    def one() -> TransformParams:
        return TransformParams(
            freq=_init_domain(rng, 2 * cfg.m, cfg),
            beam=_init_domain(rng, 2 * cfg.n, cfg),
        )

    transforms = one() if cfg.share_transforms else [one() for _ in range(t)]
    return ListaParams(
        rho=np.full(t, 0.5),
        rho_p=np.full(t, 0.5),
        theta=np.full(t, 0.01),
        theta_p=np.full(t, 0.01),
        transforms=transforms,
    )


def param_count(cfg: NetConfig) -> int:
    """Learnable scalar count, walked structurally off the parameter containers."""
    return init_params(np.random.default_rng(0), cfg).n_params()


# ---------------------------------------------------------------------------
# single-sample stage operations (readable reference path)
# ---------------------------------------------------------------------------


def grad_step_freq(h_prev, h_prev_primed, y, w, rho, anchor_mode="as_written"):
    """Gradient stage: anchor - rho * W^T (W h_prev_primed - Y).

    In "as_written" mode the anchor is the unprimed previous state; in
    "primed" mode both occurrences use the primed state.  At the first layer
    both inputs are zero, so the two modes coincide.
    """
    if anchor_mode not in ANCHOR_MODES:
        raise ValueError(f"anchor_mode must be one of {ANCHOR_MODES}")
    anchor = h_prev if anchor_mode == "as_written" else h_prev_primed
    return anchor - rho * w.T @ (w @ h_prev_primed - y)


def sparse_transform_freq(r: np.ndarray, tr: DomainTransform) -> np.ndarray:
    """b @ relu(a @ r^T): maps N x 2M to w2 x N, mixing the frequency axis."""
    return tr.b @ np.maximum(tr.a @ r.T, 0.0)


def inverse_transform_freq(z: np.ndarray, tr: DomainTransform) -> np.ndarray:
    """(a_inv @ relu(b_inv @ z))^T: maps w2 x N back to N x 2M."""
    return (tr.a_inv @ np.maximum(tr.b_inv @ z, 0.0)).T


def denoise_freq(r: np.ndarray, tr: DomainTransform, theta: float) -> np.ndarray:
    """Residual denoiser along the frequency axis."""
    return r + inverse_transform_freq(soft_threshold(sparse_transform_freq(r, tr), theta), tr)


def grad_step_beam(h_t, y, w, rho_p):
    """Second gradient stage: h_t - rho_p * W^T (W h_t - Y)."""
    return h_t - rho_p * w.T @ (w @ h_t - y)


def trans(rp: np.ndarray) -> np.ndarray:
    """Block transpose [Rp(:, :M)^T | Rp(:, M:)^T]: N x 2M -> M x 2N."""
    m = rp.shape[1] // 2
    return np.concatenate([rp[:, :m].T, rp[:, m:].T], axis=1)


def trans_inv(x: np.ndarray) -> np.ndarray:
    """Exact inverse of trans: M x 2N -> N x 2M."""
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n].T, x[:, n:].T], axis=1)


def sparse_transform_beam(x: np.ndarray, tr: DomainTransform) -> np.ndarray:
    """b @ relu(a @ x^T): maps M x 2N to w2 x M, mixing the beam axis."""
    return tr.b @ np.maximum(tr.a @ x.T, 0.0)


def inverse_transform_beam(z: np.ndarray, tr: DomainTransform) -> np.ndarray:
    """(a_inv @ relu(b_inv @ z))^T: maps w2 x M back to M x 2N."""
    return (tr.a_inv @ np.maximum(tr.b_inv @ z, 0.0)).T


def denoise_beam(rp: np.ndarray, tr: DomainTransform, theta_p: float) -> np.ndarray:
    """Residual denoiser along the beam axis, conjugated by the block transpose."""
    z = soft_threshold(sparse_transform_beam(trans(rp), tr), theta_p)
    return rp + trans_inv(inverse_transform_beam(z, tr))


def forward(y, params: ListaParams, cfg: NetConfig, w=None, emit_per_layer: bool = False):
    """Run the unrolled estimator on one observation.

    y is an Observation or a (QN_RF x 2M) array with w supplied separately.
    Returns the final N x 2M estimate, or (final, [per-layer estimates]) when
    emit_per_layer is set.
    """
    if hasattr(y, "w"):
        w = y.w.entries
        y = y.y
    if w is None:
        raise ValueError("selection matrix entries are required")
    if params.t_layers != cfg.t_layers:
        raise ValueError("parameter set and config disagree on layer count")
    h = np.zeros((cfg.n, 2 * cfg.m))
    hp = np.zeros((cfg.n, 2 * cfg.m))
    outs = []
    for t in range(cfg.t_layers):
        tr = params.transform_at(t)
        s = params.scalars(t)
        r = grad_step_freq(h, hp, y, w, s.rho, cfg.anchor_mode)
        h = denoise_freq(r, tr.freq, s.theta)
        rp = grad_step_beam(h, y, w, s.rho_p)
        hp = denoise_beam(rp, tr.beam, s.theta_p)
        if emit_per_layer:
            outs.append(hp.copy())
    return (hp, outs) if emit_per_layer else hp
