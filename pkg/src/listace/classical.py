"""Classical sparse-recovery baselines: ISTA with a fixed transform, and OMP.

ISTA alternates a gradient step on the data-fit term with soft thresholding
in an orthonormal transform domain; here the transform is the unitary DFT
along the frequency axis (frequency -> delay), where the multipath channel
is compressible.  OMP greedily matches combiner columns per subcarrier.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .measurement import Observation, nmse_batch

TRANSFORMS = ("identity", "frequency_dft")


def soft_threshold(x, theta):
    """sign(x) * max(0, |x| - theta), elementwise."""
    if np.any(np.asarray(theta) < 0):
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x)
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def freq_to_delay(h: np.ndarray) -> np.ndarray:
    """Unitary DFT over the M frequency bins, acting on the real stacking.

    h has shape (..., N, 2M); the two halves are reassembled into a complex
    N x M matrix, each row is transformed to the delay domain, and the result
    is re-stacked.  The map is orthonormal on R^{N x 2M}.
    """
    h = np.asarray(h, dtype=np.float64)
    m = h.shape[-1] // 2
    hc = h[..., :m] + 1j * h[..., m:]
    hd = np.fft.fft(hc, axis=-1) / np.sqrt(m)
    return np.concatenate([hd.real, hd.imag], axis=-1)


def delay_to_freq(h: np.ndarray) -> np.ndarray:
    """Inverse of freq_to_delay."""
    h = np.asarray(h, dtype=np.float64)
    m = h.shape[-1] // 2
    hd = h[..., :m] + 1j * h[..., m:]
    hc = np.fft.ifft(hd, axis=-1) * np.sqrt(m)
    return np.concatenate([hc.real, hc.imag], axis=-1)


@dataclass(frozen=True)
class IstaConfig:
    rho: float = 0.5
    lam: float = 1e-3
    iters: int = 200
    transform: str = "frequency_dft"

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("step size rho must be positive")
        if self.lam < 0:
            raise ValueError("regularization weight must be nonnegative")
        if self.iters < 1:
            raise ValueError("need at least one iteration")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")


def ista_batch(y: np.ndarray, w: np.ndarray, cfg: IstaConfig) -> np.ndarray:
    """Run ISTA on stacked observations.

    y: (..., QN_RF, 2M); w: matching selection entries, (QN_RF, N) or
    (..., QN_RF, N).  Returns (..., N, 2M).  Each iteration is
    R <- H - rho W^T (W H - Y), then H <- Psi^H soft(Psi R, rho*lam), the
    exact proximal step for the orthonormal transform Psi.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    wt = np.swapaxes(w, -1, -2)
    h = np.zeros(y.shape[:-2] + (w.shape[-1], y.shape[-1]))
    thr = cfg.rho * cfg.lam
    for _ in range(cfg.iters):
        r = h - cfg.rho * np.matmul(wt, np.matmul(w, h) - y)
        if cfg.transform == "frequency_dft":
            h = delay_to_freq(soft_threshold(freq_to_delay(r), thr))
        else:
            h = soft_threshold(r, thr)
    return h


def ista_estimate(obs: Observation, cfg: IstaConfig) -> np.ndarray:
    """ISTA estimate of the real-stacked channel from one observation."""
    return ista_batch(obs.y, obs.w.entries, cfg)


def ista_objective(h: np.ndarray, y: np.ndarray, w: np.ndarray, cfg: IstaConfig) -> float:
    """Composite objective 0.5||WH - Y||^2 + lam ||Psi H||_1 (diagnostic)."""
    fit = 0.5 * float(np.sum((w @ h - y) ** 2))
    z = freq_to_delay(h) if cfg.transform == "frequency_dft" else h
    return fit + cfg.lam * float(np.sum(np.abs(z)))


def tune_ista(
    y: np.ndarray,
    w: np.ndarray,
    h_true: np.ndarray,
    iters: int = 200,
    transform: str = "frequency_dft",
    rho_grid=None,
    lam_grid=None,
) -> IstaConfig:
    """Grid-search (rho, lam) minimizing mean NMSE on a held-out batch."""
    if rho_grid is None:
        rho_grid = np.round(np.arange(0.1, 1.01, 0.1), 10)
    if lam_grid is None:
        lam_grid = np.logspace(-4, -1, 7)
    best = None
    for rho, lam in product(rho_grid, lam_grid):
        cfg = IstaConfig(rho=float(rho), lam=float(lam), iters=iters, transform=transform)
        score = float(np.mean(nmse_batch(ista_batch(y, w, cfg), h_true)))
        if best is None or score < best[0]:
            best = (score, cfg)
    return best[1]


@dataclass(frozen=True)
class OmpConfig:
    sparsity: int = 12
    residual_tol: float | None = None

    def __post_init__(self):
        if self.sparsity < 0:
            raise ValueError("sparsity must be nonnegative")


def omp_columns(
    yc: np.ndarray, w: np.ndarray, sparsity: int, residual_tol: float | None = None
) -> np.ndarray:
    """Greedy per-column sparse recovery of X from Y ~ W X.

    yc: complex (QN_RF, M) measurements, one column per subcarrier; w: real
    (QN_RF, N) dictionary whose columns have unit norm by construction.
    All M columns run in lockstep: each round picks the best atom per column,
    refits by least squares on the grown support, and updates the residual.
    Columns that hit residual_tol keep their support frozen.
    """
    q_nrf, m = yc.shape
    n = w.shape[1]
    k = min(sparsity, q_nrf)
    x = np.zeros((n, m), dtype=np.complex128)
    if k == 0:
        return x
    support = np.zeros((m, k), dtype=np.intp)
    resid = yc.copy()
    init_norm = np.linalg.norm(yc, axis=0)
    active = init_norm > 0
    coef = np.zeros((m, k), dtype=np.complex128)
    n_sel = np.zeros(m, dtype=np.intp)
    for step in range(k):
        corr = np.abs(w.T @ resid)                       # (N, M)
        if step > 0:
            # atoms already picked must not repeat
            cols = np.repeat(np.arange(m), step)
            corr[support[:, :step].ravel(), cols] = -1.0
        support[:, step] = np.argmax(corr, axis=0)
        sel = w[:, support[:, : step + 1]]               # (QN_RF, M, step+1)
        a = np.moveaxis(sel, 1, 0)                       # (M, QN_RF, step+1)
        at = np.swapaxes(a, -1, -2)
        gram = at @ a                                    # (M, s, s)
        rhs = np.einsum("msq,qm->ms", at.astype(np.complex128), yc)
        try:
            sol = np.linalg.solve(gram.astype(np.complex128), rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            sol = np.stack(
                [np.linalg.lstsq(a[i], yc[:, i], rcond=None)[0] for i in range(m)]
            )
        coef[active, : step + 1] = sol[active]
        n_sel[active] = step + 1
        fitted = np.einsum("mqs,ms->qm", a.astype(np.complex128), coef[:, : step + 1])
        resid = np.where(active[None, :], yc - fitted, resid)
        if residual_tol is not None:
            active = active & (np.linalg.norm(resid, axis=0) > residual_tol * init_norm)
            if not np.any(active):
                break
    for i in range(m):
        x[support[i, : n_sel[i]], i] = coef[i, : n_sel[i]]
    return x


def omp_estimate(obs: Observation, cfg: OmpConfig) -> np.ndarray:
    """Per-subcarrier OMP estimate assembled back to the real stacking."""
    m = obs.y.shape[1] // 2
    yc = obs.y[:, :m] + 1j * obs.y[:, m:]
    x = omp_columns(yc, obs.w.entries, cfg.sparsity, cfg.residual_tol)
    return np.concatenate([x.real, x.imag], axis=1)


def default_omp_sparsity(n_paths: int) -> int:
    """Beam-window heuristic: roughly 4 beams capture one squinted path."""
    return max(1, 4 * n_paths)
