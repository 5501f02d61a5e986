"""Losses and forecasting metrics: Huber, MAE, MSE and soft-DTW."""
from __future__ import annotations

import numpy as np


def huber_loss(pred, target, delta: float = 0.1) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    r = np.abs(pred - target)
    q = np.minimum(r, delta)
    return float(np.mean(0.5 * q ** 2 + delta * (r - q)))


def huber_grad(pred, target, delta: float = 0.1) -> np.ndarray:
    """Gradient of :func:`huber_loss` (mean-reduced) with respect to ``pred``."""
    r = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return np.clip(r, -delta, delta) / r.size


def mae(pred, target) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def mse(pred, target) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :, None]
    if x.ndim == 2:
        return x[:, :, None]
    return x


def soft_dtw_batch(a, b, gamma: float = 0.1) -> np.ndarray:
    """Soft-DTW values for pairs ``a[p], b[p]`` with squared Euclidean cost.

    ``a`` is ``P x n`` (or ``P x n x d``), ``b`` is ``P x m`` (or ``P x m x d``).
    ``gamma = 0`` gives the classical DTW distance.
    """
    a, b = _as_batch(a), _as_batch(b)
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("soft-DTW needs non-empty series")
    if a.shape[0] != b.shape[0]:
        raise ValueError("a and b must hold the same number of series")
    P, n, m = a.shape[0], a.shape[1], b.shape[1]
    at = np.transpose(a, (1, 0, 2))  # n x P x d
    bt = np.transpose(b, (1, 0, 2))
    # sweep anti-diagonals s = i + j keeping two previous ones, indexed by i
    d2 = np.full((n + 1, P), np.inf)  # diagonal s - 2
    d1 = np.full((n + 1, P), np.inf)  # diagonal s - 1
    d2[0] = 0.0  # R[0, 0]
    for s in range(2, n + m + 1):
        i0, i1 = max(1, s - m), min(n, s - 1)
        cost = np.sum((at[i0 - 1:i1] - bt[s - i1 - 1:s - i0][::-1]) ** 2, axis=-1)
        up, left, diag = d1[i0 - 1:i1], d1[i0:i1 + 1], d2[i0 - 1:i1]
        lo = np.minimum(np.minimum(up, left), diag)
        if gamma > 0:
            soft = lo - gamma * np.log(np.exp((lo - up) / gamma) + np.exp((lo - left) / gamma)
                                       + np.exp((lo - diag) / gamma))
        else:
            soft = lo
        cur = np.full((n + 1, P), np.inf)
        cur[i0:i1 + 1] = cost + soft
        d2, d1 = d1, cur
    return d1[n].copy()


def soft_dtw(a, b, gamma: float = 0.1, normalize: str = "divergence") -> float:
    """Soft-DTW between two series.

    ``normalize="divergence"`` returns ``sdtw(a,b) - (sdtw(a,a) + sdtw(b,b)) / 2``;
    ``"length"`` divides the raw value by ``len(a) + len(b)``; ``"none"`` is raw.
    """
    return float(soft_dtw_pairs(np.asarray(a)[None], np.asarray(b)[None], gamma, normalize)[0])


def soft_dtw_pairs(a, b, gamma: float = 0.1, normalize: str = "divergence") -> np.ndarray:
    raw = soft_dtw_batch(a, b, gamma)
    if normalize == "none":
        return raw
    if normalize == "length":
        return raw / (_as_batch(a).shape[1] + _as_batch(b).shape[1])
    if normalize == "divergence":
        return raw - 0.5 * (soft_dtw_batch(a, a, gamma) + soft_dtw_batch(b, b, gamma))
    raise ValueError(f"unknown normalization {normalize!r}")


def forecast_metrics(pred, target, gamma: float = 0.1, sdtw_normalize: str = "divergence") -> dict:
    """MAE, MSE and mean per-channel soft-DTW for ``B x C x K`` forecasts."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    K = pred.shape[-1]
    sd = soft_dtw_pairs(pred.reshape(-1, K), target.reshape(-1, K), gamma, sdtw_normalize)
    return {"mae": mae(pred, target), "mse": mse(pred, target), "sdtw": float(np.mean(sd))}
