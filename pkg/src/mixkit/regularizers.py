"""Over-separation penalties on a set of estimated sources.

``sparsity_l1`` and ``sparsity_l1_l2`` act on the per-source activity
(the smoothed RMS level of each source); ``covariance_loss`` sums the
absolute off-diagonal sample covariances. Each has an analytic gradient
with respect to the sources.
"""

from __future__ import annotations

import numpy as np

from ._validation import check_sources, check_waveform
from .signal import EPS_RMS, DegenerateSignalError, rms

REGULARIZERS = ("l1", "l1_l2", "cov")


def activity(sources, eps: float = EPS_RMS) -> np.ndarray:
    """Smoothed RMS level of every source, shape ``(M,)``."""
    return rms(check_sources(sources), eps)


def _activity_grad(s, r, d_r):
    # d rms / d s_{m,t} = s_{m,t} / (T r_m)
    return (d_r / (s.shape[1] * r))[:, None] * s


def _mix_level(mix, length):
    mix = check_waveform(mix, name="mix")
    if mix.shape[0] != length:
        raise ValueError("mix and sources must have the same length")
    if not np.any(mix):
        raise DegenerateSignalError("degenerate mixture: mix is all zeros")
    return float(rms(mix))


def sparsity_l1(sources, mix) -> float:
    """Mean source activity divided by the mixture level."""
    s = check_sources(sources)
    return float(np.mean(activity(s)) / _mix_level(mix, s.shape[1]))


def sparsity_l1_grad(sources, mix) -> np.ndarray:
    s = check_sources(sources)
    level = _mix_level(mix, s.shape[1])
    r = activity(s)
    return _activity_grad(s, r, np.full_like(r, 1.0 / (s.shape[0] * level)))


def l1_l2_ratio(r) -> float:
    """``||r||_1 / (M ||r||_2)`` for a non-negative activity vector.

    Lies in ``[1/M, 1/sqrt(M)]``: the lower bound for a single active
    entry, the upper bound for equal activities.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or r.shape[0] < 1:
        raise ValueError("activity vector must be 1-D and non-empty")
    if np.any(r < 0):
        raise ValueError("activities must be non-negative")
    norm2 = float(np.sqrt(np.dot(r, r)))
    if norm2 == 0.0:
        raise DegenerateSignalError("activity vector is all zeros")
    return float(r.sum() / (r.shape[0] * norm2))


def sparsity_l1_l2(sources) -> float:
    """Scale-invariant sparsity of the source activities."""
    return l1_l2_ratio(activity(sources))


def sparsity_l1_l2_grad(sources) -> np.ndarray:
    s = check_sources(sources)
    r = activity(s)
    m = r.shape[0]
    norm1 = r.sum()
    norm2 = np.sqrt(np.dot(r, r))
    d_r = (1.0 / norm2 - norm1 * r / norm2**3) / m
    return _activity_grad(s, r, d_r)


def _covariance(s):
    centered = s - s.mean(axis=1, keepdims=True)
    return centered, centered @ centered.T / s.shape[1]


def covariance_loss(sources) -> float:
    """Sum of absolute off-diagonal covariances, both orderings counted."""
    s = check_sources(sources, min_sources=2)
    _, cov = _covariance(s)
    off = np.abs(cov)
    return float(off.sum() - np.trace(off))


def covariance_loss_grad(sources) -> np.ndarray:
    s = check_sources(sources, min_sources=2)
    centered, cov = _covariance(s)
    # sign(0) == 0 doubles as the subgradient choice at the kink
    sign = np.sign(cov)
    np.fill_diagonal(sign, 0.0)
    return 2.0 * (sign @ centered) / s.shape[1]


def regularizer_value(sources, mix, which: str) -> float:
    if which == "l1":
        return sparsity_l1(sources, mix)
    if which == "l1_l2":
        return sparsity_l1_l2(sources)
    if which == "cov":
        return covariance_loss(sources)
    raise ValueError(f"unknown regularizer {which!r}; expected one of {REGULARIZERS}")


def regularizer_gradients(sources, mix, which: str) -> np.ndarray:
    """Analytic gradient of the selected regularizer w.r.t. the sources."""
    if which == "l1":
        return sparsity_l1_grad(sources, mix)
    if which == "l1_l2":
        return sparsity_l1_l2_grad(sources)
    if which == "cov":
        return covariance_loss_grad(sources)
    raise ValueError(f"unknown regularizer {which!r}; expected one of {REGULARIZERS}")
