"""Waveform primitives shared by the losses and the metrics.

Waveforms are 1-D float arrays of shape ``(T,)``. A set of M estimated
sources is an array of shape ``(M, T)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_sources, check_waveform

EPS_RMS = 1e-8
# residual-to-target energy ratio below which SI-SNR is reported as +inf;
# 240 dB sits far above any real signal and far below rounding noise
_SI_SNR_EXACT = 1e-24
DB_PER_NEPER = 10.0 / np.log(10.0)


class DegenerateSignalError(ValueError):
    """Raised when a reference or mixture is all zeros."""


@dataclass(frozen=True)
class MixtureBatch:
    """N reference mixtures and their sum, the mixture of mixtures."""

    references: np.ndarray

    def __post_init__(self):
        refs = check_sources(self.references, name="references")
        object.__setattr__(self, "references", refs)
        # accumulate in reference order so the mom is reproducible bit for bit
        mom = refs[0].copy()
        for r in refs[1:]:
            mom += r
        object.__setattr__(self, "_mom", mom)

    @property
    def mom(self) -> np.ndarray:
        return self._mom

    @property
    def n_references(self) -> int:
        return self.references.shape[0]

    @property
    def length(self) -> int:
        return self.references.shape[1]


def rms(w, eps: float = EPS_RMS):
    """Root-mean-square level along the last axis, smoothed by ``eps``.

    The smoothing keeps the value (and the sparsity losses built on it)
    differentiable at silent signals.
    """
    w = np.asarray(w, dtype=float)
    return np.sqrt(np.mean(w * w, axis=-1) + eps)


def snr_threshold(snr_max_db: float) -> float:
    if snr_max_db <= 0:
        raise ValueError("snr_max_db must be positive")
    return 10.0 ** (-snr_max_db / 10.0)


def thresholded_snr_loss(y, yhat, snr_max_db: float = 30.0) -> float:
    """Negative SNR of ``yhat`` against ``y``, soft-clamped at ``-snr_max_db``."""
    y = check_waveform(y, name="y")
    yhat = check_waveform(yhat, name="yhat")
    if y.shape != yhat.shape:
        raise ValueError("y and yhat must have the same length")
    ref_energy = float(np.dot(y, y))
    if ref_energy == 0.0:
        raise DegenerateSignalError("undefined reference: y is all zeros")
    err = y - yhat
    tau = snr_threshold(snr_max_db)
    return float(10.0 * np.log10(np.dot(err, err) / ref_energy + tau))


def thresholded_snr_loss_grad(y, yhat, snr_max_db: float = 30.0) -> np.ndarray:
    """Gradient of :func:`thresholded_snr_loss` with respect to ``yhat``."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    ref_energy = float(np.dot(y, y))
    if ref_energy == 0.0:
        raise DegenerateSignalError("undefined reference: y is all zeros")
    err = y - yhat
    denom = np.dot(err, err) + snr_threshold(snr_max_db) * ref_energy
    return -2.0 * DB_PER_NEPER * err / denom


def si_snr(ref, est) -> float:
    """Scale-invariant SNR in dB of ``est`` against ``ref``.

    The reference is projected onto the estimate's span (``alpha * ref``).
    A zero residual returns ``+inf`` and a zero projection returns ``-inf``;
    neither is clamped here.
    """
    ref = check_waveform(ref, name="ref")
    est = check_waveform(est, name="est")
    if ref.shape != est.shape:
        raise ValueError("ref and est must have the same length")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise DegenerateSignalError("undefined reference: ref is all zeros")
    alpha = float(np.dot(est, ref)) / ref_energy
    if alpha == 0.0:
        return -np.inf
    target = alpha * ref
    resid = est - target
    resid_energy = float(np.dot(resid, resid))
    target_energy = float(np.dot(target, target))
    if resid_energy <= _SI_SNR_EXACT * target_energy:
        return np.inf
    return float(10.0 * np.log10(target_energy / resid_energy))


def mixture_consistency_project(sources, mix) -> np.ndarray:
    """Shift every source by an equal share of the mixture residual.

    The returned sources sum to ``mix``; the projection is idempotent.
    """
    s = check_sources(sources)
    mix = check_waveform(mix, name="mix")
    if s.shape[1] != mix.shape[0]:
        raise ValueError("sources and mix must have the same length")
    resid = mix - s.sum(axis=0)
    return s + resid / s.shape[0]
