"""Classification-based losses on per-source class posteriors.

Posteriors are arrays of shape ``(M, K)``: one K-class probability vector
per estimated source. Weak labels are binary vectors of shape ``(K,)``
describing the whole mixture.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .signal import DB_PER_NEPER

EPS_CE = 1e-7
EPS_COS = 1e-12
AGGREGATORS = ("or", "xor")


def check_posteriors(p, min_sources=1):
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2 or p.shape[0] < min_sources or p.shape[1] < 1:
        raise ValueError(f"posteriors must have shape (M, K) with M >= {min_sources}, got {p.shape}")
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise ValueError("posterior entries must lie in [0, 1]")
    return p


def check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if labels.shape[0] != n_classes:
        raise ValueError(f"expected {n_classes} labels, got {labels.shape[0]}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValueError("labels must be 0 or 1")
    return labels


def _leave_one_out_products(q):
    """``out[m] = prod_{m' != m} q[m']`` along axis 0, without division."""
    m = q.shape[0]
    ones = np.ones((1,) + q.shape[1:])
    prefix = np.concatenate([ones, np.cumprod(q, axis=0)[:-1]], axis=0)
    suffix = np.concatenate([np.cumprod(q[::-1], axis=0)[::-1][1:], ones], axis=0)
    return prefix[:m] * suffix


def aggregate_or(p) -> np.ndarray:
    """Soft logical OR across sources: ``1 - prod_m (1 - p_m)``."""
    p = check_posteriors(p)
    return 1.0 - np.prod(1.0 - p, axis=0)


def aggregate_or_grad(p) -> np.ndarray:
    p = check_posteriors(p)
    return _leave_one_out_products(1.0 - p)


def aggregate_xor(p) -> np.ndarray:
    """Soft one-hot XOR: probability that exactly one source is active."""
    p = check_posteriors(p)
    return np.sum(p * _leave_one_out_products(1.0 - p), axis=0)


def aggregate_xor_grad(p) -> np.ndarray:
    p = check_posteriors(p)
    q = 1.0 - p
    m = p.shape[0]
    grad = _leave_one_out_products(q)
    for j in range(m):
        others = np.delete(np.arange(m), j)
        # sum over m != j of p_m * prod_{m' not in {m, j}} q_m'
        grad[j] -= np.sum(p[others] * _leave_one_out_products(q[others]), axis=0)
    return grad


def _aggregate(p, aggregator):
    if aggregator == "or":
        return aggregate_or(p), aggregate_or_grad(p)
    if aggregator == "xor":
        return aggregate_xor(p), aggregate_xor_grad(p)
    raise ValueError(f"unknown aggregator {aggregator!r}; expected one of {AGGREGATORS}")


def ce_loss(p, labels, aggregator: str = "or") -> float:
    """Binary cross entropy (natural log) between the aggregate posterior and weak labels."""
    p = check_posteriors(p)
    labels = check_labels(labels, p.shape[1])
    agg, _ = _aggregate(p, aggregator)
    agg = np.clip(agg, EPS_CE, 1.0 - EPS_CE)
    return float(-np.sum(labels * np.log(agg) + (1.0 - labels) * np.log(1.0 - agg)))


def ce_loss_grad(p, labels, aggregator: str = "or") -> np.ndarray:
    p = check_posteriors(p)
    labels = check_labels(labels, p.shape[1])
    agg, d_agg = _aggregate(p, aggregator)
    inside = (agg > EPS_CE) & (agg < 1.0 - EPS_CE)
    a = np.clip(agg, EPS_CE, 1.0 - EPS_CE)
    d_loss = np.where(inside, -labels / a + (1.0 - labels) / (1.0 - a), 0.0)
    return d_agg * d_loss[None, :]


def _pairwise_cosine(p):
    sq = np.einsum("mk,mk->m", p, p)
    denom = np.sqrt(np.maximum(np.outer(sq, sq), EPS_COS**2))
    return (p @ p.T) / denom, sq, denom


def cosine_loss(p) -> float:
    """Mean over source pairs of ``1 + cos(p_m, p_m')``."""
    p = check_posteriors(p, min_sources=2)
    m = p.shape[0]
    cos, _, _ = _pairwise_cosine(p)
    iu = np.triu_indices(m, k=1)
    return float(2.0 / (m * (m - 1)) * np.sum(1.0 + cos[iu]))


def cosine_loss_grad(p) -> np.ndarray:
    p = check_posteriors(p, min_sources=2)
    m = p.shape[0]
    cos, sq, denom = _pairwise_cosine(p)
    np.fill_diagonal(cos, 0.0)
    inv = 1.0 / denom
    np.fill_diagonal(inv, 0.0)
    safe_sq = np.maximum(sq, EPS_COS)
    # d cos(a, b) / d a = b / (|a||b|) - cos(a, b) a / |a|^2
    grad = inv @ p - (cos.sum(axis=1) / safe_sq)[:, None] * p
    return 2.0 / (m * (m - 1)) * grad


def band_energies(waveforms, bands, sample_rate):
    """Mean power of each waveform inside each frequency band.

    Returns ``(energies, filtered)`` with shapes ``(n, K)`` and
    ``(n, K, T)``; ``filtered`` holds the band-passed signals, which are
    also the gradient direction of the energies.
    """
    w = np.atleast_2d(np.asarray(waveforms, dtype=float))
    t = w.shape[1]
    spectrum = np.fft.rfft(w, axis=1)
    freqs = np.fft.rfftfreq(t, d=1.0 / sample_rate)
    masks = np.stack([(freqs >= lo) & (freqs <= hi) for lo, hi in bands])
    filtered = np.fft.irfft(spectrum[:, None, :] * masks[None, :, :], n=t, axis=2)
    energies = np.einsum("nkt,nt->nk", filtered, w) / t
    return energies, filtered


def check_bands(bands, sample_rate):
    bands = [tuple(float(v) for v in b) for b in bands]
    if not bands:
        raise ValueError("at least one band is required")
    nyquist = sample_rate / 2.0
    for lo, hi in bands:
        if not 0.0 < lo < hi < nyquist:
            raise ValueError(f"band ({lo}, {hi}) must satisfy 0 < lo < hi < {nyquist}")
    ordered = sorted(bands)
    for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
        if lo <= hi:
            raise ValueError("bands must not overlap")
    return bands


class BandEnergyClassifier(ClassifierMixin, BaseEstimator):
    """Toy multi-label classifier scoring log band energy through a sigmoid.

    Class ``k`` is "present" when the waveform carries power in band ``k``.
    Without training data, ``fit`` places the 0.95 score point
    ``headroom_db`` below the power of a full-scale tone of
    ``reference_amplitude`` and the 0.05 point ``span_db`` lower still.
    With waveforms and multi-label targets, those points are instead set
    from the weakest positive and strongest negative band level per class.

    Parameters
    ----------
    bands : list of (low_hz, high_hz)
    sample_rate : int
    reference_amplitude : float
    headroom_db : float
    span_db : float
    """

    def __init__(self, bands=((100.0, 300.0),), sample_rate=8000, reference_amplitude=0.5,
                 headroom_db=12.0, span_db=20.0):
        self.bands = bands
        self.sample_rate = sample_rate
        self.reference_amplitude = reference_amplitude
        self.headroom_db = headroom_db
        self.span_db = span_db

    def _levels(self, X):
        energies, filtered = band_energies(X, self.bands_, self.sample_rate)
        return DB_PER_NEPER * np.log(energies + self._floor), energies, filtered

    _floor = 1e-12

    def fit(self, X=None, y=None):
        self.bands_ = check_bands(self.bands, self.sample_rate)
        k = len(self.bands_)
        if X is None:
            ref_db = 10.0 * np.log10(self.reference_amplitude**2 / 2.0)
            hi = np.full(k, ref_db - self.headroom_db)
            lo = hi - self.span_db
        else:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            y = np.atleast_2d(np.asarray(y, dtype=float))
            if y.shape != (X.shape[0], k):
                raise ValueError(f"y must have shape {(X.shape[0], k)}, got {y.shape}")
            levels, _, _ = self._levels(X)
            hi = np.empty(k)
            lo = np.empty(k)
            for c in range(k):
                pos = levels[y[:, c] == 1, c]
                neg = levels[y[:, c] == 0, c]
                if pos.size == 0 or neg.size == 0:
                    raise ValueError(f"class {c} needs positive and negative examples")
                hi[c] = pos.min() - 1.0
                lo[c] = neg.max() + 1.0
                if hi[c] <= lo[c]:
                    raise ValueError(f"class {c} is not separable by band level")
        self.n_classes_ = k
        self.classes_ = np.arange(k)
        self.bias_ = (hi + lo) / 2.0
        self.slope_ = 2.0 * np.log(19.0) / (hi - lo)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "slope_")
        levels, _, _ = self._levels(X)
        return self.slope_ * (levels - self.bias_)

    def predict_proba(self, X):
        return 1.0 / (1.0 + np.exp(-self.decision_function(X)))

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)

    def proba_and_backprop(self, X, upstream=None):
        """Posteriors and, when ``upstream`` (dL/dp) is given, dL/dX.

        The returned gradient has the shape of ``X`` as a 2-D array.
        """
        check_is_fitted(self, "slope_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        levels, energies, filtered = self._levels(X)
        p = 1.0 / (1.0 + np.exp(-self.slope_ * (levels - self.bias_)))
        if upstream is None:
            return p, None
        d_level = np.asarray(upstream, dtype=float) * p * (1.0 - p) * self.slope_
        d_energy = d_level * DB_PER_NEPER / (energies + self._floor)
        grad = np.einsum("nk,nkt->nt", d_energy, filtered) * (2.0 / X.shape[1])
        return p, grad
