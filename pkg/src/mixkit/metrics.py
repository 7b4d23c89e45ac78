"""Separation metrics: MSi, 1S, MoMi and the active-source count.

All alignments between references and estimates use a cubic-time
Hungarian solver on negative SI-SNR costs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_sources, check_waveform
from .mixit import DEFAULT_MAX_ASSIGNMENTS, mixit
from .signal import MixtureBatch, rms, si_snr

REPORT_CAP_DB = 100.0
INF_COST = 1e9
ACTIVE_REFERENCE_RATIO = 1e-4
DEFAULT_ACTIVITY_THRESHOLD_DB = -30.0


class NotApplicable(ValueError):
    """Raised when a metric is undefined for the given example."""


def hungarian_assign(cost) -> np.ndarray:
    """Minimum-cost injective assignment of rows to columns.

    Shortest augmenting path with dual potentials, O(R**2 C). Returns
    ``cols`` with ``cols[i]`` the column assigned to row ``i``.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n_rows, n_cols = cost.shape
    if n_rows > n_cols:
        raise ValueError(f"need rows <= columns, got {n_rows} x {n_cols}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    if n_rows == 0:
        return np.zeros(0, dtype=int)

    # 1-based potentials; column 0 is a virtual start
    u = np.zeros(n_rows + 1)
    v = np.zeros(n_cols + 1)
    row_of = np.zeros(n_cols + 1, dtype=int)
    way = np.zeros(n_cols + 1, dtype=int)
    for i in range(1, n_rows + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n_cols + 1, np.inf)
        used = np.zeros(n_cols + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1

    cols = np.full(n_rows, -1, dtype=int)
    for j in range(1, n_cols + 1):
        if row_of[j]:
            cols[row_of[j] - 1] = j - 1
    return cols


def _finite_cost(value_db):
    if value_db == np.inf:
        return -INF_COST
    if value_db == -np.inf:
        return INF_COST
    return -value_db


def _cap(value, cap_db):
    if cap_db is None:
        return value
    return float(np.clip(value, -cap_db, cap_db))


@dataclass
class EvalExample:
    """A mixture, its ground-truth sources and a set of estimates."""

    references: np.ndarray
    input_mixture: np.ndarray
    estimates: np.ndarray
    label_vector: np.ndarray | None = None

    def __post_init__(self):
        self.references = check_sources(self.references, name="references")
        self.input_mixture = check_waveform(self.input_mixture, name="input_mixture")
        self.estimates = check_sources(self.estimates, name="estimates")
        length = self.input_mixture.shape[0]
        if self.references.shape[1] != length or self.estimates.shape[1] != length:
            raise ValueError("references, mixture and estimates must share one length")

    def active_references(self) -> np.ndarray:
        floor = ACTIVE_REFERENCE_RATIO * rms(self.input_mixture, eps=0.0)
        keep = rms(self.references, eps=0.0) > floor
        return self.references[keep]


def aligned_si_snr(references, estimates):
    """Per-reference SI-SNR after Hungarian alignment to the estimates.

    With fewer estimates than references the estimates are padded with
    silence, so unmatched references score ``-inf``. Returned column
    indices at or beyond the estimate count point at padding.
    """
    refs = check_sources(references, name="references")
    ests = check_sources(estimates, name="estimates")
    if refs.shape[1] != ests.shape[1]:
        raise ValueError("references and estimates must share one length")
    if refs.shape[0] > ests.shape[0]:
        ests = np.concatenate([ests, np.zeros((refs.shape[0] - ests.shape[0], ests.shape[1]))])
    table = np.array([[si_snr(r, e) for e in ests] for r in refs])
    cost = np.vectorize(_finite_cost)(table)
    cols = hungarian_assign(cost)
    return table[np.arange(refs.shape[0]), cols], cols


def msi(example: EvalExample, cap_db: float | None = None) -> float:
    """Mean SI-SNR improvement over aligned pairs on multi-source inputs.

    With ``cap_db`` every per-pair improvement is clipped to
    ``[-cap_db, cap_db]`` before averaging; otherwise infinite SI-SNR
    values propagate.
    """
    active = example.active_references()
    if active.shape[0] == 0:
        raise ValueError("example has no active references")
    if active.shape[0] < 2:
        raise NotApplicable("MSi needs at least two active references")
    scores, _ = aligned_si_snr(active, example.estimates)
    baseline = np.array([si_snr(r, example.input_mixture) for r in active])
    improvement = [_cap(s - b, cap_db) for s, b in zip(scores, baseline)]
    return float(np.mean(improvement))


def one_s(example: EvalExample, cap_db: float | None = None) -> float:
    """Best single-output SI-SNR when the input is one isolated source."""
    active = example.active_references()
    if active.shape[0] != 1:
        raise NotApplicable("not a single-source example")
    best = max(si_snr(active[0], e) if np.any(e) else -np.inf for e in example.estimates)
    return _cap(best, cap_db)


def momi(batch, sources, snr_max_db: float = 30.0, cap_db: float | None = None,
         max_assignments: int | None = DEFAULT_MAX_ASSIGNMENTS, method: str = "auto") -> float:
    """Mean SI-SNR improvement of the reference mixtures rebuilt by MixIT."""
    batch = batch if isinstance(batch, MixtureBatch) else MixtureBatch(batch)
    if batch.n_references < 2:
        raise ValueError("MoMi needs at least two reference mixtures")
    result = mixit(batch, sources, snr_max_db, method=method, max_assignments=max_assignments)
    remix = result.assignment @ check_sources(sources)
    improvement = []
    for x, y in zip(batch.references, remix):
        # SI-SNR of a silent remix is 0/0; score it as no change from the input
        gain = si_snr(x, y) - si_snr(x, batch.mom) if np.any(y) else 0.0
        improvement.append(_cap(gain, cap_db))
    return float(np.mean(improvement))


def active_source_count(sources, threshold_db: float = DEFAULT_ACTIVITY_THRESHOLD_DB) -> int:
    """Number of sources within ``threshold_db`` of the level of their sum."""
    s = check_sources(sources)
    floor = rms(s.sum(axis=0), eps=0.0) * 10.0 ** (threshold_db / 20.0)
    return int(np.sum(rms(s, eps=0.0) >= floor))


@dataclass
class MetricsReport:
    """Aggregate metrics over a corpus, each capped at ``REPORT_CAP_DB``."""

    msi_db: float
    one_s_db: float
    momi_db: float
    counts: dict = field(default_factory=dict)
    mean_active_sources: float = float("nan")

    @property
    def selection_score(self) -> float:
        return selection_score(self.msi_db, self.one_s_db)

    def as_dict(self) -> dict:
        return {
            "msi_db": self.msi_db,
            "one_s_db": self.one_s_db,
            "momi_db": self.momi_db,
            "selection_score": self.selection_score,
            "mean_active_sources": self.mean_active_sources,
            **{f"n_{k}": v for k, v in self.counts.items()},
        }


def selection_score(msi_db: float, one_s_db: float) -> float:
    """Model-selection criterion weighting multi-source examples 3:1."""
    return 3.0 * msi_db + one_s_db


def _mean(values):
    return float(np.mean(values)) if values else float("nan")


def summarize(msi_values, one_s_values, momi_values, active_counts=()) -> MetricsReport:
    return MetricsReport(
        msi_db=_mean(list(msi_values)),
        one_s_db=_mean(list(one_s_values)),
        momi_db=_mean(list(momi_values)),
        counts={"msi": len(msi_values), "one_s": len(one_s_values), "momi": len(momi_values)},
        mean_active_sources=_mean(list(active_counts)),
    )
