"""Mixture invariant training (MixIT) assignment.

Each of the M estimated sources is assigned to exactly one of the N
reference mixtures; the loss is the summed thresholded SNR loss between
each reference and the sum of the sources assigned to it. Two solvers are
provided: an exhaustive search over all N**M assignments and a
least-squares solve projected to the nearest binary assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._validation import check_assignment, check_sources
from .signal import (
    DegenerateSignalError,
    MixtureBatch,
    snr_threshold,
    thresholded_snr_loss,
    thresholded_snr_loss_grad,
)

DEFAULT_MAX_ASSIGNMENTS = 2**15
RIDGE_SCALE = 1e-6

# Gram-form losses are only used to shortlist candidates; anything within
# this many dB of the shortlist minimum is re-scored on the waveforms.
_SHORTLIST_TOL_DB = 1e-6
_CHUNK = 2**14


class ExhaustiveSearchInfeasible(ValueError):
    """Raised when N**M exceeds the configured enumeration cap."""


@dataclass(frozen=True)
class MixitResult:
    assignment: np.ndarray
    total_loss: float
    per_reference_loss: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        """Reference index of every source (column-wise argmax)."""
        return np.argmax(self.assignment, axis=0)


def _as_batch(batch) -> MixtureBatch:
    return batch if isinstance(batch, MixtureBatch) else MixtureBatch(np.asarray(batch, dtype=float))


def _check_pair(batch, sources):
    batch = _as_batch(batch)
    s = check_sources(sources)
    if s.shape[1] != batch.length:
        raise ValueError(
            f"sources have length {s.shape[1]} but references have length {batch.length}"
        )
    return batch, s


def labels_to_assignment(labels, n_references: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    a = np.zeros((n_references, labels.shape[0]), dtype=int)
    a[labels, np.arange(labels.shape[0])] = 1
    return a


def evaluate_assignment(batch, sources, assignment, snr_max_db: float = 30.0) -> MixitResult:
    """Score a fixed binary assignment with the thresholded SNR loss."""
    batch, s = _check_pair(batch, sources)
    a = check_assignment(assignment, batch.n_references, s.shape[0])
    remix = a @ s
    per_ref = np.array(
        [thresholded_snr_loss(x, y, snr_max_db) for x, y in zip(batch.references, remix)]
    )
    return MixitResult(a.astype(int), float(per_ref.sum()), per_ref)


def enumerate_labels(n_references: int, n_sources: int, start: int = 0, stop: int | None = None):
    """Assignments as label rows in lexicographic order (first source most significant)."""
    total = n_references**n_sources
    stop = total if stop is None else min(stop, total)
    idx = np.arange(start, stop, dtype=np.int64)
    radix = n_references ** np.arange(n_sources - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // radix[None, :]) % n_references


def _gram_losses(labels, gram, cross, ref_energy, tau):
    """Thresholded loss of every label row, computed from inner products only."""
    n_refs = cross.shape[0]
    onehot = (labels[:, None, :] == np.arange(n_refs)[None, :, None]).astype(float)
    quad = np.einsum("knm,ml,knl->kn", onehot, gram, onehot)
    lin = np.einsum("knm,nm->kn", onehot, cross)
    err = np.maximum(ref_energy[None, :] - 2.0 * lin + quad, 0.0)
    per_ref = 10.0 * np.log10(err / ref_energy[None, :] + tau)
    return per_ref.sum(axis=1)


def exhaustive_mixit(
    batch,
    sources,
    snr_max_db: float = 30.0,
    max_assignments: int | None = DEFAULT_MAX_ASSIGNMENTS,
) -> MixitResult:
    """Minimize the MixIT loss by enumerating all N**M binary assignments.

    Ties go to the lexicographically smallest label vector. Pass
    ``max_assignments=None`` to lift the enumeration cap.
    """
    batch, s = _check_pair(batch, sources)
    n, m = batch.n_references, s.shape[0]
    total = n**m
    if max_assignments is not None and total > max_assignments:
        raise ExhaustiveSearchInfeasible(
            f"exhaustive search infeasible: {n}**{m} = {total} assignments exceeds cap {max_assignments}"
        )
    refs = batch.references
    ref_energy = np.einsum("nt,nt->n", refs, refs)
    if np.any(ref_energy == 0.0):
        raise DegenerateSignalError("undefined reference: a reference mixture is all zeros")
    gram = s @ s.T
    cross = refs @ s.T
    tau = snr_threshold(snr_max_db)

    losses = np.empty(total)
    for start in range(0, total, _CHUNK):
        labels = enumerate_labels(n, m, start, start + _CHUNK)
        losses[start : start + labels.shape[0]] = _gram_losses(labels, gram, cross, ref_energy, tau)

    shortlist = np.flatnonzero(losses <= losses.min() + _SHORTLIST_TOL_DB)
    best = None
    for k in shortlist:
        labels = enumerate_labels(n, m, int(k), int(k) + 1)[0]
        res = evaluate_assignment(batch, s, labels_to_assignment(labels, n), snr_max_db)
        if best is None or res.total_loss < best.total_loss:
            best = res
    return best


def least_squares_mixing(batch, sources) -> np.ndarray:
    """Real-valued N x M mixing matrix minimizing ||x - A s||_F**2.

    A small ridge term proportional to the mean source energy keeps the
    solve well posed when sources are silent or collinear.
    """
    batch, s = _check_pair(batch, sources)
    m = s.shape[0]
    gram = s @ s.T
    cross = batch.references @ s.T
    trace = float(np.trace(gram))
    if trace == 0.0:
        return np.zeros((batch.n_references, m))
    ridge = RIDGE_SCALE * trace / m
    system = gram + ridge * np.eye(m)
    try:
        return scipy.linalg.solve(system, cross.T, assume_a="pos").T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return cross @ np.linalg.pinv(system, hermitian=True)


def project_to_binary(mixing) -> np.ndarray:
    """Set the largest entry of each column to 1 and the rest to 0.

    Ties go to the lowest row index.
    """
    mixing = np.asarray(mixing, dtype=float)
    if mixing.ndim != 2 or mixing.shape[0] < 1:
        raise ValueError(f"mixing matrix must be 2-D with at least one row, got {mixing.shape}")
    return labels_to_assignment(np.argmax(mixing, axis=0), mixing.shape[0])


def efficient_mixit(batch, sources, snr_max_db: float = 30.0) -> MixitResult:
    """Least-squares MixIT: solve for a real mixing matrix, then binarize it."""
    batch, s = _check_pair(batch, sources)
    assignment = project_to_binary(least_squares_mixing(batch, s))
    return evaluate_assignment(batch, s, assignment, snr_max_db)


def mixit(
    batch,
    sources,
    snr_max_db: float = 30.0,
    method: str = "auto",
    max_assignments: int | None = DEFAULT_MAX_ASSIGNMENTS,
) -> MixitResult:
    """Dispatch to the exhaustive solver when feasible, else the efficient one."""
    batch, s = _check_pair(batch, sources)
    if method == "auto":
        feasible = max_assignments is None or batch.n_references ** s.shape[0] <= max_assignments
        method = "exhaustive" if feasible else "efficient"
    if method == "exhaustive":
        return exhaustive_mixit(batch, s, snr_max_db, max_assignments)
    if method == "efficient":
        return efficient_mixit(batch, s, snr_max_db)
    raise ValueError(f"unknown MixIT method {method!r}")


def mixit_loss_gradient(batch, sources, snr_max_db, assignment) -> np.ndarray:
    """Gradient of the MixIT loss w.r.t. the sources, holding the assignment fixed."""
    batch, s = _check_pair(batch, sources)
    a = check_assignment(assignment, batch.n_references, s.shape[0])
    remix = a @ s
    per_ref = np.stack(
        [thresholded_snr_loss_grad(x, y, snr_max_db) for x, y in zip(batch.references, remix)]
    )
    return a.T @ per_ref
