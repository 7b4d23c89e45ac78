"""Input checks shared across modules."""

import numpy as np


def check_waveform(w, name="waveform"):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {w.shape}")
    if w.shape[0] < 1:
        raise ValueError(f"{name} must have at least one sample")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} contains NaN or Inf")
    return w


def check_sources(s, name="sources", min_sources=1):
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[None, :]
    if s.ndim != 2:
        raise ValueError(f"{name} must have shape (M, T), got {s.shape}")
    if s.shape[0] < min_sources:
        raise ValueError(f"{name} needs at least {min_sources} rows, got {s.shape[0]}")
    if s.shape[1] < 1:
        raise ValueError(f"{name} must have at least one sample")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"{name} contains NaN or Inf")
    return s


def check_assignment(assignment, n_references, n_sources):
    """Validate a binary mixing matrix: one 1 per column."""
    a = np.asarray(assignment)
    if a.shape != (n_references, n_sources):
        raise ValueError(f"assignment must have shape {(n_references, n_sources)}, got {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("assignment entries must be 0 or 1")
    if not np.all(a.sum(axis=0) == 1):
        raise ValueError("every assignment column must sum to 1")
    return a.astype(float)
