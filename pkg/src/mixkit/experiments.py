"""Benchmark and sweep drivers shared by the command line and the test suite."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datagen import SPLITS, Dataset, DatasetManifest
from .metrics import (
    REPORT_CAP_DB,
    EvalExample,
    active_source_count,
    momi,
    msi,
    one_s,
    selection_score,
    summarize,
)
from .mixit import DEFAULT_MAX_ASSIGNMENTS, efficient_mixit, exhaustive_mixit
from .optimizer import LossConfig, check_semantic_kinds, optimize_estimates
from .semantic import BandEnergyClassifier
from .signal import MixtureBatch

log = logging.getLogger(__name__)

THREADS_ENV = "MIXKIT_THREADS"
SEPARABLE_SNR_DB = 20.0


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def _ordered_map(fn, items, workers):
    # results come back in input order either way, so output is independent of workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def random_instance(rng, n_refs, n_sources, length=256, separable=False,
                    snr_db=SEPARABLE_SNR_DB):
    """A reference batch and estimates for assignment benchmarks.

    Separable instances draw ``n_sources`` true sources, give each to a
    random reference (every reference gets at least one when possible)
    and return the true sources plus white noise ``snr_db`` below each.
    Otherwise references and estimates are independent Gaussian noise.
    """
    if not separable:
        return MixtureBatch(rng.standard_normal((n_refs, length))), rng.standard_normal((n_sources, length))
    sources = rng.standard_normal((n_sources, length))
    owner = rng.integers(n_refs, size=n_sources)
    if n_sources >= n_refs:
        owner[rng.choice(n_sources, n_refs, replace=False)] = np.arange(n_refs)
    refs = np.zeros((n_refs, length))
    np.add.at(refs, owner, sources)
    noise = rng.standard_normal((n_sources, length))
    scale = np.linalg.norm(sources, axis=1) / np.linalg.norm(noise, axis=1) * 10.0 ** (-snr_db / 20.0)
    return MixtureBatch(refs), sources + scale[:, None] * noise


@dataclass
class BenchRow:
    m: int
    n: int
    trials: int
    exhaustive_feasible: bool
    exhaustive_mean_s: float
    exhaustive_median_s: float
    efficient_mean_s: float
    efficient_median_s: float
    agreement: float
    mean_gap_db: float
    min_gap_db: float

    @property
    def speedup(self) -> float:
        if not self.exhaustive_feasible or self.efficient_mean_s == 0:
            return float("nan")
        return self.exhaustive_mean_s / self.efficient_mean_s


def bench_mixit(m_values, n_refs=2, trials=100, seed=0, length=256, separable=True,
                max_assignments=DEFAULT_MAX_ASSIGNMENTS) -> list:
    """Time exhaustive against efficient assignment on seeded instances."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rows = []
    for m in m_values:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(m,))))
        feasible = max_assignments is None or n_refs ** m <= max_assignments
        t_ex, t_eff, gaps, agree = [], [], [], []
        for _ in range(trials):
            batch, s = random_instance(rng, n_refs, m, length, separable)
            start = time.perf_counter()
            eff = efficient_mixit(batch, s)
            t_eff.append(time.perf_counter() - start)
            if feasible:
                start = time.perf_counter()
                ex = exhaustive_mixit(batch, s, max_assignments=max_assignments)
                t_ex.append(time.perf_counter() - start)
                gaps.append(eff.total_loss - ex.total_loss)
                agree.append(np.array_equal(eff.assignment, ex.assignment))
        nan = float("nan")
        rows.append(BenchRow(
            m=m, n=n_refs, trials=trials, exhaustive_feasible=feasible,
            exhaustive_mean_s=float(np.mean(t_ex)) if t_ex else nan,
            exhaustive_median_s=float(np.median(t_ex)) if t_ex else nan,
            efficient_mean_s=float(np.mean(t_eff)), efficient_median_s=float(np.median(t_eff)),
            agreement=float(np.mean(agree)) if agree else nan,
            mean_gap_db=float(np.mean(gaps)) if gaps else nan,
            min_gap_db=float(np.min(gaps)) if gaps else nan,
        ))
        log.info("bench M=%d done", m)
    return rows


def example_seed(seed: int, split: str, index: int) -> int:
    """Optimizer seed for one example, independent across splits."""
    return int(np.random.SeedSequence(seed, spawn_key=(SPLITS[split], index)).generate_state(1)[0])


def classifier_for(manifest: DatasetManifest) -> BandEnergyClassifier:
    return BandEnergyClassifier(
        bands=manifest.bands, sample_rate=manifest.sample_rate,
        reference_amplitude=manifest.classifier_reference_amplitude,
        headroom_db=manifest.classifier_headroom_db, span_db=manifest.classifier_span_db,
    ).fit()


@dataclass(frozen=True)
class RunSettings:
    """Optimizer settings applied to every example of an evaluation."""

    steps: int = 2000
    step_size: float = 1e-2
    seed: int = 0


def _optimize_one(task):
    kind, example_id, batch, labels, cfg, settings, seed, classifier = task
    res = optimize_estimates(batch, cfg, steps=settings.steps, step_size=settings.step_size,
                             seed=seed, classifier=classifier, labels=labels)
    return res.sources


def _tasks(dataset: Dataset, cfg: LossConfig, settings: RunSettings):
    classifier = None
    if cfg.uses_semantic:
        check_semantic_kinds(dataset.manifest.kinds)
        classifier = classifier_for(dataset.manifest)
    tasks = []
    for i, ex in enumerate(dataset.mom):
        tasks.append(("mom", ex.example_id, ex.batch, ex.labels, cfg, settings,
                      example_seed(settings.seed, "mom", i), classifier))
    for i, ex in enumerate(dataset.eval):
        if ex.n_sources != 1:
            continue
        tasks.append(("eval", ex.example_id, MixtureBatch(ex.mixture[None]), ex.labels, cfg, settings,
                      example_seed(settings.seed, "eval", i), classifier))
    return tasks


def optimize_dataset(dataset: Dataset, cfg: LossConfig, settings: RunSettings, workers: int = 1) -> dict:
    """Estimates for every MoM example and every single-source eval example.

    Returns ``{(split, example_id): sources}``.
    """
    tasks = _tasks(dataset, cfg, settings)
    results = _ordered_map(_optimize_one, tasks, workers)
    return {(t[0], t[1]): s for t, s in zip(tasks, results)}


def evaluate_estimates(dataset: Dataset, estimates: dict, cfg: LossConfig | None = None,
                       cap_db: float = REPORT_CAP_DB):
    """Per-example metric rows and their aggregate.

    MSi, MoMi and active counts come from the MoM examples (scored
    against their underlying sources); 1S comes from the single-source
    eval examples. Examples without estimates are skipped.
    """
    cfg = cfg or LossConfig()
    rows = []
    msi_vals, one_s_vals, momi_vals, counts = [], [], [], []
    for ex in dataset.mom:
        est = estimates.get(("mom", ex.example_id))
        if est is None:
            continue
        m = msi(EvalExample(ex.sources, ex.batch.mom, est), cap_db=cap_db)
        mo = momi(ex.batch, est, cfg.snr_max_db, cap_db=cap_db, max_assignments=cfg.max_assignments)
        active = active_source_count(est)
        rows.append({"split": "mom", "example_id": ex.example_id, "n_sources": ex.sources.shape[0],
                     "msi_db": m, "one_s_db": float("nan"), "momi_db": mo, "active_sources": active})
        msi_vals.append(m)
        momi_vals.append(mo)
        counts.append(active)
    for ex in dataset.single_source():
        est = estimates.get(("eval", ex.example_id))
        if est is None:
            continue
        v = one_s(EvalExample(ex.sources, ex.mixture, est), cap_db=cap_db)
        rows.append({"split": "eval", "example_id": ex.example_id, "n_sources": 1,
                     "msi_db": float("nan"), "one_s_db": v, "momi_db": float("nan"),
                     "active_sources": active_source_count(est)})
        one_s_vals.append(v)
    return rows, summarize(msi_vals, one_s_vals, momi_vals, counts)


def evaluate_config(dataset: Dataset, cfg: LossConfig, settings: RunSettings, workers: int = 1):
    estimates = optimize_dataset(dataset, cfg, settings, workers)
    return evaluate_estimates(dataset, estimates, cfg)


FAMILIES = {"l1": "weight_l1", "l1_l2": "weight_l1l2", "cov": "weight_cov",
            "ce": "weight_ce", "cos": "weight_cos"}


def sweep_configs(families, lambdas, m_values, base: LossConfig | None = None) -> list:
    """Grid of configs in (family, M, lambda) order."""
    base = base or LossConfig()
    configs = []
    for family in families:
        if family not in FAMILIES:
            raise ValueError(f"unknown loss family {family!r}; expected one of {sorted(FAMILIES)}")
        for m in m_values:
            for lam in lambdas:
                if lam < 0:
                    raise ValueError("sweep weights must be non-negative")
                configs.append((family, base.replace(n_sources=int(m), **{FAMILIES[family]: float(lam)})))
    return configs


def best_index(scores) -> int:
    """Index of the highest score; the first one wins ties, NaN never wins."""
    best, best_score = 0, -np.inf
    for i, s in enumerate(scores):
        if s > best_score:
            best, best_score = i, s
    return best


def sweep(configs, dataset: Dataset, settings: RunSettings, workers: int = 1) -> list:
    """One summary row per ``(family, LossConfig)``, best row flagged."""
    if not configs:
        raise ValueError("sweep needs at least one config")
    rows = []
    for family, cfg in configs:
        _, report = evaluate_config(dataset, cfg, settings, workers)
        rows.append({"family": family, "weight": getattr(cfg, FAMILIES[family]),
                     "n_sources": cfg.n_sources, **report.as_dict(), "best": 0})
        log.info("sweep %s weight=%g M=%d: MSi %.2f 1S %.2f", family, rows[-1]["weight"],
                 cfg.n_sources, report.msi_db, report.one_s_db)
    rows[best_index([selection_score(r["msi_db"], r["one_s_db"]) for r in rows])]["best"] = 1
    return rows
