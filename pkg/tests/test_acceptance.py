"""End-to-end acceptance checks.

Each test records a single PASS/FAIL line (collected in the ``acceptance``
section of the terminal summary) and fails when its check does not hold.
"""

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from mixkit.cli import main
from mixkit.datagen import DatasetManifest, generate_dataset, write_dataset
from mixkit.experiments import (
    RunSettings,
    bench_mixit,
    best_index,
    evaluate_config,
    evaluate_estimates,
    worker_count,
)
from mixkit.metrics import REPORT_CAP_DB, hungarian_assign, selection_score
from mixkit.mixit import exhaustive_mixit, mixit_loss_gradient
from mixkit.optimizer import LossConfig, optimize_estimates
from mixkit.regularizers import (
    activity,
    covariance_loss,
    covariance_loss_grad,
    l1_l2_ratio,
    sparsity_l1,
    sparsity_l1_grad,
    sparsity_l1_l2,
    sparsity_l1_l2_grad,
)
from mixkit.semantic import (
    EPS_CE,
    aggregate_or,
    aggregate_xor,
    ce_loss,
    ce_loss_grad,
    cosine_loss,
    cosine_loss_grad,
)
from mixkit.signal import MixtureBatch, snr_threshold, thresholded_snr_loss

GRAD_POINTS = 100
GRAD_TOL = 1e-4

# two true sources per MoM (one per reference mixture) and single-source probes
OVERSEP_MANIFEST = DatasetManifest(
    seed=1, clip_seconds=0.25, min_support_seconds=0.125,
    n_eval=20, eval_min_sources=1, eval_max_sources=1,
    n_mom=20, mom_min_sources=1, mom_max_sources=1,
)
OVERSEP_M = 8
OVERSEP_GRID = (0.0, 30.0, 300.0, 3000.0, 30000.0)

SMALL_MANIFEST = DatasetManifest(seed=5, clip_seconds=0.1, min_support_seconds=0.05, n_eval=12, n_mom=6)


def test_efficient_assignment_bounds_exhaustive(verdict):
    start = time.perf_counter()
    grid = range(2, 9)
    separable = bench_mixit(grid, n_refs=2, trials=1000, seed=11, separable=True)
    noise = bench_mixit(grid, n_refs=2, trials=1000, seed=12, separable=False)
    elapsed = time.perf_counter() - start
    worst_gap = min(r.min_gap_db for r in separable + noise)
    worst_agree = min(r.agreement for r in separable)
    ok = worst_gap >= 0.0 and worst_agree >= 0.95 and elapsed < 60.0
    verdict("efficient MixIT never beats exhaustive; agreement on separable instances",
            ok, f"min gap {worst_gap:.3g} dB, min agreement {worst_agree:.3f}, {elapsed:.1f}s")


def test_efficient_assignment_speedup_at_16_outputs(verdict):
    start = time.perf_counter()
    (row,) = bench_mixit([16], n_refs=2, trials=20, seed=13, max_assignments=None)
    elapsed = time.perf_counter() - start
    ok = row.speedup >= 10.0 and elapsed < 300.0
    verdict("efficient MixIT speedup at N=2, M=16", ok,
            f"{row.speedup:.0f}x (exhaustive {row.exhaustive_mean_s * 1e3:.1f} ms, "
            f"efficient {row.efficient_mean_s * 1e3:.2f} ms), {elapsed:.1f}s")


def test_loss_value_anchors(verdict):
    rng = np.random.default_rng(3)
    tau = snr_threshold(30.0)
    perfect = [thresholded_snr_loss(y, y) for y in rng.standard_normal((50, 64))]
    errors = [abs(thresholded_snr_loss([1.0, 0.0], [0.0, 0.0]) - 10 * math.log10(1 + tau)),
              abs(thresholded_snr_loss([1.0, 0.0], [0.0, 1.0]) - 10 * math.log10(2 + tau))]
    for _ in range(50):
        y = rng.standard_normal(64)
        errors.append(abs(thresholded_snr_loss(y, np.zeros(64)) - 10 * math.log10(1 + tau)))
        # orthogonal estimate: error energy is the sum of both energies
        v = rng.standard_normal(64)
        v -= v @ y / (y @ y) * y
        closed = 10 * math.log10(1 + (v @ v) / (y @ y) + tau)
        errors.append(abs(thresholded_snr_loss(y, v) - closed))
    ok = all(p == -30.0 for p in perfect) and max(errors) < 1e-9
    verdict("thresholded loss anchors", ok, f"perfect in {sorted(set(perfect))}, closed-form error {max(errors):.2g}")


def _central_diff(f, x, h):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _relative_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric)))


def _gradient_cases(rng):
    def mixit_case():
        batch = MixtureBatch(rng.standard_normal((2, 24)))
        s = rng.standard_normal((4, 24))
        assignment = exhaustive_mixit(batch, s).assignment
        return (lambda x: exhaustive_mixit(batch, x).total_loss), s, mixit_loss_gradient(batch, s, 30.0, assignment), 1e-6

    def l1_case():
        s = rng.standard_normal((4, 24)) * rng.uniform(0.2, 1.0, (4, 1))
        mix = rng.standard_normal(24)
        return (lambda x: sparsity_l1(x, mix)), s, sparsity_l1_grad(s, mix), 1e-6

    def l1_l2_case():
        s = rng.standard_normal((4, 24)) * rng.uniform(0.2, 1.0, (4, 1))
        return sparsity_l1_l2, s, sparsity_l1_l2_grad(s), 1e-6

    def cov_case():
        s = rng.standard_normal((4, 24))
        return covariance_loss, s, covariance_loss_grad(s), 1e-6

    def ce_case(aggregator):
        def make():
            p = rng.uniform(0.05, 0.95, (4, 3))
            labels = rng.integers(0, 2, 3)
            return (lambda x: ce_loss(x, labels, aggregator)), p, ce_loss_grad(p, labels, aggregator), 1e-7
        return make

    def cos_case():
        p = rng.uniform(0.05, 1.0, (4, 3))
        return cosine_loss, p, cosine_loss_grad(p), 1e-7

    return {"mixit (envelope)": mixit_case, "l1": l1_case, "l1/l2": l1_l2_case, "covariance": cov_case,
            "ce or": ce_case("or"), "ce xor": ce_case("xor"), "cosine": cos_case}


def test_gradients_match_finite_differences(verdict):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = {}
    for name, make in _gradient_cases(rng).items():
        errs = []
        for _ in range(GRAD_POINTS):
            f, x, analytic, h = make()
            errs.append(_relative_error(analytic, _central_diff(f, x, h)))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < GRAD_TOL and elapsed < 60.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict("analytic gradients vs central differences", ok, f"{detail}; {elapsed:.1f}s")


def test_l1_l2_range_and_scale_invariance(verdict):
    rng = np.random.default_rng(5)
    range_ok, drift = True, 0.0
    for _ in range(1000):
        m = int(rng.integers(2, 9))
        levels = rng.uniform(0.1, 1.0, m)
        s = rng.standard_normal((m, 64)) * levels[:, None]
        c = rng.uniform(0.5, 10.0)
        value = sparsity_l1_l2(s)
        drift = max(drift, abs(sparsity_l1_l2(c * s) - value))
        # silencing outputs must stay inside the bounds too
        s[rng.random(m) < 0.3] = 0.0
        if not np.any(s):
            s[0] = rng.standard_normal(64)
        r = activity(s)
        v = sparsity_l1_l2(s)
        range_ok &= 1.0 / m <= v <= 1.0 / math.sqrt(m) and 1.0 / m <= l1_l2_ratio(r) <= 1.0 / math.sqrt(m)
    bounds = []
    for m in range(1, 9):
        bounds.append(abs(l1_l2_ratio(np.eye(m)[0] * rng.uniform(0.1, 5)) - 1.0 / m))
        bounds.append(abs(l1_l2_ratio(np.full(m, rng.uniform(0.1, 5))) - 1.0 / math.sqrt(m)))
    ok = range_ok and drift < 1e-6 and max(bounds) < 1e-6
    verdict("l1/l2 sparsity range and scale invariance", ok,
            f"range held {range_ok}, scale drift {drift:.1e}, bound error {max(bounds):.1e}")


def test_hungarian_matches_brute_force(verdict):
    rng = np.random.default_rng(6)
    mismatches = 0
    for trial in range(500):
        rows = int(rng.integers(1, 7))
        cols = int(rng.integers(rows, 9))
        # every other matrix is integer valued so ties are common
        cost = rng.standard_normal((rows, cols)) if trial % 2 else rng.integers(0, 5, (rows, cols)).astype(float)
        got = cost[np.arange(rows), hungarian_assign(cost)].sum()
        best = min(cost[np.arange(rows), list(p)].sum() for p in itertools.permutations(range(cols), rows))
        mismatches += got != best
    verdict("Hungarian total cost equals brute force", mismatches == 0, f"{mismatches} mismatches of 500")


def test_semantic_identities(verdict):
    half = [[0.5], [0.5]]
    checks = {
        "or absorbing": aggregate_or([[1.0], [0.3]])[0] == 1.0,
        "or all zero": aggregate_or([[0.0], [0.0], [0.0]])[0] == 0.0,
        "or halves": aggregate_or(half)[0] == 0.75,
        "xor one hot": aggregate_xor([[1.0], [0.0], [0.0]])[0] == 1.0,
        "xor two certain": aggregate_xor([[1.0], [1.0]])[0] == 0.0,
        "xor halves": aggregate_xor(half)[0] == 0.5,
        "ce perfect": ce_loss([[1.0, 0.0], [0.0, 0.0]], [1, 0]) == 2 * -math.log(1 - EPS_CE),
        "ce log 2": math.isclose(ce_loss([[0.5]], [1]), math.log(2), rel_tol=1e-12),
        "cos identical": cosine_loss([[0.2, 0.7, 0.1], [0.2, 0.7, 0.1]]) == 2.0,
        "cos orthogonal": cosine_loss([[1.0, 0.0], [0.0, 1.0]]) == 1.0,
    }
    failed = [k for k, v in checks.items() if not v]
    verdict("semantic aggregation and cosine identities", not failed, f"failed: {failed}" if failed else "")


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_consistency_and_determinism(verdict, tmp_path):
    ds = generate_dataset(OVERSEP_MANIFEST)
    cfg = LossConfig(n_sources=OVERSEP_M, weight_l1l2=300.0, weight_cov=0.1)
    worst, steps = 0.0, 0
    for i, ex in enumerate(ds.mom[:3]):
        mix = ex.batch.mom

        def check(step, s, _):
            nonlocal worst, steps
            worst = max(worst, float(np.linalg.norm(s.sum(axis=0) - mix) / np.linalg.norm(mix)))
            steps += 1

        optimize_estimates(ex.batch, cfg, seed=i, callback=check)

    a, b = tmp_path / "a", tmp_path / "b"
    write_dataset(a, generate_dataset(SMALL_MANIFEST))
    write_dataset(b, generate_dataset(SMALL_MANIFEST))
    same_data = _tree_bytes(a) == _tree_bytes(b)
    sweeps = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        assert main(["sweep", "--data", str(a), "--weights", "0,50", "--m", "4", "--steps", "60",
                     "--out", str(out)]) == 0
        sweeps.append((out / "sweep.csv").read_bytes())
    ok = worst < 1e-6 and same_data and sweeps[0] == sweeps[1]
    verdict("mixture consistency every step; byte-identical datasets and sweeps", ok,
            f"worst residual {worst:.1e} over {steps} steps, datasets equal {same_data}, "
            f"sweeps equal {sweeps[0] == sweeps[1]}")


def test_metric_sanity(verdict):
    ds = generate_dataset(SMALL_MANIFEST)
    truth = {("mom", ex.example_id): ex.sources for ex in ds.mom}
    truth.update({("eval", ex.example_id): ex.sources for ex in ds.single_source()})
    _, report = evaluate_estimates(ds, truth)
    capped = report.msi_db == report.one_s_db == report.momi_db == REPORT_CAP_DB

    copies = {("mom", ex.example_id): np.tile(ex.batch.mom, (max(4, ex.sources.shape[0]), 1)) for ex in ds.mom}
    rows, _ = evaluate_estimates(ds, copies)
    spread = max(abs(r["msi_db"]) for r in rows)
    ok = capped and spread <= 0.1 and len(rows) == len(ds.mom)
    verdict("metric caps and mixture-copy MSi", ok,
            f"perfect MSi/1S/MoMi {report.msi_db}/{report.one_s_db}/{report.momi_db}, copies max |MSi| {spread:.2g}")


@pytest.fixture(scope="module")
def oversep_sweep():
    ds = generate_dataset(OVERSEP_MANIFEST)
    assert len(ds.mom) == 20 and len(ds.single_source()) == 20
    assert all(ex.sources.shape[0] == 2 for ex in ds.mom)
    settings = RunSettings()
    start = time.perf_counter()
    reports = [evaluate_config(ds, LossConfig(n_sources=OVERSEP_M, weight_l1l2=lam), settings, worker_count())[1]
               for lam in OVERSEP_GRID]
    elapsed = time.perf_counter() - start
    for lam, rep in zip(OVERSEP_GRID, reports):
        print(f"weight_l1l2={lam:g}: active {rep.mean_active_sources:.2f} MSi {rep.msi_db:.2f} "
              f"1S {rep.one_s_db:.2f} MoMi {rep.momi_db:.2f}")
    best = best_index([selection_score(r.msi_db, r.one_s_db) for r in reports])
    return reports, best, elapsed


def test_sparsity_optimum_reduces_over_separation(verdict, oversep_sweep):
    reports, best, elapsed = oversep_sweep
    base, opt = reports[0], reports[best]
    ok = (opt.mean_active_sources < base.mean_active_sources and opt.one_s_db > base.one_s_db
          and elapsed < 900.0)
    verdict("l1/l2 optimum lowers active count and raises 1S versus no regularization", ok,
            f"optimum weight {OVERSEP_GRID[best]:g}: active {base.mean_active_sources:.2f} -> "
            f"{opt.mean_active_sources:.2f}, 1S {base.one_s_db:.2f} -> {opt.one_s_db:.2f} dB; "
            f"sweep {elapsed:.0f}s")


def test_past_optimum_msi_falls_while_1s_rises(verdict, oversep_sweep):
    reports, best, _ = oversep_sweep
    tail = reports[best:]
    msi_falls = len(tail) > 1 and all(b.msi_db < a.msi_db for a, b in zip(tail, tail[1:]))
    one_s_rises = len(tail) > 1 and all(b.one_s_db > a.one_s_db for a, b in zip(tail, tail[1:]))
    verdict("past the optimum weight MSi decreases while 1S keeps rising", msi_falls and one_s_rises,
            "MSi " + " > ".join(f"{r.msi_db:.2f}" for r in tail)
            + "; 1S " + " < ".join(f"{r.one_s_db:.2f}" for r in tail))
