"""Direct optimization of estimated sources under the composite MixIT loss.

There is no separation network here: the M source estimates for one
mixture of mixtures are the free variables. Each step re-solves the MixIT
assignment, takes the gradient with that assignment held fixed, applies
an Adam update and projects the estimates back onto mixture consistency.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import regularizers as reg
from . import semantic
from ._validation import check_sources
from .mixit import DEFAULT_MAX_ASSIGNMENTS, mixit, mixit_loss_gradient
from .signal import MixtureBatch, mixture_consistency_project, rms

INIT_NOISE_DB = -40.0
SEMANTIC_KINDS = ("tone", "chirp")
FINAL_STEP_FRACTION = 0.01
SOURCE_MOMENT_AXES = 1


class OptimizationDiverged(RuntimeError):
    """Raised when the loss becomes non-finite."""

    def __init__(self, step: int):
        super().__init__(f"loss diverged (non-finite) at step {step}")
        self.step = step


@dataclass(frozen=True)
class LossConfig:
    """Weights of the composite loss; MixIT always carries weight 1."""

    n_sources: int = 4
    snr_max_db: float = 30.0
    weight_l1: float = 0.0
    weight_l1l2: float = 0.0
    weight_cov: float = 0.0
    weight_ce: float = 0.0
    weight_cos: float = 0.0
    aggregator: str = "or"
    mixit_method: str = "auto"
    max_assignments: int = DEFAULT_MAX_ASSIGNMENTS

    def __post_init__(self):
        if self.n_sources < 1:
            raise ValueError("n_sources must be at least 1")
        if self.snr_max_db <= 0:
            raise ValueError("snr_max_db must be positive")
        for name in ("weight_l1", "weight_l1l2", "weight_cov", "weight_ce", "weight_cos"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.aggregator not in semantic.AGGREGATORS:
            raise ValueError(f"aggregator must be one of {semantic.AGGREGATORS}")
        if self.mixit_method not in ("auto", "exhaustive", "efficient"):
            raise ValueError("mixit_method must be auto, exhaustive or efficient")

    @property
    def uses_semantic(self) -> bool:
        return self.weight_ce > 0 or self.weight_cos > 0

    def replace(self, **changes) -> "LossConfig":
        return LossConfig(**{**asdict(self), **changes})


@dataclass
class LossBreakdown:
    total: float
    mixit: float
    terms: dict
    assignment: np.ndarray


def _as_batch(batch):
    return batch if isinstance(batch, MixtureBatch) else MixtureBatch(batch)


def check_semantic_kinds(kinds):
    """Reject semantic losses on sources the band classifier cannot differentiate."""
    bad = sorted(set(kinds) - set(SEMANTIC_KINDS))
    if bad:
        raise ValueError(
            f"semantic losses need tone or chirp sources; got {', '.join(bad)}"
        )


def total_loss_and_grad(batch, sources, cfg: LossConfig, classifier=None, labels=None,
                        with_grad: bool = True):
    """Composite loss and its gradient w.r.t. the sources.

    Semantic terms need a fitted :class:`~mixkit.semantic.BandEnergyClassifier`
    and the weak label vector of the mixture of mixtures.
    Returns ``(LossBreakdown, gradient or None)``.
    """
    batch = _as_batch(batch)
    s = check_sources(sources)
    result = mixit(batch, s, cfg.snr_max_db, method=cfg.mixit_method,
                   max_assignments=cfg.max_assignments)
    total = result.total_loss
    grad = mixit_loss_gradient(batch, s, cfg.snr_max_db, result.assignment) if with_grad else None
    terms = {}
    mix = batch.mom

    def add(name, weight, value, g):
        nonlocal total, grad
        terms[name] = value
        total += weight * value
        if with_grad:
            grad = grad + weight * g()

    if cfg.weight_l1 > 0:
        add("l1", cfg.weight_l1, reg.sparsity_l1(s, mix), lambda: reg.sparsity_l1_grad(s, mix))
    if cfg.weight_l1l2 > 0:
        add("l1_l2", cfg.weight_l1l2, reg.sparsity_l1_l2(s), lambda: reg.sparsity_l1_l2_grad(s))
    if cfg.weight_cov > 0 and s.shape[0] >= 2:
        add("cov", cfg.weight_cov, reg.covariance_loss(s), lambda: reg.covariance_loss_grad(s))
    if cfg.uses_semantic:
        if classifier is None or labels is None:
            raise ValueError("semantic loss weights need a classifier and labels")
        p, _ = classifier.proba_and_backprop(s)
        if cfg.weight_ce > 0:
            up = semantic.ce_loss_grad(p, labels, cfg.aggregator)
            add("ce", cfg.weight_ce, semantic.ce_loss(p, labels, cfg.aggregator),
                lambda: classifier.proba_and_backprop(s, up)[1])
        if cfg.weight_cos > 0 and s.shape[0] >= 2:
            up_cos = semantic.cosine_loss_grad(p)
            add("cos", cfg.weight_cos, semantic.cosine_loss(p),
                lambda: classifier.proba_and_backprop(s, up_cos)[1])
    return LossBreakdown(float(total), result.total_loss, terms, result.assignment), grad


class Adam:
    """Adaptive-moment gradient descent on a single array parameter.

    ``moment_axes`` averages the second moment over the given axes, so
    every slice along them shares one adaptive scale; ``None`` is the
    usual elementwise rule.
    """

    def __init__(self, step_size=1e-2, beta1=0.9, beta2=0.999, eps=1e-8, moment_axes=None):
        self.step_size = step_size
        self.moment_axes = moment_axes
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def update(self, params, grad, step_size=None):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros(()) if self.moment_axes is not None else np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        sq = grad**2
        if self.moment_axes is not None:
            sq = np.mean(sq, axis=self.moment_axes, keepdims=True)
        self.v = self.beta2 * self.v + (1 - self.beta2) * sq
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        lr = self.step_size if step_size is None else step_size
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class OptimResult:
    sources: np.ndarray
    loss_trace: np.ndarray
    mixit_trace: np.ndarray
    assignment: np.ndarray
    max_consistency_error: float
    settings: dict = field(default_factory=dict)


def initial_estimates(mix, n_sources, rng, noise_db=INIT_NOISE_DB):
    """Even split of the mixture plus small seeded noise, made consistent."""
    level = float(rms(mix, eps=0.0)) * 10.0 ** (noise_db / 20.0)
    noise = rng.standard_normal((n_sources, mix.shape[0])) * level
    return mixture_consistency_project(mix[None, :] / n_sources + noise, mix)


def optimize_estimates(batch, cfg: LossConfig, steps: int = 2000, step_size: float = 1e-2,
                       seed: int = 0, classifier=None, labels=None, beta1: float = 0.9,
                       beta2: float = 0.999, final_step_fraction: float = FINAL_STEP_FRACTION,
                       moment_axes=SOURCE_MOMENT_AXES, callback=None) -> OptimResult:
    """Minimize the composite loss over the estimates of one input.

    The step size decays geometrically from ``step_size`` to
    ``step_size * final_step_fraction``. By default every source keeps one
    second-moment scale (``moment_axes=1``); elementwise scaling lets the
    sparsity terms grow pairs of large outputs that cancel in the sum.
    ``callback(step, sources, breakdown)`` is invoked after every update.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    batch = _as_batch(batch)
    mix = batch.mom
    rng = np.random.Generator(np.random.PCG64(seed))
    s = initial_estimates(mix, cfg.n_sources, rng)
    opt = Adam(step_size, beta1, beta2, moment_axes=moment_axes)
    decay = final_step_fraction ** (1.0 / max(steps - 1, 1))
    mix_norm = float(np.linalg.norm(mix)) or 1.0
    trace = np.empty(steps)
    mixit_trace = np.empty(steps)
    worst = 0.0
    breakdown = None
    for step in range(steps):
        breakdown, grad = total_loss_and_grad(batch, s, cfg, classifier, labels)
        if not np.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
            raise OptimizationDiverged(step)
        trace[step] = breakdown.total
        mixit_trace[step] = breakdown.mixit
        s = opt.update(s, grad, step_size * decay**step)
        s = mixture_consistency_project(s, mix)
        worst = max(worst, float(np.linalg.norm(s.sum(axis=0) - mix)) / mix_norm)
        if callback is not None:
            callback(step, s, breakdown)
    final, _ = total_loss_and_grad(batch, s, cfg, classifier, labels, with_grad=False)
    settings = {
        "steps": steps, "step_size": step_size, "beta1": beta1, "beta2": beta2,
        "final_step_fraction": final_step_fraction, "moment_axes": moment_axes, "seed": seed,
        **{f.name: getattr(cfg, f.name) for f in fields(cfg)},
    }
    return OptimResult(s, trace, mixit_trace, final.assignment, worst, settings)
